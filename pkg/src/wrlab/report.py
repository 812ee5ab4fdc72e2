"""Structured experiment/verification reports with stable serialization.

Reports are plain ordered payloads: configuration echo, per-sample rows,
fitted constants, and named inequality checks.  Serialization is
deterministic (insertion order, repr floats) so identical runs produce
byte-identical files; wall-clock data never enters a report.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

__all__ = ["FittedConstant", "Check", "Report"]

SCHEMA_VERSION = 1


@dataclass
class FittedConstant:
    """An empirically fitted constant with its refinement spread (max/min
    across grids; 1.0 means perfectly stable)."""

    name: str
    value: float
    refinement_spread: float | None = None

    def as_dict(self):
        d = {"name": self.name, "value": self.value}
        if self.refinement_spread is not None:
            d["refinement_spread"] = self.refinement_spread
        return d


@dataclass
class Check:
    """A single verified inequality: lhs <= rhs up to the recorded margin."""

    name: str
    passed: bool
    lhs: float | None = None
    rhs: float | None = None
    detail: str = ""

    @property
    def margin(self):
        if self.lhs is None or self.rhs is None:
            return None
        return self.rhs - self.lhs

    def as_dict(self):
        d = {"name": self.name, "passed": bool(self.passed)}
        if self.lhs is not None:
            d["lhs"] = self.lhs
        if self.rhs is not None:
            d["rhs"] = self.rhs
        if self.margin is not None:
            d["margin"] = self.margin
        if self.detail:
            d["detail"] = self.detail
        return d


@dataclass
class Report:
    """Outcome of one verification run or experiment."""

    name: str
    config: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    fitted: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    regime = "empirical-discrete"

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def check(self, name, lhs, rhs, detail=""):
        """Record the inequality lhs <= rhs."""
        c = Check(name, bool(lhs <= rhs), float(lhs), float(rhs), detail)
        self.checks.append(c)
        return c

    def require(self, name, ok, detail=""):
        c = Check(name, bool(ok), detail=detail)
        self.checks.append(c)
        return c

    def fit(self, name, value, spread=None):
        fc = FittedConstant(name, float(value),
                            None if spread is None else float(spread))
        self.fitted.append(fc)
        return fc

    def as_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "regime": self.regime,
            "passed": self.passed,
            "config": self.config,
            "fitted_constants": [f.as_dict() for f in self.fitted],
            "checks": [c.as_dict() for c in self.checks],
            "rows": self.rows,
            "notes": self.notes,
        }

    def to_json(self, path=None):
        text = json.dumps(self.as_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def rows_to_csv(self, path, columns=None):
        if not self.rows:
            cols = columns or []
        else:
            cols = columns or list(self.rows[0].keys())
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for row in self.rows:
                wr.writerow([row.get(c, "") for c in cols])
