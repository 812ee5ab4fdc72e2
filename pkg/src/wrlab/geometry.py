"""Weighted parabolic cylinders and slant cylinders.

A weighted cylinder over the ball B_r(y) has height r^2 * ((w^{-n})_{B_r(y)})^{1/n}:
backward-opening (C kind) or two-sided (Q kind).  A slant cylinder is a
drifted tube joining two space-time points; the K-slant condition constrains
its aspect ratio relative to an enclosing ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ball_calculus import Ball, ball_average, weight_measure
from .quadrature import DEFAULT_SPEC, ball_volume
from .report import Report
from .weights import Weight

__all__ = [
    "WeightedCylinder",
    "SlantCylinder",
    "make_cylinder",
    "cylinder_measure",
    "check_K_slant",
    "parabolic_boundary",
    "stair_slant_configuration",
]


@dataclass(frozen=True)
class WeightedCylinder:
    """Cylinder value: geometry is fixed at construction (the height is never
    recomputed, so downstream geometry stays consistent across tolerance
    changes)."""

    kind: str               # "C" (backward) or "Q" (two-sided)
    center: tuple           # (y: spatial point, s: time)
    radius: float
    height: float
    weight: Weight

    def __post_init__(self):
        if self.kind not in ("C", "Q"):
            raise ValueError("cylinder kind must be 'C' or 'Q'")
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("cylinder radius/height must be positive")

    @property
    def dim(self):
        return len(self.center[0])

    def time_interval(self):
        y, s = self.center
        if self.kind == "C":
            return (s - self.height, s)
        return (s - self.height, s + self.height)

    def ball(self):
        return Ball(self.center[0], self.radius)


def make_cylinder(w: Weight, Y, r, kind="C", spec=DEFAULT_SPEC):
    """Build the weighted cylinder at Y = (y, s) with radius r; the height is
    r^2 * ((w^{-n})_{B_r(y)})^{1/n} computed once by quadrature."""
    y, s = Y
    y = tuple(float(c) for c in y)
    r = float(r)
    if r <= 0:
        raise ValueError("cylinder radius must be positive")
    avg = ball_average(w, Ball(y, r), power=-float(w.dim), spec=spec)
    h = r * r * avg ** (1.0 / w.dim)
    return WeightedCylinder(kind, (y, float(s)), r, h, w)


def cylinder_measure(cyl: WeightedCylinder, spec=DEFAULT_SPEC, ap_bound=None):
    """(measure, Report): the w-measure of the cylinder plus the two-sided
    bound sigma_n r^{n+2} <= w(C) <= A * sigma_n r^{n+2} (A = claimed or
    supplied characteristic bound) and the Q = 2C identity."""
    w = cyl.weight
    n = cyl.dim
    measure = weight_measure(w, cyl, spec)
    rep = Report("cylinder_measure",
                 config={"kind": cyl.kind, "radius": cyl.radius,
                         "height": cyl.height, "weight": repr(w.spec)})
    sigma = ball_volume(n)
    base = sigma * cyl.radius ** (n + 2)
    c_measure = measure if cyl.kind == "C" else measure / 2.0
    rep.check("lower bound", base * (1.0 - 1e-9), c_measure)
    if ap_bound is None and w.claimed_ap is not None:
        ap_bound = w.claimed_ap[1]
    if ap_bound is not None:
        rep.check("upper bound", c_measure, ap_bound * base * (1.0 + 1e-9))
    other = WeightedCylinder("Q" if cyl.kind == "C" else "C", cyl.center,
                             cyl.radius, cyl.height, w)
    m2 = weight_measure(w, other, spec)
    lo, hi = sorted((measure, m2))
    rep.check("two-sided is twice one-sided", abs(hi - 2.0 * lo), 1e-12 * hi)
    return measure, rep


@dataclass(frozen=True)
class SlantCylinder:
    """Drifted tube {|x - drift*(t-t0) - x0| < rho, t0 < t < s0}."""

    bottom: tuple  # (x0, t0)
    top: tuple     # (y0, s0)
    rho: float

    def __post_init__(self):
        x0, t0 = self.bottom
        y0, s0 = self.top
        if not s0 > t0:
            raise ValueError("slant cylinder needs s0 > t0")
        if self.rho <= 0:
            raise ValueError("slant cylinder needs rho > 0")
        object.__setattr__(self, "bottom", (tuple(map(float, x0)), float(t0)))
        object.__setattr__(self, "top", (tuple(map(float, y0)), float(s0)))

    @property
    def dim(self):
        return len(self.bottom[0])

    @property
    def drift(self):
        x0, t0 = self.bottom
        y0, s0 = self.top
        return tuple((np.asarray(y0) - np.asarray(x0)) / (s0 - t0))

    def axis_at(self, t):
        x0, t0 = self.bottom
        return np.asarray(x0) + np.asarray(self.drift) * (t - t0)

    def time_interval(self):
        return (self.bottom[1], self.top[1])


def check_K_slant(V: SlantCylinder, K, enclosing, w: Weight, spec=DEFAULT_SPEC):
    """Check the three clauses of the K-slant condition against the enclosing
    ball (y, r): radius bracket, spatial containment, and the time-span
    bracket scaled by (w^{-n})_{B_r(y)}^{1/n}.  Returns (ok, Report with
    per-clause slacks)."""
    if K < 1.0:
        raise ValueError("K-slant condition needs K >= 1")
    y, r = enclosing
    y = np.asarray(y, dtype=float)
    x0, t0 = V.bottom
    y0, s0 = V.top
    rep = Report("K_slant", config={"K": K, "rho": V.rho, "r": r})
    rep.check("radius lower", r / (2.0 * K), V.rho)
    rep.check("radius upper", V.rho, r)
    # containment: the tube axis is a segment, so extremes sit at endpoints
    d = max(np.linalg.norm(np.asarray(x0) - y), np.linalg.norm(np.asarray(y0) - y))
    rep.check("containment", d + V.rho, r)
    avg = ball_average(w, Ball(tuple(y), r), power=-float(w.dim), spec=spec)
    scale = avg ** (1.0 / w.dim)
    drift_len = float(np.linalg.norm(np.asarray(y0) - np.asarray(x0)))
    span = s0 - t0
    rep.check("time lower", V.rho * scale * drift_len / K, span)
    rep.check("time upper", span, K * V.rho ** 2 * scale)
    return rep.passed, rep


def parabolic_boundary(region, grid):
    """Space-time mask of the lateral shell plus bottom slice on the grid
    (top slice excluded).  For slant cylinders the shell tracks the drifted
    tube level by level."""
    if isinstance(region, WeightedCylinder):
        active = grid.domain_mask(region.center[0], region.radius)
        interior = grid.erode(active)
        if not interior.any() or _thin(interior):
            raise ValueError("grid too coarse to separate shell from interior")
        shell = active & ~interior
        nt = len(grid.times)
        mask = np.zeros((nt,) + active.shape, dtype=bool)
        mask[:] = shell[None]
        mask[0] = active
        return mask
    if isinstance(region, SlantCylinder):
        nt = len(grid.times)
        mask = np.zeros((nt,) + grid.shape, dtype=bool)
        for k, t in enumerate(grid.times):
            active = grid.domain_mask(tuple(region.axis_at(t)), region.rho)
            interior = grid.erode(active)
            if k == 0:
                mask[0] = active
                continue
            if not interior.any() or _thin(interior):
                raise ValueError("grid too coarse to separate shell from interior")
            mask[k] = active & ~interior
        return mask
    raise TypeError("unsupported region %r" % (region,))


def _thin(interior):
    """True when fewer than 3 interior nodes survive across some axis."""
    for ax in range(interior.ndim):
        counts = interior.sum(axis=ax)
        if counts.max() < 3:
            return True
    return False


def stair_slant_configuration(w: Weight, r, y, rho, h_frac=1.5,
                              spec=DEFAULT_SPEC):
    """First stair block of the prop-up construction: centers y_m on the
    segment from y* to y, radii r_m = r 2^{-m}, block heights
    s_m = h * r_m^2 (w^{-n})^{1/n}_{B_{r_m}(y_m)} with h in [1, 2].

    Returns (slant cylinder, enclosing (y_m0, r_m0), K=32) covering the climb
    from B_rho at time 0 to the top of the first block; requires
    B_rho(0) inside B_r(y), i.e. |y| + rho <= r.
    """
    y = np.asarray(y, dtype=float)
    n = w.dim
    if np.linalg.norm(y) + rho > r + 1e-12:
        raise ValueError("need B_rho(0) inside B_r(y)")
    if not (1.0 <= h_frac <= 2.0):
        raise ValueError("h_frac plays the role of h in [1, 2]")
    if rho >= r:
        raise ValueError("need rho < r")
    y_star = (rho / (rho - r)) * y
    m0 = 0
    while not (r / 2 ** (m0 + 1) <= rho):
        m0 += 1

    def y_m(m):
        tau = 2.0 ** (-m)
        return (1.0 - tau) * y_star + tau * y

    r_m0 = r / 2.0 ** m0
    ym0 = y_m(m0)
    ym1 = y_m(m0 + 1)
    avg = ball_average(w, Ball(tuple(ym0), r_m0), power=-float(n), spec=spec)
    s_m0 = h_frac * r_m0 ** 2 * avg ** (1.0 / n)
    # top point: any x in B_{r_{m0+1}}(y_m0); take the far edge for stress
    direction = (ym0 - ym1)
    nrm = np.linalg.norm(direction)
    direction = direction / nrm if nrm > 0 else np.zeros(n)
    x_top = ym0 + 0.999 * (r_m0 / 2.0) * direction
    V = SlantCylinder((tuple(ym1), 0.0), (tuple(x_top), s_m0), r_m0 / 4.0)
    return V, (tuple(ym0), r_m0), 32.0
