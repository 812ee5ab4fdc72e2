"""Experiment drivers: theorem-level inequalities as desk-scale studies.

Every driver is deterministic given (seed, config, tolerances) and returns a
Report whose fitted constants carry refinement spreads.  All verdicts are
empirical and discrete: the solver realizes the operator on a grid, so no
claim of continuum closeness is made.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .ball_calculus import Ball, ball_average, bmo_weighted, make_family
from .geometry import SlantCylinder, check_K_slant, make_cylinder
from .pde import (DirichletProblem, Grid, hessian_frobenius,
                  sample_dominant_field, solve_dirichlet, weight_on_grid,
                  weighted_norm)
from .quadrature import DEFAULT_SPEC
from .report import Report
from .weights import Weight, constant, log_weight

__all__ = [
    "ExperimentConfig",
    "sojourn_experiment",
    "lin_ratio_experiment",
    "weak_harnack_experiment",
    "propup_experiment",
    "iq_envelope",
    "logweight_bmo_decay",
]


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 20260810
    n: int = 2
    weight: Weight = field(default_factory=lambda: constant(1.0, 2))
    nx: int = 17
    nt: int = 48
    r: float = 1.0
    nu: float = 0.5
    p: float = 0.1
    samples: int = 40
    trunc_caps: tuple = (4.0, 16.0, 64.0)
    coeff_cells: int = 5
    gamma0: float = 2.5
    refine: bool = True

    def rng(self, salt=0):
        return np.random.default_rng(self.seed + 1_000_003 * salt)


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _two_sided_setup(cfg, nx=None, nt=None, trunc_band=None, salt=0):
    """Grid and masks over the two-sided cylinder centered at the origin."""
    nx = nx or cfg.nx
    nt = nt or cfg.nt
    if nt % 2:
        nt += 1
    w = cfg.weight
    cyl = make_cylinder(w, ((0.0,) * cfg.n, 0.0), cfg.r, "Q")
    grid = Grid.for_cylinder(cyl, nx, nt)
    fld = sample_dominant_field(grid, cfg.rng(salt), nu=cfg.nu,
                                cells=cfg.coeff_cells)
    w_nodes = weight_on_grid(w, grid, trunc_band=trunc_band)
    active = grid.ball_mask(cyl.center[0], cyl.radius)
    half = nt // 2  # level index of the cylinder midpoint (t = 0)
    return cyl, grid, fld, w_nodes, active, half


def _solve(cfg, cyl, grid, fld, f_values, g, trunc_band=None):
    prob = DirichletProblem(cyl, cfg.weight, fld, f_values, g,
                            trunc_band=trunc_band)
    return solve_dirichlet(prob, grid=grid)


def _node_vols(grid, w_nodes):
    return w_nodes * grid.h ** grid.n * grid.tau


def _bump_potential(grid, rng, bumps=6):
    """Smooth random space-time potential used to carve nested level sets."""
    pts = grid.points
    t = grid.times
    psi = np.zeros((len(t),) + grid.shape)
    for _ in range(bumps):
        c = rng.uniform(-0.8, 0.8, size=grid.n)
        s = rng.uniform(0.2, 0.6)
        tc = rng.uniform(t[0], t[-1])
        ts = rng.uniform(0.2, 0.7) * (t[-1] - t[0])
        amp = rng.uniform(0.5, 1.5)
        sq = np.sum((pts - c) ** 2, axis=-1)
        tfac = np.exp(-((t - tc) / ts) ** 2).reshape((-1,) + (1,) * grid.n)
        psi += amp * np.exp(-sq / s ** 2)[None] * tfac
    return psi


def _loglog_fit(q, m):
    """Least-squares fit log m = log N + g log q over q in [0.2, 1]."""
    q = np.asarray(q)
    m = np.asarray(m)
    keep = (q >= 0.2) & (m > 0)
    if keep.sum() < 3:
        return math.nan, math.nan
    A = np.stack([np.ones(keep.sum()), np.log(q[keep])], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(m[keep]), rcond=None)
    return math.exp(coef[0]), coef[1]


def _spread(values):
    vals = [v for v in values if math.isfinite(v)]
    if not vals or min(vals) <= 0:
        return math.inf
    return max(vals) / min(vals)


# ---------------------------------------------------------------------------
# sojourn lower bound
# ---------------------------------------------------------------------------

def _sojourn_samples(cfg, nx=None, nt=None, trunc_band=None):
    """Nested forcing-set family on the backward half, solved on the
    two-sided cylinder: returns per-sample (density, infimum at the top)."""
    cyl, grid, fld, w_nodes, active, half = _two_sided_setup(
        cfg, nx, nt, trunc_band)
    vols = _node_vols(grid, w_nodes)
    nts = len(grid.times)
    cmask = np.zeros((nts,) + grid.shape, dtype=bool)
    cmask[1:half + 1] = active[None]
    denom = float(np.sum(np.broadcast_to(vols, cmask.shape)[cmask]))
    psi = _bump_potential(grid, cfg.rng(1))
    levels = np.concatenate([[-np.inf],
                             np.quantile(psi[cmask],
                                         np.linspace(0.03, 0.97, cfg.samples - 2)),
                             [np.inf]])
    ball_half = grid.ball_mask((0.0,) * cfg.n, cfg.r / 2.0)
    rows = []
    for theta in levels:
        emask = cmask & (psi <= theta)
        q = float(np.sum(np.broadcast_to(vols, cmask.shape)[emask])) / denom
        fvals = np.where(emask, np.broadcast_to(w_nodes, emask.shape), 0.0)
        res = _solve(cfg, cyl, grid, fld, fvals,
                     lambda pts, t: np.zeros(len(pts)), trunc_band)
        m = float(np.min(res.u[-1][ball_half]))
        rows.append({"q": q, "inf_top": m})
    return rows, grid, w_nodes


def sojourn_experiment(cfg: ExperimentConfig):
    """Quantitative lower bound for non-negative supersolutions: the infimum
    at the top of the two-sided cylinder against the w-density of the set
    where the operator output reaches the weight."""
    rep = Report("sojourn", config={"seed": cfg.seed, "n": cfg.n,
                                    "weight": repr(cfg.weight.spec),
                                    "nx": cfg.nx, "nt": cfg.nt, "r": cfg.r,
                                    "samples": cfg.samples})
    dom = Ball((0.0,) * cfg.n, 2.0 * cfg.r)
    fam = make_family(dom, spacing=cfg.r, r_min=cfg.r / 2.0, levels=2)
    rep.config["bmo_measured"] = bmo_weighted(cfg.weight, dom, fam).value

    rows, grid, _ = _sojourn_samples(cfg)
    rep.rows = rows
    q = np.array([r_["q"] for r_ in rows])
    m = np.array([r_["inf_top"] for r_ in rows])
    rep.check("infima non-negative", -float(m.min()), 1e-12)
    rep.require("zero-density sample trivial",
                m[np.argmin(q)] <= 1e-12 and q.min() <= 1e-12)
    rep.check("full-density sample strictly positive", 1e-12,
              float(m[np.argmax(q)]))
    rho = spearmanr(q, m).statistic
    rep.check("rank correlation", 0.9, float(rho))
    N0, g0 = _loglog_fit(q, m / cfg.r ** 2)
    fits = {"N_sojourn": [N0], "gamma0": [g0]}
    dense = m[q >= 0.9]
    kappa = float(dense.min()) / cfg.r ** 2 if len(dense) else math.nan
    fits["kappa"] = [kappa]

    if cfg.refine:
        rows2, _, _ = _sojourn_samples(cfg, nx=2 * cfg.nx - 1, nt=2 * cfg.nt)
        q2 = np.array([r_["q"] for r_ in rows2])
        m2 = np.array([r_["inf_top"] for r_ in rows2])
        N1, g1 = _loglog_fit(q2, m2 / cfg.r ** 2)
        fits["N_sojourn"].append(N1)
        fits["gamma0"].append(g1)
        dense2 = m2[q2 >= 0.9]
        if len(dense2):
            fits["kappa"].append(float(dense2.min()) / cfg.r ** 2)

    for cap in cfg.trunc_caps:
        rows_c, _, _ = _sojourn_samples(cfg, trunc_band=(1.0 / cap, cap))
        qc = np.array([r_["q"] for r_ in rows_c])
        mc = np.array([r_["inf_top"] for r_ in rows_c])
        Nc, gc = _loglog_fit(qc, mc / cfg.r ** 2)
        rep.rows.append({"q": -1.0, "inf_top": Nc, "cap": cap, "gamma0": gc})
        rep.check("truncation sweep N cap=%g" % cap,
                  abs(Nc - N0) / N0, 0.10)
        rep.check("truncation sweep gamma cap=%g" % cap,
                  abs(gc - g0) / g0, 0.10)

    rep.fit("N_sojourn", fits["N_sojourn"][0], _spread(fits["N_sojourn"]))
    rep.fit("gamma0", fits["gamma0"][0], _spread(fits["gamma0"]))
    rep.fit("kappa", fits["kappa"][0], _spread(fits["kappa"]))
    if cfg.refine:
        rep.check("gamma0 refinement spread", _spread(fits["gamma0"]), 1.20)
    return rep


# ---------------------------------------------------------------------------
# hessian quasi-norm ratio
# ---------------------------------------------------------------------------

def _smooth_field_values(grid, rng, bumps=4, offset=0.0):
    pts = grid.points
    t = grid.times
    out = np.full((len(t),) + grid.shape, offset)
    for _ in range(bumps):
        c = rng.uniform(-0.7, 0.7, size=grid.n)
        s = rng.uniform(0.25, 0.7)
        amp = rng.uniform(-1.0, 1.0)
        trend = rng.uniform(-0.5, 0.5)
        sq = np.sum((pts - c) ** 2, axis=-1)
        shape = np.exp(-sq / s ** 2)
        tfac = 1.0 + trend * (t - t[0]) / max(t[-1] - t[0], 1e-300)
        out += amp * shape[None] * tfac.reshape((-1,) + (1,) * grid.n)
    return out


def _lin_ratio_once(cfg, nx, salt):
    cyl = make_cylinder(cfg.weight, ((0.0,) * cfg.n, 0.0), cfg.r, "C")
    nt = cfg.nt
    grid = Grid.for_cylinder(cyl, nx, nt)
    w_nodes = weight_on_grid(cfg.weight, grid)
    active = grid.ball_mask(cyl.center[0], cyl.radius)
    # the discrete Hessian is undefined through the lateral shell; comparing
    # refinements needs a mesh-independent region, so the quasi-norm runs
    # over a fixed core subcylinder
    core = grid.ball_mask(cyl.center[0], 0.8 * cyl.radius) & grid.erode(active)
    rng = cfg.rng(salt)
    ratios = []
    skipped = 0
    scale_dev = 0.0
    for s in range(cfg.samples // 2):
        fld = sample_dominant_field(grid, rng, nu=cfg.nu, cells=cfg.coeff_cells)
        fvals = _smooth_field_values(grid, rng, bumps=4)
        res = solve_dirichlet(DirichletProblem(cyl, cfg.weight, fld, fvals,
                                               lambda pts, t: np.zeros(len(pts))),
                              grid=grid)
        core_st = res.interior & core[None]
        sup_bdry = float(np.max(np.abs(res.u[res.boundary_mask])))
        nrm_f = weighted_norm(np.where(res.interior, fvals, 0.0), cfg.n + 1,
                              w_nodes ** (-float(cfg.n)), grid, res.interior)
        denom = sup_bdry + nrm_f
        if denom <= 1e-14 or np.max(np.abs(res.u)) <= 1e-14:
            skipped += 1
            continue
        hess = np.stack([hessian_frobenius(res.u[k], grid)
                         for k in range(len(grid.times))])
        num = weighted_norm(np.where(core_st, hess, 0.0), cfg.p,
                            w_nodes, grid, core_st)
        ratio = num / denom
        ratios.append(ratio)
        c = 7.3
        num_c = weighted_norm(np.where(core_st, c * hess, 0.0), cfg.p,
                              w_nodes, grid, core_st)
        denom_c = c * sup_bdry + weighted_norm(
            np.where(res.interior, c * fvals, 0.0), cfg.n + 1,
            w_nodes ** (-float(cfg.n)), grid, res.interior)
        scale_dev = max(scale_dev, abs(num_c / denom_c - ratio) / ratio)
    return ratios, skipped, scale_dev


def lin_ratio_experiment(cfg: ExperimentConfig):
    """Hessian quasi-norm against boundary sup plus weighted source norm:
    finiteness, scaling invariance, and refinement stability of the max."""
    rep = Report("lin_ratio", config={"seed": cfg.seed, "p": cfg.p,
                                      "weight": repr(cfg.weight.spec),
                                      "nx": cfg.nx, "samples": cfg.samples // 2})
    ratios, skipped, scale_dev = _lin_ratio_once(cfg, cfg.nx, salt=2)
    rep.rows = [{"ratio": r_} for r_ in ratios]
    rep.rows.append({"skipped": skipped})
    rep.require("all ratios finite",
                all(math.isfinite(r_) and r_ > 0 for r_ in ratios))
    rep.check("scale invariance", scale_dev, 1e-9)
    vals = [max(ratios)]
    if cfg.refine:
        ratios2, _, _ = _lin_ratio_once(cfg, 2 * cfg.nx - 1, salt=2)
        vals.append(max(ratios2))
        rep.check("refinement spread", _spread(vals), 2.0)
    rep.fit("N_lin", vals[0], _spread(vals))
    return rep


# ---------------------------------------------------------------------------
# weak Harnack
# ---------------------------------------------------------------------------

def _harnack_once(cfg, nx, nt, salt):
    cyl, grid, fld, w_nodes, active, half = _two_sided_setup(cfg, nx, nt,
                                                             salt=salt)
    vols = _node_vols(grid, w_nodes)
    nts = len(grid.times)
    cmask = np.zeros((nts,) + grid.shape, dtype=bool)
    cmask[1:half + 1] = active[None]
    denom = float(np.sum(np.broadcast_to(vols, cmask.shape)[cmask]))
    p = 1.0 / (2.0 * cfg.gamma0)
    rng = cfg.rng(salt + 7)
    psi = _bump_potential(grid, rng)
    rows = []
    fits = []
    scale_dev = 0.0
    center = tuple(s // 2 for s in grid.shape)
    for s in range(max(6, cfg.samples // 4)):
        kind = s % 3
        if kind == 0:
            theta = np.quantile(psi[cmask], rng.uniform(0.2, 0.8))
            emask = cmask & (psi <= theta)
            fvals = np.where(emask, np.broadcast_to(w_nodes, emask.shape), 0.0)
        elif kind == 1:
            fvals = np.abs(_smooth_field_values(grid, rng, bumps=3))
        else:
            fvals = np.zeros((nts,) + grid.shape)
        gb = np.abs(_smooth_field_values(grid, rng, bumps=2)) \
            if kind != 2 else np.zeros((nts,) + grid.shape)
        res = _solve(cfg, cyl, grid, fld, fvals, gb)
        with np.errstate(divide="ignore"):
            integrand = np.where(
                cmask,
                np.abs(fvals) ** p * np.broadcast_to(w_nodes, fvals.shape)
                ** (1.0 - p), 0.0)
        lhs = (float(np.sum(integrand[cmask]
                            * (grid.h ** grid.n * grid.tau))) / denom) \
            ** (1.0 / p)
        top_center = float(res.u[-1][center])
        row = {"lhs": lhs, "u_top_center": top_center, "kind": kind}
        if np.max(fvals) <= 0 and np.max(gb) <= 0:
            row["trivial"] = True
            rows.append(row)
            continue
        if top_center <= 0:
            row["flag"] = "zero center value with positive data"
            rows.append(row)
            fits.append(math.inf)
            continue
        fit = lhs / (top_center / cfg.r ** 2)
        row["N"] = fit
        rows.append(row)
        fits.append(fit)
        # both sides are 1-homogeneous in u: recompute from the scaled fields
        integ2 = np.where(
            cmask, np.abs(2.0 * fvals) ** p
            * np.broadcast_to(w_nodes, fvals.shape) ** (1.0 - p), 0.0)
        lhs2 = (float(np.sum(integ2[cmask] * (grid.h ** grid.n * grid.tau)))
                / denom) ** (1.0 / p)
        fit2 = lhs2 / (2.0 * top_center / cfg.r ** 2)
        scale_dev = max(scale_dev, abs(fit2 - fit) / fit)
    return rows, fits, scale_dev


def weak_harnack_experiment(cfg: ExperimentConfig):
    rep = Report("weak_harnack",
                 config={"seed": cfg.seed, "gamma0": cfg.gamma0,
                         "p": 1.0 / (2.0 * cfg.gamma0),
                         "weight": repr(cfg.weight.spec), "nx": cfg.nx})
    # the top value decays like e^{-lam T}: first-order time stepping and the
    # discrete principal eigenvalue both bias the decay rate, so this driver
    # runs finer than the other experiments in both axes
    nx = max(cfg.nx, 21)
    nt = max(6 * cfg.nt, 288)
    rows, fits, scale_dev = _harnack_once(cfg, nx, nt, salt=3)
    rep.rows = rows
    rep.require("fitted constants finite and positive",
                all(math.isfinite(f) and f > 0 for f in fits))
    rep.check("scale invariance", scale_dev, 1e-9)
    vals = [max(fits)]
    if cfg.refine:
        rows2, fits2, _ = _harnack_once(cfg, 2 * nx - 1, 2 * nt, salt=3)
        vals.append(max(fits2))
        rep.check("refinement spread", _spread(vals), 1.20)
    rep.fit("N_harnack", vals[0], _spread(vals))
    return rep


# ---------------------------------------------------------------------------
# forward propagation of positive infima
# ---------------------------------------------------------------------------

def _plateau_boundary(x0, rho, fade, n):
    x0 = np.asarray(x0, dtype=float)

    def g(pts, t):
        d = np.linalg.norm(np.asarray(pts)[:, :n] - x0[None, :], axis=1)
        out = np.zeros(len(pts))
        out[d <= rho] = 1.0
        band = (d > rho) & (d < rho + fade)
        out[band] = 0.5 * (1.0 + np.cos(math.pi * (d[band] - rho) / fade))
        return out

    return g


def _propup_once(cfg, nx, nt, salt):
    cyl, grid, fld, w_nodes, active, half = _two_sided_setup(cfg, nx, nt,
                                                             salt=salt)
    rng = cfg.rng(salt + 11)
    ball_half = grid.ball_mask((0.0,) * cfg.n, cfg.r / 2.0)
    rows = []
    for rho_frac in (0.5, 0.25, 0.125):
        rho = rho_frac * cfg.r
        x0 = rng.uniform(-0.2, 0.2, size=cfg.n) * cfg.r
        if np.linalg.norm(x0) + rho > 0.85 * cfg.r:
            x0 = np.zeros(cfg.n)
        fade = 0.45 * (cfg.r - np.linalg.norm(x0) - rho)
        g0 = _plateau_boundary(x0, rho, fade, cfg.n)

        def g(pts, t, g0=g0, t0=grid.times[0]):
            if abs(t - t0) < 1e-14:
                return g0(pts, t)
            return np.zeros(len(pts))

        res = _solve(cfg, cyl, grid, fld,
                     lambda pts, t: np.zeros(len(pts)), g)
        bmask = grid.ball_mask(tuple(x0), rho)
        m0 = float(np.min(res.u[1][bmask]))
        m1 = float(np.min(res.u[-1][ball_half]))
        rows.append({"rho_frac": rho_frac, "m_start": m0, "m_top": m1,
                     "ratio": m1 / m0 if m0 > 0 else math.nan})
    return rows


def _slant_step(cfg, nx, nt, salt):
    """One K-slant block: infimum carried from the bottom disk to the shifted
    top disk of a drifted tube."""
    w = cfg.weight
    r = cfg.r
    rho = r / 4.0
    rng = cfg.rng(salt + 13)
    x0 = np.array([-0.2, 0.05]) * r if cfg.n == 2 else np.full(cfg.n, -0.1) * r
    y0 = np.array([0.22, 0.12]) * r if cfg.n == 2 else np.full(cfg.n, 0.12) * r
    scale = ball_average(w, Ball((0.0,) * cfg.n, r), power=-float(cfg.n)) \
        ** (1.0 / cfg.n)
    s0 = 0.5 * 32.0 * rho ** 2 * scale * rng.uniform(0.4, 0.9)
    V = SlantCylinder((tuple(x0), 0.0), (tuple(y0), float(s0)), rho)
    ok, krep = check_K_slant(V, 32.0, ((0.0,) * cfg.n, r), w)
    grid = Grid.for_cylinder(V, max(nx, 21), nt)
    fld = sample_dominant_field(grid, rng, nu=cfg.nu, cells=cfg.coeff_cells)
    plateau = 0.6 * rho
    g0 = _plateau_boundary(x0, plateau, 0.35 * rho, cfg.n)

    def g(pts, t, t0=0.0):
        if abs(t - t0) < 1e-14:
            return g0(pts, t)
        return np.zeros(len(pts))

    res = solve_dirichlet(DirichletProblem(V, w, fld,
                                           lambda pts, t: np.zeros(len(pts)),
                                           g), grid=grid)
    bot = grid.ball_mask(tuple(x0), plateau)
    top = grid.ball_mask(tuple(y0), rho / 2.0)
    m0 = float(np.min(res.u[1][bot]))
    m1 = float(np.min(res.u[-1][top]))
    return ok, (m1 / m0 if m0 > 0 else math.nan)


def propup_experiment(cfg: ExperimentConfig):
    """Propagation ratio across shrinking starting disks plus a single
    drifted-tube step; fits the power-law exponent of the stair bound."""
    rep = Report("propup", config={"seed": cfg.seed,
                                   "weight": repr(cfg.weight.spec),
                                   "nx": cfg.nx, "nt": cfg.nt})
    rows = _propup_once(cfg, cfg.nx, cfg.nt, salt=4)
    rep.rows = rows
    rep.require("ratios positive",
                all(r_["ratio"] > 0 for r_ in rows))
    x = np.log([r_["rho_frac"] / 2.0 for r_ in rows])
    yv = np.log([r_["ratio"] for r_ in rows])
    A = np.stack([np.ones(len(x)), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, yv, rcond=None)
    gam = [float(coef[1])]
    if cfg.refine:
        rows2 = _propup_once(cfg, 2 * cfg.nx - 1, 2 * cfg.nt, salt=4)
        y2 = np.log([r_["ratio"] for r_ in rows2])
        coef2, *_ = np.linalg.lstsq(A, y2, rcond=None)
        gam.append(float(coef2[1]))
        rep.check("gamma refinement spread", _spread(gam), 1.25)
    rep.fit("gamma_propup", gam[0], _spread(gam))
    ok, beta = _slant_step(cfg, cfg.nx, max(cfg.nt // 2, 12), salt=4)
    rep.require("slant block satisfies the aspect condition", ok)
    rep.require("slant ratio in (0,1)", 0.0 < beta < 1.0)
    rep.fit("beta_slant", beta)
    rep.rows.append({"beta_slant": beta})
    # constant data propagate at ratio one
    cyl, grid, fld, w_nodes, active, half = _two_sided_setup(cfg, 11, 12,
                                                             salt=4)
    resc = _solve(cfg, cyl, grid, fld, lambda pts, t: np.zeros(len(pts)),
                  lambda pts, t: np.ones(len(pts)))
    ball_half = grid.ball_mask((0.0,) * cfg.n, cfg.r / 2.0)
    rep.check("constant data ratio one", 1.0 - 1e-9,
              float(np.min(resc.u[-1][ball_half])))
    return rep


# ---------------------------------------------------------------------------
# lower envelope of admissible infima
# ---------------------------------------------------------------------------

def iq_envelope(cfg: ExperimentConfig, q_grid=(0.0, 0.25, 0.5, 0.75, 0.9)):
    """Empirical upper envelope of the density-constrained infimum: over
    sampled admissible supersolutions, the minimum top infimum among samples
    of at least the given density.  Nondecreasing by restriction ordering; a
    power law N q^g r^2 is fitted from below."""
    rep = Report("iq_envelope", config={"seed": cfg.seed,
                                        "weight": repr(cfg.weight.spec),
                                        "q_grid": list(q_grid),
                                        "nx": cfg.nx})
    cyl, grid, fld, w_nodes, active, half = _two_sided_setup(cfg, salt=5)
    vols = _node_vols(grid, w_nodes)
    nts = len(grid.times)
    cmask = np.zeros((nts,) + grid.shape, dtype=bool)
    cmask[1:half + 1] = active[None]
    denom = float(np.sum(np.broadcast_to(vols, cmask.shape)[cmask]))
    ball_half = grid.ball_mask((0.0,) * cfg.n, cfg.r / 2.0)
    rng = cfg.rng(6)
    samples = []

    def run(fvals, gb):
        res = _solve(cfg, cyl, grid, fld, fvals, gb)
        kept = np.where(np.broadcast_to(w_nodes, fvals.shape) > 0,
                        fvals / np.broadcast_to(w_nodes, fvals.shape), 0.0)
        dens_mask = cmask & (kept >= 1.0 - 1e-9)
        q = float(np.sum(np.broadcast_to(vols, cmask.shape)[dens_mask])) / denom
        m = float(np.min(res.u[-1][ball_half]))
        samples.append({"q": q, "m": m})

    zeros = np.zeros((nts,) + grid.shape)
    run(zeros, lambda pts, t: np.zeros(len(pts)))
    w_bc = np.broadcast_to(w_nodes, zeros.shape)
    # full-density family (the admissible class allows any scaling >= w)
    for _ in range(31):
        c = rng.uniform(1.0, 3.0)
        run(np.where(cmask, c * w_bc, 0.0), lambda pts, t: np.zeros(len(pts)))
    for pot in range(3):
        psi = _bump_potential(grid, cfg.rng(20 + pot))
        lv = np.concatenate([np.linspace(0.05, 0.88, 22),
                             np.linspace(0.90, 1.0, 16)])
        for p_ in lv:
            theta = np.quantile(psi[cmask], p_)
            emask = cmask & (psi <= theta)
            run(np.where(emask, w_bc, 0.0), lambda pts, t: np.zeros(len(pts)))

    qs = np.array([s["q"] for s in samples])
    ms = np.array([s["m"] for s in samples])
    env = []
    for qb in q_grid:
        sel = qs >= qb - 1e-12
        count = int(sel.sum())
        val = float(ms[sel].min()) if count else math.nan
        env.append({"q_bin": qb, "envelope": val, "bin_size": count})
    rep.rows = env
    rep.require("every bin populated (>= 30 samples)",
                all(e["bin_size"] >= 30 for e in env))
    rep.check("zero bin vanishes", env[0]["envelope"], 1e-12)
    rep.check("top bin strictly positive", 1e-12, env[-1]["envelope"])
    vals = [e["envelope"] for e in env]
    rep.require("envelope nondecreasing",
                all(b >= a - 1e-15 for a, b in zip(vals, vals[1:])))
    pos = [(e["q_bin"], e["envelope"]) for e in env
           if e["q_bin"] > 0 and e["envelope"] > 0]
    N0, g0 = _loglog_fit([p[0] for p in pos], [p[1] / cfg.r ** 2 for p in pos])
    if math.isfinite(N0):
        floor = min(p[1] / (p[0] ** g0 * cfg.r ** 2) for p in pos)
        N0 = min(N0, floor) * (1.0 - 1e-9)
        rep.require("power law sits below the envelope",
                    all(N0 * p[0] ** g0 * cfg.r ** 2 <= p[1] * (1 + 1e-9)
                        for p in pos))
    rep.fit("N_envelope", N0)
    rep.fit("gamma0_envelope", g0)
    return rep


# ---------------------------------------------------------------------------
# log-weight oscillation decay
# ---------------------------------------------------------------------------

def logweight_bmo_decay(r0_list=(0.02, 0.01, 0.005), ns=(1, 2),
                        ball_radii=(math.exp(-2), math.exp(-3), math.exp(-4)),
                        spec=DEFAULT_SPEC):
    """Origin-ball oscillation ratio of the capped-log weight against the
    closed-form bound 1/(n |ln r|), plus strict decay of the BMO estimate on
    shrinking domains (scaled families)."""
    from .ball_calculus import _osc_integral

    rep = Report("logweight_bmo_decay",
                 config={"r0_list": list(r0_list), "ns": list(ns),
                         "ball_radii": [repr(r) for r in ball_radii]})
    for n in ns:
        w = log_weight(n)
        for r in ball_radii:
            B = Ball((0.0,) * n, r)
            mean = ball_average(w, B, 1.0, spec)
            osc = _osc_integral(w, B, mean, spec)
            ratio = osc / (mean * B.volume())
            bound = 1.0 / (n * abs(math.log(r)))
            rep.check("origin ball n=%d lnr=%.0f" % (n, math.log(r)),
                      ratio, bound + 1e-6)
            rep.rows.append({"n": n, "r": r, "ratio": ratio, "bound": bound})
    w2 = log_weight(2)
    decay = []
    for r0 in r0_list:
        dom = Ball((0.0, 0.0), r0)
        fam = make_family(dom, spacing=r0 / 3.0, r_min=r0 / 4.0, levels=2)
        est = bmo_weighted(w2, dom, fam).value
        decay.append(est)
        rep.rows.append({"n": 2, "r0": r0, "bmo": est})
    rep.require("estimates strictly decreasing in r0",
                all(a > b for a, b in zip(decay, decay[1:])))
    # constant branch: balls beyond the knee carry zero oscillation
    dom = Ball((0.62, 0.0), 0.12)
    fam = make_family(dom, spacing=0.06, r_min=0.04, levels=2)
    flat = bmo_weighted(w2, dom, fam).value
    rep.check("constant branch oscillation", flat, 1e-12)
    return rep
