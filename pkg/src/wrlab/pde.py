"""Discrete realization of u_t - w(x) a_ij(x,t) D_ij u on space-time grids.

The elliptic part uses the monotone second-order stencil: axis second
differences plus diagonal second differences carrying the mixed terms, so the
implicit Euler matrix is an M-matrix whenever the coefficient field is
diagonally dominant (margin > 0) and the discrete comparison principle is
provable, not just observed.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import binary_erosion
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .ball_calculus import Ball, ball_average
from .geometry import SlantCylinder, WeightedCylinder, parabolic_boundary
from .quadrature import DEFAULT_SPEC
from .report import Report
from .weights import Weight

__all__ = [
    "NumericalError",
    "Grid",
    "GridFunction",
    "CoefficientField",
    "identity_field",
    "sample_dominant_field",
    "DirichletProblem",
    "weight_on_grid",
    "apply_L",
    "solve_dirichlet",
    "SolveResult",
    "upper_contact_set",
    "abp_check",
    "barrier_eval",
    "weighted_norm",
    "hessian_frobenius",
    "save_grid_function",
    "load_grid_function",
]


class NumericalError(RuntimeError):
    """Solver or assembly failure (non-convergence, dominance violation)."""


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

class Grid:
    """Uniform spatial box grid plus uniform time levels."""

    def __init__(self, axes, times):
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.n = len(self.axes)
        hs = {round(float(a[1] - a[0]), 14) for a in self.axes}
        if len(hs) != 1:
            raise ValueError("anisotropic spacing not supported")
        self.h = float(self.axes[0][1] - self.axes[0][0])
        self.times = np.asarray(times, dtype=float)
        self.tau = float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0
        self.shape = tuple(len(a) for a in self.axes)
        if min(self.shape) < 9:
            raise ValueError("need at least 9 nodes per spatial axis")
        grids = np.meshgrid(*self.axes, indexing="ij")
        self.points = np.stack(grids, axis=-1)

    @classmethod
    def for_cylinder(cls, region, nx, nt):
        if isinstance(region, WeightedCylinder):
            y = np.asarray(region.center[0])
            r = region.radius
            t0, t1 = region.time_interval()
        elif isinstance(region, SlantCylinder):
            t0, t1 = region.time_interval()
            a0 = region.axis_at(t0)
            a1 = region.axis_at(t1)
            lo = np.minimum(a0, a1) - region.rho
            hi = np.maximum(a0, a1) + region.rho
            y = 0.5 * (lo + hi)
            r = 0.5 * float(np.max(hi - lo))
        else:
            raise TypeError("unsupported region %r" % (region,))
        axes = [np.linspace(y[i] - r, y[i] + r, nx) for i in range(len(y))]
        times = np.linspace(t0, t1, nt + 1)
        return cls(axes, times)

    def ball_mask(self, center, radius):
        d = self.points - np.asarray(center, dtype=float)
        return np.sqrt(np.sum(d * d, axis=-1)) <= radius + 1e-12

    def domain_mask(self, center, radius):
        """Closed outer-shell convention: nodes within half a cell of the
        analytic boundary count as domain nodes."""
        d = self.points - np.asarray(center, dtype=float)
        return np.sqrt(np.sum(d * d, axis=-1)) <= radius + 0.5 * self.h + 1e-12

    def erode(self, mask):
        return binary_erosion(mask, structure=np.ones((3,) * self.n, dtype=bool),
                              border_value=0)

    def flat_points(self):
        return self.points.reshape(-1, self.n)


@dataclass
class GridFunction:
    """Node values on a grid, time-major: values[k] is the level-k slice."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        want = (len(self.grid.times),) + self.grid.shape
        if self.values.shape != want:
            raise ValueError("values shaped %s, expected %s"
                             % (self.values.shape, want))
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function carries non-finite values")


# ---------------------------------------------------------------------------
# coefficient fields
# ---------------------------------------------------------------------------

class CoefficientField:
    """Symmetric coefficient matrices per node (optionally per level)."""

    def __init__(self, a, nu, grid: Grid, time_varying=False):
        self.nu = float(nu)
        self.grid = grid
        self.time_varying = time_varying
        self._a = np.asarray(a, dtype=float)

    def at_level(self, k):
        if self.time_varying:
            return self._a[k]
        return self._a

    def dominance_margin(self):
        m = math.inf
        levels = range(len(self.grid.times)) if self.time_varying else (0,)
        for k in levels:
            a = self.at_level(k)
            diag = np.stack([a[..., i, i] for i in range(self.grid.n)], -1)
            off = np.sum(np.abs(a), axis=-1) - np.abs(diag)
            m = min(m, float(np.min(diag - off)))
        return m


def identity_field(grid: Grid, nu=0.5):
    a = np.broadcast_to(np.eye(grid.n), grid.shape + (grid.n, grid.n))
    return CoefficientField(a, nu, grid)


def sample_dominant_field(grid: Grid, rng, nu=0.5, cells=6, time_varying=False,
                          min_margin=0.05):
    """Random symmetric field, eigenvalues in [nu, 1/nu], diagonally dominant,
    piecewise constant on a coarse cell partition (fixed physical roughness
    scale, so grid refinement does not change the coefficient)."""
    n = grid.n
    nt = len(grid.times) if time_varying else 1
    shape = (nt,) + (cells,) * n

    def sample_block(count):
        lam = rng.uniform(nu, 1.0 / nu, size=(count, n))
        th = rng.uniform(-math.pi, math.pi, size=count)
        out = np.empty((count, n, n))
        for idx in range(count):
            if n == 1:
                out[idx] = [[lam[idx, 0]]]
                continue
            c, s = math.cos(th[idx]), math.sin(th[idx])
            R = np.eye(n)
            R[0, 0], R[0, 1], R[1, 0], R[1, 1] = c, -s, s, c
            out[idx] = R @ np.diag(lam[idx]) @ R.T
        return out

    total = int(np.prod(shape))
    mats = np.empty((total, n, n))
    filled = 0
    while filled < total:
        cand = sample_block(2 * (total - filled))
        diag = np.stack([cand[:, i, i] for i in range(n)], -1)
        off = np.sum(np.abs(cand), axis=-1) - np.abs(diag)
        ok = np.min(diag - off, axis=-1) >= min_margin
        good = cand[ok]
        take = min(len(good), total - filled)
        mats[filled:filled + take] = good[:take]
        filled += take
    coarse = mats.reshape(shape + (n, n))

    # map nodes onto coarse cells by position
    idxs = []
    for i in range(n):
        a = grid.axes[i]
        frac = (a - a[0]) / max(a[-1] - a[0], 1e-300)
        idxs.append(np.minimum((frac * cells).astype(int), cells - 1))
    mesh = np.meshgrid(*idxs, indexing="ij")
    if time_varying:
        a_nodes = np.empty((nt,) + grid.shape + (n, n))
        for k in range(nt):
            a_nodes[k] = coarse[(k,) + tuple(m for m in mesh)]
        return CoefficientField(a_nodes, nu, grid, time_varying=True)
    a_nodes = coarse[(0,) + tuple(m for m in mesh)]
    return CoefficientField(a_nodes, nu, grid)


# ---------------------------------------------------------------------------
# weight on the grid
# ---------------------------------------------------------------------------

def weight_on_grid(w: Weight, grid: Grid, trunc_band=None, spec=DEFAULT_SPEC):
    """Weight values at spatial nodes.  Nodes within h/4 of a blow-up or
    vanishing point take the small-ball average instead (cell-offset rule),
    keeping both w and w^{-n} finite on the grid; an optional band [lo, hi]
    truncation mirrors the bounded-weight reduction."""
    pts = grid.flat_points()
    vals, sing = w.eval_many(pts)
    near = np.zeros(len(pts), dtype=bool)
    for z in w.special_points:
        near |= np.linalg.norm(pts - np.asarray(z), axis=1) < grid.h / 4.0
    for i in np.nonzero(near | sing | (vals <= 0.0))[0]:
        vals[i] = ball_average(w, Ball(tuple(pts[i]), grid.h / 4.0), 1.0, spec)
    if trunc_band is not None:
        lo, hi = trunc_band
        vals = np.clip(vals, lo, hi)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("weight evaluation left non-finite node values")
    return vals.reshape(grid.shape)


# ---------------------------------------------------------------------------
# the monotone elliptic stencil
# ---------------------------------------------------------------------------

def _stencil_terms(a_level, n):
    """Decompose a:D^2 into second differences with non-negative coefficients:
    axis terms (a_ii - sum_j |a_ij|) plus one diagonal term per pair.
    Returns [(offset tuple, coefficient array)] for the *difference* operators;
    each entry means coef * (u(x+off*h) - 2u(x) + u(x-off*h)) / (|off|^2 h^2)
    with |off|^2 the squared lattice length of the offset."""
    terms = []
    diag = [a_level[..., i, i] for i in range(n)]
    spare = [d.copy() for d in diag]
    for i in range(n):
        for j in range(i + 1, n):
            aij = a_level[..., i, j]
            pos = np.maximum(aij, 0.0)
            neg = np.maximum(-aij, 0.0)
            off_p = tuple(1 if k == i or k == j else 0 for k in range(n))
            off_m = tuple(1 if k == i else (-1 if k == j else 0) for k in range(n))
            # (u_xx + 2u_xy + u_yy) from the (+,+) diagonal, (u_xx - 2u_xy + u_yy)
            # from the (+,-) diagonal; each consumes |a_ij| of both axis terms
            terms.append((off_p, pos))
            terms.append((off_m, neg))
            spare[i] = spare[i] - np.abs(aij)
            spare[j] = spare[j] - np.abs(aij)
    for i in range(n):
        off = tuple(1 if k == i else 0 for k in range(n))
        terms.append((off, spare[i]))
    return [(off, c) for off, c in terms if np.any(c != 0.0)]


def _second_diff(vals, off):
    up = vals
    dn = vals
    for ax, o in enumerate(off):
        if o:
            up = np.roll(up, -o, axis=ax)
            dn = np.roll(dn, o, axis=ax)
    return up - 2.0 * vals + dn


def elliptic_apply(vals, w_nodes, a_level, grid: Grid):
    """w(x) a_ij D_ij vals via the monotone stencil; valid on interior nodes."""
    n = grid.n
    out = np.zeros_like(vals)
    for off, coef in _stencil_terms(a_level, n):
        scale = float(sum(o * o for o in off))
        out += coef * _second_diff(vals, off) / (scale * grid.h ** 2)
    return w_nodes * out


def apply_L(u, w_nodes, fld: CoefficientField, grid: Grid):
    """Backward time difference minus the weighted elliptic part, at levels
    k >= 1 (level 0 carries no backward difference)."""
    u = np.asarray(u, dtype=float)
    nt = len(grid.times)
    out = np.zeros_like(u)
    for k in range(1, nt):
        dt = (u[k] - u[k - 1]) / grid.tau
        out[k] = dt - elliptic_apply(u[k], w_nodes, fld.at_level(k), grid)
    return out


# ---------------------------------------------------------------------------
# Dirichlet solves
# ---------------------------------------------------------------------------

@dataclass
class DirichletProblem:
    domain: object            # WeightedCylinder or SlantCylinder
    weight: Weight
    field: CoefficientField | None
    rhs: object               # callable(x, t) -> value, or array (nt, *shape)
    boundary: object          # callable(x, t) -> value, or array (nt, *shape)
    trunc_band: tuple | None = None


@dataclass
class SolveResult:
    grid: Grid
    u: np.ndarray
    active: np.ndarray        # (nt, *shape) node-is-in-domain mask
    interior: np.ndarray      # (nt, *shape) unknown mask (levels >= 1)
    boundary_mask: np.ndarray
    w_nodes: np.ndarray
    stats: dict


class SeparableField:
    """Space-time data of the form spatial(x) * profile(t), with the spatial
    factor precomputed on the grid (cheap per-level evaluation)."""

    def __init__(self, spatial_values, time_profile):
        self.spatial = np.asarray(spatial_values, dtype=float)
        self.profile = time_profile

    def level(self, grid, k, mask):
        return self.spatial[mask] * float(self.profile(grid.times[k]))


def _eval_on(fn_or_array, grid, k, mask):
    if isinstance(fn_or_array, SeparableField):
        return fn_or_array.level(grid, k, mask)
    if callable(fn_or_array):
        pts = grid.points[mask]
        t = grid.times[k]
        return np.asarray(fn_or_array(pts, t), dtype=float)
    return np.asarray(fn_or_array)[k][mask]


def _assemble_level(grid, w_nodes, a_level, interior):
    """Sparse M-matrix rows of -w a:D^2 over interior nodes, plus the column
    split into interior unknowns and known (non-interior) nodes."""
    n = grid.n
    shape = grid.shape
    size = int(np.prod(shape))
    idx = np.arange(size).reshape(shape)
    int_flat = idx[interior]
    col_of = -np.ones(size, dtype=np.int64)
    col_of[int_flat] = np.arange(len(int_flat))

    rows, cols, data = [], [], []
    diag_acc = np.zeros(len(int_flat))
    h2 = grid.h ** 2
    for off, coef in _stencil_terms(a_level, n):
        scale = float(sum(o * o for o in off)) * h2
        c = (w_nodes * coef)[interior] / scale
        diag_acc += 2.0 * c
        for sgn in (+1, -1):
            nb = idx
            for ax, o in enumerate(off):
                if o:
                    nb = np.roll(nb, -sgn * o, axis=ax)
            rows.append(np.arange(len(int_flat)))
            cols.append(nb[interior])
            data.append(-c)
    rows.append(np.arange(len(int_flat)))
    cols.append(int_flat)
    data.append(diag_acc)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    data = np.concatenate(data)
    A = sp.csr_matrix((data, (rows, cols)), shape=(len(int_flat), size))
    known_mask = np.ones(size, dtype=bool)
    known_mask[int_flat] = False
    A_int = A[:, int_flat]
    A_known = A[:, known_mask]
    return A_int.tocsc(), A_known.tocsr(), int_flat, known_mask


def solve_dirichlet(problem: DirichletProblem, nx=17, nt=None, grid=None,
                    solver_tol=1e-10, keep="all"):
    """Implicit Euler with per-level sparse direct solves.

    Requires a positive dominance margin of the coefficient field (the matrix
    is then an M-matrix and the discrete maximum principle holds).  The
    residual of every level solve is checked against solver_tol.
    """
    dom = problem.domain
    if grid is None:
        if nt is None:
            t0, t1 = dom.time_interval()
            # parabolic default: tau = h^2
            ref = dom.radius if isinstance(dom, WeightedCylinder) else dom.rho
            h = 2.0 * ref / (nx - 1)
            nt = max(2, int(round((t1 - t0) / h ** 2)))
        grid = Grid.for_cylinder(dom, nx, nt)
    nt_levels = len(grid.times)

    fld = problem.field if problem.field is not None else identity_field(grid)
    margin = fld.dominance_margin()
    if margin <= 0:
        raise NumericalError("coefficient field lacks diagonal dominance "
                             "(margin %.3g)" % margin)
    w_nodes = weight_on_grid(problem.weight, grid,
                             trunc_band=problem.trunc_band)

    moving = isinstance(dom, SlantCylinder)
    if moving:
        actives = np.stack([grid.domain_mask(tuple(dom.axis_at(t)), dom.rho)
                            for t in grid.times])
    else:
        base = grid.domain_mask(dom.center[0], dom.radius)
        actives = np.broadcast_to(base, (nt_levels,) + grid.shape).copy()
    interiors = np.stack([grid.erode(actives[k]) for k in range(nt_levels)])
    interiors[0] = False  # level 0 is all data
    bdry = parabolic_boundary(dom, grid)

    u = np.zeros((nt_levels,) + grid.shape)
    g0_mask = actives[0]
    u[0][g0_mask] = _eval_on(problem.boundary, grid, 0, g0_mask)

    lu = None
    A_int = A_known = int_flat = known_mask = None
    static = (not moving) and (not fld.time_varying)
    residual_max = 0.0
    for k in range(1, nt_levels):
        interior = interiors[k]
        if lu is None or not static:
            A_int, A_known, int_flat, known_mask = _assemble_level(
                grid, w_nodes, fld.at_level(k), interior)
            M = (sp.identity(A_int.shape[0], format="csc") / grid.tau) + A_int
            lu = spla.splu(M.tocsc())
        level = np.zeros(grid.shape)
        gmask = actives[k] & ~interior
        level[gmask] = _eval_on(problem.boundary, grid, k, gmask)
        if moving:
            prev = u[k - 1].copy()
            newly = interior & ~actives[k - 1]
            if np.any(newly):
                prev[newly] = _eval_on(problem.boundary, grid, k - 1, newly)
        else:
            prev = u[k - 1]
        f_int = _eval_on(problem.rhs, grid, k, interior)
        rhs = prev[interior] / grid.tau + f_int \
            - A_known @ level.ravel()[known_mask]
        sol = lu.solve(rhs)
        resid = np.max(np.abs((sol / grid.tau) + A_int @ sol - rhs))
        residual_max = max(residual_max, resid)
        if resid > solver_tol * (np.max(np.abs(rhs)) + 1.0):
            raise NumericalError("level %d solve residual %.3e" % (k, resid))
        level.ravel()[int_flat] = sol
        u[k] = level
    stats = {"residual_max": residual_max, "dominance_margin": margin,
             "nx": grid.shape[0], "nt": nt_levels - 1}
    return SolveResult(grid, u, actives, interiors, bdry, w_nodes, stats)


# ---------------------------------------------------------------------------
# upper contact sets
# ---------------------------------------------------------------------------

def _concave_envelope_1d(x, v):
    """Least concave majorant values at the nodes (upper hull, monotone chain)."""
    m = len(x)
    hull = []  # indices
    for i in range(m):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = (x[i1] - x[i0]) * (v[i] - v[i0]) - (v[i1] - v[i0]) * (x[i] - x[i0])
            if cross >= 0:  # i1 below the chord i0-i: drop it
                hull.pop()
            else:
                break
        hull.append(i)
    env = np.empty(m)
    hx, hv = x[hull], v[hull]
    j = 0
    for i in range(m):
        while j + 1 < len(hull) and hx[j + 1] < x[i]:
            j += 1
        if j + 1 < len(hull) and hx[j + 1] >= x[i] and hx[j] <= x[i]:
            tspan = hx[j + 1] - hx[j]
            lam = 0.0 if tspan == 0 else (x[i] - hx[j]) / tspan
            env[i] = (1 - lam) * hv[j] + lam * hv[j + 1]
        else:
            env[i] = hv[min(j, len(hull) - 1)]
    return env


def _concave_envelope_nd(pts, v, tol):
    """Envelope values at the sample points: min over upper hull facet planes.
    Falls back to per-node LP feasibility on degenerate hulls."""
    m, n = pts.shape
    span = v.max() - v.min()
    if span <= tol:
        return np.full(m, v.max())
    cloud = np.column_stack([pts, v])
    try:
        hull = ConvexHull(cloud)
    except QhullError:
        return _envelope_by_lp(pts, v, tol)
    eqs = hull.equations  # a.x + b <= 0 inside
    up = eqs[:, n] > 1e-12
    if not np.any(up):
        return _envelope_by_lp(pts, v, tol)
    az = eqs[up, n]
    slopes = -eqs[up, :n] / az[:, None]
    icept = -eqs[up, n + 1] / az
    # plane: z = icept + slopes.x ; the envelope is their pointwise min
    env = np.full(m, np.inf)
    step = max(1, int(4e6 / max(m, 1)))
    for lo in range(0, len(icept), step):
        block = pts @ slopes[lo:lo + step].T + icept[None, lo:lo + step]
        env = np.minimum(env, block.min(axis=1))
    return env


def _envelope_by_lp(pts, v, tol):
    env = np.empty(len(v))
    for i in range(len(v)):
        p = pts - pts[i]
        b = v - v[i]
        res = linprog(c=np.zeros(pts.shape[1]), A_ub=-p, b_ub=-b + tol,
                      bounds=[(None, None)] * pts.shape[1], method="highs")
        env[i] = v[i] if res.status == 0 else v[i] + 2 * tol + 1.0
    return env


def upper_contact_set(u, grid: Grid, active=None):
    """Nodes admitting a spatial supporting plane dominating all earlier
    values.  For each level, the constraint max over s <= t reduces to the
    running maximum V; a node is in the set iff u = V there and V touches its
    concave envelope over the active slice."""
    u = np.asarray(u, dtype=float)
    nt = len(grid.times)
    if active is None:
        active = np.ones((nt,) + grid.shape, dtype=bool)
    elif active.ndim == len(grid.shape):
        active = np.broadcast_to(active, (nt,) + grid.shape)
    scale = float(np.max(np.abs(u))) + 1.0
    tol = 1e-9 * scale
    mask = np.zeros((nt,) + grid.shape, dtype=bool)
    V = np.where(active[0], u[0], -np.inf)
    for k in range(nt):
        if k > 0:
            V = np.maximum(V, np.where(active[k], u[k], -np.inf))
        sel = active[k]
        pts = grid.points[sel]
        vals = V[sel]
        if grid.n == 1:
            order = np.argsort(pts[:, 0], kind="stable")
            env_sorted = _concave_envelope_1d(pts[order, 0], vals[order])
            env = np.empty_like(vals)
            env[order] = env_sorted
        else:
            env = _concave_envelope_nd(pts, vals, tol)
        touch = (env <= vals + tol) & (u[k][sel] >= vals - tol)
        lvl = np.zeros(grid.shape, dtype=bool)
        lvl[sel] = touch
        mask[k] = lvl
    return mask


# ---------------------------------------------------------------------------
# ABP check
# ---------------------------------------------------------------------------

def abp_check(u, grid: Grid, cyl: WeightedCylinder, w_nodes, fld,
              boundary_mask, active=None, contact=None):
    """Fitted constant of the maximum-principle bound: the interior excess of
    u^+ over its parabolic-boundary sup against r^{n/(n+1)} times the
    L^{n+1}(contact set, w^{-n}) norm of (Lu)^+."""
    n = grid.n
    u = np.asarray(u, dtype=float)
    nt = len(grid.times)
    if active is None:
        active = np.broadcast_to(grid.domain_mask(cyl.center[0], cyl.radius),
                                 (nt,) + grid.shape)
    sup_all = float(np.max(np.where(active, u, -np.inf)).clip(min=0.0))
    sup_bdry = float(np.max(np.where(boundary_mask, u, -np.inf)).clip(min=0.0))
    excess = sup_all - sup_bdry
    if contact is None:
        contact = upper_contact_set(u, grid, active)
    interior = np.stack([grid.erode(active[k]) for k in range(nt)])
    interior[0] = False
    Lu = apply_L(u, w_nodes, fld, grid)
    mask = contact & interior
    pos = np.maximum(Lu, 0.0)
    winv = w_nodes ** (-float(n))
    cellvol = grid.h ** n * grid.tau
    core = float(np.sum((pos[mask] ** (n + 1))
                        * np.broadcast_to(winv, Lu.shape)[mask]) * cellvol) \
        ** (1.0 / (n + 1))
    rep = Report("abp_check", config={"radius": cyl.radius, "n": n})
    rep.rows.append({"excess": excess, "core": core,
                     "contact_nodes": int(mask.sum())})
    rhs_scale = cyl.radius ** (n / (n + 1.0)) * core
    if excess <= 1e-12:
        rep.require("trivial (no interior excess)", True)
        return rep, None
    if core <= 0.0:
        rep.require("positive excess with empty core", False,
                    detail="flagged violation")
        return rep, None
    n0 = excess / rhs_scale
    rep.fit("N0_abp", n0)
    rep.require("fitted constant finite", math.isfinite(n0))
    return rep, n0


# ---------------------------------------------------------------------------
# barrier for slant cylinders
# ---------------------------------------------------------------------------

def barrier_eval(rho, r, y, ell, w: Weight, K, nu, points, tr_a,
                 spec=DEFAULT_SPEC):
    """Barrier data on a batch of space-time points (x, t).

    Phi = rho^2 - |x - t*ell|^2, v = e^{-lam t} rho^-4 Phi^2, and
    lam = Nb^2 K^2 rho^-2 (w)_{B_r(y)} / (16 nu) with Nb fitted as the
    smallest constant bounding |g1| <= Nb K (w)_B on the batch.  Returns the
    grouped terms of the drift-tube differential inequality so that
    -lam Phi^2 + g1 Phi - 8 nu rho^2 (w)_B <= 0 can be checked pointwise.
    """
    if rho <= 0:
        raise ValueError("barrier needs rho > 0")
    pts = np.asarray(points, dtype=float)
    x, t = pts[:, :-1], pts[:, -1]
    ell = np.asarray(ell, dtype=float)
    wB = ball_average(w, Ball(tuple(y), r), 1.0, spec)
    shift = x - t[:, None] * ell[None, :]
    Phi = rho ** 2 - np.sum(shift * shift, axis=1)
    tr = np.asarray(tr_a, dtype=float)
    g1 = 4.0 * (shift @ ell) + 4.0 * wB * tr + 8.0 * wB * nu
    nb_fit = float(np.max(np.abs(g1)) / (K * wB))
    lam = (nb_fit ** 2 / (16.0 * nu)) * K ** 2 * wB / rho ** 2
    v = np.exp(-lam * t) * Phi ** 2 / rho ** 4
    quad = -lam * Phi ** 2 + g1 * Phi - 8.0 * nu * rho ** 2 * wB
    wx, sing = w.eval_many(x)
    wx = np.where(sing, np.inf, wx)
    dev = np.abs(wx - wB)
    g2 = (4.0 * (wx - wB) * tr + 8.0 * (wx - wB) * nu) * Phi \
        - 8.0 * nu * rho ** 2 * (wx - wB)
    with np.errstate(invalid="ignore"):
        g2_ratio = np.where(dev > 0, np.abs(g2) / (rho ** 2 * dev), 0.0)
    return {
        "Phi": Phi, "v": v, "lam": lam, "w_avg": wB, "g1": g1,
        "quad_part": quad, "g2": g2, "nb_fit": nb_fit,
        "g2_envelope": float(np.nanmax(g2_ratio)),
    }


# ---------------------------------------------------------------------------
# norms and serialization
# ---------------------------------------------------------------------------

def weighted_norm(values, p, weight_values, grid: Grid, mask):
    """(sum |v|^p * weight * cell volume)^{1/p} over masked nodes; a
    quasi-norm for p < 1."""
    if p <= 0:
        raise ValueError("norm exponent must be positive")
    if not np.any(mask):
        raise ValueError("empty region in weighted norm")
    vals = np.abs(np.asarray(values, dtype=float)[mask]) ** p
    wv = np.broadcast_to(weight_values, np.asarray(values).shape)[mask]
    cell = grid.h ** grid.n * (grid.tau if np.asarray(values).ndim > grid.n else 1.0)
    return float(np.sum(vals * wv) * cell) ** (1.0 / p)


def hessian_frobenius(u_level, grid: Grid):
    """Frobenius magnitude of the discrete spatial Hessian (centered axis and
    cross differences); valid on interior nodes."""
    n = grid.n
    h2 = grid.h ** 2
    acc = np.zeros_like(u_level)
    for i in range(n):
        off = tuple(1 if k == i else 0 for k in range(n))
        acc += (_second_diff(u_level, off) / h2) ** 2
    for i in range(n):
        for j in range(i + 1, n):
            up = np.roll(np.roll(u_level, -1, axis=i), -1, axis=j)
            dd = np.roll(np.roll(u_level, 1, axis=i), 1, axis=j)
            ud = np.roll(np.roll(u_level, -1, axis=i), 1, axis=j)
            du = np.roll(np.roll(u_level, 1, axis=i), -1, axis=j)
            dij = (up + dd - ud - du) / (4.0 * h2)
            acc += 2.0 * dij ** 2
    return np.sqrt(acc)


_MAGIC = b"WRLBGF01"


def save_grid_function(path, gf: GridFunction):
    """Flat binary layout: header (dims, spacing) + float64 payload,
    row-major within a level, time-major across levels."""
    g = gf.grid
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", g.n, len(g.times)))
        fh.write(struct.pack("<%dI" % g.n, *g.shape))
        fh.write(struct.pack("<dd", g.h, g.tau))
        fh.write(struct.pack("<d", float(g.times[0])))
        fh.write(struct.pack("<%dd" % g.n, *[float(a[0]) for a in g.axes]))
        fh.write(np.ascontiguousarray(gf.values, dtype="<f8").tobytes())


def load_grid_function(path):
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a grid-function file")
        n, nt = struct.unpack("<II", fh.read(8))
        shape = struct.unpack("<%dI" % n, fh.read(4 * n))
        h, tau = struct.unpack("<dd", fh.read(16))
        t0 = struct.unpack("<d", fh.read(8))[0]
        origin = struct.unpack("<%dd" % n, fh.read(8 * n))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    axes = [origin[i] + h * np.arange(shape[i]) for i in range(n)]
    times = t0 + tau * np.arange(nt)
    grid = Grid(axes, times)
    return GridFunction(grid, payload.reshape((nt,) + tuple(shape)).copy())


def grid_function_csv(path, gf: GridFunction, limit=200_000):
    g = gf.grid
    if gf.values.size > limit:
        raise ValueError("grid too large for CSV export")
    import csv as _csv
    with open(path, "w", newline="") as fh:
        wr = _csv.writer(fh)
        wr.writerow(["t"] + ["x%d" % (i + 1) for i in range(g.n)] + ["value"])
        for k, t in enumerate(g.times):
            flat = gf.values[k].ravel()
            for idx, val in enumerate(flat):
                coord = np.unravel_index(idx, g.shape)
                wr.writerow([repr(float(t))]
                            + [repr(float(g.axes[i][coord[i]])) for i in range(g.n)]
                            + [repr(float(val))])
