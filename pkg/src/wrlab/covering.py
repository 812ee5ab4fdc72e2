"""Lattice realization of the weighted parabolic covering construction.

The continuum family of density-q cylinders is replaced by a finite dyadic
lattice of candidates over a cell decomposition of a reference backward
cylinder.  Densities come from precomputed cell measures (no fresh quadrature
per candidate); the enlarged sets use the inner-cell convention while the
target set uses whole cells, biasing every check toward harder-to-pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .geometry import WeightedCylinder
from .report import Report
from .weights import Weight

__all__ = [
    "CellLattice",
    "CellSet",
    "CandidateSet",
    "CandidateCylinder",
    "CoveringConstants",
    "CoveringResult",
    "make_lattice",
    "random_cellset",
    "candidate_cylinders",
    "greedy_disjoint_selection",
    "build_E_sets",
    "run_covering",
    "verify_covering",
    "derived_constants",
]


# ---------------------------------------------------------------------------
# lattice and cell sets
# ---------------------------------------------------------------------------

class CellLattice:
    """Cell decomposition of the reference cylinder B_r x (-H, 0): nx x nx
    spatial cells, nt time cells, with per-cell integrals of w and w^{-n}."""

    def __init__(self, weight: Weight, r, nx, nt, gl_pts=4):
        if weight.dim != 2:
            raise ValueError("the covering lattice is two-dimensional")
        self.weight = weight
        self.r = float(r)
        self.nx = int(nx)
        self.nt = int(nt)
        self.delta = 2.0 * self.r / self.nx
        edges = -self.r + self.delta * np.arange(self.nx + 1)
        self.centers = 0.5 * (edges[:-1] + edges[1:])
        xg, wg = np.polynomial.legendre.leggauss(gl_pts)
        half = 0.5 * self.delta
        offs = half * xg
        wts = half * wg
        cx = (self.centers[:, None] + offs[None, :])  # (nx, g)
        pts = np.stack(
            [np.repeat(np.repeat(cx[:, None, :, None], self.nx, 1), gl_pts, 3),
             np.repeat(np.repeat(cx[None, :, None, :], self.nx, 0), gl_pts, 2)],
            axis=-1)
        flat = pts.reshape(-1, 2)
        wv, sing = weight.eval_many(flat)
        if np.any(sing):
            raise ValueError("cell quadrature node hit a singular point")
        wv = wv.reshape(self.nx, self.nx, gl_pts, gl_pts)
        with np.errstate(divide="ignore"):
            winv = wv ** (-2.0)
        ww = np.outer(wts, wts)
        self.cell_w = np.einsum("ijkl,kl->ij", wv, ww)
        self.cell_winv = np.einsum("ijkl,kl->ij", winv, ww)
        cx2d, cy2d = np.meshgrid(self.centers, self.centers, indexing="ij")
        self.inside = cx2d ** 2 + cy2d ** 2 < self.r ** 2
        area_in = float(self.inside.sum()) * self.delta ** 2
        avg_inv = float(self.cell_winv[self.inside].sum()) / area_in
        self.height = self.r ** 2 * avg_inv ** 0.5
        self.tau = self.height / self.nt
        self.t0 = -self.height

    def cylinder_height(self, i, j, rad_cells):
        """Height of the lattice cylinder at center cell (i, j)."""
        di, dj, _ = _stencil(rad_cells)
        s_inv = self.cell_winv[i + di, j + dj].sum()
        area = len(di) * self.delta ** 2
        return (rad_cells * self.delta) ** 2 * (s_inv / area) ** 0.5

    def measure(self, mask3d):
        """w-measure of a cell mask (any number of time cells)."""
        per_slice = np.einsum("ijk->k", mask3d * self.cell_w[:, :, None])
        return float(per_slice.sum()) * self.tau


@dataclass
class CellSet:
    lattice: CellLattice
    mask: np.ndarray  # (nx, nx, nt) bool

    def measure(self):
        return self.lattice.measure(self.mask)


@dataclass(frozen=True)
class CandidateCylinder:
    center_cell: tuple      # (i, j)
    center: tuple           # spatial point
    top: float              # s
    radius: float
    height: float
    density: float

    def cylinder(self, weight):
        return WeightedCylinder("C", (self.center, self.top), self.radius,
                                self.height, weight)


@dataclass
class CandidateSet:
    """Qualifying lattice cylinders, stored columnar."""

    lattice: CellLattice
    q: float
    ii: np.ndarray
    jj: np.ndarray
    khalf: np.ndarray       # top time in units of tau/2 above the bottom
    rad_cells: np.ndarray
    heights: np.ndarray
    densities: np.ndarray

    def __len__(self):
        return len(self.ii)

    def tops(self):
        return self.lattice.t0 + 0.5 * self.khalf * self.lattice.tau

    def centers(self):
        cs = self.lattice.centers
        return np.stack([cs[self.ii], cs[self.jj]], axis=1)

    def radii(self):
        return self.rad_cells * self.lattice.delta

    def to_list(self, indices=None):
        idx = range(len(self)) if indices is None else indices
        cs = self.lattice.centers
        tops = self.tops()
        out = []
        for k in idx:
            out.append(CandidateCylinder(
                (int(self.ii[k]), int(self.jj[k])),
                (float(cs[self.ii[k]]), float(cs[self.jj[k]])),
                float(tops[k]), float(self.rad_cells[k] * self.lattice.delta),
                float(self.heights[k]), float(self.densities[k])))
        return out


def make_lattice(weight, r=1.0, nx=64, nt=128):
    return CellLattice(weight, r, nx, nt)


def _stencil(rad_cells):
    """Offsets (di, dj) of cells whose centers lie in the open ball of
    `rad_cells` cells, plus the squared cell distances."""
    m = int(math.ceil(rad_cells))
    di, dj = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1),
                         indexing="ij")
    keep = di ** 2 + dj ** 2 < rad_cells ** 2 - 1e-12
    return di[keep], dj[keep], (2 * m + 1)


def _inner_stencil(rad_cells_eta):
    """Offsets of cells entirely inside the ball of radius rad_cells_eta
    (cell units): center distance + half diagonal below the radius."""
    m = int(math.ceil(rad_cells_eta))
    di, dj = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1),
                         indexing="ij")
    keep = np.sqrt(di ** 2 + dj ** 2) + math.sqrt(0.5) <= rad_cells_eta + 1e-12
    return di[keep], dj[keep]


def _conv_mask(kernel_offsets, field3d):
    """Sum of field3d over the spatial stencil, per cell (same shape)."""
    di, dj = kernel_offsets
    m = int(max(np.max(np.abs(di)), np.max(np.abs(dj))))
    k = np.zeros((2 * m + 1, 2 * m + 1, 1))
    k[di + m, dj + m, 0] = 1.0
    out = fftconvolve(field3d, k[::-1, ::-1, :], mode="same")
    return out


def random_cellset(lattice: CellLattice, rng, count=(5, 20),
                   rad_choices=(4, 8, 16)):
    """Union of `count` random lattice cylinders (whole-cell rasterization)."""
    k = int(rng.integers(count[0], count[1] + 1))
    mask = np.zeros((lattice.nx, lattice.nx, lattice.nt), dtype=bool)
    made = 0
    while made < k:
        rad = int(rng.choice(rad_choices))
        rho = rad * lattice.delta
        i = int(rng.integers(0, lattice.nx))
        j = int(rng.integers(0, lattice.nx))
        x, y = lattice.centers[i], lattice.centers[j]
        if math.hypot(x, y) + rho > lattice.r:
            continue
        h = lattice.cylinder_height(i, j, rad)
        eta_h = h / lattice.tau
        kk = int(rng.integers(int(math.ceil(eta_h)) + 1, lattice.nt + 1))
        m_hi = kk - 1
        m_lo = int(math.floor(kk - eta_h - 0.5)) + 1
        if m_lo < 0:
            continue
        di, dj, _ = _stencil(rad)
        mask[i + di[:, None], j + dj[:, None],
             np.arange(m_lo, m_hi + 1)[None, :]] = True
        made += 1
    return CellSet(lattice, mask)


# ---------------------------------------------------------------------------
# candidates
# ---------------------------------------------------------------------------

def candidate_cylinders(gamma: CellSet, q, rad_choices=(4, 8, 16)):
    """All lattice cylinders contained in the reference whose w-density
    against gamma is at least q.  Tops live on the half-cell time lattice."""
    lat = gamma.lattice
    if not rad_choices:
        raise ValueError("empty candidate lattice")
    nx, nt, tau = lat.nx, lat.nt, lat.tau
    gw = gamma.mask * lat.cell_w[:, :, None] * tau
    cs = lat.centers
    cx, cy = np.meshgrid(cs, cs, indexing="ij")
    rr = np.sqrt(cx ** 2 + cy ** 2)

    out = {k: [] for k in ("i", "j", "khalf", "rad", "h", "den")}
    for rad in rad_choices:
        rho = rad * lat.delta
        di, dj, _ = _stencil(rad)
        valid = rr + rho <= lat.r + 1e-12
        s_w = _conv_mask((di, dj), lat.cell_w[:, :, None]).squeeze(-1)
        s_winv = _conv_mask((di, dj), lat.cell_winv[:, :, None]).squeeze(-1)
        area = len(di) * lat.delta ** 2
        h = rho ** 2 * np.sqrt(np.maximum(s_winv, 0.0) / area)
        eta_h = h / tau
        g_conv = _conv_mask((di, dj), gw)
        cum = np.concatenate(
            [np.zeros((nx, nx, 1)), np.cumsum(g_conv, axis=2)], axis=2)
        for khalf in range(1, 2 * nt + 1):
            shalf = 0.5 * khalf
            m_hi = int(math.ceil(shalf - 0.5)) - 1
            m_lo = np.floor(shalf - eta_h - 0.5).astype(int) + 1
            L = m_hi - m_lo + 1
            ok = valid & (m_lo >= 0) & (L >= 1) & (shalf * tau >= h - 1e-12)
            if not ok.any():
                continue
            hi_cum = cum[:, :, min(m_hi + 1, nt)]
            lo_cum = np.take_along_axis(
                cum, np.clip(m_lo, 0, nt)[..., None], axis=2)[..., 0]
            num = hi_cum - lo_cum
            den = s_w * tau * np.maximum(L, 0)
            hit = ok & (num >= q * den * (1.0 - 1e-12)) & (den > 0)
            if not hit.any():
                continue
            idx = np.nonzero(hit)
            out["i"].append(idx[0])
            out["j"].append(idx[1])
            out["khalf"].append(np.full(len(idx[0]), khalf, dtype=np.int32))
            out["rad"].append(np.full(len(idx[0]), rad, dtype=np.int32))
            out["h"].append(h[idx])
            out["den"].append(num[idx] / den[idx])

    if not out["i"]:
        return CandidateSet(lat, q, *(np.zeros(0, dtype=np.int64) for _ in range(4)),
                            np.zeros(0), np.zeros(0))
    return CandidateSet(
        lat, q,
        np.concatenate(out["i"]).astype(np.int64),
        np.concatenate(out["j"]).astype(np.int64),
        np.concatenate(out["khalf"]).astype(np.int64),
        np.concatenate(out["rad"]).astype(np.int64),
        np.concatenate(out["h"]),
        np.concatenate(out["den"]))


# ---------------------------------------------------------------------------
# greedy selection
# ---------------------------------------------------------------------------

def _overlaps(cx, ct, cb, cr, x, t, b, r):
    """Open-cylinder overlap of candidate arrays against one cylinder."""
    d2 = np.sum((cx - x) ** 2, axis=1)
    return (d2 < (cr + r) ** 2 - 1e-12) & (ct > b + 1e-12) & (t > cb + 1e-12)


def greedy_disjoint_selection(cands: CandidateSet):
    """Indices of a maximal pairwise-disjoint subfamily, selected by
    descending radius with lexicographic (center, top) tie-breaks.

    Processed in blocks: each block is first screened against the selected
    set in one vector pass, then its survivors are resolved sequentially."""
    if len(cands) == 0:
        return np.zeros(0, dtype=np.int64)
    centers = cands.centers()
    tops = cands.tops()
    bots = tops - cands.heights
    rads = cands.radii()
    order = np.lexsort((tops, centers[:, 1], centers[:, 0], -rads))
    sel = []
    sx = np.empty((len(cands), 2))
    st = np.empty(len(cands))
    sb = np.empty(len(cands))
    sr = np.empty(len(cands))
    m = 0
    block = 4096
    for start in range(0, len(order), block):
        chunk = order[start:start + block]
        if m:
            d2 = np.sum((centers[chunk][:, None, :] - sx[None, :m, :]) ** 2, -1)
            olap = (d2 < (rads[chunk][:, None] + sr[None, :m]) ** 2 - 1e-12) \
                & (tops[chunk][:, None] > sb[None, :m] + 1e-12) \
                & (st[None, :m] > bots[chunk][:, None] + 1e-12)
            alive = ~olap.any(axis=1)
        else:
            alive = np.ones(len(chunk), dtype=bool)
        m0 = m
        for k in chunk[alive]:
            if m > m0 and _overlaps(sx[m0:m], st[m0:m], sb[m0:m], sr[m0:m],
                                    centers[k], tops[k], bots[k],
                                    rads[k]).any():
                continue
            sel.append(int(k))
            sx[m] = centers[k]
            st[m] = tops[k]
            sb[m] = bots[k]
            sr[m] = rads[k]
            m += 1
    return np.asarray(sel, dtype=np.int64)


def audit_selection(cands: CandidateSet, selected):
    """(disjoint, maximal): brute-force pairwise disjointness of the selected
    cylinders and the no-rejected-candidate-is-disjoint-from-all property."""
    centers = cands.centers()
    tops = cands.tops()
    bots = tops - cands.heights
    rads = cands.radii()
    s = np.asarray(selected)
    disjoint = True
    for a in range(len(s)):
        i = s[a]
        js = s[a + 1:]
        d2 = np.sum((centers[js] - centers[i]) ** 2, axis=1)
        olap = (d2 < (rads[js] + rads[i]) ** 2 - 1e-12) \
            & (tops[i] > bots[js] + 1e-12) & (tops[js] > bots[i] + 1e-12)
        if olap.any():
            disjoint = False
            break
    hit = np.zeros(len(cands), dtype=bool)
    hit[s] = True
    for i in s:
        d2 = np.sum((centers - centers[i]) ** 2, axis=1)
        olap = (d2 < (rads + rads[i]) ** 2 - 1e-12) \
            & (tops[i] > bots + 1e-12) & (tops > bots[i] + 1e-12)
        hit |= olap
    return disjoint, bool(hit.all())


# ---------------------------------------------------------------------------
# enlarged sets
# ---------------------------------------------------------------------------

def build_E_sets(cands: CandidateSet, eta, l):
    """Inner-cell rasterization of the union of shrunken backward cylinders
    (radius eta*rho, same height, below the top) and their forward copies
    (heights (l-1)*h, starting one height above the top).

    Returns (tilde set on the reference cells, hat mask on a time-extended
    axis, extension length in cells)."""
    lat = cands.lattice
    if not (0.0 < eta < 1.0) or l <= 1.0:
        raise ValueError("need eta in (0,1) and l > 1")
    nx, tau = lat.nx, lat.tau
    ntc = lat.nt
    if len(cands) == 0:
        ext = 1
        return (CellSet(lat, np.zeros((nx, nx, ntc), bool)),
                np.zeros((nx, nx, ntc + ext), bool), ext)
    eta_h = cands.heights / tau
    ext = int(math.ceil(float(np.max(0.5 * cands.khalf + l * eta_h)))) \
        - ntc + 2
    ext = max(ext, 1)
    tilde = np.zeros((nx, nx, ntc), dtype=bool)
    hat = np.zeros((nx, nx, ntc + ext), dtype=bool)
    for rad in np.unique(cands.rad_cells):
        pick = cands.rad_cells == rad
        ii, jj = cands.ii[pick], cands.jj[pick]
        kh = cands.khalf[pick]
        eh = eta_h[pick]
        shalf = 0.5 * kh
        # inner time windows (cells fully inside the open intervals)
        t_lo = np.ceil(shalf - eh - 1e-12).astype(int)
        t_hi = np.floor(shalf + 1e-12).astype(int) - 1
        h_lo = np.ceil(shalf + eh - 1e-12).astype(int)
        h_hi = np.floor(shalf + l * eh + 1e-12).astype(int) - 1
        dt = np.zeros((nx, nx, ntc + 1), dtype=np.int32)
        dh = np.zeros((nx, nx, ntc + ext + 1), dtype=np.int32)
        ok_t = t_hi >= t_lo
        np.add.at(dt, (ii[ok_t], jj[ok_t], np.clip(t_lo[ok_t], 0, ntc)), 1)
        np.add.at(dt, (ii[ok_t], jj[ok_t], np.clip(t_hi[ok_t] + 1, 0, ntc)), -1)
        ok_h = h_hi >= h_lo
        np.add.at(dh, (ii[ok_h], jj[ok_h], np.clip(h_lo[ok_h], 0, ntc + ext)), 1)
        np.add.at(dh, (ii[ok_h], jj[ok_h],
                       np.clip(h_hi[ok_h] + 1, 0, ntc + ext)), -1)
        t_cols = np.cumsum(dt, axis=2)[:, :, :ntc] > 0
        h_cols = np.cumsum(dh, axis=2)[:, :, :ntc + ext] > 0
        di, dj = _inner_stencil(eta * rad)
        tilde |= _conv_mask((di, dj), t_cols.astype(float)) > 0.5
        hat |= _conv_mask((di, dj), h_cols.astype(float)) > 0.5
    return CellSet(lat, tilde), hat, ext


@dataclass
class CoveringResult:
    candidates: CandidateSet
    selected: np.ndarray
    tilde: CellSet
    hat_mask: np.ndarray
    hat_ext: int
    q: float
    eta: float
    l: float

    @property
    def xi1(self):
        return (self.l - 1.0) / (self.l + 1.0)

    def hat_measure(self):
        lat = self.candidates.lattice
        per_slice = np.einsum("ijk->k",
                              self.hat_mask * lat.cell_w[:, :, None])
        return float(per_slice.sum()) * lat.tau

    def selected_rows(self):
        rows = []
        for c in self.candidates.to_list(self.selected):
            rows.append({"x": c.center[0], "y": c.center[1], "top": c.top,
                         "radius": c.radius, "height": c.height,
                         "density": c.density})
        return rows


def run_covering(gamma: CellSet, q=0.5, eta=0.9, l=3.0,
                 rad_choices=(4, 8, 16)):
    cands = candidate_cylinders(gamma, q, rad_choices)
    sel = greedy_disjoint_selection(cands)
    tilde, hat, ext = build_E_sets(cands, eta, l)
    return CoveringResult(cands, sel, tilde, hat, ext, q, eta, l)


def verify_covering(gamma: CellSet, result: CoveringResult, K0=None,
                    raster_tol=0.02):
    """The three discretized conclusions: gamma is covered by the shrunken
    union up to raster tolerance; the forward union carries at least
    xi1 = (l-1)/(l+1) of its measure; and the enlargement ratio against gamma
    is recorded as a fitted constant (its sharp value is non-constructive)."""
    if result.candidates.lattice is not gamma.lattice:
        raise ValueError("result was not built from this gamma")
    lat = gamma.lattice
    m_gamma = gamma.measure()
    m_tilde = result.tilde.measure()
    m_hat = result.hat_measure()
    uncovered = lat.measure(gamma.mask & ~result.tilde.mask)
    rep = Report("covering",
                 config={"q": result.q, "eta": result.eta, "l": result.l,
                         "nx": lat.nx, "nt": lat.nt, "raster_tol": raster_tol,
                         "weight": repr(lat.weight.spec)})
    rep.rows.append({"gamma": m_gamma, "tilde": m_tilde, "hat": m_hat,
                     "uncovered": uncovered,
                     "selected": int(len(result.selected)),
                     "candidates": int(len(result.candidates))})
    rep.check("covered up to raster tolerance", uncovered,
              raster_tol * m_gamma)
    rep.check("forward measure vs shrunken",
              result.xi1 * m_tilde * (1.0 - raster_tol), m_hat)
    if m_gamma > 0:
        rep.fit("xi0_ratio", m_tilde / m_gamma)
    disjoint, maximal = audit_selection(result.candidates, result.selected)
    rep.require("selection pairwise disjoint", disjoint)
    rep.require("selection maximal", maximal)
    if K0 is not None:
        rep.config["K0"] = K0
    return rep


# ---------------------------------------------------------------------------
# derived constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoveringConstants:
    n: int
    K0: float
    q0: float
    eta0: float
    xi0: float
    l0: float
    xi1: float

    def identity_gap(self):
        """xi0 * xi1(l0) - (1 + xi0)/2: vanishes by construction of l0."""
        return self.xi0 * self.xi1 - 0.5 * (1.0 + self.xi0)


def derived_constants(n, K0, q0, eta0=0.9):
    """Enlargement and stacking constants:
    xi0 = 1 + (1 - q0) / (2 * 3^{n+2} * K0), l0 = (3 xi0 + 1)/(xi0 - 1),
    xi1 = (l0 - 1)/(l0 + 1); they satisfy xi0*xi1 = (1 + xi0)/2."""
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValueError("need integer dimension n >= 1")
    if not (0.0 < q0 < 1.0):
        raise ValueError("need q0 in (0, 1)")
    if K0 < 1.0:
        raise ValueError("need K0 >= 1")
    xi0 = 1.0 + (1.0 - q0) / (2.0 * 3.0 ** (n + 2) * K0)
    l0 = (3.0 * xi0 + 1.0) / (xi0 - 1.0)
    xi1 = (l0 - 1.0) / (l0 + 1.0)
    c = CoveringConstants(int(n), float(K0), float(q0), float(eta0),
                          xi0, l0, xi1)
    if abs(c.identity_gap()) > 1e-12:
        raise ArithmeticError("constant identity violated: %.3e"
                              % c.identity_gap())
    return c
