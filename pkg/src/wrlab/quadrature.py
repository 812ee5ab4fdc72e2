"""Quadrature over balls for weight-algebra integrands.

Integrands are smooth away from finitely many structural points (weight
centers / zeros) and finitely many concentric "break circles" around them
(truncation clamps, log knees, oscillation levels |w - c|).  Polar meshes are
graded geometrically toward the structural points and split exactly at the
break radii; the error is controlled by comparing two resolutions and
refining until the requested relative tolerance is met.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .weights import _sphere_area

__all__ = [
    "QuadratureError",
    "QuadratureSpec",
    "DEFAULT_SPEC",
    "integrate_ball",
    "ball_volume",
    "radial_profile",
    "find_radial_roots",
]


class QuadratureError(RuntimeError):
    """Non-convergent or divergent quadrature request."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature controls.

    method: "auto" picks radial/polar/subdivision per integrand structure;
    "analyticRadial", "adaptiveSubdivision", "tensorGrid" force a family.
    singular_handling: "polarSplit" grades polar meshes at singular points,
    "cellOffset" shifts sample points off singular cells (lattice callers).
    """

    method: str = "auto"
    rel_tol: float = 1e-6
    max_depth: int = 40
    singular_handling: str = "polarSplit"

    def __post_init__(self):
        if not (0.0 < self.rel_tol < 1.0):
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.max_depth > 40 or self.max_depth < 1:
            raise ValueError("max_depth must lie in [1, 40]")


DEFAULT_SPEC = QuadratureSpec()


def ball_volume(n, r=1.0):
    """Lebesgue measure of B_r in R^n: pi^{n/2} / Gamma(n/2 + 1) * r^n."""
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0) * r ** n


@lru_cache(maxsize=64)
def _gl(k):
    x, w = np.polynomial.legendre.leggauss(k)
    return x, w


def _panel_nodes(breaks, gl_pts):
    """Gauss-Legendre nodes/weights on a sequence of panels."""
    x, w = _gl(gl_pts)
    a = breaks[:-1][:, None]
    b = breaks[1:][:, None]
    nodes = 0.5 * (b - a) * x[None, :] + 0.5 * (a + b)
    wts = 0.5 * (b - a) * np.broadcast_to(w[None, :], nodes.shape)
    return nodes.ravel(), wts.ravel()


def _grading_levels(exp_eff, rel_tol):
    """Levels so the un-meshed tail [0, 2^-K] stays below tolerance for an
    integrand ~ u^{exp_eff - 1}."""
    e = max(exp_eff, 0.05)
    need = -math.log2(max(rel_tol, 1e-14) * 0.01) / e
    return int(min(480, max(36, math.ceil(need))))


@lru_cache(maxsize=256)
def _graded_pattern(levels, gl_pts):
    """Nodes/weights on (0, 1], panels geometric toward 0."""
    br = np.power(0.5, np.arange(levels, -1, -1, dtype=float))
    return _panel_nodes(br, gl_pts) + (br[0],)


@lru_cache(maxsize=256)
def _uniform_pattern(panels, gl_pts):
    return _panel_nodes(np.linspace(0.0, 1.0, panels + 1), gl_pts)


# ---------------------------------------------------------------------------
# radial (profile) integrals
# ---------------------------------------------------------------------------

def radial_profile(w, center):
    """Return a 1-D profile u -> w(center + u e1) when w is radially symmetric
    about `center`, else None."""
    from . import weights as W

    def is_radial(spec):
        if isinstance(spec, W.ConstantSpec):
            return True
        if isinstance(spec, (W.PowerSpec, W.LogSpec)):
            return tuple(spec.center) == tuple(center)
        if isinstance(spec, W.ProductSpec):
            return all(is_radial(f) for f in spec.factors)
        if isinstance(spec, W.SumSpec):
            return all(is_radial(t) for _, t in spec.terms)
        if isinstance(spec, (W.BandSpec, W.MollifiedSpec)):
            return is_radial(spec.base)
        if isinstance(spec, W.PowSpec):
            return is_radial(spec.base)
        return False

    if not is_radial(w.spec):
        return None
    c = np.asarray(center, dtype=float)
    e1 = np.zeros(w.dim)
    e1[0] = 1.0

    def prof(u):
        u = np.asarray(u, dtype=float)
        X = c[None, :] + u[:, None] * e1[None, :]
        vals, sing = w.eval_many(X)
        if np.any(sing):
            raise QuadratureError("radial profile evaluated at a singular node")
        return vals

    return prof


def find_radial_roots(profile, R, level, probes=1024):
    """Roots of profile(u) - level on (0, R), located by probing + bisection."""
    u = np.linspace(R / probes, R, probes)
    g = profile(u) - level
    sgn = np.sign(g)
    idx = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
    roots = []
    for i in idx:
        a, b = u[i], u[i + 1]
        fa = g[i]
        for _ in range(70):
            m = 0.5 * (a + b)
            fm = profile(np.array([m]))[0] - level
            if fa * fm <= 0:
                b = m
            else:
                a, fa = m, fm
        roots.append(0.5 * (a + b))
    return roots


def _radial_1d(fn1d, R, n, graded_exp, has_log, splits, gl_pts, levels, panels):
    """integral of fn1d(u) * u^{n-1} over (0, R], graded toward 0 when
    graded_exp is given; `splits` are interior breakpoints (kinks)."""
    cuts = [0.0] + sorted(s for s in splits if 0.0 < s < R) + [R]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 1e-300:
            continue
        if a == 0.0 and graded_exp is not None:
            br = b * np.power(0.5, np.arange(levels, -1, -1, dtype=float))
            nodes, wts = _panel_nodes(br, gl_pts)
            vals = fn1d(nodes) * nodes ** (n - 1) * wts
            seg = float(np.sum(vals))
            u0 = nodes[0]
            f0 = fn1d(np.array([u0]))[0]
            lo = br[0]
            e = graded_exp + n
            if e > 1e-9 and f0 > 0 and not has_log:
                c0 = f0 / u0 ** graded_exp
                seg += c0 * lo ** e / e
            elif e > 1e-9:
                seg += f0 * u0 ** (n - 1) * lo
            total += seg
        else:
            br = np.linspace(a, b, panels + 1)
            nodes, wts = _panel_nodes(br, gl_pts)
            total += float(np.sum(fn1d(nodes) * nodes ** (n - 1) * wts))
    return total


# ---------------------------------------------------------------------------
# angular rules
# ---------------------------------------------------------------------------

def _angular_rule(n, m):
    """Directions and weights integrating over the unit sphere in R^n."""
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if n == 2:
        th = 2.0 * math.pi * (np.arange(m) + 0.5) / m
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        return dirs, np.full(m, 2.0 * math.pi / m)
    mt = max(4, m // 4)
    xc, wc = _gl(mt)
    ph = 2.0 * math.pi * (np.arange(m) + 0.5) / m
    st = np.sqrt(1.0 - xc**2)
    dirs = np.stack(
        [np.outer(st, np.cos(ph)).ravel(),
         np.outer(st, np.sin(ph)).ravel(),
         np.outer(xc, np.ones_like(ph)).ravel()], axis=1)
    wts = np.outer(wc, np.full(m, 2.0 * math.pi / m)).ravel()
    return dirs, wts


def _cone_rule(n, m, axis, delta):
    """Directions/weights over the cone of half-angle delta around `axis`,
    with the sphere measure.  The substitution angle = delta*sin(pi v / 2)
    removes the sqrt edge behavior of chord-length integrands."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    if n == 1:
        return axis[None, :], np.array([1.0])
    v, wv = _gl(m)
    ang = delta * np.sin(0.5 * math.pi * v)
    jac = delta * 0.5 * math.pi * np.cos(0.5 * math.pi * v) * wv
    if n == 2:
        phi0 = math.atan2(axis[1], axis[0])
        phi = phi0 + ang
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        return dirs, jac
    # n == 3: polar angle substitution x azimuth midpoint rule
    e1 = np.array([1.0, 0.0, 0.0])
    if abs(axis @ e1) > 0.9:
        e1 = np.array([0.0, 1.0, 0.0])
    e1 = e1 - (e1 @ axis) * axis
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    mphi = max(8, m)
    ph = 2.0 * math.pi * (np.arange(mphi) + 0.5) / mphi
    half = 0.5 * (v + 1.0)  # polar angle runs over [0, delta] only
    ang = delta * np.sin(0.5 * math.pi * half)
    jac = delta * 0.25 * math.pi * np.cos(0.5 * math.pi * half) * wv
    ct, st = np.cos(ang), np.sin(ang)
    dirs = (ct[:, None, None] * axis[None, None, :]
            + st[:, None, None] * (np.cos(ph)[None, :, None] * e1[None, None, :]
                                   + np.sin(ph)[None, :, None] * e2[None, None, :]))
    wts = (jac * st)[:, None] * np.full(mphi, 2.0 * math.pi / mphi)[None, :]
    return dirs.reshape(-1, 3), wts.ravel()


def _ray_ball_span(pole, center, R, dirs):
    """Per-ray entry/exit distances [u_in, u_out] from `pole` along each
    direction to the ball B_R(center); empty intersections give u_in = u_out."""
    d = np.asarray(pole, dtype=float) - np.asarray(center, dtype=float)
    b = dirs @ d
    disc = b * b + (R * R - float(d @ d))
    hit = disc > 0.0
    s = np.sqrt(np.maximum(disc, 0.0))
    u_in = np.maximum(-b - s, 0.0)
    u_out = np.maximum(-b + s, 0.0)
    u_in[~hit] = 0.0
    u_out[~hit] = 0.0
    return u_in, u_out


def _eval_chunked(fn, pts):
    m = pts.shape[0]
    if m <= 2_000_000:
        return np.asarray(fn(pts), dtype=float)
    out = np.empty(m)
    for i in range(0, m, 2_000_000):
        out[i:i + 2_000_000] = fn(pts[i:i + 2_000_000])
    return out


def _polar_value(fn, pole, center, R, n, grading, m_ang, gl_pts, radii=()):
    """One polar evaluation: pole may sit inside or outside the ball; the
    radial mesh is split at the given radii around the pole and graded toward
    the pole when `grading` = (exponent, has_log) is set."""
    pole = np.asarray(pole, dtype=float)
    center = np.asarray(center, dtype=float)
    D = float(np.linalg.norm(center - pole))
    if D > R * (1.0 + 1e-12):
        delta = math.asin(min(R / D, 1.0))
        dirs, wa = _cone_rule(n, max(12, m_ang // 4), center - pole, delta)
    else:
        dirs, wa = _angular_rule(n, m_ang)
    u_in, u_out = _ray_ball_span(pole, center, R, dirs)
    per_ray = np.zeros(len(dirs))
    edges = [0.0] + sorted(r for r in radii if r > 0.0) + [math.inf]
    tiny = R * 1e-14
    for lo, hi in zip(edges[:-1], edges[1:]):
        a = np.maximum(u_in, lo)
        b = np.minimum(u_out, hi)
        act = b > a + tiny
        if not np.any(act):
            continue
        ai, bi = a[act], b[act]
        if lo == 0.0 and grading is not None and np.all(ai <= tiny):
            e, lg = grading
            levels = _grading_levels(e + n, 1e-7)
            t, wt, t_lo = _graded_pattern(levels, gl_pts)
            pts = pole[None, None, :] \
                + (bi[:, None] * t[None, :])[:, :, None] * dirs[act][:, None, :]
            vals = _eval_chunked(fn, pts.reshape(-1, n)).reshape(len(bi), len(t))
            seg = np.sum(vals * (wt * t ** (n - 1))[None, :], axis=1) * bi ** n
            if e + n > 1e-9 and not lg:
                # analytic tail below the graded mesh
                u0 = bi * t[0]
                f0 = vals[:, 0]
                with np.errstate(divide="ignore", invalid="ignore"):
                    c0 = np.where(u0 > 0, f0 / np.maximum(u0, 1e-300) ** e, 0.0)
                seg = seg + c0 * (bi * t_lo) ** (e + n) / (e + n)
        else:
            t, wt = _uniform_pattern(12, gl_pts)
            u = ai[:, None] + (bi - ai)[:, None] * t[None, :]
            pts = pole[None, None, :] + u[:, :, None] * dirs[act][:, None, :]
            vals = _eval_chunked(fn, pts.reshape(-1, n)).reshape(u.shape)
            seg = np.sum(vals * u ** (n - 1) * ((bi - ai)[:, None] * wt[None, :]),
                         axis=1)
        per_ray[act] += seg
    return float(np.sum(per_ray * wa))


def _converge(make_value, rel_tol, schedule):
    prev = None
    val = None
    for params in schedule:
        val = make_value(*params)
        if prev is not None and abs(val - prev) <= rel_tol * max(abs(val), 1e-300):
            return val, True
        prev = val
    return val, abs(val) < 1e-280


# ---------------------------------------------------------------------------
# main entry
# ---------------------------------------------------------------------------

def integrate_ball(fn, center, radius, n, specials=(), exps=(), spec=DEFAULT_SPEC,
                   profile=None, kinks=(), split_ctx=None):
    """Integrate fn over the ball B_radius(center) in R^n.

    fn: vectorized map from an (m, n) array of points to m values.
    specials: structural points of the integrand; exps: matching
    (exponent, has_log) pairs describing local behavior fn ~ u^exponent.
    profile: optional 1-D radial profile (fn radially symmetric about center).
    kinks: break radii of the profile (radial case).
    split_ctx: optional (point, radii) giving concentric break circles of the
    integrand around `point` (used when the ball is not centered there).

    Raises QuadratureError when the local exponents make the integral diverge
    or when refinement stalls above the requested tolerance.
    """
    center = np.asarray(center, dtype=float)
    R = float(radius)
    if R <= 0:
        raise QuadratureError("ball radius must be positive")
    inside, ins_exps = [], []
    for z, e in zip(specials, exps):
        ex, lg = e
        dz = np.linalg.norm(np.asarray(z, dtype=float) - center)
        if dz <= R * (1.0 + 1e-12):
            if ex + n <= 1e-12:
                raise QuadratureError(
                    "non-integrable local exponent %.3g at %s" % (ex, z))
            inside.append(np.asarray(z, dtype=float))
            ins_exps.append(e)

    if profile is not None and len(inside) <= 1 and spec.method != "tensorGrid":
        return _integrate_radial_case(profile, R, n, inside, ins_exps, spec,
                                      kinks)

    schedule = [(m, g) for m, g in
                ((64, 10), (128, 12), (256, 14), (512, 18), (1024, 22),
                 (2048, 26))]
    if n == 1:
        schedule = [(2, g) for g in (10, 14, 18, 24, 30, 36)]

    if len(inside) == 1:
        pole, grading = inside[0], ins_exps[0]
        radii = ()
        if split_ctx is not None and np.allclose(split_ctx[0], pole):
            radii = tuple(split_ctx[1])
        val, ok = _converge(
            lambda m, g: _polar_value(fn, pole, center, R, n, grading, m, g,
                                      radii), spec.rel_tol, schedule)
        if ok:
            return val
        raise QuadratureError(
            "polar quadrature stalled over ball c=%s r=%.3g"
            % (np.round(center, 4), R))

    if len(inside) == 0:
        pole, grading, radii = center, None, ()
        if split_ctx is not None:
            z, rs = split_ctx
            z = np.asarray(z, dtype=float)
            dz = np.linalg.norm(z - center)
            cross = [r for r in rs if abs(r - dz) < R]
            if cross and dz > R * (1.0 + 1e-12):
                pole, radii = z, tuple(cross)
        val, ok = _converge(
            lambda m, g: _polar_value(fn, pole, center, R, n, grading, m, g,
                                      radii), spec.rel_tol, schedule)
        if ok:
            return val
        raise QuadratureError(
            "polar quadrature stalled over ball c=%s r=%.3g"
            % (np.round(center, 4), R))

    return _integrate_with_holes(fn, center, R, n, inside, ins_exps, spec)


def _integrate_radial_case(profile, R, n, inside, ins_exps, spec, kinks):
    surf = _sphere_area(n)
    if inside:
        e, lg = ins_exps[0]
        levels = _grading_levels(e + n, spec.rel_tol)
        graded = e
    else:
        levels, graded, lg = 0, None, False
    splits = list(kinks)
    prev = None
    gl_pts, panels = 12, 24
    for _ in range(4):
        val = surf * _radial_1d(profile, R, n, graded, lg, splits, gl_pts,
                                levels, panels)
        if prev is not None and abs(val - prev) <= spec.rel_tol * max(abs(val), 1e-300):
            return val
        prev = val
        gl_pts += 6
        panels *= 2
    if abs(val) < 1e-280:
        return val
    raise QuadratureError("radial quadrature stalled at rel err %.2e"
                          % (abs(val - prev) / max(abs(val), 1e-300)))


def _integrate_with_holes(fn, center, R, n, zs, zexps, spec):
    """Several structural points inside one ball: small polar caps around each
    plus a polar remainder around the ball center."""
    dmin = min(np.linalg.norm(a - b) for i, a in enumerate(zs)
               for b in zs[i + 1:])
    holes = [(z, max(min(dmin / 3.0, R / 4.0), R * 1e-8)) for z in zs]

    total = 0.0
    for (z, h), e in zip(holes, zexps):
        # integral over B_h(z) ∩ ball: polar at z truncated at radius h
        val, ok = _converge(
            lambda m, g, z=z, h=h, e=e: _hole_value(fn, z, center, R, h, n, e, m, g),
            spec.rel_tol, [(64, 10), (128, 14), (256, 18), (512, 22)])
        if not ok:
            raise QuadratureError("hole quadrature stalled at %s" % (z,))
        total += val

    def rest(m, g):
        return _remainder_value(fn, center, R, holes, n, m, g)

    val, ok = _converge(rest, spec.rel_tol * 4,
                        [(128, 10), (256, 12), (512, 16), (1024, 18)])
    if not ok:
        raise QuadratureError("multi-point remainder quadrature stalled")
    return total + val


def _hole_value(fn, z, center, R, h, n, grading, m_ang, gl_pts):
    """Polar integral over B_h(z) ∩ B_R(center), graded at z."""
    dirs, wa = _angular_rule(n, m_ang)
    u_in, u_out = _ray_ball_span(z, center, R, dirs)
    U = np.minimum(h, u_out)
    act = (U > R * 1e-14) & (u_in <= R * 1e-14)
    e, lg = grading
    levels = _grading_levels(e + n, 1e-7)
    t, wt, t_lo = _graded_pattern(levels, gl_pts)
    Ua = U[act]
    pts = np.asarray(z)[None, None, :] \
        + (Ua[:, None] * t[None, :])[:, :, None] * dirs[act][:, None, :]
    vals = _eval_chunked(fn, pts.reshape(-1, n)).reshape(len(Ua), len(t))
    radial = np.sum(vals * (wt * t ** (n - 1))[None, :], axis=1) * Ua ** n
    if not lg and e + n > 1e-9:
        u0 = Ua * t[0]
        f0 = vals[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            c0 = np.where(u0 > 0, f0 / np.maximum(u0, 1e-300) ** e, 0.0)
        radial = radial + c0 * (Ua * t_lo) ** (e + n) / (e + n)
    return float(np.sum(radial * wa[act]))


def _remainder_value(fn, center, R, holes, n, m_ang, gl_pts):
    """Polar integral around `center` over the ball minus the holes."""
    dirs, wa = _angular_rule(n, m_ang)
    total = 0.0
    for i in range(len(dirs)):
        d = dirs[i]
        cuts = [0.0, R]
        for z, h in holes:
            u1, u2 = _ray_ball_span(center, np.asarray(z), h, d[None, :])
            if u2[0] > u1[0]:
                cuts.extend([min(u1[0], R), min(u2[0], R)])
        cuts = sorted(set(cuts))
        acc = 0.0
        for k in range(len(cuts) - 1):
            a, b = cuts[k], cuts[k + 1]
            if b - a < R * 1e-14:
                continue
            mid = center + 0.5 * (a + b) * d
            if any(np.linalg.norm(mid - np.asarray(z)) < h for z, h in holes):
                continue
            nodes, wts = _panel_nodes(np.linspace(a, b, 9), gl_pts)
            pts = center[None, :] + nodes[:, None] * d[None, :]
            acc += float(np.sum(fn(pts) * nodes ** (n - 1) * wts))
        total += wa[i] * acc
    return total
