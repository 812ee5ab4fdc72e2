"""Ball averages and sup-over-balls seminorm estimators.

The Muckenhoupt characteristic and weighted mean-oscillation seminorms are
suprema over all balls; here they are estimated from below on deterministic
finite families (lattice of centers x geometric radius ladder).  Every
"<= bound" verification built on such an estimate is therefore a
necessary-condition check: a sound one-sided test.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .quadrature import (DEFAULT_SPEC, QuadratureError, QuadratureSpec,
                         ball_volume, find_radial_roots, integrate_ball,
                         radial_profile)
from .report import Report
from .weights import Weight, local_exponent, truncate, weight_pow

__all__ = [
    "Ball",
    "BallFamily",
    "make_family",
    "refine_family",
    "SeminormEstimate",
    "ball_average",
    "weight_measure",
    "ap_characteristic",
    "bmo_weighted",
    "bmo_q",
    "verify_truncation_bounds",
    "verify_mollification_bounds",
    "verify_bmo_truncation_stability",
]


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    @property
    def dim(self):
        return len(self.center)

    def contains_ball(self, other, tol=1e-12):
        d = math.dist(self.center, other.center)
        return d + other.radius <= self.radius + tol

    def volume(self):
        return ball_volume(self.dim, self.radius)


@dataclass(frozen=True)
class BallFamily:
    """Deterministic finite ball family inside a domain ball."""

    balls: tuple
    domain: Ball
    generator: tuple | None = None  # (spacing, r_min, levels)

    def __len__(self):
        return len(self.balls)


def make_family(domain: Ball, spacing, r_min, levels=3, max_balls=None):
    """Centers on a cubic lattice through the domain center, radii on the
    ladder {r_min * 2^j, j=0..levels-1}; keeps balls contained in the domain.
    Order: radius descending, then lexicographic center."""
    n = domain.dim
    radii = [r_min * 2.0 ** j for j in range(levels)]
    balls = []
    for rho in sorted(radii, reverse=True):
        reach = domain.radius - rho
        if reach < -1e-12:
            continue
        k = int(math.floor(reach / spacing + 1e-12)) if reach > 0 else 0
        axis = [domain.center[i] + spacing * np.arange(-k, k + 1)
                for i in range(n)]
        grids = np.meshgrid(*axis, indexing="ij")
        centers = np.stack([g.ravel() for g in grids], axis=1)
        keep = np.linalg.norm(centers - np.asarray(domain.center), axis=1) \
            + rho <= domain.radius + 1e-12
        for c in centers[keep]:
            balls.append(Ball(tuple(c), rho))
    if max_balls is not None:
        balls = balls[:max_balls]
    if not balls:
        raise ValueError("family generator produced no balls")
    return BallFamily(tuple(balls), domain, (spacing, r_min, levels))


def refine_family(fam: BallFamily, factor=2.0):
    """Halve the lattice spacing and extend the radius ladder one rung down."""
    spacing, r_min, levels = fam.generator
    return make_family(fam.domain, spacing / factor, r_min / factor,
                       levels + 1)


@dataclass(frozen=True)
class SeminormEstimate:
    """Lower-bound estimate of a sup-over-balls quantity."""

    value: float
    family: BallFamily
    rel_tol: float
    is_lower_bound: bool = True
    per_ball: tuple = ()

    def __float__(self):
        return self.value


# ---------------------------------------------------------------------------
# integrals
# ---------------------------------------------------------------------------

def _integrand_specials(w: Weight, transform=None):
    """(specials, exps) for integrands g(w(x)) with local exponent transform."""
    specials, exps = [], []
    for z in w.special_points:
        e, lg = local_exponent(w.spec, z)
        if transform is not None:
            e = transform(e)
        specials.append(z)
        exps.append((e, lg))
    return specials, exps


def _anchor_point(w: Weight):
    """The single point the weight is radially structured about, if any."""
    return w.special_points[0] if len(w.special_points) == 1 else None


def _break_radii(w: Weight, z, r_max):
    """Radii of concentric circles around z where the (radial) weight loses
    smoothness: log knees and truncation clamp circles."""
    from . import weights as W

    radii = set()

    def walk(spec):
        if isinstance(spec, W.LogSpec):
            radii.add(W.LOG_KNEE)
        elif isinstance(spec, W.ProductSpec):
            for f in spec.factors:
                walk(f)
        elif isinstance(spec, W.SumSpec):
            for _, t in spec.terms:
                walk(t)
        elif isinstance(spec, W.BandSpec):
            base = Weight(spec.base, w.dim)
            prof = radial_profile(base, z)
            if prof is not None:
                for lv in (spec.lower, spec.upper):
                    if lv is not None:
                        radii.update(find_radial_roots(prof, r_max, lv))
            walk(spec.base)
        elif isinstance(spec, (W.MollifiedSpec, W.PowSpec)):
            walk(spec.base)

    walk(w.spec)
    return sorted(r for r in radii if 0.0 < r < r_max)


def _split_ctx(w: Weight, ball: Ball, extra_levels=()):
    """(point, radii) of break circles for integrands built from w, when w is
    radially structured about a single anchor; None otherwise."""
    z = _anchor_point(w)
    if z is None:
        return None
    prof = radial_profile(w, z)
    if prof is None:
        return None
    r_max = math.dist(z, ball.center) + ball.radius
    radii = list(_break_radii(w, z, r_max))
    for lv in extra_levels:
        radii.extend(find_radial_roots(prof, r_max, lv))
    return (z, tuple(sorted(radii))) if radii else (z, ())


def _noise_floor(w: Weight, spec: QuadratureSpec):
    """Mollified evaluations carry their own quadrature noise; integrals of
    such weights cannot certify tolerances below that floor."""
    from .weights import contains_mollified

    if contains_mollified(w.spec) and spec.rel_tol < 1e-5:
        return QuadratureSpec(spec.method, 1e-5, spec.max_depth,
                              spec.singular_handling)
    return spec


def _ball_integral(w: Weight, ball: Ball, spec: QuadratureSpec):
    """integral of w over the ball."""
    fn = lambda X: w.eval_many(X)[0]
    specials, exps = _integrand_specials(w)
    prof = radial_profile(w, ball.center)
    kinks = ()
    ctx = _split_ctx(w, ball)
    if prof is not None and ctx is not None:
        kinks = ctx[1]
    return integrate_ball(fn, ball.center, ball.radius, w.dim,
                          specials, exps, _noise_floor(w, spec), profile=prof,
                          kinks=kinks, split_ctx=ctx)


def ball_average(w: Weight, ball: Ball, power=1.0, spec=DEFAULT_SPEC):
    """Mean of w^power over the ball: the basic building block of the weight
    calculus.  Raises QuadratureError when w^power is not locally integrable."""
    if ball.dim != w.dim:
        raise ValueError("ball dimension %d != weight dimension %d"
                         % (ball.dim, w.dim))
    wp = w if power == 1.0 else weight_pow(w, power)
    return _ball_integral(wp, ball, spec) / ball.volume()


def weight_measure(w: Weight, region, spec=DEFAULT_SPEC):
    """w-measure of a region: a Ball (spatial) or a WeightedCylinder
    (spatial measure times time extent)."""
    from .geometry import WeightedCylinder

    if isinstance(region, Ball):
        return _ball_integral(w, region, spec)
    if isinstance(region, WeightedCylinder):
        base = Ball(region.center[0], region.radius)
        t0, t1 = region.time_interval()
        return _ball_integral(w, base, spec) * (t1 - t0)
    raise TypeError("unsupported region %r" % (region,))


def _pmap(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def ap_characteristic(w: Weight, p, family: BallFamily, spec=DEFAULT_SPEC,
                      threads=1):
    """Estimate of the A_p characteristic on the family:
    max over balls of (w)_B * ((w^{-1/(p-1)})_B)^{p-1}."""
    if p <= 1.0:
        raise ValueError("A_p characteristic needs p > 1")
    if len(family.balls) == 0:
        raise ValueError("empty ball family")
    dual = weight_pow(w, -1.0 / (p - 1.0))

    def per_ball(ball):
        a1 = ball_average(w, ball, 1.0, spec)
        a2 = ball_average(dual, ball, 1.0, spec)
        return a1 * a2 ** (p - 1.0)

    vals = _pmap(per_ball, family.balls, threads)
    value = max(vals)
    if value < 1.0 - max(1e-9, 10.0 * spec.rel_tol):
        raise QuadratureError("A_p per-ball value %.8f below 1" % value)
    return SeminormEstimate(value, family, spec.rel_tol, True, tuple(vals))


def _osc_integral(w: Weight, ball: Ball, mean, spec):
    """integral over the ball of |w - mean|."""
    fn = lambda X: np.abs(w.eval_many(X)[0] - mean)
    specials, exps = _integrand_specials(w, transform=lambda e: min(e, 0.0))
    ctx = _split_ctx(w, ball, extra_levels=(mean,))
    prof = radial_profile(w, ball.center)
    prof_abs, kinks = None, ()
    if prof is not None:
        prof_abs = lambda u: np.abs(prof(u) - mean)
        kinks = ctx[1] if ctx is not None else ()
    return integrate_ball(fn, ball.center, ball.radius, w.dim, specials, exps,
                          spec, profile=prof_abs, kinks=kinks, split_ctx=ctx)


def _bmo_q_integral(w: Weight, ball: Ball, mean, q, spec):
    """integral over the ball of |w - mean|^q w^{1-q}."""
    def fn(X):
        v = w.eval_many(X)[0]
        return np.abs(v - mean) ** q * v ** (1.0 - q)

    specials, exps = [], []
    for z in w.special_points:
        e, lg = local_exponent(w.spec, z)
        ee = e if e < 0 else e * (1.0 - q)
        specials.append(z)
        exps.append((ee, lg))
    ctx = _split_ctx(w, ball, extra_levels=(mean,))
    prof = radial_profile(w, ball.center)
    prof_q, kinks = None, ()
    if prof is not None:
        prof_q = lambda u: np.abs(prof(u) - mean) ** q * prof(u) ** (1.0 - q)
        kinks = ctx[1] if ctx is not None else ()
    return integrate_ball(fn, ball.center, ball.radius, w.dim, specials, exps,
                          spec, profile=prof_q, kinks=kinks, split_ctx=ctx)


#: oscillation integrands carry kinks along level sets; their default
#: tolerance is looser than the plain ball averages
BMO_SPEC = QuadratureSpec(rel_tol=1e-5)


def bmo_q(w: Weight, q, domain: Ball, family: BallFamily, spec=None,
          threads=1):
    """Weighted mean-oscillation seminorm of order q on the family:
    max over B of ((1/w(B)) int_B |w - (w)_B|^q w^{1-q} dx)^{1/q}.
    q = 1 is the plain weighted BMO seminorm."""
    spec = spec or BMO_SPEC
    if q < 1.0:
        raise ValueError("bmo_q needs q >= 1")
    balls = [b for b in family.balls if domain.contains_ball(b)]
    if not balls:
        raise ValueError("no family balls inside the BMO domain")

    def per_ball(ball):
        mean = ball_average(w, ball, 1.0, spec)
        mass = mean * ball.volume()
        if q == 1.0:
            osc = _osc_integral(w, ball, mean, spec)
            return osc / mass
        osc = _bmo_q_integral(w, ball, mean, q, spec)
        return (osc / mass) ** (1.0 / q)

    vals = _pmap(per_ball, balls, threads)
    sub = BallFamily(tuple(balls), domain, family.generator)
    return SeminormEstimate(max(vals), sub, spec.rel_tol, True, tuple(vals))


def bmo_weighted(w: Weight, domain: Ball, family: BallFamily,
                 spec=None, threads=1):
    """Weighted BMO seminorm estimate (the q = 1 oscillation)."""
    return bmo_q(w, 1.0, domain, family, spec, threads)


# ---------------------------------------------------------------------------
# stability verifications
# ---------------------------------------------------------------------------

def verify_truncation_bounds(w: Weight, p, levels, family: BallFamily,
                             spec=DEFAULT_SPEC, tol=0.02):
    """Check the truncation stability of the A_p characteristic.

    For each level k (or band (s, tau)) the estimates must respect:
      upper:  (A^{1/(p-1)} + 1)^{p-1}
      lower:  A + 1
      band:   2^{max(p-2,0)} (A + 1) + 1, and A + 2 when p = 1 + 1/n.
    A is the estimated characteristic of w itself; tol is the verification
    multiplier separating quadrature error from genuine violation.
    """
    rep = Report("truncation_bounds",
                 config={"p": p, "tol": tol, "levels": list(map(str, levels)),
                         "weight": repr(w.spec), "n": w.dim})
    A = ap_characteristic(w, p, family, spec).value
    rep.config["base_estimate"] = A
    n = w.dim
    for lv in levels:
        if isinstance(lv, tuple) and lv[0] == "band":
            _, s, tau = lv
            tw = truncate(w, ("band", s, tau))
            est = ap_characteristic(tw, p, family, spec).value
            bound = 2.0 ** max(p - 2.0, 0.0) * (A + 1.0) + 1.0
            rep.check("band(%g,%g) general" % (s, tau), est, bound * (1 + tol))
            if abs(p - (1.0 + 1.0 / n)) < 1e-12:
                rep.check("band(%g,%g) p=1+1/n" % (s, tau), est,
                          (A + 2.0) * (1 + tol))
            rep.rows.append({"level": "band(%g,%g)" % (s, tau),
                             "estimate": est, "bound": bound})
        else:
            mode, k = lv
            tw = truncate(w, (mode, k))
            est = ap_characteristic(tw, p, family, spec).value
            if mode == "upper":
                bound = (A ** (1.0 / (p - 1.0)) + 1.0) ** (p - 1.0)
            else:
                bound = A + 1.0
            rep.check("%s(%g)" % (mode, k), est, bound * (1 + tol))
            rep.rows.append({"level": "%s(%g)" % (mode, k),
                             "estimate": est, "bound": bound})
    return rep


def _translate_family(family: BallFamily, domain: Ball, shifts):
    """Family plus shifted copies of its balls (clipped to the domain)."""
    balls = list(family.balls)
    seen = {(b.center, b.radius) for b in balls}
    for b in family.balls:
        for s in shifts:
            c = tuple(np.asarray(b.center) + np.asarray(s))
            nb = Ball(c, b.radius)
            if domain.contains_ball(nb) and (nb.center, nb.radius) not in seen:
                seen.add((nb.center, nb.radius))
                balls.append(nb)
    return BallFamily(tuple(balls), domain, family.generator)


def verify_mollification_bounds(w: Weight, p, eps_list, R0, family: BallFamily,
                                spec=DEFAULT_SPEC, tol=0.05, a_ref=None,
                                bmo_spec=None):
    """Regularization stability: the A_p estimate of the mollified weight
    stays below 2^{np} * A_ref, and its weighted BMO on B_{R0} stays below the
    base weight's BMO on B_{R0+1} (families matched by eps-translates)."""
    from .weights import mollify

    n = w.dim
    bmo_spec = bmo_spec or QuadratureSpec(rel_tol=max(spec.rel_tol, 1e-4))
    # the bound carries the regularization factor 2^{np}: the estimates only
    # need accuracy far below that slack
    ap_spec = QuadratureSpec(rel_tol=max(spec.rel_tol, 1e-4))
    rep = Report("mollification_bounds",
                 config={"p": p, "eps": list(eps_list), "R0": R0, "tol": tol,
                         "weight": repr(w.spec), "n": n})
    if a_ref is None:
        a_ref = ap_characteristic(w, p, family, spec).value
    rep.config["a_ref"] = a_ref
    dom0 = Ball((0.0,) * n, R0)
    dom1 = Ball((0.0,) * n, R0 + 1.0)
    fam0 = make_family(dom0, spacing=R0 / 1.5, r_min=R0 / 3.0, levels=2)
    base_bmo_val = None
    for eps in eps_list:
        we = mollify(w, eps)
        est = ap_characteristic(we, p, family, ap_spec).value
        rep.check("ap eps=%g" % eps, est, 2.0 ** (n * p) * a_ref * (1 + tol))
        lhs = bmo_weighted(we, dom0, fam0, bmo_spec).value
        if base_bmo_val is None:
            # the domination is ball-by-ball against eps-translates, so the
            # reference family carries shifted copies of the tested balls
            shifts = []
            for e2 in eps_list:
                for i in range(n):
                    v = np.zeros(n)
                    v[i] = e2
                    shifts += [tuple(v), tuple(-v)]
            fam1 = _translate_family(fam0, dom1, shifts)
            base_bmo_val = bmo_weighted(w, dom1, fam1, bmo_spec).value
        rep.check("bmo eps=%g" % eps, lhs, base_bmo_val * (1 + tol))
        rep.rows.append({"eps": eps, "ap_estimate": est, "bmo_estimate": lhs,
                         "bmo_base": base_bmo_val})
    return rep


def verify_bmo_truncation_stability(w: Weight, R0, levels, family: BallFamily,
                                    spec=None, tol=0.02, check_ratios=True):
    """BMO stability under truncations.

    Lower truncation carries the explicit factor 2 (checked directly, matched
    families).  The inverse-weight, upper-truncation, and band cases have
    non-constructive constants N(n, K0): their ratios are recorded and only
    finiteness plus refinement stability (+-20%) is asserted.
    """
    spec = spec or BMO_SPEC
    n = w.dim
    dom = Ball((0.0,) * n, R0)
    fam = BallFamily(tuple(b for b in family.balls if dom.contains_ball(b)),
                     dom, family.generator)
    if not fam.balls:
        raise ValueError("family has no balls inside B_R0")
    rep = Report("bmo_truncation_stability",
                 config={"R0": R0, "tol": tol, "weight": repr(w.spec), "n": n})
    base = bmo_weighted(w, dom, fam, spec).value
    rep.config["base_bmo"] = base
    for lv in levels:
        mode, k = lv
        tw = truncate(w, (mode, k))
        est = bmo_weighted(tw, dom, fam, spec).value
        if mode == "lower":
            rep.check("lower(%g) factor-2" % k, est, 2.0 * base * (1 + tol))
        rep.rows.append({"level": "%s(%g)" % (mode, k), "estimate": est,
                         "base": base,
                         "ratio": est / base if base > 1e-14 else 0.0})

    # ratio stability across family refinements for the non-constructive cases
    if check_ratios and base > 1e-12:
        fams = [make_family(dom, spacing=R0 / (1.5 * 2 ** j),
                            r_min=R0 / (3.0 * 2 ** j), levels=2)
                for j in range(3)]
        others = (("inverse", weight_pow(w, -1.0)),
                  ("upper", truncate(w, ("upper", 1.0))),
                  ("band", truncate(w, ("band", 0.5, 2.0))))
        bases = [bmo_weighted(w, dom, fm, spec).value for fm in fams]
        for name, other in others:
            ratios = []
            for fm, b in zip(fams, bases):
                o = bmo_weighted(other, dom, fm, spec).value
                ratios.append(o / b)
            spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
            rep.require("%s ratio finite" % name,
                        all(math.isfinite(r) for r in ratios))
            rep.check("%s ratio stability" % name, spread, 1.20)
            rep.rows.append({"level": name + "-ratio", "estimate": ratios[-1],
                             "base": base, "ratio": spread})
    return rep


def per_ball_csv_rows(est: SeminormEstimate):
    """Rows (ball_center, radius, value) for the per-ball CSV emission."""
    rows = []
    for ball, v in zip(est.family.balls, est.per_ball):
        rows.append({"ball_center": " ".join("%r" % c for c in ball.center),
                     "radius": ball.radius, "value": v})
    return rows
