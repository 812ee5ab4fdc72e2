"""Weight functions: construction, pointwise evaluation, truncation, mollification.

A weight is a non-negative function on R^n built from a small algebra of
closed-form pieces (constants, radial powers, a truncated-log profile,
products, positive sums) plus two structural wrappers (band truncation and
mollification).  Weights are immutable values; evaluation is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "SINGULAR",
    "WeightError",
    "Weight",
    "constant",
    "power_weight",
    "log_weight",
    "product",
    "weighted_sum",
    "truncate",
    "mollify",
    "weight_pow",
    "eval_weight",
    "parse_weight",
    "LOG_KNEE",
]

LOG_KNEE = math.exp(-1.0)  # radius where the log profile switches to 1


class WeightError(ValueError):
    """Invalid weight construction or evaluation request."""


class _SingularValue:
    """Tag returned by pointwise evaluation at a blow-up point."""

    __slots__ = ()

    def __repr__(self):
        return "SINGULAR"


SINGULAR = _SingularValue()


# ---------------------------------------------------------------------------
# spec algebra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WSpec:
    """Base class for weight spec nodes."""

    def key(self):
        """Hashable identity used for memo caches."""
        return repr(self)


@dataclass(frozen=True)
class ConstantSpec(WSpec):
    c: float


@dataclass(frozen=True)
class PowerSpec(WSpec):
    alpha: float
    center: tuple


@dataclass(frozen=True)
class LogSpec(WSpec):
    center: tuple


@dataclass(frozen=True)
class ProductSpec(WSpec):
    factors: tuple


@dataclass(frozen=True)
class SumSpec(WSpec):
    terms: tuple  # ((coefficient, spec), ...)


@dataclass(frozen=True)
class BandSpec(WSpec):
    base: WSpec
    lower: float | None
    upper: float | None


@dataclass(frozen=True)
class MollifiedSpec(WSpec):
    base: WSpec
    eps: float


@dataclass(frozen=True)
class PowSpec(WSpec):
    base: WSpec
    exponent: float


def _as_point(center, n):
    if center is None:
        return (0.0,) * n
    if np.isscalar(center):
        if n != 1:
            raise WeightError("scalar center in dimension %d" % n)
        return (float(center),)
    pt = tuple(float(v) for v in center)
    if len(pt) != n:
        raise WeightError("center has dimension %d, expected %d" % (len(pt), n))
    return pt


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _dist(X, center):
    d = X - np.asarray(center)[None, :]
    return np.sqrt(np.sum(d * d, axis=1))


def _eval_spec(spec, X):
    """Vectorized evaluation.  Returns (values, singular_mask); blow-up points
    carry +inf in `values` and True in the mask."""
    m = X.shape[0]
    if isinstance(spec, ConstantSpec):
        return np.full(m, spec.c), np.zeros(m, dtype=bool)
    if isinstance(spec, PowerSpec):
        r = _dist(X, spec.center)
        if spec.alpha == 0.0:
            return np.ones(m), np.zeros(m, dtype=bool)
        sing = r == 0.0
        vals = np.empty(m)
        with np.errstate(divide="ignore"):
            vals[~sing] = r[~sing] ** spec.alpha
        vals[sing] = np.inf if spec.alpha < 0 else 0.0
        return vals, sing & (spec.alpha < 0)
    if isinstance(spec, LogSpec):
        r = _dist(X, spec.center)
        sing = r == 0.0
        vals = np.ones(m)
        inner = (~sing) & (r <= LOG_KNEE)
        vals[inner] = -np.log(r[inner])
        vals[sing] = np.inf
        return vals, sing
    if isinstance(spec, ProductSpec):
        vals = np.ones(m)
        sing = np.zeros(m, dtype=bool)
        for f in spec.factors:
            v, s = _eval_spec(f, X)
            sing |= s
            vals = vals * v
        vals[sing] = np.inf
        return vals, sing
    if isinstance(spec, SumSpec):
        vals = np.zeros(m)
        sing = np.zeros(m, dtype=bool)
        for c, sub in spec.terms:
            v, s = _eval_spec(sub, X)
            sing |= s
            vals = vals + c * v
        vals[sing] = np.inf
        return vals, sing
    if isinstance(spec, BandSpec):
        v, s = _eval_spec(spec.base, X)
        if spec.upper is not None:
            v = np.minimum(v, spec.upper)
            s = np.zeros(m, dtype=bool)  # bounded above: blow-ups clamp to k
        if spec.lower is not None:
            v = np.maximum(v, spec.lower)
        return v, s
    if isinstance(spec, PowSpec):
        v, s = _eval_spec(spec.base, X)
        e = spec.exponent
        out = np.empty(m)
        with np.errstate(divide="ignore"):
            pos = v > 0
            out[pos & ~s] = v[pos & ~s] ** e
        zero = (v == 0.0) & ~s
        out[zero] = 0.0 if e > 0 else np.inf
        out[s] = np.inf if e > 0 else 0.0
        new_sing = zero if e < 0 else (s & (e > 0))
        out[new_sing] = np.inf
        return out, new_sing
    if isinstance(spec, MollifiedSpec):
        return _mollified_eval(spec, X)
    raise WeightError("unknown spec node %r" % (spec,))


# --- mollifier -------------------------------------------------------------

def _bump_raw(r2):
    """Unnormalized exponential bump exp(-1/(1-|x|^2)) on |x|<1."""
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@lru_cache(maxsize=16)
def _bump_norm(n):
    """Numerical normalization constant of the bump in dimension n."""
    # radial integral with a fine Gauss grid; the bump is smooth and flat at
    # both ends so this converges far below 1e-12
    x, w = np.polynomial.legendre.leggauss(200)
    r = 0.5 * (x + 1.0)
    wr = 0.5 * w
    vals = _bump_raw(r * r) * r ** (n - 1)
    surf = _sphere_area(n)
    return 1.0 / (surf * float(np.sum(vals * wr)))


def _sphere_area(n):
    """Surface measure of the unit sphere in R^n (2 for n=1)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@lru_cache(maxsize=64)
def _mollifier_rule(n, n_rad, n_ang):
    """Quadrature rule (offsets Y, weights W) for integrals against the unit
    bump over B_1; scaled by eps at use sites."""
    x, w = np.polynomial.legendre.leggauss(n_rad)
    r = 0.5 * (x + 1.0)
    wr = 0.5 * w
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
        wa = np.array([1.0, 1.0])
    elif n == 2:
        th = 2.0 * math.pi * np.arange(n_ang) / n_ang
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        wa = np.full(n_ang, 2.0 * math.pi / n_ang)
    else:
        xc, wc = np.polynomial.legendre.leggauss(max(4, n_ang // 8))
        ph = 2.0 * math.pi * np.arange(n_ang) / n_ang
        ct = xc
        st = np.sqrt(1.0 - ct**2)
        dirs = np.concatenate(
            [
                np.stack(
                    [np.outer(st, np.cos(ph)).ravel(),
                     np.outer(st, np.sin(ph)).ravel(),
                     np.outer(ct, np.ones_like(ph)).ravel()],
                    axis=1,
                )
            ]
        )
        wa = np.outer(wc, np.full(n_ang, 2.0 * math.pi / n_ang)).ravel()
    Y = r[:, None, None] * dirs[None, :, :]
    dens = _bump_raw(r * r) * _bump_norm(n)
    W = (wr * dens * r ** (n - 1))[:, None] * wa[None, :]
    W = W / W.sum()  # discrete unit mass: constants mollify to themselves
    return Y.reshape(-1, n), W.ravel()


def _is_radial_spec(spec, center):
    """True when the spec is radially symmetric about `center`."""
    center = tuple(center)
    if isinstance(spec, ConstantSpec):
        return True
    if isinstance(spec, (PowerSpec, LogSpec)):
        return tuple(spec.center) == center
    if isinstance(spec, ProductSpec):
        return all(_is_radial_spec(f, center) for f in spec.factors)
    if isinstance(spec, SumSpec):
        return all(_is_radial_spec(t, center) for _, t in spec.terms)
    if isinstance(spec, (BandSpec, MollifiedSpec)):
        return _is_radial_spec(spec.base, center)
    if isinstance(spec, PowSpec):
        return _is_radial_spec(spec.base, center)
    return False


def contains_mollified(spec):
    if isinstance(spec, MollifiedSpec):
        return True
    if isinstance(spec, ProductSpec):
        return any(contains_mollified(f) for f in spec.factors)
    if isinstance(spec, SumSpec):
        return any(contains_mollified(t) for _, t in spec.terms)
    if isinstance(spec, (BandSpec, PowSpec)):
        return contains_mollified(spec.base)
    return False


def _conv_batch(spec, eps, points, n, n_rad=48, n_ang=64):
    Y, W = _mollifier_rule(n, n_rad, n_ang)
    Z = points[:, None, :] - eps * Y[None, :, :]
    v, s = _eval_spec(spec.base, Z.reshape(-1, n))
    if np.any(s):
        # quadrature nodes never sit exactly on a blow-up point except in
        # degenerate configurations; treat as a hard error
        raise WeightError("mollified evaluation hit a singular node")
    return v.reshape(points.shape[0], -1) @ W


_moll_cache: dict = {}


def _radial_mollified_spline(spec, n, u_max):
    """Cubic spline of the radial profile of mu_eps for radial bases: built
    once per (spec, eps) and grown when a larger reach is requested."""
    from scipy.interpolate import CubicSpline

    eps = spec.eps
    key = (repr(spec), n)
    hit = _moll_cache.get(key)
    if hit is not None and hit[0] >= u_max:
        return hit[1], hit[2]
    reach = 2.0 ** math.ceil(math.log2(max(u_max, 4.0 * eps, 2.0)))
    anchor = _spec_special_points(spec.base)
    z = np.asarray(anchor[0] if anchor else (0.0,) * n, dtype=float)
    step = eps / 24.0
    count = min(int(reach / step) + 2, 40_000)
    u = np.linspace(0.0, reach, count)
    e1 = np.zeros(n)
    e1[0] = 1.0
    pts = z[None, :] + u[:, None] * e1[None, :]
    vals = _conv_batch(spec, eps, pts, n)
    spline = CubicSpline(u, vals, bc_type="natural")
    if len(_moll_cache) > 64:
        _moll_cache.clear()
    _moll_cache[key] = (reach, tuple(z), spline)
    return tuple(z), spline


def _mollified_eval(spec, X):
    """mu_eps(x) = int mu(x - y) phi_eps(y) dy, evaluated in batch.

    Radial bases go through a precomputed radial spline (mollification of a
    radial function is radial); other bases use the tensor rule directly.
    """
    n = X.shape[1]
    anchor = _spec_special_points(spec.base)
    z = anchor[0] if anchor else (0.0,) * n
    if _is_radial_spec(spec.base, z):
        d = _dist(X, z)
        zc, spline = _radial_mollified_spline(spec, n, float(d.max()))
        out = spline(d)
        return np.maximum(out, 0.0), np.zeros(X.shape[0], dtype=bool)
    return _conv_batch(spec, spec.eps, X, n), np.zeros(X.shape[0], dtype=bool)


# ---------------------------------------------------------------------------
# structural queries
# ---------------------------------------------------------------------------

def _spec_singular_points(spec):
    """Points where evaluation blows up."""
    if isinstance(spec, PowerSpec):
        return [spec.center] if spec.alpha < 0 else []
    if isinstance(spec, LogSpec):
        return [spec.center]
    if isinstance(spec, ProductSpec):
        return [p for f in spec.factors for p in _spec_singular_points(f)]
    if isinstance(spec, SumSpec):
        return [p for _, t in spec.terms for p in _spec_singular_points(t)]
    if isinstance(spec, BandSpec):
        return [] if spec.upper is not None else _spec_singular_points(spec.base)
    if isinstance(spec, PowSpec):
        if spec.exponent > 0:
            return _spec_singular_points(spec.base)
        if spec.exponent < 0:
            return _spec_zero_points(spec.base)
        return []
    return []


def _spec_zero_points(spec):
    """Points where the weight vanishes (isolated zeros of the algebra)."""
    if isinstance(spec, PowerSpec):
        return [spec.center] if spec.alpha > 0 else []
    if isinstance(spec, ProductSpec):
        return [p for f in spec.factors for p in _spec_zero_points(f)]
    if isinstance(spec, BandSpec):
        if spec.lower is not None and spec.lower > 0:
            return []
        return _spec_zero_points(spec.base)
    if isinstance(spec, PowSpec):
        if spec.exponent > 0:
            return _spec_zero_points(spec.base)
        if spec.exponent < 0:
            return _spec_singular_points(spec.base)
        return []
    if isinstance(spec, SumSpec):
        pts = None
        for _, t in spec.terms:
            zp = set(map(tuple, _spec_zero_points(t)))
            pts = zp if pts is None else (pts & zp)
        return [tuple(p) for p in sorted(pts)] if pts else []
    return []


def _spec_special_points(spec):
    """All structurally distinguished points: blow-ups, zeros, log centers.

    Quadrature grades its meshes toward each of these.
    """
    out = []
    if isinstance(spec, PowerSpec) and spec.alpha != 0.0:
        out.append(spec.center)
    elif isinstance(spec, LogSpec):
        out.append(spec.center)
    elif isinstance(spec, ProductSpec):
        for f in spec.factors:
            out.extend(_spec_special_points(f))
    elif isinstance(spec, SumSpec):
        for _, t in spec.terms:
            out.extend(_spec_special_points(t))
    elif isinstance(spec, (BandSpec, MollifiedSpec)):
        out.extend(_spec_special_points(spec.base))
    elif isinstance(spec, PowSpec):
        out.extend(_spec_special_points(spec.base))
    seen, uniq = set(), []
    for p in out:
        t = tuple(p)
        if t not in seen:
            seen.add(t)
            uniq.append(t)
    return uniq


def local_exponent(spec, z):
    """(exponent, has_log): leading radial behavior c*u^exponent (times a log
    power if flagged) of the weight near the point z."""
    z = tuple(z)
    if isinstance(spec, ConstantSpec):
        return 0.0, False
    if isinstance(spec, PowerSpec):
        return (spec.alpha, False) if tuple(spec.center) == z else (0.0, False)
    if isinstance(spec, LogSpec):
        return (0.0, True) if tuple(spec.center) == z else (0.0, False)
    if isinstance(spec, ProductSpec):
        e, lg = 0.0, False
        for f in spec.factors:
            ef, lf = local_exponent(f, z)
            e += ef
            lg |= lf
        return e, lg
    if isinstance(spec, SumSpec):
        # the smallest exponent dominates the value as u -> 0
        es = [local_exponent(t, z) for _, t in spec.terms]
        e = min(x for x, _ in es)
        return e, any(l for x, l in es if x == e)
    if isinstance(spec, BandSpec):
        return 0.0, False  # clamped weights are locally bounded
    if isinstance(spec, MollifiedSpec):
        return 0.0, False
    if isinstance(spec, PowSpec):
        e, lg = local_exponent(spec.base, z)
        return e * spec.exponent, lg
    raise WeightError("unknown spec node %r" % (spec,))


# ---------------------------------------------------------------------------
# the public Weight value
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Weight:
    """An immutable weight: spec + dimension + membership metadata.

    claimed_ap, when present, is a pair (p, bound) asserting the weight lies
    in the A_p Muckenhoupt class with characteristic at most `bound` (bound
    may be None when only membership is claimed).
    """

    spec: WSpec
    dim: int
    claimed_ap: tuple | None = None
    singular_points: tuple = field(default=())
    special_points: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "singular_points",
                           tuple(map(tuple, _spec_singular_points(self.spec))))
        object.__setattr__(self, "special_points",
                           tuple(map(tuple, _spec_special_points(self.spec))))

    def eval_many(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise WeightError("points have dimension %d, weight has %d"
                              % (X.shape[1], self.dim))
        return _eval_spec(self.spec, X)

    def __call__(self, x):
        return eval_weight(self, x)

    def key(self):
        return (repr(self.spec), self.dim)


def eval_weight(w: Weight, x):
    """Pointwise value; returns the SINGULAR tag at blow-up points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1 or x.shape[0] != w.dim:
        raise WeightError("point has dimension %s, weight has %d"
                          % (x.shape, w.dim))
    vals, sing = w.eval_many(x[None, :])
    if sing[0]:
        return SINGULAR
    return float(vals[0])


# --- constructors ----------------------------------------------------------

def constant(c, n=2):
    if c <= 0:
        raise WeightError("constant weight must be positive")
    return Weight(ConstantSpec(float(c)), n)


def power_weight(alpha, n=2, center=None, claim_ap=True):
    """|x - center|^alpha.  When claim_ap is set, membership in A_{1+1/n}
    requires alpha in (-n, 1)."""
    alpha = float(alpha)
    spec = PowerSpec(alpha, _as_point(center, n))
    claimed = None
    if claim_ap:
        if not (-n < alpha < 1.0):
            raise WeightError(
                "alpha=%g outside (-%d, 1): A_{1+1/n} membership fails" % (alpha, n))
        claimed = (1.0 + 1.0 / n, _power_ap_bound(alpha, n))
    return Weight(spec, n, claimed_ap=claimed)


def _power_ap_bound(alpha, n):
    """Safe upper bound for the A_{1+1/n} characteristic of |x|^alpha: twice
    the origin-ball value (the origin family realizes the sup to within a
    dimensional factor)."""
    p = 1.0 + 1.0 / n
    v = (n / (n + alpha)) * (n / (n - alpha / (p - 1.0))) ** (p - 1.0)
    return 2.0 * v


def log_weight(n=2, center=None):
    """-ln|x - center| capped below at 1 outside radius 1/e (an A_1 weight)."""
    return Weight(LogSpec(_as_point(center, n)), n,
                  claimed_ap=(1.0 + 1.0 / n, None))


def product(ws):
    ws = list(ws)
    if not ws:
        raise WeightError("empty product")
    n = ws[0].dim
    if any(w.dim != n for w in ws):
        raise WeightError("mixed dimensions in product")
    return Weight(ProductSpec(tuple(w.spec for w in ws)), n)


def weighted_sum(terms):
    """Positive combination sum_k c_k * w_k."""
    terms = [(float(c), w) for c, w in terms]
    if not terms:
        raise WeightError("empty sum")
    if any(c <= 0 for c, _ in terms):
        raise WeightError("sum coefficients must be positive")
    n = terms[0][1].dim
    if any(w.dim != n for _, w in terms):
        raise WeightError("mixed dimensions in sum")
    return Weight(SumSpec(tuple((c, w.spec) for c, w in terms)), n)


def truncate(w: Weight, mode):
    """Truncation operators: ("upper", k) clamps above at k, ("lower", k)
    clamps below at k, ("band", s, tau) clamps into [s, tau].

    The A_p claim is propagated through the truncation-stability bounds:
    upper: (K^{1/(p-1)} + 1)^{p-1};  lower: K + 1;
    band:  2^{max(p-2,0)} (K + 1) + 1.
    """
    kind = mode[0]
    if kind == "upper":
        k = float(mode[1])
        if k <= 0:
            raise WeightError("truncation level must be positive")
        spec = BandSpec(w.spec, None, k)
    elif kind == "lower":
        k = float(mode[1])
        if k <= 0:
            raise WeightError("truncation level must be positive")
        spec = BandSpec(w.spec, k, None)
    elif kind == "band":
        s, tau = float(mode[1]), float(mode[2])
        if not (0.0 < s < tau):
            raise WeightError("band truncation needs 0 < s < tau")
        spec = BandSpec(w.spec, s, tau)
    else:
        raise WeightError("unknown truncation mode %r" % (kind,))
    claimed = None
    if w.claimed_ap is not None and w.claimed_ap[1] is not None:
        p, K = w.claimed_ap
        if kind == "upper":
            claimed = (p, (K ** (1.0 / (p - 1.0)) + 1.0) ** (p - 1.0))
        elif kind == "lower":
            claimed = (p, K + 1.0)
        else:
            claimed = (p, 2.0 ** max(p - 2.0, 0.0) * (K + 1.0) + 1.0)
    return Weight(spec, w.dim, claimed_ap=claimed)


def mollify(w: Weight, eps):
    """Convolution with the fixed normalized exponential bump at scale eps.

    The A_p claim is propagated with the regularization factor 2^{np}.
    """
    eps = float(eps)
    if eps <= 0:
        raise WeightError("mollification scale must be positive")
    claimed = None
    if w.claimed_ap is not None and w.claimed_ap[1] is not None:
        p, K = w.claimed_ap
        claimed = (p, 2.0 ** (w.dim * p) * K)
    return Weight(MollifiedSpec(w.spec, eps), w.dim, claimed_ap=claimed)


def weight_pow(w: Weight, e):
    """w^e as a weight, folding through the spec algebra where possible."""
    e = float(e)
    spec = _fold_pow(w.spec, e)
    return Weight(spec, w.dim)


def _fold_pow(spec, e):
    if e == 1.0:
        return spec
    if isinstance(spec, ConstantSpec):
        return ConstantSpec(spec.c ** e)
    if isinstance(spec, PowerSpec):
        return PowerSpec(spec.alpha * e, spec.center)
    if isinstance(spec, ProductSpec):
        return ProductSpec(tuple(_fold_pow(f, e) for f in spec.factors))
    if isinstance(spec, PowSpec):
        return _fold_pow(spec.base, spec.exponent * e)
    return PowSpec(spec, e)


# ---------------------------------------------------------------------------
# text format (CLI config syntax)
# ---------------------------------------------------------------------------

def parse_weight(text, n=2):
    """Parse the config syntax, e.g.

        constant(1) | power(alpha=0.3) | log(center=0.2,0)
        product(log(center=0.2,0), log(center=-0.3,0.1))
        sum(0.5, power(alpha=0.1), 2, power(alpha=-0.2))
        trunc(power(alpha=0.3), lower=0.5, upper=2)
        mollify(power(alpha=0.3), eps=0.1)
    """
    s = text.strip()
    expr, rest = _parse_expr(s, n)
    if rest.strip():
        raise WeightError("trailing input %r in weight expression" % rest)
    return expr


def _parse_expr(s, n):
    s = s.lstrip()
    i = 0
    while i < len(s) and (s[i].isalnum() or s[i] == "_"):
        i += 1
    name, rest = s[:i], s[i:].lstrip()
    if not name or not rest.startswith("("):
        raise WeightError("expected name( ... ) in %r" % s)
    args, rest = _parse_args(rest[1:], n)
    return _build(name, args, n), rest


def _parse_args(s, n):
    """Parse comma-separated items until the matching ')'.  Items are numbers,
    key=value groups (value = one or more numbers), or nested expressions."""
    items = []
    s = s.lstrip()
    while True:
        if s.startswith(")"):
            return items, s[1:]
        if not s:
            raise WeightError("unbalanced parentheses in weight expression")
        # nested expression?
        j = 0
        while j < len(s) and (s[j].isalnum() or s[j] == "_"):
            j += 1
        tail = s[j:].lstrip()
        if j > 0 and tail.startswith("("):
            expr, s = _parse_expr(s, n)
            items.append(expr)
        elif j > 0 and tail.startswith("="):
            key = s[:j]
            s = tail[1:]
            nums = []
            while True:
                num, s = _parse_number(s)
                nums.append(num)
                s = s.lstrip()
                if s.startswith(","):
                    probe = s[1:].lstrip()
                    if probe and (probe[0].isdigit() or probe[0] in "+-."):
                        s = probe
                        continue
                break
            items.append((key, nums[0] if len(nums) == 1 else tuple(nums)))
        else:
            num, s = _parse_number(s)
            items.append(num)
        s = s.lstrip()
        if s.startswith(","):
            s = s[1:].lstrip()


def _parse_number(s):
    s = s.lstrip()
    j = 0
    while j < len(s) and (s[j].isdigit() or s[j] in "+-.eE"):
        # stop at 'e' that begins a name rather than an exponent
        if s[j] in "eE" and not (j + 1 < len(s) and (s[j + 1].isdigit() or s[j + 1] in "+-")):
            break
        j += 1
    if j == 0:
        raise WeightError("expected number at %r" % s[:20])
    return float(s[:j]), s[j:]


def _build(name, args, n):
    kw = {k: v for k, v in args if isinstance(args, list) and isinstance(k, str)} \
        if False else {a[0]: a[1] for a in args if isinstance(a, tuple) and isinstance(a[0], str)}
    pos = [a for a in args if not (isinstance(a, tuple) and isinstance(a[0], str))]
    if name == "constant":
        return constant(pos[0] if pos else kw.get("c", 1.0), n)
    if name == "power":
        return power_weight(kw.get("alpha", pos[0] if pos else 0.0), n,
                            center=kw.get("center"))
    if name == "log":
        return log_weight(n, center=kw.get("center"))
    if name == "product":
        return product(pos)
    if name == "sum":
        if len(pos) % 2:
            raise WeightError("sum(...) wants alternating coefficient, weight")
        return weighted_sum([(pos[i], pos[i + 1]) for i in range(0, len(pos), 2)])
    if name == "trunc":
        base = pos[0]
        lo, hi = kw.get("lower"), kw.get("upper")
        if lo is not None and hi is not None:
            return truncate(base, ("band", lo, hi))
        if hi is not None:
            return truncate(base, ("upper", hi))
        if lo is not None:
            return truncate(base, ("lower", lo))
        raise WeightError("trunc(...) needs lower= and/or upper=")
    if name == "mollify":
        return mollify(pos[0], kw["eps"])
    raise WeightError("unknown weight constructor %r" % name)
