"""Increasing homeomorphisms of an interval whose derivatives converge in L^p
to prescribed targets while the maps converge uniformly.

The basic brick is the staircase ``f_n``: ``n`` identical teeth, each made of
a steep ramp on ``[0, a_n]`` and a flat ramp on ``[a_n, 1/n]``.  It tends to
the identity uniformly while ``f_n'`` tends to 0 in L^p for p < 1.  Blends,
rescaled copies and compositions of staircases then reach every pair
``(f, F)`` with ``0 <= F/f' <= 1``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, DomainError, InfeasibleError
from .kernel import Interval, as_exponent, as_interval, lp_norm_1d, smooth_step, sup_distance

RAMP_KINDS = ("smooth", "poly", "linear")
_RAMP_ALIASES = {"smooth-jump": "smooth", "polynomial": "poly", "smooth": "smooth",
                 "poly": "poly", "linear": "linear"}


# ---------------------------------------------------------------------------
# ramps

@dataclass(frozen=True)
class RampSpec:
    kind: str
    a: float
    b: float

    def __post_init__(self):
        kind = _RAMP_ALIASES.get(self.kind)
        if kind is None:
            raise DomainError(f"unknown ramp kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not (self.a > 0 and self.b > 0):
            raise DomainError("ramp width and height must be positive")


class Ramp:
    """Strictly increasing ``g: [0, a] -> [0, b]`` with ``g(0)=0, g(a)=b``.

    ``poly`` is the cubic ``b (3u^2 - 2u^3)``, ``u = x/a`` (zero slope at both
    ends); ``smooth`` is ``b S(x/a)`` with the exponential smooth step, flat
    to all orders at both ends; ``linear`` is ``(b/a) x``.
    """

    def __init__(self, spec):
        self.spec = spec
        self.a, self.b = spec.a, spec.b

    def _u(self, x):
        return np.clip(np.asarray(x, float) / self.a, 0.0, 1.0)

    def __call__(self, x):
        u = self._u(x)
        kind = self.spec.kind
        if kind == "poly":
            return self.b * u * u * (3.0 - 2.0 * u)
        if kind == "smooth":
            return self.b * smooth_step(u)[0]
        return self.b * u

    def deriv(self, x):
        u = self._u(x)
        kind = self.spec.kind
        if kind == "poly":
            return 6.0 * self.b / self.a * u * (1.0 - u)
        if kind == "smooth":
            return self.b / self.a * smooth_step(u)[1]
        return np.full_like(u, self.b / self.a)


def make_ramp(spec):
    return Ramp(spec)


# ---------------------------------------------------------------------------
# generic piecewise-smooth homeomorphism

def _bisect_inverse(value, y, lo, hi, iters=200, tol=1e-15):
    """Vectorized bisection for ``value(x) = y`` with ``lo <= x <= hi``."""
    lo = np.array(lo, float)
    hi = np.array(hi, float)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = value(mid) < y
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= tol * np.maximum(1.0, np.abs(hi))):
            break
    return 0.5 * (lo + hi)


class PiecewiseSmoothHomeo1D:
    """An increasing homeomorphism of ``interval`` fixing both endpoints.

    Smooth on each piece between consecutive ``breakpoints`` (which include
    the endpoints).  ``inverse``/``inverse_deriv`` may be given in closed
    form; otherwise the inverse is found by bisection bracketed by the
    breakpoint images and polished by Newton steps.
    """

    def __init__(self, interval, breakpoints, value, deriv, smoothness="C1+",
                 inverse=None, inverse_deriv=None, name=None):
        self.interval = as_interval(interval)
        bps = np.asarray(breakpoints, float).ravel()
        bps = np.union1d(bps, [self.interval.lo, self.interval.hi])
        self.breakpoints = bps[(bps >= self.interval.lo) & (bps <= self.interval.hi)]
        self._value = value
        self._deriv = deriv
        self._inverse = inverse
        self._inverse_deriv = inverse_deriv
        self.smoothness = smoothness
        self.name = name or "homeo"
        self._bp_images = None

    def __repr__(self):
        I = self.interval
        return (f"PiecewiseSmoothHomeo1D({self.name}, ({I.lo}, {I.hi}), "
                f"{len(self.breakpoints) - 2} interior breakpoints, {self.smoothness})")

    def __call__(self, x):
        return self._value(np.asarray(x, float))

    def deriv(self, x):
        return self._deriv(np.asarray(x, float))

    def inverse(self, y, tol=1e-12):
        y = np.asarray(y, float)
        if self._inverse is not None:
            return self._inverse(y)
        if self._bp_images is None:
            imgs = np.asarray(self(self.breakpoints), float)
            if np.any(np.diff(imgs) <= 0):
                raise DegeneracyError(f"{self.name} is not strictly increasing at breakpoints")
            self._bp_images = imgs
        imgs = self._bp_images
        k = np.clip(np.searchsorted(imgs, y, side="right") - 1, 0, len(imgs) - 2)
        lo, hi = self.breakpoints[k], self.breakpoints[k + 1]
        x = _bisect_inverse(self._value, y, lo, hi)
        for _ in range(3):
            d = self.deriv(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(d > 0, (self(x) - y) / d, 0.0)
            cand = x - step
            ok = (cand >= lo) & (cand <= hi) & (np.abs(step) <= tol)
            x = np.where(ok, cand, x)
        return x

    def inverse_deriv(self, y):
        y = np.asarray(y, float)
        if self._inverse_deriv is not None:
            return self._inverse_deriv(y)
        with np.errstate(divide="ignore"):
            return 1.0 / self.deriv(self.inverse(y))

    def inverted(self):
        """The inverse homeomorphism as a new object."""
        inv_bps = self(self.breakpoints)
        return PiecewiseSmoothHomeo1D(
            self.interval, inv_bps, self.inverse, self.inverse_deriv, self.smoothness,
            inverse=self._value, inverse_deriv=self._deriv, name=f"{self.name}^-1")

    def grid(self, n=10_000):
        return self.interval.grid(n)

    def is_increasing(self, n=10_000):
        """Non-decreasing values on an ``n``-point grid, non-negative derivative
        at the cell midpoints, endpoints fixed exactly.

        Smooth ramps are flat to all orders at their ends, so in floating
        point both the values and the derivative can be exactly stationary
        there; strict growth is not testable on a grid.
        """
        x = self.grid(n)
        v = self(x)
        mids = 0.5 * (x[1:] + x[:-1])
        I = self.interval
        return bool(np.all(np.diff(v) >= 0) and np.all(self.deriv(mids) >= 0)
                    and v[0] == I.lo and v[-1] == I.hi)

    def is_strictly_increasing(self, n=10_000):
        x = self.grid(n)
        return bool(np.all(np.diff(self(x)) > 0))


def identity_homeo(interval=(0.0, 1.0)):
    return PiecewiseSmoothHomeo1D(
        interval, [], lambda x: np.array(x, float), lambda x: np.ones_like(x, float),
        "Cinf", inverse=lambda y: np.array(y, float),
        inverse_deriv=lambda y: np.ones_like(y, float), name="Id")


def from_callables(value, deriv, interval=(0.0, 1.0), inverse=None, inverse_deriv=None,
                   breakpoints=(), name="f"):
    """Wrap user-supplied maps as a :class:`PiecewiseSmoothHomeo1D`."""
    return PiecewiseSmoothHomeo1D(interval, breakpoints, value, deriv, "C1",
                                  inverse=inverse, inverse_deriv=inverse_deriv, name=name)


# ---------------------------------------------------------------------------
# staircase

@dataclass(frozen=True)
class StaircaseParams:
    n: int
    a_n: float = None
    ramp: str = "smooth"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")
        object.__setattr__(self, "n", int(self.n))
        if self.a_n is None:
            object.__setattr__(self, "a_n", 1.0 / self.n**2 if self.n > 1 else 0.5)
        if not 0 < self.a_n < 1.0 / self.n:
            raise DomainError("need 0 < a_n < 1/n")
        object.__setattr__(self, "ramp", _RAMP_ALIASES.get(self.ramp, self.ramp))
        if self.ramp not in RAMP_KINDS:
            raise DomainError(f"unknown ramp kind {self.ramp!r}")

    @property
    def b_n(self):
        return 1.0 / self.n - self.a_n

    def bound_power(self, p):
        """``(n a)^(1-p) (n b)^p + (n b)^(1-p) (n a)^p``, an upper bound for
        the integral of ``f_n'^p`` over (0, 1)."""
        na, nb = self.n * self.a_n, self.n * self.b_n
        return na ** (1 - p) * nb**p + nb ** (1 - p) * na**p


def make_staircase(params, interval=(0.0, 1.0)):
    """The staircase homeomorphism ``f_n`` of ``(0, 1)`` (optionally rescaled).

    On each tooth ``[k/n, (k+1)/n]`` it climbs ``b_n`` over the width ``a_n``
    along the ramp ``g`` and then ``a_n`` over the width ``b_n`` along
    ``(a/b) g((a/b)(x - a)) + b``.  ``f_n(k/n) = k/n`` holds exactly.
    """
    n, a, b = params.n, params.a_n, params.b_n
    g = make_ramp(RampSpec(params.ramp, a, b))
    q = a / b
    I = as_interval(interval)
    L = I.length

    def tooth(y):
        return np.where(y <= a, g(y), q * g(q * (y - a)) + b)

    def tooth_d(y):
        return np.where(y <= a, g.deriv(y), q * q * g.deriv(q * (y - a)))

    def split(t):
        k = np.clip(np.floor(t * n), 0, n - 1)
        return k, t - k / n

    def value(x):
        t = (np.asarray(x, float) - I.lo) / L
        k, y = split(t)
        # rounding in the sum may overshoot the next grid value by an ulp
        out = np.minimum(k / n + tooth(y), (k + 1) / n)
        kr = np.rint(t * n)
        out = np.where(kr / n == t, t, out)
        return I.lo + L * out

    def deriv(x):
        t = (np.asarray(x, float) - I.lo) / L
        _, y = split(t)
        return tooth_d(y)

    k = np.arange(n)
    bps = np.concatenate([k / n, k / n + a, [1.0]])
    smooth = {"smooth": "Cinf-per-piece", "poly": "C1", "linear": "C1+"}[params.ramp]
    return PiecewiseSmoothHomeo1D(I, I.lo + L * bps, value, deriv, smooth,
                                  name=f"staircase(n={n})")


def staircase_sequence(ns, ramp="smooth"):
    """Default parameters ``a_n = 1/n^2`` for each index."""
    return [StaircaseParams(n, ramp=ramp) for n in ns]


# ---------------------------------------------------------------------------
# blends and step targets

def blend_constant(c, f):
    """``h = c Id + (1 - c) f``; ``h' -> c`` in L^p when ``f' -> 0``."""
    if not 0.0 <= c <= 1.0:
        raise DomainError(f"blend weight must lie in [0, 1], got {c}")
    if c == 1.0:
        return identity_homeo(f.interval)
    if c == 0.0:
        return f
    return PiecewiseSmoothHomeo1D(
        f.interval, f.breakpoints,
        lambda x: c * np.asarray(x, float) + (1.0 - c) * f(x),
        lambda x: c + (1.0 - c) * f.deriv(x),
        f.smoothness, name=f"blend({c:g}, {f.name})")


class StepFunction1D:
    """Step function taking ``values[i]`` on ``[partition[i], partition[i+1])``."""

    def __init__(self, partition, values):
        part = np.asarray(partition, float)
        vals = np.asarray(values, float)
        if part.ndim != 1 or len(part) < 2 or np.any(np.diff(part) <= 0):
            raise DomainError("partition must be strictly increasing with >= 2 points")
        if len(vals) != len(part) - 1:
            raise DomainError("need one value per partition cell")
        self.partition = part
        self.values = vals

    @property
    def interval(self):
        return Interval(self.partition[0], self.partition[-1])

    @property
    def N(self):
        return len(self.values)

    def cell_index(self, x):
        return np.clip(np.searchsorted(self.partition, x, side="right") - 1, 0, self.N - 1)

    def __call__(self, x):
        return self.values[self.cell_index(np.asarray(x, float))]

    def coalesced(self, tol=1e-12):
        """Merge adjacent cells whose values agree within ``tol``."""
        keep = [0]
        for i in range(1, self.N):
            if abs(self.values[i] - self.values[keep[-1]]) > tol:
                keep.append(i)
        part = np.append(self.partition[keep], self.partition[-1])
        return StepFunction1D(part, self.values[keep])

    def __repr__(self):
        return f"StepFunction1D(N={self.N})"


def make_step_homeo(H, n, ramp="smooth", a_n=None):
    """Homeomorphism whose derivative approaches the step function ``H``.

    On each cell ``[a_{i-1}, a_i]`` it is the rescaled blend
    ``c_i Id + (1 - c_i) f_n`` of the staircase, so every partition point is
    fixed and ``phi_n' -> H`` in L^p.
    """
    vals = H.values
    bad = np.nonzero((vals < 0) | (vals > 1))[0]
    if bad.size:
        i = int(bad[0])
        x0 = 0.5 * (H.partition[i] + H.partition[i + 1])
        raise InfeasibleError(f"step value {vals[i]} outside [0, 1]", witness=x0)
    params = StaircaseParams(n, a_n, ramp)
    f = make_staircase(params)
    part = H.partition
    widths = np.diff(part)

    def locate(x):
        x = np.asarray(x, float)
        i = H.cell_index(x)
        return i, np.clip((x - part[i]) / widths[i], 0.0, 1.0)

    def value(x):
        x = np.asarray(x, float)
        i, y = locate(x)
        c = vals[i]
        out = part[i] + widths[i] * (c * y + (1 - c) * f(y))
        on_part = np.isin(x, part)
        return np.where(on_part, x, out)

    def deriv(x):
        i, y = locate(x)
        c = vals[i]
        return c + (1 - c) * f.deriv(y)

    inner = f.breakpoints
    bps = (part[:-1, None] + widths[:, None] * inner[None, :]).ravel()
    return PiecewiseSmoothHomeo1D(H.interval, bps, value, deriv, "C1+",
                                  name=f"step_homeo(N={H.N}, n={n})")


def transfer_compose(g, phi):
    """``g o phi^{-1}`` with derivative ``(g' o phi^{-1}) (phi^{-1})'``.

    Uniform distance is transported exactly: ``sup|g o phi^{-1} - h|`` equals
    ``sup|g - h o phi|``.
    """
    if g.interval != phi.interval:
        raise DomainError("g and phi must live on the same interval")
    imgs = np.asarray(phi(phi.breakpoints), float)
    if np.any(np.diff(imgs) <= 0):
        raise DegeneracyError("phi is not invertible (flat between breakpoints)")
    x = phi.grid(4096)
    if np.any(np.diff(phi(x)) < 0):
        raise DegeneracyError("phi is not monotone")

    def value(y):
        return g(phi.inverse(y))

    def deriv(y):
        return g.deriv(phi.inverse(y)) * phi.inverse_deriv(y)

    def inverse(z):
        return phi(g.inverse(z))

    bps = phi(np.union1d(g.breakpoints, phi.breakpoints))
    return PiecewiseSmoothHomeo1D(g.interval, bps, value, deriv, "C1+",
                                  inverse=inverse, name=f"{g.name} o {phi.name}^-1")


# ---------------------------------------------------------------------------
# feasibility and the approximation pipeline

@dataclass
class PairCandidate1D:
    """A homeomorphism ``f`` together with a target derivative ``F``."""

    f: PiecewiseSmoothHomeo1D
    F: object
    p: float = 0.5
    r: float = 1.5

    def __post_init__(self):
        self.p = float(as_exponent(self.p))
        if not self.r > 1:
            raise DomainError("integrability exponent r must exceed 1")


@dataclass
class Feasibility:
    feasible: bool
    witness: float = None
    ratio_min: float = float("nan")
    ratio_max: float = float("nan")
    lr_finite: bool = True

    def __bool__(self):
        return self.feasible


def feasible_pair(cand, samples=10_000, tol=1e-12):
    """Test ``0 <= F/f' <= 1`` at the midpoints of a uniform grid."""
    I = cand.f.interval
    x = I.lo + (np.arange(samples) + 0.5) * I.length / samples
    fp = np.asarray(cand.f.deriv(x), float)
    if np.any(fp <= 0):
        raise DegeneracyError(f"f' vanishes at x={x[np.argmax(fp <= 0)]}")
    ratio = np.asarray(cand.F(x), float) / fp
    bad = (ratio < -tol) | (ratio > 1 + tol) | ~np.isfinite(ratio)
    with np.errstate(divide="ignore", over="ignore"):
        inv = np.asarray(cand.f.inverse_deriv(cand.f(x)), float)
        lr = np.mean(fp**cand.r) * I.length, np.mean(np.abs(inv) ** cand.r) * I.length
    lr_ok = bool(np.all(np.isfinite(lr)))
    if bad.any():
        return Feasibility(False, float(x[np.argmax(bad)]), float(np.nanmin(ratio)),
                           float(np.nanmax(ratio)), lr_ok)
    return Feasibility(True, None, float(ratio.min()), float(ratio.max()), lr_ok)


def _step_approximation(T, I, eps_l1, max_level=12, sub=64, clamp_tol=1e-9):
    """Dyadic step function of cell averages of ``T`` with L1 error <= eps_l1."""
    for level in range(max_level + 1):
        N = 2**level
        part = I.lo + I.length * np.arange(N + 1) / N
        w = I.length / N
        xs = part[:-1, None] + (np.arange(sub) + 0.5)[None, :] * w / sub
        vals = np.asarray(T(xs.ravel()), float).reshape(N, sub)
        if np.any(vals < -clamp_tol) or np.any(vals > 1 + clamp_tol):
            i, j = np.argwhere((vals < -clamp_tol) | (vals > 1 + clamp_tol))[0]
            raise InfeasibleError("target derivative leaves [0, 1]", witness=float(xs[i, j]))
        avg = vals.mean(axis=1)
        l1 = float(np.sum(np.abs(vals - avg[:, None])) * w / sub)
        if l1 <= eps_l1 or level == max_level:
            return StepFunction1D(part, np.clip(avg, 0.0, 1.0)).coalesced(), l1


@dataclass
class ApproxReport:
    converged: bool
    n: int
    sup_error: float
    lp_error: object
    step: StepFunction1D
    step_l1_error: float
    history: list = field(default_factory=list)


def approximate_pair(cand, eps, n_start=8, n_max=4096, ramp="smooth", sup_eps=None):
    """Build ``h`` with ``sup|h - f| <= eps`` and ``||h' - F||_p <= eps``.

    Steps: form ``T = (F o f^{-1}) (f^{-1})'``, approximate it by a dyadic step
    function, realize that with :func:`make_step_homeo` and transport the
    result back with ``h = g o f``.  ``n`` doubles until both errors meet
    their targets or ``n_max`` is exceeded (then ``converged`` is False).
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    sup_eps = eps if sup_eps is None else sup_eps
    feas = feasible_pair(cand)
    if not feas:
        raise InfeasibleError(
            f"0 <= F/f' <= 1 fails (ratio in [{feas.ratio_min:.3g}, {feas.ratio_max:.3g}])",
            witness=feas.witness)
    f, F, p = cand.f, cand.F, cand.p
    I = f.interval

    def T(y):
        x = f.inverse(y)
        return np.asarray(F(x), float) * f.inverse_deriv(y)

    step, l1 = _step_approximation(T, I, eps / 4)
    phi = f.inverted()

    def errors(h):
        sup = sup_distance(h, f, I, extra_points=h.breakpoints).value
        lp = lp_norm_1d(lambda x: h.deriv(x) - F(x), I, p, h.breakpoints)
        return sup, lp

    if step.N == 1 and step.values[0] == 1.0:
        h = transfer_compose(identity_homeo(I), phi)
        sup, lp = errors(h)
        return h, ApproxReport(True, 0, sup, lp, step, l1, [(0, sup, lp.value)])

    history = []
    n = n_start
    best = None
    while n <= n_max:
        g = make_step_homeo(step, n, ramp=ramp)
        h = transfer_compose(g, phi)
        sup, lp = errors(h)
        history.append((n, sup, lp.value))
        best = (h, ApproxReport(False, n, sup, lp, step, l1, history))
        if sup <= sup_eps and lp.value <= eps:
            best[1].converged = True
            return best
        n *= 2
    return best


# ---------------------------------------------------------------------------
# coordinatewise staircase in d dimensions

class TensorStaircase:
    """``F_n(x) = (f_n(x_1), ..., f_n(x_d))`` on the unit cube.

    Uniformly close to the identity with derivative close to 0 in L^p, so its
    Jacobian determinant is far from 1 almost everywhere.
    """

    def __init__(self, params, d):
        if d < 2:
            raise DomainError("tensor staircase needs d >= 2")
        self.params = params
        self.d = d
        self.f = make_staircase(params)

    def __call__(self, x):
        return self.f(np.asarray(x, float))

    value = __call__

    def jacobian(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        J = np.zeros(x.shape + (self.d,))
        idx = np.arange(self.d)
        J[:, idx, idx] = self.f.deriv(x)
        return J


def tensor_staircase(params, d):
    return TensorStaircase(params, d)


# ---------------------------------------------------------------------------
# JSON builder

_BUILDER_KEYS = {"n", "a_n", "ramp", "partition", "values", "interval"}


def build_from_json(spec):
    """Build a staircase or step homeomorphism from a JSON object or string.

    ``{"n": 3, "a_n": 0.111, "ramp": "poly"}`` gives a staircase; adding
    ``"partition"`` and ``"values"`` gives the step-derivative homeomorphism.
    """
    if isinstance(spec, str):
        spec = json.loads(spec)
    unknown = set(spec) - _BUILDER_KEYS
    if unknown:
        raise DomainError(f"unknown keys {sorted(unknown)}")
    if "n" not in spec:
        raise DomainError("missing key 'n'")
    ramp = spec.get("ramp", "smooth")
    if "partition" in spec or "values" in spec:
        H = StepFunction1D(spec["partition"], spec["values"])
        return make_step_homeo(H, spec["n"], ramp=ramp, a_n=spec.get("a_n"))
    params = StaircaseParams(spec["n"], spec.get("a_n"), ramp)
    return make_staircase(params, spec.get("interval", (0.0, 1.0)))


def pipeline_step_error_bound(H, n, p, ramp="smooth"):
    """Closed-form bound on ``int |phi_n' - H|^p`` for :func:`make_step_homeo`.

    Per cell the error is ``(1 - c_i)^p`` times the staircase bound, weighted
    by the cell width; the cruder ``N max_i`` form is returned second.
    """
    sb = StaircaseParams(n, ramp=ramp).bound_power(p)
    per = (1 - H.values) ** p * sb
    return float(np.sum(np.diff(H.partition) * per)), float(H.N * per.max())


__all__ = [
    "RampSpec", "Ramp", "make_ramp", "PiecewiseSmoothHomeo1D", "identity_homeo",
    "from_callables", "StaircaseParams", "make_staircase", "staircase_sequence",
    "blend_constant", "StepFunction1D", "make_step_homeo", "transfer_compose",
    "PairCandidate1D", "Feasibility", "feasible_pair", "ApproxReport", "approximate_pair",
    "TensorStaircase", "tensor_staircase", "build_from_json", "pipeline_step_error_bound",
]
