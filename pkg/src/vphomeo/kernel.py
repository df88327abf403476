"""Numerical kernel: domains, quadrature, L^p quasi-norms and sampled maps.

Everything here works for exponents ``0 < p < 1`` where ``||.||_p`` is only a
quasi-norm.  Integrals of ``|f|^p`` are computed by composite rules with
dyadic refinement (Gauss panels in 1D, midpoint cells in d dimensions); the
caller supplies the known non-smooth locations
(breakpoints in 1D, spheres and planes in d dimensions) so that each cell sees
a smooth integrand.
"""

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DomainError, EvaluationError

THREADS_ENV = "VPHOMEO_THREADS"
CHUNK = 1 << 16


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class Exponent:
    """An integrability exponent ``p > 0`` (``inf`` allowed)."""

    p: float

    def __post_init__(self):
        if not (self.p > 0) or math.isnan(self.p):
            raise DomainError(f"exponent must be positive, got {self.p!r}")

    @property
    def is_subunit(self):
        return self.p < 1

    def __float__(self):
        return float(self.p)


def as_exponent(p):
    return p if isinstance(p, Exponent) else Exponent(float(p))


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise DomainError("interval endpoints must be finite")
        if not self.lo < self.hi:
            raise DomainError(f"empty interval ({self.lo}, {self.hi})")

    @property
    def length(self):
        return self.hi - self.lo

    def grid(self, n):
        return np.linspace(self.lo, self.hi, n + 1)


def as_interval(I):
    if isinstance(I, Interval):
        return I
    lo, hi = I
    return Interval(float(lo), float(hi))


class BoxDomain:
    """Finite union of interior-disjoint axis-aligned boxes in R^d.

    An optional ``predicate`` (vectorized, points -> bool) restricts the
    union further; measures are then estimated by grid counting.
    """

    def __init__(self, boxes, predicate=None):
        boxes = [(np.asarray(lo, float), np.asarray(hi, float)) for lo, hi in boxes]
        if not boxes:
            raise DomainError("a domain needs at least one box")
        d = boxes[0][0].size
        if d < 1:
            raise DomainError("dimension must be >= 1")
        for lo, hi in boxes:
            if lo.shape != (d,) or hi.shape != (d,):
                raise DomainError("all boxes must share the dimension")
            if not np.all(lo < hi):
                raise DomainError(f"degenerate box {lo} {hi}")
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                lo = np.maximum(boxes[i][0], boxes[j][0])
                hi = np.minimum(boxes[i][1], boxes[j][1])
                if np.all(lo < hi):
                    raise DomainError(f"boxes {i} and {j} overlap")
        self.boxes = boxes
        self.d = d
        self.predicate = predicate

    @classmethod
    def unit(cls, d):
        return cls([(np.zeros(d), np.ones(d))])

    @classmethod
    def from_bounds(cls, *bounds):
        """``BoxDomain.from_bounds((0, 1), (0, 2))`` is the box (0,1)x(0,2)."""
        lo, hi = zip(*bounds)
        return cls([(lo, hi)])

    def box_volumes(self):
        return np.array([np.prod(hi - lo) for lo, hi in self.boxes])

    def measure(self, resolution=1024):
        if self.predicate is None:
            return float(math.fsum(self.box_volumes()))
        total = 0.0
        for lo, hi in self.boxes:
            pts, w = _cell_centers(lo, hi, resolution)
            total += w * np.count_nonzero(self.predicate(pts))
        return total

    def bounding_box(self):
        lo = np.min([b[0] for b in self.boxes], axis=0)
        hi = np.max([b[1] for b in self.boxes], axis=0)
        return lo, hi

    def contains(self, x, closed=False):
        x = np.atleast_2d(x)
        inside = np.zeros(len(x), bool)
        for lo, hi in self.boxes:
            if closed:
                inside |= np.all((x >= lo) & (x <= hi), axis=1)
            else:
                inside |= np.all((x > lo) & (x < hi), axis=1)
        if self.predicate is not None:
            inside &= self.predicate(x)
        return inside

    def to_json(self):
        return {"boxes": [[lo.tolist(), hi.tolist()] for lo, hi in self.boxes]}

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, dict):
            obj = obj["boxes"]
        return cls([(lo, hi) for lo, hi in obj])

    def __repr__(self):
        return f"BoxDomain(d={self.d}, boxes={len(self.boxes)})"


@dataclass(frozen=True)
class LpResult:
    """A quasi-norm value together with its quadrature error estimate.

    ``power`` is the integral of ``|f|^p`` (``value ** p``), kept separately
    because most bounds in this package are stated in that form.  For
    matrix-valued integrands ``entries`` holds the per-entry norms and
    ``value`` is their maximum.
    """

    value: float
    p: float
    quad_error_estimate: float
    breakpoints_honored: bool = True
    power: float = float("nan")
    power_error_estimate: float = float("nan")
    entries: np.ndarray = field(default=None, repr=False, compare=False)
    entry_powers: np.ndarray = field(default=None, repr=False, compare=False)


def _result_from_power(power, power_err, p, honored=True, entries=None):
    power = float(power)
    value = power ** (1.0 / p)
    err = (power + power_err) ** (1.0 / p) - value
    ent = None if entries is None else np.asarray(entries) ** (1.0 / p)
    return LpResult(value, p, float(err), honored, power, float(power_err), ent,
                    None if entries is None else np.asarray(entries))


@dataclass
class SampledMap:
    """Point samples of a map R^d -> R^d, optionally with Jacobians."""

    points: np.ndarray
    values: np.ndarray
    jacobians: np.ndarray = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, float))
        self.values = np.atleast_2d(np.asarray(self.values, float))
        if self.points.shape[0] != self.values.shape[0]:
            raise DomainError("points and values must have the same count")
        if self.jacobians is not None:
            n, d = self.points.shape
            self.jacobians = np.asarray(self.jacobians, float).reshape(n, d, d)

    @property
    def d(self):
        return self.points.shape[1]

    def header(self):
        d = self.d
        cols = [f"x{i + 1}" for i in range(d)] + [f"f{i + 1}" for i in range(self.values.shape[1])]
        if self.jacobians is not None:
            cols += [f"J{i + 1}{j + 1}" for i in range(d) for j in range(d)]
        return cols

    def to_csv(self, path):
        rows = [self.points, self.values]
        if self.jacobians is not None:
            rows.append(self.jacobians.reshape(len(self.points), -1))
        data = np.hstack(rows)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for row in data:
                w.writerow([format(v, ".17g") for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            data = np.array([[float(v) for v in row] for row in r], float)
        d = sum(1 for h in header if h.startswith("x"))
        nf = sum(1 for h in header if h.startswith("f"))
        nj = sum(1 for h in header if h.startswith("J"))
        if nj not in (0, d * d):
            raise DomainError("Jacobian columns must be d*d")
        data = data.reshape(-1, len(header))
        jac = data[:, d + nf:].reshape(-1, d, d) if nj else None
        return cls(data[:, :d], data[:, d:d + nf], jac)


def sample_map(F, points, jacobian=None):
    """Evaluate ``F`` (and optionally ``jacobian``) on ``points``."""
    pts = np.asarray(points, float)
    if pts.ndim == 1:
        pts = pts[:, None]
        vals = np.asarray(F(pts[:, 0]), float)[:, None]
        jac = None if jacobian is None else np.asarray(jacobian(pts[:, 0]), float)
        return SampledMap(pts, vals, None if jac is None else jac.reshape(-1, 1, 1))
    vals = np.asarray(F(pts), float)
    jac = None if jacobian is None else np.asarray(jacobian(pts), float)
    return SampledMap(pts, vals, jac)


# ---------------------------------------------------------------------------
# smooth transition

def smooth_step(u):
    """Smooth monotone transition 0 -> 1 on [0, 1] and its derivative.

    ``S(u) = e^{-1/u} / (e^{-1/u} + e^{-1/(1-u)})``; constant outside (0, 1)
    with every derivative vanishing at the endpoints.  Points within 1e-12 of
    an endpoint take the exact branch value.
    """
    u = np.asarray(u, float)
    S = np.where(u >= 0.5, 1.0, 0.0)
    dS = np.zeros_like(u)
    inner = (u > 1e-12) & (u < 1.0 - 1e-12)
    if np.any(inner):
        v = u[inner]
        z = 1.0 / (1.0 - v) - 1.0 / v
        s = expit(z)
        S[inner] = s
        dS[inner] = s * expit(-z) * (1.0 / v**2 + 1.0 / (1.0 - v) ** 2)
    S = np.where(u <= 1e-12, 0.0, np.where(u >= 1.0 - 1e-12, 1.0, S))
    return S, dS


# ---------------------------------------------------------------------------
# evaluation helpers

def _threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _checked(vals):
    vals = np.asarray(vals, float)
    if not np.all(np.isfinite(vals)):
        raise EvaluationError("integrand returned non-finite values")
    return vals


def _map_chunks(fn, pts):
    """Apply ``fn`` to ``pts`` in chunks; concatenation order is fixed."""
    n = len(pts)
    if n <= CHUNK:
        return fn(pts)
    chunks = [pts[i:i + CHUNK] for i in range(0, n, CHUNK)]
    nt = _threads()
    if nt > 1:
        with ThreadPoolExecutor(nt) as ex:
            parts = list(ex.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# 1D adaptive composite quadrature

_RULES = {}


def _rule(name):
    if name not in _RULES:
        if name == "midpoint":
            _RULES[name] = (np.array([0.5]), np.array([1.0]))
        elif name.startswith("gauss"):
            k = int(name[5:] or 8)
            x, w = np.polynomial.legendre.leggauss(k)
            _RULES[name] = ((x + 1) / 2, w / 2)
        else:
            raise DomainError(f"unknown quadrature rule {name!r}")
    return _RULES[name]


def adaptive_quad(integrand, edges, atol=1e-10, rtol=1e-8, max_depth=48, n_init=16,
                  rule="gauss8"):
    """Integrate a vectorized ``integrand`` over ``[edges[0], edges[-1]]``.

    Each piece between consecutive edges starts as ``n_init`` cells.  A cell
    is accepted when the rule applied to the whole cell and to its two halves
    agree within the cell's share of the tolerance; otherwise it is halved
    (the halves inherit their values).  ``rule`` is ``"midpoint"`` or
    ``"gaussK"``.  Returns ``(integral, error_estimate)``; the estimate sums
    the accepted differences.
    """
    nodes, weights = _rule(rule)
    edges = np.unique(np.asarray(edges, float))
    lengths = np.diff(edges)
    total_len = edges[-1] - edges[0]

    def panel(a, h):
        x = a[:, None] + h[:, None] * nodes[None, :]
        vals = _checked(integrand(x.ravel())).reshape(x.shape)
        return h * (vals @ weights)

    frac = np.arange(n_init) / n_init
    a = (edges[:-1, None] + lengths[:, None] * frac).ravel()
    h = np.repeat(lengths / n_init, n_init)
    cval = panel(a, h)
    tol = max(atol, rtol * abs(math.fsum(cval)))
    parts, errs = [], []
    for depth in range(max_depth + 1):
        hh = h / 2
        left = panel(a, hh)
        right = panel(a + hh, hh)
        fine = left + right
        diff = np.abs(fine - cval)
        if depth == max_depth:
            done = np.ones(len(a), bool)
        else:
            done = diff <= tol * h / total_len
        parts.append(math.fsum(fine[done]))
        errs.append(math.fsum(diff[done]))
        keep = ~done
        if not keep.any():
            break
        ak, hk = a[keep], hh[keep]
        a = np.concatenate([ak, ak + hk])
        h = np.concatenate([hk, hk])
        cval = np.concatenate([left[keep], right[keep]])
    return math.fsum(parts), math.fsum(errs)


def lp_norm_1d(f, I, p, breakpoints=(), *, atol=1e-10, rtol=1e-8, max_depth=48,
               rule="gauss8"):
    """``(int_I |f|^p)^(1/p)`` by adaptive composite quadrature.

    Parameters
    ----------
    f : callable
        Vectorized scalar map (array -> array).
    I : Interval or (lo, hi)
    p : float or Exponent
    breakpoints : sequence of float
        Points inside ``I`` where ``f`` may fail to be smooth.
    rule : str
        Panel rule for :func:`adaptive_quad` (``"midpoint"`` or ``"gaussK"``).
    """
    I = as_interval(I)
    p = float(as_exponent(p))
    if not np.isfinite(p):
        raise DomainError("use sup_distance for p = inf")
    bps = np.asarray(breakpoints, float).ravel()
    if bps.size and (bps.min() < I.lo or bps.max() > I.hi):
        raise DomainError("breakpoints must lie in the interval")
    edges = np.concatenate([[I.lo], bps, [I.hi]])

    def integrand(x):
        return np.abs(f(x)) ** p

    power, err = adaptive_quad(integrand, edges, atol, rtol, max_depth, rule=rule)
    return _result_from_power(power, err, p)


# ---------------------------------------------------------------------------
# d-dimensional composite midpoint with hint refinement

def _cell_centers(lo, hi, n):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    d = lo.size
    hs = (hi - lo) / n
    axes = [lo[k] + (np.arange(n) + 0.5) * hs[k] for k in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    return pts, float(np.prod(hs))


def _hits(centers, half, spheres, planes, hint=None):
    hit = np.zeros(len(centers), bool) if hint is None else np.asarray(hint(centers, half), bool)
    rad = np.linalg.norm(half)
    for c, R in spheres:
        dist = np.linalg.norm(centers - np.asarray(c, float), axis=1)
        hit |= np.abs(dist - R) <= rad
    for axis, v in planes:
        hit |= np.abs(centers[:, axis] - v) < half[axis]
    return hit


def _refined_cells(lo, hi, n, spheres, planes, depth, hint=None):
    """Cell centers and weights of an ``n^d`` grid with hint refinement."""
    pts, w = _cell_centers(lo, hi, n)
    half = (np.asarray(hi, float) - np.asarray(lo, float)) / (2 * n)
    d = pts.shape[1]
    if not (spheres or planes or hint) or depth == 0:
        return pts, np.full(len(pts), w)
    out_p, out_w = [], []
    offs = np.array(np.meshgrid(*[[-0.5, 0.5]] * d, indexing="ij")).reshape(d, -1).T
    for level in range(depth + 1):
        hit = _hits(pts, half, spheres, planes, hint)
        if level == depth:
            hit[:] = False
        out_p.append(pts[~hit])
        out_w.append(np.full(np.count_nonzero(~hit), w))
        if not hit.any():
            break
        pts = (pts[hit][:, None, :] + offs[None, :, :] * half).reshape(-1, d)
        half = half / 2
        w = w / 2**d
    return np.concatenate(out_p), np.concatenate(out_w)


def _grid_powers(g, domain, p, n, spheres, planes, depth, mask, hint=None):
    total = None
    for lo, hi in domain.boxes:
        pts, w = _refined_cells(lo, hi, n, spheres, planes, depth, hint)

        def entry_powers(chunk):
            vals = np.asarray(g(chunk), float).reshape(len(chunk), -1)
            vals = _checked(vals)
            keep = np.ones(len(chunk), bool)
            if mask is not None:
                keep &= mask(chunk)
            if domain.predicate is not None:
                keep &= domain.predicate(chunk)
            return np.where(keep[:, None], np.abs(vals) ** p, 0.0)

        vals = _map_chunks(entry_powers, pts)
        part = w @ vals
        total = part if total is None else total + part
    return total


def lp_norm_nd(g, domain, p, *, resolution=256, spheres=(), planes=(), refine_depth=3,
               mask=None, shape=None, hint=None):
    """Entrywise quasi-norm ``max_ij (int |g_ij|^p)^(1/p)`` over a box domain.

    ``g`` maps points ``(N, d)`` to arrays ``(N,)``, ``(N, k)`` or
    ``(N, d, d)``.  Cells crossing a hint sphere ``(center, radius)`` or
    plane ``(axis, coordinate)``, or flagged by ``hint(centers, half_widths)``,
    are halved ``refine_depth`` times.  The
    error estimate is the change against the grid of half resolution.
    """
    if not isinstance(domain, BoxDomain):
        raise DomainError("lp_norm_nd needs a BoxDomain")
    p = float(as_exponent(p))
    for c, _ in spheres:
        if np.asarray(c).size != domain.d:
            raise DomainError("hint sphere dimension mismatch")
    for axis, _ in planes:
        if not 0 <= axis < domain.d:
            raise DomainError("hint plane axis out of range")
    lo0, hi0 = domain.boxes[0]
    probe = np.asarray(g(((lo0 + hi0) / 2)[None, :]))
    if probe.shape[0] != 1:
        raise DomainError("map must return one value block per point")
    fine = _grid_powers(g, domain, p, resolution, spheres, planes, refine_depth, mask, hint)
    coarse = _grid_powers(g, domain, p, max(1, resolution // 2), spheres, planes,
                          refine_depth, mask, hint)
    err = np.abs(fine - coarse)
    k = int(np.argmax(fine))
    res = _result_from_power(fine[k], err.max(), p, entries=fine)
    if shape is None and probe.ndim == 3:
        shape = probe.shape[1:]
    if shape is not None:
        object.__setattr__(res, "entries", res.entries.reshape(shape))
        object.__setattr__(res, "entry_powers", res.entry_powers.reshape(shape))
    return res


# ---------------------------------------------------------------------------
# sup-distance

@dataclass(frozen=True)
class SupResult:
    """Grid estimate of a sup-distance; ``upper_bound`` is certified when a
    Lipschitz constant for ``f - g`` was supplied."""

    value: float
    resolution: int
    upper_bound: float = None

    def __float__(self):
        return self.value


def region_grid(region, resolution=None, extra_points=None):
    """Closed grid covering ``region`` (Interval or BoxDomain) and its spacing."""
    if isinstance(region, (Interval, tuple, list)):
        I = as_interval(region)
        n = resolution or 4096
        x = I.grid(n)
        if extra_points is not None:
            x = np.union1d(x, np.clip(np.asarray(extra_points, float), I.lo, I.hi))
        return x, I.length / n
    if not isinstance(region, BoxDomain):
        raise DomainError("region must be an Interval or BoxDomain")
    n = resolution or (4096 if region.d == 1 else 512)
    pts, step = [], 0.0
    for lo, hi in region.boxes:
        axes = [np.linspace(lo[k], hi[k], n + 1) for k in range(region.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts.append(np.stack([m.ravel() for m in mesh], axis=1))
        step = max(step, float(np.max((hi - lo) / n)))
    pts = np.concatenate(pts)
    if region.predicate is not None:
        pts = pts[region.predicate(pts)]
    if extra_points is not None:
        pts = np.concatenate([pts, np.atleast_2d(extra_points)])
    return pts, step


def sup_distance(f, g, region, resolution=None, lipschitz=None, extra_points=None):
    """Max over a grid of the componentwise ``|f - g|``."""
    pts, step = region_grid(region, resolution, extra_points)

    def diff(chunk):
        a = np.asarray(f(chunk), float).reshape(len(chunk), -1)
        b = np.asarray(g(chunk), float).reshape(len(chunk), -1)
        return np.max(np.abs(a - b), axis=1)

    vals = _checked(_map_chunks(diff, pts))
    value = float(vals.max()) if vals.size else 0.0
    n = resolution or (4096 if pts.ndim == 1 else (4096 if pts.shape[1] == 1 else 512))
    bound = None
    if lipschitz is not None:
        d = 1 if pts.ndim == 1 else pts.shape[1]
        bound = value + lipschitz * step * math.sqrt(d) / 2
    return SupResult(value, n, bound)


# ---------------------------------------------------------------------------
# finite-difference Jacobians

def fd_jacobian(F, x, h=1e-5, surfaces=(), return_flag=False):
    """Central-difference Jacobian of ``F: (N, d) -> (N, d)``.

    ``x`` may be a single point ``(d,)`` or a batch ``(N, d)``.  Points
    within ``2 h`` of a ``surfaces`` sphere ``(center, radius)`` use
    second-order one-sided differences stepping away from the sphere; with
    ``return_flag`` the boolean mask of such points is returned as well.
    """
    x = np.asarray(x, float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    n, d = X.shape
    flagged = np.zeros(n, bool)
    away = np.ones((n, d))
    for c, R in surfaces:
        v = X - np.asarray(c, float)
        r = np.linalg.norm(v, axis=1)
        near = np.abs(r - R) <= 2 * h
        outward = np.where((r >= R)[:, None], np.sign(v), -np.sign(v))
        outward[outward == 0] = 1.0
        away = np.where(near[:, None], outward, away)
        flagged |= near
    J = np.empty((n, d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        central = (np.asarray(F(X + e)) - np.asarray(F(X - e))) / (2 * h)
        J[:, :, k] = central
        if flagged.any():
            s = away[flagged, k][:, None]
            Xf = X[flagged]
            step = s * e
            one = (-3 * np.asarray(F(Xf)) + 4 * np.asarray(F(Xf + step))
                   - np.asarray(F(Xf + 2 * step))) / (2 * h)
            J[flagged, :, k] = one * s
    J = J[0] if single else J
    if return_flag:
        return J, (bool(flagged[0]) if single else flagged)
    return J


# ---------------------------------------------------------------------------
# quasi-norm inequality audit

@dataclass
class QuasinormReport:
    p: float
    q: float
    measure: float
    # ||f+g||_p^p <= ||f||_p^p + ||g||_p^p
    sum_power_lhs: float
    sum_power_rhs: float
    # ||f+g||_p <= 2^((1-p)/p) (||f||_p + ||g||_p)
    quasi_lhs: float
    quasi_rhs: float
    # ||u||_p <= measure^((q-p)/(pq)) ||u||_q for u = f, g
    embed_lhs: tuple
    embed_rhs: tuple
    tolerance: dict
    violations: list

    @property
    def slack_sum_power(self):
        return self.sum_power_rhs - self.sum_power_lhs

    @property
    def slack_quasi(self):
        return self.quasi_rhs - self.quasi_lhs

    @property
    def slack_embed(self):
        return tuple(r - l for l, r in zip(self.embed_lhs, self.embed_rhs))

    @property
    def ok(self):
        return not self.violations


def _norm_on(fun, domain, p, breakpoints, resolution):
    if np.isinf(p):
        if isinstance(domain, BoxDomain):
            pts, _ = region_grid(domain, resolution)
        else:
            pts = as_interval(domain).grid(1 << 16)
            pts = np.union1d(pts, np.asarray(breakpoints, float))
        v = float(np.max(np.abs(fun(pts)))) if len(pts) else 0.0
        return LpResult(v, p, 0.0, True, v, 0.0)
    if isinstance(domain, BoxDomain):
        return lp_norm_nd(fun, domain, p, resolution=resolution or 256)
    return lp_norm_1d(fun, domain, p, breakpoints)


def check_quasinorm_inequalities(f, g, domain, p, q, breakpoints=(), resolution=None):
    """Evaluate both quasi-triangle inequalities and the L^q -> L^p embedding.

    Returns a :class:`QuasinormReport`; an inequality is flagged only when it
    fails by more than twice the summed quadrature error estimates.
    """
    p = float(as_exponent(p))
    q = float(as_exponent(q))
    if not p < 1:
        raise DomainError("quasi-norm checks need 0 < p < 1")
    if q <= p:
        raise DomainError("embedding check needs q > p")
    if isinstance(domain, BoxDomain):
        lam = domain.measure()
    else:
        domain = as_interval(domain)
        lam = domain.length

    def fg(x):
        return f(x) + g(x)

    nf = _norm_on(f, domain, p, breakpoints, resolution)
    ng = _norm_on(g, domain, p, breakpoints, resolution)
    ns = _norm_on(fg, domain, p, breakpoints, resolution)
    qf = _norm_on(f, domain, q, breakpoints, resolution)
    qg = _norm_on(g, domain, q, breakpoints, resolution)

    tol_sum = 2 * (ns.power_error_estimate + nf.power_error_estimate
                   + ng.power_error_estimate) + 1e-12
    tol_quasi = 2 * (ns.quad_error_estimate + nf.quad_error_estimate
                     + ng.quad_error_estimate) + 1e-12
    expo = 1.0 / p if np.isinf(q) else (q - p) / (p * q)
    factor = lam ** expo
    embed_lhs = (nf.value, ng.value)
    embed_rhs = (factor * qf.value, factor * qg.value)
    tol_embed = (2 * (nf.quad_error_estimate + factor * qf.quad_error_estimate) + 1e-12,
                 2 * (ng.quad_error_estimate + factor * qg.quad_error_estimate) + 1e-12)
    if np.isinf(q):
        # grid sup under-estimates the essential sup
        tol_embed = tuple(t + 1e-6 * factor for t in tol_embed)

    rep = QuasinormReport(
        p, q, lam,
        ns.power, nf.power + ng.power,
        ns.value, 2 ** ((1 - p) / p) * (nf.value + ng.value),
        embed_lhs, embed_rhs,
        {"sum_power": tol_sum, "quasi": tol_quasi, "embed": tol_embed},
        [],
    )
    if rep.slack_sum_power < -tol_sum:
        rep.violations.append("sum_power")
    if rep.slack_quasi < -tol_quasi:
        rep.violations.append("quasi_triangle")
    for name, s, t in zip(("embed_f", "embed_g"), rep.slack_embed, tol_embed):
        if s < -t:
            rep.violations.append(name)
    return rep
