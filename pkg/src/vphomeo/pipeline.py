"""Piecewise-constant rotation fields and volume-preserving maps realizing them.

A rotation field ``H: Omega -> SO(d)`` is sampled on a dyadic partition.
On every cell a ball packing is computed and each ball receives a localized
rotation by the cell's sample, so that the derivative of the pasted map is
close in ``L^p`` to the piecewise-constant field while the map itself stays
within the ball diameters of the identity.  Refining the partition gives a
sequence of volume-preserving diffeomorphisms whose derivatives approach
``H`` in ``L^p``.
"""

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetError, DomainError, HypothesisError
from .kernel import BoxDomain, LpResult, as_exponent, lp_norm_nd, sup_distance
from .packing import BallIndex, BallPacking, vitali_pack
from .twist import (VolumePreservingDiffeo, check_sod, fit_c1, localized_eval, rotation2,
                    sod_block_decompose)


# ---------------------------------------------------------------------------
# rotation fields

def dyadic_splits(level, d):
    """Cells per axis after ``level`` bisections applied to the axes in turn."""
    if level < 0:
        raise DomainError("level must be non-negative")
    return [2 ** ((level + d - 1 - k) // d) for k in range(d)]


class RotationField:
    """SO(d)-valued field on a box domain.

    ``kind`` is ``"closed-form"`` (an evaluator ``(N, d) -> (N, d, d)``) or
    ``"piecewise-constant"`` (a grid of cells over the bounding box with one
    matrix per cell).  Outside the domain, and on skipped cells, the
    piecewise field is the identity.
    """

    def __init__(self, domain, evaluator=None, *, kind="closed-form", splits=None,
                 matrices=None, present=None, name=None):
        self.domain = domain
        self.d = domain.d
        self.kind = kind
        self.name = name
        if kind == "closed-form":
            if evaluator is None:
                raise DomainError("closed-form field needs an evaluator")
            self._fn = evaluator
        elif kind == "piecewise-constant":
            self.splits = np.asarray(splits, int)
            self.matrices = np.asarray(matrices, float).reshape(-1, self.d, self.d)
            self.present = (np.ones(len(self.matrices), bool) if present is None
                            else np.asarray(present, bool))
            if len(self.matrices) != int(np.prod(self.splits)):
                raise DomainError("one matrix per cell is required")
            for H in self.matrices:
                check_sod(H)
        else:
            raise DomainError(f"unknown field kind {kind!r}")

    @classmethod
    def constant(cls, domain, H):
        H = check_sod(H)
        return cls(domain, lambda x: np.broadcast_to(H, (len(x),) + H.shape).copy(),
                   name="constant")

    @classmethod
    def planar_angle(cls, domain, angle, name=None):
        """``H(x) = R(angle(x))`` in d = 2."""
        if domain.d != 2:
            raise DomainError("planar_angle fields live in d = 2")

        def fn(x):
            a = np.asarray(angle(np.atleast_2d(x)), float)
            c, s = np.cos(a), np.sin(a)
            return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)

        return cls(domain, fn, name=name)

    def cell_boxes(self):
        lo, hi = self.domain.bounding_box()
        h = (hi - lo) / self.splits
        out = []
        for flat in range(int(np.prod(self.splits))):
            idx = np.array(np.unravel_index(flat, tuple(self.splits)))
            out.append((lo + idx * h, lo + (idx + 1) * h))
        return out

    def cell_index(self, x):
        lo, hi = self.domain.bounding_box()
        k = np.floor((x - lo) / (hi - lo) * self.splits).astype(int)
        k = np.clip(k, 0, self.splits - 1)
        return np.ravel_multi_index(tuple(k.T), tuple(self.splits))

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        if self.kind == "closed-form":
            return np.asarray(self._fn(x), float).reshape(len(x), self.d, self.d)
        out = np.broadcast_to(np.eye(self.d), (len(x), self.d, self.d)).copy()
        inside = self.domain.contains(x, closed=True)
        cells = self.cell_index(x[inside])
        vals = self.matrices[cells]
        vals[~self.present[cells]] = np.eye(self.d)
        out[inside] = vals
        return out

    def check(self, n=256, seed=0, tol=1e-10):
        """Sample the field at seeded points and verify every value is in SO(d)."""
        rng = np.random.default_rng(seed)
        lo, hi = self.domain.bounding_box()
        x = lo + (hi - lo) * rng.random((n, self.d))
        x = x[self.domain.contains(x)]
        for H in self(x):
            check_sod(H, tol)
        return True


def dyadic_rotation_sample(H, level, *, resolution=512, search=8):
    """Piecewise-constant sample of ``H`` on the level-``n`` dyadic partition.

    Each cell meeting the domain is sampled at its center when the center is
    inside, otherwise at the first point of a ``search^d`` sub-grid that is.
    Returns ``(H_n, l1)`` with ``l1`` the ``L^1`` distance (max over entries).
    """
    dom = H.domain
    splits = dyadic_splits(level, dom.d)
    lo, hi = dom.bounding_box()
    h = (hi - lo) / splits
    n_cells = int(np.prod(splits))
    mats = np.broadcast_to(np.eye(dom.d), (n_cells, dom.d, dom.d)).copy()
    present = np.zeros(n_cells, bool)
    sub = (np.stack(np.meshgrid(*[(np.arange(search) + 0.5) / search] * dom.d,
                                indexing="ij"), -1).reshape(-1, dom.d))
    for flat in range(n_cells):
        idx = np.array(np.unravel_index(flat, tuple(splits)))
        c_lo = lo + idx * h
        center = c_lo + h / 2
        if dom.contains(center[None])[0]:
            pt = center
        else:
            cand = c_lo + sub * h
            inside = dom.contains(cand)
            if not inside.any():
                if _cell_meets(dom, c_lo, c_lo + h):
                    warnings.warn(f"cell {flat} meets the domain but has no sample point; skipped")
                continue
            pt = cand[np.argmax(inside)]
        mats[flat] = check_sod(H(pt[None])[0])
        present[flat] = True
    Hn = RotationField(dom, kind="piecewise-constant", splits=splits, matrices=mats,
                       present=present, name=f"{H.name or 'H'}@{level}")
    res = max(resolution - resolution % max(splits), max(splits))
    l1 = lp_norm_nd(lambda x: Hn(x) - H(x), dom, 1.0, resolution=res, refine_depth=0)
    return Hn, l1


def _cell_meets(dom, lo, hi):
    for blo, bhi in dom.boxes:
        if np.all(np.maximum(lo, blo) < np.minimum(hi, bhi)):
            return True
    return False


def _cell_region(dom, lo, hi):
    boxes = []
    for blo, bhi in dom.boxes:
        a, b = np.maximum(lo, blo), np.minimum(hi, bhi)
        if np.all(a < b):
            boxes.append((a, b))
    return BoxDomain(boxes) if boxes else None


# ---------------------------------------------------------------------------
# pasted localized rotations

class PastedRotations(VolumePreservingDiffeo):
    """Identity except on disjoint balls, where a localized rotation acts.

    Ball ``k`` has center ``a_k``, radii ``s_k < r_k`` and rotation ``H_k``;
    the map is ``a_k + H_k (x - a_k)`` on ``|x - a_k| <= s_k``.
    """

    def __init__(self, centers, r, s, H, d=None, domain=None):
        self.r = np.asarray(r, float)
        n = len(self.r)
        self.d = d if d is not None else np.asarray(centers).shape[-1]
        self.centers = np.asarray(centers, float).reshape(n, self.d)
        self.s = np.asarray(s, float)
        self.H = np.asarray(H, float).reshape(n, self.d, self.d)
        if np.any(self.s >= self.r) or np.any(self.s <= 0):
            raise DomainError("need 0 < s_k < r_k for every ball")
        self.domain = domain
        self.Q = np.empty_like(self.H)
        self.theta = np.zeros((n, self.d // 2))
        cache = {}
        for k, Hk in enumerate(self.H):
            key = Hk.tobytes()
            if key not in cache:
                dec = sod_block_decompose(Hk)
                cache[key] = (dec.Q, dec.padded_angles())
            self.Q[k], self.theta[k] = cache[key]
        self.index = BallIndex(self.centers, self.r)

    @classmethod
    def identity(cls, d, domain=None):
        return cls(np.zeros((0, d)), [], [], np.zeros((0, d, d)), d, domain)

    @classmethod
    def concatenate(cls, parts, domain=None):
        parts = list(parts)
        d = parts[0].d
        return cls(np.concatenate([q.centers for q in parts]).reshape(-1, d),
                   np.concatenate([q.r for q in parts]), np.concatenate([q.s for q in parts]),
                   np.concatenate([q.H for q in parts]).reshape(-1, d, d), d, domain)

    def __len__(self):
        return len(self.r)

    def _eval(self, X, sign, jacobian):
        y = X.copy()
        J = np.broadcast_to(np.eye(self.d), (len(X), self.d, self.d)).copy() if jacobian else None
        if len(self):
            k = self.index.locate(X)
            sel = np.flatnonzero(k >= 0)
            if len(sel):
                kk = k[sel]
                out = localized_eval(X[sel], self.centers[kk], self.Q[kk], self.theta[kk],
                                     self.r[kk], self.s[kk], self.H[kk], sign, jacobian)
                if jacobian:
                    y[sel], J[sel] = out
                else:
                    y[sel] = out
        return (y, J) if jacobian else y

    def hint(self, centers, half):
        """Quadrature cells meeting a transition annulus ``s_k <= |x - a_k| <= r_k``."""
        if not len(self):
            return np.zeros(len(centers), bool)
        rad = float(np.linalg.norm(half))
        g, arg = self.index.surface_distance(centers, np.full(len(centers), rad))
        hit = (arg >= 0) & (g <= rad)
        k = arg[hit]
        dist = g[hit] + self.r[k]
        hit[np.flatnonzero(hit)] = dist >= self.s[k] - rad
        return hit

    def annulus_samples(self, per_ball, rng, max_points=20000):
        """Seeded random points in the transition annuli."""
        if not len(self):
            return np.zeros((0, self.d))
        k = np.repeat(np.arange(len(self)), per_ball)
        if len(k) > max_points:
            k = rng.choice(k, max_points, replace=False)
        u = rng.standard_normal((len(k), self.d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        rho = self.s[k] + (self.r[k] - self.s[k]) * rng.random(len(k))
        return self.centers[k] + rho[:, None] * u


# ---------------------------------------------------------------------------
# cell builder

@dataclass
class ApproximantReport:
    sup_distance_to_target: float
    lp_derivative_error: LpResult
    det_check_pass: bool
    det_max_dev: float = 0.0
    delta: float = 0.0
    eta: float = 0.0
    C1: float = 0.0
    radii: list = field(default_factory=list)
    inner_radii: list = field(default_factory=list)
    level: int = None
    n_balls: int = 0
    residual_measure: float = 0.0
    ball_term: float = 0.0
    residual_term: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def bound_power(self):
        """Predicted ``||Df - H_i||_p^p`` from the ball and residual terms."""
        return self.ball_term + self.residual_term


_PACKING_CACHE = {}
_C1_CACHE = {}


def _template_packing(region, eps, delta):
    lo0 = region.boxes[0][0]
    key = (tuple(np.round(np.concatenate([np.concatenate([lo - lo0, hi - lo0])
                                          for lo, hi in region.boxes]), 12)),
           round(eps, 15), round(delta, 15))
    if key not in _PACKING_CACHE:
        base = BoxDomain([(lo - lo0, hi - lo0) for lo, hi in region.boxes])
        _PACKING_CACHE[key] = vitali_pack(base, eps, delta)
    return _PACKING_CACHE[key].translated(lo0, region)


def cached_c1(H, p, resolution=None):
    """Fitted localization constant for ``H`` (see :func:`fit_c1`), cached.

    The constant only sets the annulus width, so for d >= 3 a coarse grid
    (32 cells per axis, a few percent quadrature error) is used by default.
    """
    if resolution is None:
        resolution = 128 if np.asarray(H).shape[0] == 2 else 32
    key = (np.round(np.asarray(H), 12).tobytes(), float(p), resolution)
    if key not in _C1_CACHE:
        method = "polar" if np.asarray(H).shape[0] == 2 else "grid"
        sig = (0.5, 0.75, 0.9, 0.95, 0.99)
        _C1_CACHE[key] = fit_c1(H, p, sigmas=sig, method=method, resolution=resolution)[0]
    return _C1_CACHE[key]


def census_points(F, region, n_points, rng, per_ball=4):
    lo, hi = region.bounding_box()
    x = lo + (hi - lo) * rng.random((n_points, region.d))
    x = x[region.contains(x)]
    if isinstance(F, PastedRotations):
        x = np.concatenate([x, F.annulus_samples(per_ball, rng)])
    return x


def build_cell_diffeo(region, H_i, eps, delta, p, *, ball_budget=None, C1=None, packing=None,
                      verify=True, resolution=256, census=2000, seed=0, level=None):
    """Volume-preserving map of ``region`` whose derivative is near the constant ``H_i``.

    Packs ``region`` with balls of diameter at most ``min(eps, cell side)``
    leaving residual at most ``delta`` and pastes a localized rotation into
    every ball with a common ratio ``s_k / r_k = 1 - eta``.  ``eta`` makes the
    ball error term ``C1^p sum_k r_k^d eta^(1-p)`` equal to ``ball_budget``
    (default ``eps^p / 2``), capped at ``eta = 1/2``.
    """
    p = float(as_exponent(p))
    if not 0 < p < 1:
        raise DomainError("need 0 < p < 1")
    H_i = check_sod(H_i)
    d = region.d
    if H_i.shape[0] != d:
        raise DomainError("rotation and region dimensions differ")
    budget = eps ** p / 2 if ball_budget is None else float(ball_budget)
    t0 = time.perf_counter()
    if np.max(np.abs(H_i - np.eye(d))) <= 1e-15:
        F = PastedRotations.identity(d, region)
        rep = ApproximantReport(0.0, LpResult(0.0, p, 0.0, True, 0.0, 0.0), True, 0.0, delta,
                                level=level)
        return F, rep
    side = min(float(np.min(hi - lo)) for lo, hi in region.boxes)
    pk = packing if packing is not None else _template_packing(region, min(eps, side), delta)
    if not len(pk):
        F = PastedRotations.identity(d, region)
        eta, C1v = 0.0, 0.0
    else:
        C1v = cached_c1(H_i, p) if C1 is None else float(C1)
        S = float(np.sum(pk.radii ** d))
        eta = (budget / (C1v ** p * S)) ** (1.0 / (1.0 - p))
        eta = min(eta, 0.5)
        if eta < 1e-9:
            raise BudgetError(f"annulus ratio {eta:.3g} is degenerate; increase eps or delta",
                              best=pk)
        s = pk.radii * (1.0 - eta)
        F = PastedRotations(pk.centers, pk.radii, s, np.broadcast_to(H_i, (len(pk), d, d)), d,
                            region)
    ball_term = C1v ** p * float(np.sum(pk.radii ** d)) * eta ** (1.0 - p) if len(pk) else 0.0
    resid = pk.residual_measure_estimate
    residual_term = resid * (1.0 + float(np.max(np.abs(H_i)))) ** p
    rep = ApproximantReport(0.0, None, True, 0.0, delta, eta, C1v, pk.radii.tolist(),
                            (pk.radii * (1 - eta)).tolist(), level, len(pk), resid, ball_term,
                            residual_term)
    if verify:
        rep.sup_distance_to_target = sup_distance(F, lambda x: x, region, resolution).value
        rep.lp_derivative_error = lp_norm_nd(lambda x: F.jacobian(x) - H_i, region, p,
                                             resolution=resolution, hint=F.hint, refine_depth=3)
        rng = np.random.default_rng(seed)
        x = census_points(F, region, census, rng)
        dev = float(np.max(np.abs(np.linalg.det(F.jacobian(x)) - 1.0))) if len(x) else 0.0
        rep.det_max_dev = dev
        rep.det_check_pass = dev <= 1e-9
    rep.extra["runtime_ms"] = 1000 * (time.perf_counter() - t0)
    return F, rep


# ---------------------------------------------------------------------------
# sequence driver

@dataclass
class LevelReport:
    level: int
    eps: float
    sup_dist: float
    lp: LpResult
    l1: LpResult
    det_max_dev: float
    n_balls: int
    runtime_ms: float
    rhs_power: float
    tolerance: float
    cells: list = field(default_factory=list)

    @property
    def lp_err(self):
        return self.lp.value

    @property
    def inequality_ok(self):
        return self.lp.power <= self.rhs_power + self.tolerance

    @property
    def sup_ok(self):
        return self.sup_dist <= self.eps

    @property
    def det_ok(self):
        return self.det_max_dev <= 1e-9

    def row(self):
        return {"level": self.level, "sup_dist": self.sup_dist, "lp_err": self.lp.value,
                "det_max_dev": self.det_max_dev, "n_balls": self.n_balls,
                "runtime_ms": self.runtime_ms}


def theorem_b_sequence(H, p, levels, *, resolution=512, refine_depth=2, census=10000, seed=0,
                       eps_of_level=None, delta=None):
    """Volume-preserving maps ``f_n`` with ``f_n -> Id`` uniformly and ``Df_n -> H`` in ``L^p``.

    For each level: sample ``H`` on the dyadic partition, build every cell
    with budget ``eps_n = 1/n`` split evenly between ball and residual terms
    (shares proportional to cell measure), paste the cells together, and
    verify on a ``resolution^d`` grid.  Returns ``[(f_n, LevelReport)]``.
    """
    p = float(as_exponent(p))
    dom = H.domain
    lam = dom.measure()
    out = []
    for n in levels:
        t0 = time.perf_counter()
        eps = 1.0 / n if eps_of_level is None else float(eps_of_level(n))
        Hn, l1 = dyadic_rotation_sample(H, n, resolution=resolution)
        half = eps ** p / 2
        hmax = float(np.max(np.abs(Hn.matrices[Hn.present]))) if Hn.present.any() else 1.0
        dlt = half / (1.0 + hmax) if delta is None else float(delta)
        parts, reps = [], []
        for i, (lo, hi) in enumerate(Hn.cell_boxes()):
            if not Hn.present[i]:
                continue
            region = _cell_region(dom, lo, hi)
            share = region.measure() / lam
            F, rep = build_cell_diffeo(region, Hn.matrices[i], eps, dlt * share, p,
                                       ball_budget=half * share, verify=False, level=n)
            parts.append(F)
            reps.append(rep)
        f = (PastedRotations.concatenate(parts, dom) if parts
             else PastedRotations.identity(dom.d, dom))
        sup = sup_distance(f, lambda x: x, dom, resolution).value
        lp = lp_norm_nd(lambda x: f.jacobian(x) - H(x), dom, p, resolution=resolution,
                        hint=f.hint, refine_depth=refine_depth)
        rng = np.random.default_rng(seed + n)
        x = census_points(f, dom, census, rng)
        dev = float(np.max(np.abs(np.linalg.det(f.jacobian(x)) - 1.0))) if len(x) else 0.0
        rhs = eps ** p + lam ** (1 - p) * l1.value ** p
        ms = 1000 * (time.perf_counter() - t0)
        out.append((f, LevelReport(n, eps, sup, lp, l1, dev, len(f), ms, rhs,
                                   2 * lp.power_error_estimate, reps)))
    return out


# ---------------------------------------------------------------------------
# transfer by a fixed volume-preserving map

@dataclass
class TransferReport:
    index: int
    sup_gn_f: float
    sup_fn_id: float
    sup_gap_tolerance: float
    lp: LpResult
    holder_bound: float
    q: float

    @property
    def sup_ok(self):
        return abs(self.sup_gn_f - self.sup_fn_id) <= self.sup_gap_tolerance

    def within(self, factor=1.1):
        return self.lp.value <= factor * self.holder_bound + 2 * self.lp.quad_error_estimate


def transfer_by_homeo(f, sequence, H, p, r, *, domain=None, resolution=256, census=2000,
                      seed=0, lip=None):
    """Compose each ``f_n`` with a fixed volume-preserving ``f`` of the domain.

    ``g_n = f_n o f`` converges uniformly to ``f`` and ``Dg_n`` to
    ``(H o f) Df`` in ``L^p`` when ``Df`` is in ``L^r`` with ``r > p/(1-p)``.
    Each report holds the measured error and the Hoelder bound
    ``max_ij (sum_k ||(Df_n)_ik - H_ik||_q^p ||d_j f_k||_r^p)^(1/p)``
    with ``q = r p / (r - p)`` (``q = p`` for ``r = inf``).
    """
    p = float(as_exponent(p))
    r = float(r)
    if not r > p / (1 - p):
        raise HypothesisError(f"need r > p/(1-p) = {p / (1 - p):.4g}, got r = {r:g}")
    dom = domain if domain is not None else H.domain
    rng = np.random.default_rng(seed)
    lo, hi = dom.bounding_box()
    x = lo + (hi - lo) * rng.random((census, dom.d))
    dev = np.max(np.abs(np.abs(np.linalg.det(f.jacobian(x))) - 1.0))
    if dev > 1e-9:
        raise HypothesisError(f"f is not volume preserving (|det| deviates by {dev:.3g})")
    q = p if math.isinf(r) else r * p / (r - p)
    pts, step = _grid(dom, resolution)
    Jf_grid = f.jacobian(pts)
    if math.isinf(r):
        B = np.max(np.abs(Jf_grid), axis=0)
    else:
        B = lp_norm_nd(lambda y: f.jacobian(y), dom, r, resolution=resolution).entries
    if lip is None:
        lip = float(np.max(np.linalg.norm(Jf_grid, 2, axis=(1, 2))))
    reports = []
    for i, fn in enumerate(sequence):
        gpts = f(pts)
        sup_g = float(np.max(np.abs(fn(gpts) - gpts)))
        sup_n = float(np.max(np.abs(fn(pts) - pts)))
        # both sups run over grids of spacing ~step (one of them mapped by f)
        lip_n = float(np.max(np.linalg.norm(fn.jacobian(pts) - np.eye(dom.d), 2, axis=(1, 2))))
        tol = lip_n * step * math.sqrt(dom.d) * max(1.0, lip)

        def err(y, fn=fn):
            fy = f(y)
            Jf = f.jacobian(y)
            return (fn.jacobian(fy) - H(fy)) @ Jf

        def hint(c, half, fn=fn):
            return fn.hint(f(c), half * lip) if hasattr(fn, "hint") else np.zeros(len(c), bool)

        lp = lp_norm_nd(err, dom, p, resolution=resolution, hint=hint, refine_depth=2)
        A = lp_norm_nd(lambda y, fn=fn: fn.jacobian(y) - H(y), dom, q, resolution=resolution,
                       hint=getattr(fn, "hint", None), refine_depth=2).entries
        d = dom.d
        bound_p = max(sum(A[a, k] ** p * B[k, b] ** p for k in range(d))
                      for a in range(d) for b in range(d))
        reports.append(TransferReport(i, sup_g, sup_n, tol, lp, bound_p ** (1 / p), q))
    return reports


def _grid(dom, resolution):
    from .kernel import region_grid
    return region_grid(dom, resolution)


def rotation_about(center, theta):
    """Rigid rotation of the plane by ``theta`` about ``center``."""
    from .twist import AffineRotation
    return AffineRotation(rotation2(theta), center)


__all__ = [
    "dyadic_splits", "RotationField", "dyadic_rotation_sample", "PastedRotations",
    "ApproximantReport", "build_cell_diffeo", "cached_c1", "LevelReport", "theorem_b_sequence",
    "TransferReport", "transfer_by_homeo", "rotation_about", "census_points",
]
