"""Finite disjoint ball packings of boxes with a residual-measure certificate.

The greedy packer places, level by level, the largest admissible closed
ball centered at a point of the dyadic half-step lattice (centers and
corners of the level's cells), where admissible means inside the box,
disjoint from the balls already placed and of diameter at most ``eps``.
Ties are broken by the lexicographic order of the centers.  Levels start
at cells of side at most ``eps / 8`` and are refined until the residual
target is met; candidates at a level must clear ``h / 2``.  Because the balls are disjoint and contained in the box, the
uncovered measure is exactly ``vol(box) - sum w_d r^d``; a grid count is
available as an independent check.
"""

import heapq
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import BudgetError, DomainError
from .kernel import BoxDomain

MARGIN = 1e-12


def unit_ball_volume(d):
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DomainError("ball radius must be positive")

    def inside_box(self, lo, hi):
        c = np.asarray(self.center)
        return bool(np.all(c - self.radius >= lo) and np.all(c + self.radius <= hi))


class BallIndex:
    """Point location among disjoint balls.

    Balls are grouped in radius classes ``(R/2, R]`` with one KD-tree per
    class.  Disjoint balls with radii above ``R/2`` have at most ``3^d``
    centers within distance ``R`` of any point, so a ``3^d``-nearest query
    finds every ball of the class that can contain the point.
    """

    def __init__(self, centers, radii):
        c = np.asarray(centers, float)
        self.radii = np.asarray(radii, float).ravel()
        self.centers = c.reshape(len(self.radii), c.shape[-1] if c.ndim == 2 else -1)
        self.d = self.centers.shape[1]
        self.classes = []
        if not len(self.radii):
            return
        top = float(self.radii.max())
        level = np.floor(np.log2(top / self.radii) + 1e-12).astype(int)
        for j in np.unique(level):
            sel = np.flatnonzero(level == j)
            self.classes.append((top / 2.0 ** j, sel, cKDTree(self.centers[sel])))

    def __len__(self):
        return len(self.radii)

    def locate(self, x, radii=None):
        """Index of the ball with ``|x - a_k| < radii[k]`` (default: the
        indexed radii), or -1.  ``radii`` must not exceed the indexed radii."""
        x = np.atleast_2d(np.asarray(x, float))
        out = np.full(len(x), -1)
        rad = self.radii if radii is None else np.asarray(radii, float)
        for R, sel, tree in self.classes:
            k = min(len(sel), 3 ** x.shape[1])
            dist, idx = tree.query(x, k=k, distance_upper_bound=R)
            dist, idx = dist.reshape(len(x), k), idx.reshape(len(x), k)
            ok = idx < len(sel)
            gi = np.where(ok, sel[np.minimum(idx, len(sel) - 1)], 0)
            inside = ok & (dist < rad[gi])
            hit = inside.any(axis=1)
            out[hit] = gi[hit, np.argmax(inside[hit], axis=1)]
        return out

    def surface_distance(self, x, cap):
        """``min(cap, min_k |x - a_k| - r_k)`` (negative inside a ball) and
        the minimizing ball index (-1 when the cap is the minimum)."""
        x = np.atleast_2d(np.asarray(x, float))
        g = np.broadcast_to(np.asarray(cap, float), (len(x),)).copy()
        arg = np.full(len(x), -1)
        # nearest centers give upper bounds that shrink the exact search radius
        for R, sel, tree in self.classes:
            dist, j = tree.query(x, k=1)
            ub = dist - self.radii[sel[j]]
            closer = ub < g
            g[closer] = ub[closer]
            arg[closer] = sel[j[closer]]
        for R, sel, tree in self.classes:
            lists = tree.query_ball_point(x, r=np.maximum(g, 0.0) + R)
            lens = np.fromiter(map(len, lists), int, len(lists))
            if not lens.any():
                continue
            rows = np.repeat(np.arange(len(x)), lens)
            cols = sel[np.fromiter(itertools.chain.from_iterable(lists), int, int(lens.sum()))]
            vals = np.linalg.norm(x[rows] - self.centers[cols], axis=1) - self.radii[cols]
            order = np.lexsort((vals, rows))
            rows, cols, vals = rows[order], cols[order], vals[order]
            first = np.r_[True, rows[1:] != rows[:-1]]
            rows, cols, vals = rows[first], cols[first], vals[first]
            better = vals <= g[rows]
            g[rows[better]] = vals[better]
            arg[rows[better]] = cols[better]
        return g, arg


@dataclass
class BallPacking:
    """Disjoint closed balls in a box domain.

    ``residual_measure_estimate`` is ``vol(domain) - sum w_d r^d``, exact
    up to round-off because the balls are disjoint and contained.
    ``resolution`` is the finest dyadic candidate level used.
    """

    domain: BoxDomain
    centers: np.ndarray
    radii: np.ndarray
    eps: float
    delta: float
    resolution: int = 0
    level_history: list = field(default_factory=list)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, float).reshape(len(self.radii), self.domain.d)
        self.radii = np.asarray(self.radii, float)

    def __len__(self):
        return len(self.radii)

    @property
    def balls(self):
        return [Ball(tuple(map(float, c)), float(r)) for c, r in zip(self.centers, self.radii)]

    @property
    def covered_measure(self):
        return float(unit_ball_volume(self.domain.d) * np.sum(self.radii ** self.domain.d))

    @property
    def residual_measure_estimate(self):
        return float(np.sum(self.domain.box_volumes()) - self.covered_measure)

    def index(self):
        return BallIndex(self.centers, self.radii)

    def min_gap(self):
        """Smallest ``|a_i - a_j| - r_i - r_j`` over pairs (inf for < 2 balls)."""
        if len(self) < 2:
            return math.inf
        tree = cKDTree(self.centers)
        rmax = self.radii.max()
        best = math.inf
        for i, (c, r) in enumerate(zip(self.centers, self.radii)):
            nb = [j for j in tree.query_ball_point(c, r + rmax + 1e-9) if j != i]
            if nb:
                nb = np.asarray(nb)
                gap = np.linalg.norm(self.centers[nb] - c, axis=1) - r - self.radii[nb]
                best = min(best, float(gap.min()))
        if best == math.inf:
            # no close neighbors: fall back to nearest-center gaps
            dist, j = tree.query(self.centers, k=2)
            best = float(np.min(dist[:, 1] - self.radii - self.radii[j[:, 1]]))
        return best

    def is_disjoint(self):
        return self.min_gap() > 0

    def containment_violations(self, n_samples=64):
        """Count balls leaving their box, by face arithmetic and by boundary samples."""
        d = self.domain.d
        bad = 0
        if d == 2:
            t = np.linspace(0, 2 * math.pi, n_samples, endpoint=False)
            dirs = np.stack([np.cos(t), np.sin(t)], axis=1)
        else:
            dirs = np.concatenate([np.eye(d), -np.eye(d)])
        for c, r in zip(self.centers, self.radii):
            box_ok = any(np.all(c - r >= lo) and np.all(c + r <= hi) for lo, hi in self.domain.boxes)
            ring = c + r * dirs
            samples_ok = bool(np.all(self.domain.contains(ring, closed=True)))
            bad += not (box_ok and samples_ok)
        return bad

    def residual_by_grid(self, resolution=2048):
        """Uncovered measure by counting midpoint cells of a ``resolution^d``
        grid per box; each ball is rasterized over its bounding index range."""
        total = 0.0
        for lo, hi in self.domain.boxes:
            n = resolution
            h = (hi - lo) / n
            covered = np.zeros((n,) * self.domain.d, bool)
            inside = np.all((self.centers >= lo) & (self.centers <= hi), axis=1)
            for c, r in zip(self.centers[inside], self.radii[inside]):
                i0 = np.maximum(np.floor((c - r - lo) / h - 0.5).astype(int), 0)
                i1 = np.minimum(np.ceil((c + r - lo) / h + 0.5).astype(int), n)
                axes = [lo[k] + (np.arange(i0[k], i1[k]) + 0.5) * h[k] - c[k]
                        for k in range(self.domain.d)]
                sq = sum(np.meshgrid(*[a * a for a in axes], indexing="ij"))
                sl = tuple(slice(i0[k], i1[k]) for k in range(self.domain.d))
                covered[sl] |= sq <= r * r
            total += float(np.prod(h)) * (covered.size - np.count_nonzero(covered))
        return total

    def translated(self, shift, domain):
        return BallPacking(domain, self.centers + np.asarray(shift, float), self.radii.copy(),
                           self.eps, self.delta, self.resolution, list(self.level_history))

    def to_json(self):
        return {"domain": self.domain.to_json(), "eps": self.eps, "delta": self.delta,
                "centers": self.centers.tolist(), "radii": self.radii.tolist(),
                "residual": self.residual_measure_estimate, "resolution": self.resolution}


def _pack_box(lo, hi, eps, target, refinements, max_balls, start_ratio=8.0, tau_ratio=0.5):
    d = lo.size
    ext = hi - lo
    vol_box = float(np.prod(ext))
    wd = unit_ball_volume(d)
    centers, radii = [], []
    covered = 0.0
    history = []
    # active cells: integer corner indices at the current level
    # first level: cells no larger than eps / start_ratio, so that the
    # largest balls can sit nearly edge to edge
    start = max(1, int(math.ceil(math.log2(float(ext.max()) * start_ratio / eps))))
    n0 = 2 ** start
    active = np.array(list(itertools.product(range(n0), repeat=d)), dtype=np.int64)
    offs = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
    for level in range(start, start + refinements + 1):
        if vol_box - covered <= target:
            break
        if level > start:
            active = (2 * active[:, None, :] + offs[None, :, :]).reshape(-1, d)
        h = ext / 2 ** level
        idx = BallIndex(np.array(centers), np.array(radii)) if centers else None
        half_diag = float(np.linalg.norm(h)) / 2
        tau = float(h.min()) * tau_ratio
        src = active
        if idx is not None:
            mid = lo + (active + 0.5) * h
            g_mid, _ = idx.surface_distance(mid, np.full(len(mid), tau + half_diag))
            active = active[g_mid > -half_diag]
            # clearance is 1-Lipschitz: skip cells that cannot hold an eligible center
            src = active[g_mid[g_mid > -half_diag] + half_diag >= tau]
        # candidates: centers and corners of the cells (half-step lattice)
        corners = np.array(list(itertools.product((0, 1, 2), repeat=d)), dtype=np.int64)
        lattice = np.unique((2 * src[:, None, :] + corners[None, :, :]).reshape(-1, d), axis=0)
        lattice = lattice[np.all((lattice > 0) & (lattice < 2 ** (level + 1)), axis=1)]
        pts = lo + lattice * (h / 2)
        cap = np.minimum(np.min(np.minimum(pts - lo, hi - pts), axis=1), eps / 2)
        g = idx.surface_distance(pts, cap)[0] if idx is not None else cap
        elig = np.flatnonzero(g - MARGIN >= tau)
        if not len(elig):
            history.append((level, len(active), 0, vol_box - covered))
            continue
        heap = [(-float(g[i]), tuple(pts[i].tolist())) for i in elig]
        heapq.heapify(heap)
        # interacting pairs are closer than twice the largest eligible radius
        bucket = 2.0 * float(g[elig].max())
        grid = {}
        placed = []
        shifts = list(itertools.product((-1, 0, 1), repeat=d))
        while heap:
            negr, c = heapq.heappop(heap)
            r = -negr
            cell = tuple(math.floor(v / bucket) for v in c)
            for nb in shifts:
                for j in grid.get(tuple(a + b for a, b in zip(cell, nb)), ()):
                    cj, rj = placed[j]
                    r = min(r, math.dist(c, cj) - rj)
            if r < -negr:
                if r - MARGIN >= tau:
                    heapq.heappush(heap, (-r, c))
                continue
            rho = r - MARGIN
            placed.append((c, rho))
            grid.setdefault(cell, []).append(len(placed) - 1)
            covered += wd * rho ** d
            if len(radii) + len(placed) >= max_balls or vol_box - covered <= target:
                break
        for c, rho in placed:
            centers.append(np.array(c))
            radii.append(rho)
        placed_level = len(placed)
        history.append((level, len(active), placed_level, vol_box - covered))
        if len(radii) >= max_balls:
            break
    return centers, radii, history


def vitali_pack(domain, eps, delta, *, refinements=8, max_balls=400000):
    """Greedy packing with diameters at most ``eps`` leaving residual at most ``delta``.

    Each box of the domain is packed independently with a share of ``delta``
    proportional to its volume.  Raises :class:`BudgetError` (carrying the
    best packing) when the candidate levels or ball count run out.
    """
    if not isinstance(domain, BoxDomain):
        raise DomainError("vitali_pack needs a BoxDomain")
    if domain.predicate is not None:
        raise DomainError("packing supports unions of boxes only")
    if not eps > 0:
        raise DomainError("eps must be positive")
    vols = domain.box_volumes()
    total = float(np.sum(vols))
    if not delta > 0:
        raise DomainError("delta must be positive")
    if delta >= total:
        return BallPacking(domain, np.zeros((0, domain.d)), np.zeros(0), eps, delta)
    cs, rs, hist, level = [], [], [], 0
    for (lo, hi), v in zip(domain.boxes, vols):
        c, r, h = _pack_box(lo, hi, eps, delta * v / total, refinements, max_balls)
        cs += c
        rs += r
        hist.append(h)
        level = max(level, h[-1][0] if h else 0)
    pk = BallPacking(domain, np.array(cs).reshape(len(rs), domain.d), np.array(rs), eps, delta,
                     level, hist)
    if pk.residual_measure_estimate > delta:
        raise BudgetError(f"residual {pk.residual_measure_estimate:.4g} above {delta:g} "
                          f"after {level} levels", best=pk)
    return pk


__all__ = ["Ball", "BallIndex", "BallPacking", "vitali_pack", "unit_ball_volume", "MARGIN"]
