"""Volume-preserving twist maps and localized rotations.

A twist map rotates each coordinate plane ``(x_{2j-1}, x_{2j})`` by an angle
``h_j(|x|^2)`` that depends only on the Euclidean norm.  It preserves every
sphere, so its inverse is the twist with ``-h``, and its Jacobian determinant
is identically 1.  Choosing ``h_j = theta_j J((t - s^2)/(r^2 - s^2))`` with
the smooth jump ``J`` gives a diffeomorphism equal to a fixed rotation on the
ball of radius ``s`` and to the identity outside radius ``r``.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DomainError
from .kernel import BoxDomain, LpResult, _result_from_power, lp_norm_nd, smooth_step

TWO_PI = 2.0 * math.pi


def jump_eval(t):
    """Smooth jump ``J`` (1 on ``t <= 0``, 0 on ``t >= 1``) and ``J'``."""
    S, dS = smooth_step(t)
    J, dJ = 1.0 - S, -dS
    if np.ndim(t) == 0:
        return float(J), float(dJ)
    return J, dJ


# ---------------------------------------------------------------------------
# profiles and the twist formula

class TwistProfile:
    """Plane angles ``h_j(t)`` of ``t = |x|^2`` with their derivatives."""

    def __init__(self, funcs, derivs):
        if len(funcs) != len(derivs):
            raise DomainError("need one derivative per profile function")
        self.funcs = list(funcs)
        self.derivs = list(derivs)

    @property
    def m(self):
        return len(self.funcs)

    def angles(self, t):
        t = np.asarray(t, float)
        return np.stack([np.broadcast_to(np.asarray(f(t), float), t.shape) for f in self.funcs],
                        axis=-1) if self.funcs else np.zeros(t.shape + (0,))

    def slopes(self, t):
        t = np.asarray(t, float)
        return np.stack([np.broadcast_to(np.asarray(f(t), float), t.shape) for f in self.derivs],
                        axis=-1) if self.derivs else np.zeros(t.shape + (0,))

    def negated(self):
        return TwistProfile([lambda t, f=f: -np.asarray(f(t)) for f in self.funcs],
                            [lambda t, f=f: -np.asarray(f(t)) for f in self.derivs])

    @classmethod
    def zero(cls, m):
        return cls.constant(np.zeros(m))

    @classmethod
    def constant(cls, thetas):
        thetas = np.asarray(thetas, float).ravel()
        return cls([lambda t, c=c: np.full_like(t, c) for c in thetas],
                   [lambda t: np.zeros_like(t) for _ in thetas])

    @classmethod
    def localized(cls, thetas, r, s):
        """``h_j(t) = theta_j J((t - s^2)/(r^2 - s^2))``."""
        if not r > s > 0:
            raise DomainError("need r > s > 0")
        thetas = np.asarray(thetas, float).ravel()
        w = r * r - s * s

        def f(t, c):
            return c * jump_eval((np.asarray(t) - s * s) / w)[0]

        def df(t, c):
            return c * jump_eval((np.asarray(t) - s * s) / w)[1] / w

        return cls([lambda t, c=c: f(t, c) for c in thetas],
                   [lambda t, c=c: df(t, c) for c in thetas])

    @classmethod
    def random(cls, m, rng, amplitude=1.5, max_freq=2.0):
        """Smooth ``h_j(t) = c_j + A_j sin(w_j t + phi_j)`` with seeded coefficients."""
        c = rng.uniform(-math.pi, math.pi, m)
        A = rng.uniform(0.2, amplitude, m)
        w = rng.uniform(0.5, max_freq, m)
        ph = rng.uniform(0, TWO_PI, m)
        return cls([lambda t, j=j: c[j] + A[j] * np.sin(w[j] * t + ph[j]) for j in range(m)],
                   [lambda t, j=j: A[j] * w[j] * np.cos(w[j] * t + ph[j]) for j in range(m)])


def twist_eval(x, alpha, dalpha, jacobian=True):
    """Apply the twist with per-point plane angles.

    ``x`` is ``(N, d)``; ``alpha`` and ``dalpha`` are ``(N, m)`` holding
    ``h_j(|x|^2)`` and ``h_j'(|x|^2)``.  The Jacobian is assembled as the
    rotation part ``A`` plus the rank-one angle-gradient part ``B``:
    rows ``2j-1, 2j`` of ``B`` are ``(-F_{2j}, F_{2j-1}) * 2 h_j' x^T``.
    """
    x = np.asarray(x, float)
    n, d = x.shape
    m = alpha.shape[1]
    c, s = np.cos(alpha), np.sin(alpha)
    odd, even = x[:, 0:2 * m:2], x[:, 1:2 * m:2]
    y = x.copy()
    y[:, 0:2 * m:2] = odd * c - even * s
    y[:, 1:2 * m:2] = odd * s + even * c
    if not jacobian:
        return y
    J = np.zeros((n, d, d))
    idx = np.arange(2 * m, d)
    J[:, idx, idx] = 1.0
    i = np.arange(m)
    J[:, 2 * i, 2 * i] = c
    J[:, 2 * i, 2 * i + 1] = -s
    J[:, 2 * i + 1, 2 * i] = s
    J[:, 2 * i + 1, 2 * i + 1] = c
    g = 2.0 * dalpha
    # b_{2j-1,k} = [-2 x_{2j-1} x_k sin a - 2 x_{2j} x_k cos a] h'
    # b_{2j,k}   = [ 2 x_{2j-1} x_k cos a - 2 x_{2j} x_k sin a] h'
    J[:, 0:2 * m:2, :] += (-(odd * s + even * c) * g)[:, :, None] * x[:, None, :]
    J[:, 1:2 * m:2, :] += ((odd * c - even * s) * g)[:, :, None] * x[:, None, :]
    return y, J


# ---------------------------------------------------------------------------
# diffeomorphisms

class VolumePreservingDiffeo:
    """Map of R^d (or a region) with value, analytic Jacobian and inverse.

    Subclasses implement ``_eval(x, sign, jacobian)`` where ``sign=-1``
    evaluates the inverse.
    """

    d = None
    smoothness = "Cinf"
    domain = None

    def __call__(self, x):
        return self.value(x)

    def _prep(self, x):
        x = np.asarray(x, float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.d:
            raise DomainError(f"expected points of dimension {self.d}")
        return X, single

    def value(self, x):
        X, single = self._prep(x)
        y = self._eval(X, 1, False)
        return y[0] if single else y

    def jacobian(self, x):
        X, single = self._prep(x)
        J = self._eval(X, 1, True)[1]
        return J[0] if single else J

    def value_and_jacobian(self, x):
        X, _ = self._prep(x)
        return self._eval(X, 1, True)

    def inverse(self, x):
        X, single = self._prep(x)
        y = self._eval(X, -1, False)
        return y[0] if single else y

    def det(self, x):
        return np.linalg.det(self.jacobian(x))


class TwistMap(VolumePreservingDiffeo):
    def __init__(self, profile, d):
        if 2 * profile.m > d:
            raise DomainError(f"{profile.m} rotation planes do not fit in dimension {d}")
        if d < 2:
            raise DomainError("twist maps need d >= 2")
        self.profile = profile
        self.d = d

    def _eval(self, X, sign, jacobian):
        t = np.einsum("ij,ij->i", X, X)
        alpha = sign * self.profile.angles(t)
        dalpha = sign * self.profile.slopes(t)
        return twist_eval(X, alpha, dalpha, jacobian)


def twist_map(profile, d):
    return TwistMap(profile, d)


class AffineRotation(VolumePreservingDiffeo):
    """``x -> center + H (x - center)`` for a fixed ``H`` in SO(d)."""

    def __init__(self, H, center=None):
        self.H = check_sod(H)
        self.d = self.H.shape[0]
        self.center = np.zeros(self.d) if center is None else np.asarray(center, float)

    def _eval(self, X, sign, jacobian):
        M = self.H if sign > 0 else self.H.T
        y = self.center + (X - self.center) @ M.T
        if not jacobian:
            return y
        return y, np.broadcast_to(M, (len(X),) + M.shape).copy()


# ---------------------------------------------------------------------------
# SO(d)

def rotation2(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def plane_rotation(d, theta, i=0, j=1):
    R = np.eye(d)
    c, s = math.cos(theta), math.sin(theta)
    R[i, i] = R[j, j] = c
    R[i, j], R[j, i] = -s, s
    return R


def random_sod(d, rng):
    """Haar-distributed rotation from the QR factorization of a Gaussian matrix."""
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def check_sod(H, tol=1e-10):
    H = np.asarray(H, float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DomainError("rotation must be a square matrix")
    d = H.shape[0]
    if np.max(np.abs(H.T @ H - np.eye(d))) > tol:
        raise DomainError("matrix is not orthogonal")
    if abs(np.linalg.det(H) - 1.0) > tol:
        raise DomainError("matrix does not have determinant +1")
    return H


@dataclass
class BlockDecomposition:
    """``H = Q blockdiag(R(theta_1), ..., R(theta_m), I) Q^T``.

    ``R(theta)`` is the rotation ``[[cos, -sin], [sin, cos]]`` of the plane
    spanned by columns ``2j, 2j+1`` of ``Q``; angles lie in ``[0, 2 pi)``.
    """

    Q: np.ndarray
    angles: np.ndarray
    identity_size: int

    @property
    def d(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return len(self.angles)

    def padded_angles(self):
        """Angles for all ``d // 2`` planes (zeros on identity planes)."""
        out = np.zeros(self.d // 2)
        out[:self.m] = self.angles
        return out

    def block_matrix(self):
        B = np.eye(self.d)
        for j, th in enumerate(self.angles):
            B[2 * j:2 * j + 2, 2 * j:2 * j + 2] = rotation2(th)
        return B

    def reconstruct(self):
        return self.Q @ self.block_matrix() @ self.Q.T

    def residual(self, H):
        return float(np.max(np.abs(self.reconstruct() - H)))


def sod_block_decompose(H, tol=1e-8):
    """Orthogonal reduction of a rotation to 2x2 plane-rotation blocks.

    Uses the real Schur form (block diagonal for normal matrices).  Pairs of
    eigenvalues -1 become ``theta = pi`` blocks; eigenvalues +1 form the
    trailing identity.  ``Q`` is chosen with ``det Q = +1``.
    """
    H = check_sod(H)
    d = H.shape[0]
    T, Z = scipy.linalg.schur(H, output="real")
    blocks, neg, pos = [], [], []
    i = 0
    while i < d:
        if i + 1 < d and abs(T[i + 1, i]) > 1e-13:
            th = math.atan2(0.5 * (T[i + 1, i] - T[i, i + 1]), 0.5 * (T[i, i] + T[i + 1, i + 1]))
            blocks.append((Z[:, i], Z[:, i + 1], th))
            i += 2
        else:
            (neg if T[i, i] < 0 else pos).append(Z[:, i])
            i += 1
    if len(neg) % 2:
        raise DomainError("odd number of -1 eigenvalues; not a rotation")
    for k in range(0, len(neg), 2):
        blocks.append((neg[k], neg[k + 1], math.pi))
    cols, angles = [], []
    for u, v, th in blocks:
        cols += [u, v]
        angles.append(th % TWO_PI)
    cols += pos
    Q = np.column_stack(cols) if cols else np.eye(d)
    angles = np.array(angles, float)
    if np.linalg.det(Q) < 0:
        if len(angles):
            Q[:, 1] = -Q[:, 1]
            angles[0] = (-angles[0]) % TWO_PI
        else:
            Q[:, -1] = -Q[:, -1]
    dec = BlockDecomposition(Q, angles, len(pos))
    res = dec.residual(H)
    if res > tol:
        raise DomainError(f"block reconstruction residual {res:.3e} exceeds {tol:g}")
    return dec


# ---------------------------------------------------------------------------
# localized rotation

def localized_eval(X, a, Q, theta, r, s, H, sign=1, jacobian=True):
    """Per-point localized rotation.

    All parameters are per point: ``a (N, d)``, ``Q (N, d, d)``,
    ``theta (N, d//2)``, ``r, s (N,)``, ``H (N, d, d)``.  Inside radius ``s``
    the value is exactly ``a + H (x - a)`` (``H^T`` for ``sign=-1``); outside
    radius ``r`` it is exactly ``x``.
    """
    n, d = X.shape
    v = X - a
    t = np.einsum("ij,ij->i", v, v)
    y = X.copy()
    J = np.broadcast_to(np.eye(d), (n, d, d)).copy() if jacobian else None
    inner = t <= s * s
    ring = (~inner) & (t < r * r)
    if inner.any():
        Hs = H[inner] if sign > 0 else np.swapaxes(H[inner], 1, 2)
        y[inner] = a[inner] + np.einsum("nij,nj->ni", Hs, v[inner])
        if jacobian:
            J[inner] = Hs
    if ring.any():
        vr, Qr = v[ring], Q[ring]
        rr, sr = r[ring], s[ring]
        w = rr * rr - sr * sr
        z = np.einsum("nji,nj->ni", Qr, vr)
        Jv, dJ = jump_eval((t[ring] - sr * sr) / w)
        th = sign * theta[ring]
        alpha = th * Jv[:, None]
        dalpha = th * (dJ / w)[:, None]
        if jacobian:
            yz, Jz = twist_eval(z, alpha, dalpha, True)
            J[ring] = np.einsum("nij,njk,nlk->nil", Qr, Jz, Qr)
        else:
            yz = twist_eval(z, alpha, dalpha, False)
        y[ring] = a[ring] + np.einsum("nij,nj->ni", Qr, yz)
    return (y, J) if jacobian else y


class LocalizedRotation(VolumePreservingDiffeo):
    """Smooth volume-preserving map equal to ``a + H(x - a)`` on the ball
    ``|x - a| <= s`` and to the identity for ``|x - a| >= r``."""

    def __init__(self, a, H, r, s):
        if not r > s > 0:
            raise DomainError("need r > s > 0")
        self.a = np.asarray(a, float).ravel()
        self.H = check_sod(H)
        self.d = self.H.shape[0]
        if self.a.size != self.d:
            raise DomainError("center and rotation dimensions differ")
        self.r, self.s = float(r), float(s)
        self.decomposition = sod_block_decompose(self.H)

    def _eval(self, X, sign, jacobian):
        n = len(X)
        dec = self.decomposition
        return localized_eval(
            X, np.broadcast_to(self.a, (n, self.d)), np.broadcast_to(dec.Q, (n, self.d, self.d)),
            np.broadcast_to(dec.padded_angles(), (n, self.d // 2)),
            np.full(n, self.r), np.full(n, self.s),
            np.broadcast_to(self.H, (n, self.d, self.d)), sign, jacobian)


def localized_rotation(a, H, r, s):
    return LocalizedRotation(a, H, r, s)


def localization_error_bound(d, p, r, s, C1):
    """``C1 r^(d/p) (1 - s/r)^((1-p)/p)``."""
    if not 0 < p < 1:
        raise DomainError("need 0 < p < 1")
    if not 0 < s < r:
        raise DomainError("need 0 < s < r")
    if not C1 > 0:
        raise DomainError("C1 must be positive")
    return C1 * r ** (d / p) * (1.0 - s / r) ** ((1.0 - p) / p)


def bound_shape(d, p, r, s):
    return r ** (d / p) * (1.0 - s / r) ** ((1.0 - p) / p)


def _polar_powers(G, H, r, s, p, n_rho, n_phi, order=8):
    """Entrywise integrals of ``|DG - H|^p`` over the annulus ``s < |x| < r``
    (d = 2, center 0) with Gauss panels in the radius and a uniform angle grid."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(s, r, n_rho + 1)
    h = np.diff(edges)
    rho = (edges[:-1, None] + h[:, None] * (xg + 1) / 2).ravel()
    wr = (h[:, None] * wg / 2).ravel() * rho
    phi = (np.arange(n_phi) + 0.5) * TWO_PI / n_phi
    R, P = np.meshgrid(rho, phi, indexing="ij")
    pts = np.stack([(R * np.cos(P)).ravel(), (R * np.sin(P)).ravel()], axis=1)
    W = (wr[:, None] * np.full(n_phi, TWO_PI / n_phi)[None, :]).ravel()
    total = np.zeros(4)
    for k in range(0, len(pts), 1 << 16):
        J = G.jacobian(pts[k:k + (1 << 16)])
        total += W[k:k + (1 << 16)] @ (np.abs(J - H).reshape(len(J), 4) ** p)
    return total


def localization_error(H, r, s, p, *, method=None, resolution=None):
    """``||DG - H||_{L^p(B(0, r))}`` for the localized rotation ``G(0, H, r, s)``.

    ``method="polar"`` (default in 2D) integrates over the annulus in polar
    coordinates; ``method="grid"`` uses :func:`lp_norm_nd` on the bounding
    box with the ball as mask and both spheres as refinement hints.
    """
    H = check_sod(H)
    d = H.shape[0]
    method = method or ("polar" if d == 2 else "grid")
    G = LocalizedRotation(np.zeros(d), H, r, s)
    if method == "polar":
        if d != 2:
            raise DomainError("polar quadrature is implemented for d = 2")
        n = resolution or 256
        fine = _polar_powers(G, H, r, s, p, n // 4, 4 * n)
        coarse = _polar_powers(G, H, r, s, p, n // 8, 2 * n)
        k = int(np.argmax(fine))
        res = _result_from_power(fine[k], float(np.max(np.abs(fine - coarse))), p,
                                 entries=fine)
        object.__setattr__(res, "entries", res.entries.reshape(2, 2))
        object.__setattr__(res, "entry_powers", res.entry_powers.reshape(2, 2))
        return res
    if method != "grid":
        raise DomainError(f"unknown method {method!r}")
    box = BoxDomain([(-r * np.ones(d), r * np.ones(d))])
    zero = np.zeros(d)

    def integrand(x):
        return G.jacobian(x) - H

    def in_ball(x):
        return np.einsum("ij,ij->i", x, x) < r * r

    return lp_norm_nd(integrand, box, p, resolution=resolution or (512 if d == 2 else 64),
                      spheres=[(zero, r), (zero, s)], mask=in_ball)


def fit_c1(H, p, sigmas=(0.5, 0.75, 0.9, 0.95), method=None, resolution=None):
    """Largest ratio of measured error to ``r^(d/p)(1 - s/r)^((1-p)/p)`` at
    unit radius over the given ``s/r`` values (the error scales exactly like
    ``r^(d/p)``, so the radius does not matter)."""
    H = check_sod(H)
    d = H.shape[0]
    ratios = []
    for sg in sigmas:
        val = localization_error(H, 1.0, sg, p, method=method, resolution=resolution).value
        ratios.append(val / bound_shape(d, p, 1.0, sg))
    return float(max(ratios)), np.array(ratios)


__all__ = [
    "jump_eval", "TwistProfile", "twist_eval", "VolumePreservingDiffeo", "TwistMap",
    "twist_map", "AffineRotation", "rotation2", "plane_rotation", "random_sod", "check_sod",
    "BlockDecomposition", "sod_block_decompose", "localized_eval", "LocalizedRotation",
    "localized_rotation", "localization_error_bound", "bound_shape", "localization_error",
    "fit_c1", "LpResult",
]
