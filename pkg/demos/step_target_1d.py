"""
Approximating a target derivative in one dimension
==================================================

A pair ``(f, F)`` is reachable when ``0 <= F/f' <= 1``: there are increasing
homeomorphisms ``h`` uniformly close to ``f`` with ``h'`` close to ``F`` in
``L^p``.  The construction approximates ``(F o f^-1)(f^-1)'`` by a step
function, realizes that step function with blended staircases and composes
back with ``f``.
"""

import numpy as np

from vphomeo import (InfeasibleError, PairCandidate1D, StepFunction1D, approximate_pair,
                     from_callables, identity_homeo, make_step_homeo)
from vphomeo.kernel import lp_norm_1d

# Step target with values 1/4, 1/2, 1/6 on (0, .4), (.4, .6), (.6, 1).
H = StepFunction1D([0, 0.4, 0.6, 1], [0.25, 0.5, 1 / 6])
for n in (4, 16, 64):
    phi = make_step_homeo(H, n)
    err = lp_norm_1d(lambda t: phi.deriv(t) - H(t), (0, 1), 0.5, phi.breakpoints)
    print(f"n={n:3d}  ||phi_n' - H||_1/2 = {err.value:.5f}")

# f(x) = x^2 with target F(x) = x: the ratio F/f' = 1/2 is feasible.
f = from_callables(lambda t: t**2, lambda t: 2 * t, inverse=np.sqrt,
                   inverse_deriv=lambda y: 0.5 / np.sqrt(np.maximum(y, 1e-300)))
h, rep = approximate_pair(PairCandidate1D(f, lambda t: t), 0.05, sup_eps=0.02)
print(f"(x^2, x): n={rep.n}, sup|h - f| = {rep.sup_error:.4f}, "
      f"||h' - F||_1/2 = {rep.lp_error.value:.4f}")

# (Id, 2) asks for more slope than the map has and is rejected.
try:
    approximate_pair(PairCandidate1D(identity_homeo(), lambda t: np.full_like(t, 2.0)), 0.05)
except InfeasibleError as exc:
    print("(Id, 2) rejected:", exc, "witness", exc.witness)
