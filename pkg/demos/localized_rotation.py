"""
Twisting space inside a ball
============================

Rotating each coordinate plane by an angle that depends only on ``|x|``
preserves volume.  With an angle that switches smoothly from ``theta`` to 0
between radii ``s`` and ``r`` the map is a rigid rotation on the inner ball,
the identity outside, and volume preserving in between.
"""

import math

import numpy as np

from vphomeo import (LocalizedRotation, localization_error, plane_rotation, random_sod,
                     sod_block_decompose)

H = plane_rotation(2, math.pi / 2)
G = LocalizedRotation([0.0, 0.0], H, r=1.0, s=0.5)
pts = np.array([[0.3, 0.0], [0.75, 0.0], [1.2, 0.0]])
print("G on the inner ball, annulus and outside:\n", np.round(G(pts), 6))

rng = np.random.default_rng(0)
x = rng.uniform(-1, 1, (2000, 2))
print("max |det DG - 1| =", np.max(np.abs(np.linalg.det(G.jacobian(x)) - 1)))

# The derivative error is confined to the annulus; it scales like r^4 at p = 1/2.
for r in (0.5, 0.25, 0.125):
    e = localization_error(H, r, r / 2, 0.5).value
    print(f"r={r:<6} ||DG - H||_1/2 = {e:.3e}   ratio to r^4 = {e / r**4:.4f}")

# Higher dimensions: any rotation splits into plane rotations.
dec = sod_block_decompose(random_sod(5, rng))
print("5d block angles:", np.round(dec.padded_angles(), 4))
