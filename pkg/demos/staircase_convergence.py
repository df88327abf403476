"""
Staircases: uniformly close to the identity, derivative close to zero
=====================================================================

The staircase ``f_n`` climbs ``b_n`` over a short run ``a_n`` and then ``a_n``
over a long run ``b_n`` on each of ``n`` teeth.  It never leaves the
diagonal by more than ``1/n``, yet its derivative is tiny on most of the
interval, so ``||f_n'||_p`` tends to 0 for every ``p < 1``.
"""

import numpy as np

from vphomeo import StaircaseParams, convergence_table_1d, make_staircase

# The three-tooth staircase with a cubic ramp and a_3 = 1/9.
f3 = make_staircase(StaircaseParams(3, 1 / 9, "poly"))
x = np.array([0.0, 1 / 9, 1 / 3, 4 / 9, 2 / 3, 1.0])
print("f_3 at", np.round(x, 4), "->", np.round(f3(x), 4))

# Errors against the identity and the closed-form power bound, p = 1/2.
table = convergence_table_1d("staircase", 0.5, [4, 16, 64, 256])
print(table.to_csv())

# Blending with the identity moves the derivative target to any constant c.
blend = convergence_table_1d("blend", 0.5, [4, 16, 64], c=0.3)
print("blend lp_err:", np.round(blend.column("lp_err"), 5))
