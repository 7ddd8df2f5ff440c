"""Lattice weights: matrix convolution powers and periodic tail constants.

One child per node with |C| = 2 w.p. 1/3 and 1/2 w.p. 2/3, so log|C| lives
on the lattice log(2) Z.  The tilted measures of log|C|, split by the sign
of the path weight, form a 2x2 matrix measure whose n-th convolution power
must match a direct enumeration of generation n.
"""

import numpy as np

from branchtail.law import closed_mu, parse_law
from branchtail.renewal import (MatrixMeasure, convolution_identity, eta_grids, lattice_H,
                                mass_matrix_checks)
from branchtail.treesim import batch_R, pick_depth


def two_point(q_neg, q):
    return parse_law({"n": {"kind": "det", "value": 1},
                      "c": {"magnitude": {"kind": "two_point", "values": [2, 0.5], "p": 1 / 3},
                            "q_neg": q_neg},
                      "q": q})


law = two_point(0.3, {"kind": "det", "value": 1})
plus, minus = eta_grids(law, 1.0)
print("eta+ atoms:", [(round(x, 4), round(p, 4)) for x, p in plus.atoms()])
print("eta- atoms:", [(round(x, 4), round(p, 4)) for x, p in minus.atoms()])
print("mass matrix:\n", np.round(mass_matrix_checks(MatrixMeasure.from_eta(plus, minus))["matrix"], 6))

for row in convolution_identity(law, 1.0, 4):
    print(f"  n = {row['n']}: largest atom gap {row['max_diff']:.1e}, total mass {row['total_mass']:.12f}")

# symmetric signs and Q = +-1: H+(t) and H-(t) should coincide,
# and both repeat with period log 2
law = two_point(0.5, {"kind": "two_point", "values": [1, -1], "p": 0.5})
mu = closed_mu(law, 1.0)
r = batch_R(law, pick_depth(law), 10**6, seed=9, method="pool").values
print("\n     t      H+(t)    H-(t)")
for t in np.linspace(0, 2 * np.log(2), 7):
    h = lattice_H(law, r, 1.0, mu, t)
    print(f"  {t:5.3f}  {h.h_plus.estimate:7.4f}  {h.h_minus.estimate:7.4f}")
