"""Two estimates of the tail constant H in P(|R| > t) ~ H t**-alpha.

With signed weights and Q = +-1 the law of R is symmetric, both tails
share one constant, and for alpha = 2 it equals E[Q**2] / (4 mu).
The moment form and the integral form reach it from different
expectations of the same sample.
"""

import numpy as np

from branchtail.law import closed_mu, parse_law
from branchtail.moments import solve_alpha
from branchtail.tail import estimate_H_integral, estimate_H_moment, goldie_integrand, tail_table
from branchtail.treesim import batch_R, pick_depth

m = -(np.log(2) + 2) / 2
law = parse_law({"n": {"kind": "det", "value": 2},
                 "c": {"magnitude": {"kind": "lognormal", "m": m, "sigma2": 1.0}, "q_neg": 0.5},
                 "q": {"kind": "two_point", "values": [1, -1], "p": 0.5}})
alpha = solve_alpha(law).alpha
mu = closed_mu(law, alpha)
r = batch_R(law, pick_depth(law), 10**6, seed=7, stream_count=4).values

mom = estimate_H_moment(law, r, alpha, mu, seed=1).h
itg = estimate_H_integral(law, r, alpha, mu, seed=1).h
print(f"moment form   H = {mom.estimate:.4f}  [{mom.ci_low:.4f}, {mom.ci_high:.4f}]")
print(f"integral form H = {itg.estimate:.4f}  [{itg.ci_low:.4f}, {itg.ci_high:.4f}]")
print(f"closed value 1/(4 mu) = {1 / (4 * mu):.4f}")

# how much of the integral is still arriving in the last decade of t
g = goldie_integrand(law, r, alpha)
print(f"last-decade share: plus {g.last_decade_fraction('plus'):.3f}, "
      f"minus {g.last_decade_fraction('minus'):.3f}")

print("\n      t     P(R>t)    P(R<-t)   H t^-a    flag")
for row in tail_table(r, alpha, mom.estimate, mom.estimate, thresholds=np.geomspace(2, 60, 8)):
    print(f"{row.t:7.2f}  {row.right:.2e}  {row.left:.2e}  {row.model_right:.2e}  {row.flag}")
