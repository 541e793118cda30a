"""How much utility do agents lose to noisy forecasts of their neighbors?

Agents act on Gaussian estimates of each other's private demand and
generation data.  The induced expected utility bias has a closed form;
this demo checks it against Monte Carlo and evaluates the worst-case
bound over a box of price ratios.

Run:  python3 demos/forecast_bias.py
"""

import numpy as np

from peertrade import privacy, scenario as sc

scn = sc.builtin("three_node")
errors = privacy.three_node_error_model()

print("per-pair forecast noise (sigma_d, sigma_g, covariance):")
for n, m in sorted(errors.pairs()):
    print(f"  {n} about {m}: ({errors.sigma_d.get((n, m), 0.0):.2f}, "
          f"{errors.sigma_g.get((n, m), 0.0):.2f}, "
          f"{errors.cov.get((n, m), 0.0):+.2f})")

r = privacy.default_r(scn)
closed = privacy.expected_bias(scn, errors, r)
mc = privacy.monte_carlo_bias(scn, errors, r, samples=10 ** 5, seed=0)
print()
print("expected utility bias at uniform price ratios (r = 1):")
for n in scn.node_ids:
    print(f"  node {n}: closed form {closed[n]:+.6g}, "
          f"Monte Carlo {mc[n]['mean']:+.6g} +/- {mc[n]['stderr']:.2g}")
print("the root barely cares (tiny noise about its neighbors); nodes 1 "
      "and 2 carry the bias because their curvatures differ most")

# worst case over a box of price ratios, root pinned at 1
r_lo = {0: 1.0, 1: 0.5, 2: 0.5}
r_hi = {0: 1.0, 1: 2.0, 2: 2.0}
phi = privacy.phi_bound(scn, errors, r_lo, r_hi)
print()
print("upper bound Phi over price ratios in [0.5, 2]:")
for n in scn.node_ids:
    print(f"  node {n}: |bias| <= {phi[n]:.6g}")

# sweep the two non-root utility curvatures and watch the bound move
res = privacy.bias_vs_utility_params(
    scn, errors, a1_values=np.linspace(5, 25, 5),
    a2_values=np.linspace(5, 25, 5), r_lo=r_lo, r_hi=r_hi)
lo, hi = res["min"], res["max"]
print()
print("sweeping the non-root utility curvatures a~_1, a~_2 in [5, 25]:")
print(f"  bound sum ranges {lo['phi_sum']:.4g} (at a~=({lo['a_tilde_1']:g}, "
      f"{lo['a_tilde_2']:g})) to {hi['phi_sum']:.4g} "
      f"(at a~=({hi['a_tilde_1']:g}, {hi['a_tilde_2']:g}))")
pct = [row["percent_of_sw"] for row in res["surface"]
       if row["percent_of_sw"] is not None]
print(f"  as a share of optimal welfare: {min(pct):.4f}% .. {max(pct):.4f}%")
print()
print("the bias scales with the gap |1/a~ - 1/a|; here the cheap "
      "generators (1/a = 100) dominate, so raising a~ widens the gap "
      "and nudges the bound up")
