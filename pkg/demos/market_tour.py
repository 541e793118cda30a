"""Walk through the centralized market solve on the 3-node benchmark.

Run:  python3 demos/market_tour.py
"""

import numpy as np

from peertrade import market, scenario as sc

scn = sc.builtin("three_node")
print(f"scenario '{scn.name}': {scn.n_nodes} nodes, {len(scn.links)} links")
for n in scn.node_ids:
    p = scn.prosumer(n)
    print(f"  node {n}: D in [{p.d_min}, {p.d_max}], target {p.d_star}, "
          f"infeed {p.delta_g}, gen cost 0.5*{p.a}*G^2 + {p.b}*G")
for (lo, hi), link in scn.links.items():
    print(f"  link {lo}-{hi}: capacity {link.kappa}, "
          f"c[{lo}][{hi}]={link.c_nm}, c[{hi}][{lo}]={link.c_mn}")

print()
sol = market.solve_centralized(scn)
print(f"solved in {sol.solver_iterations} interior-point iterations "
      f"({sol.solver_status})")
print(f"social welfare: {sol.sw:.5f}")
print()

print("nodal prices (lambda is the value of one extra unit at the node):")
for n in scn.node_ids:
    print(f"  lambda[{n}] = {sol.lam[n]:8.4f}   "
          f"D={sol.D[n]:.3f}  G={sol.G[n]:.3f}  net import Q={sol.Q[n]:+.3f}")

print()
print("trades (q[m][n] > 0 means n buys that much from m):")
for n, m in scn.directed_pairs():
    if sol.q[m][n] > 1e-6:
        at_cap = sol.q[m][n] >= scn.kappa(n, m) - 1e-6
        tag = "  <- line at capacity" if at_cap else ""
        print(f"  q[{m}][{n}] = {sol.q[m][n]:6.3f}{tag}")

print()
print("the congested line carries a congestion price:")
for n, m in scn.directed_pairs():
    if sol.xi[n][m] > 1e-6:
        print(f"  xi[{n}][{m}] = {sol.xi[n][m]:.4f}  "
              f"(buyer {n} would pay that much for one more unit of line)")

# the closed-form price formula only needs the root's neighbors and the
# congestion pattern; it should reproduce the solver's prices
lam_hat, deviation = market.nodal_price_closed_form(scn, sol)
print()
print(f"closed-form price check: max deviation {deviation:.2e}")

# a variant where wasting energy is genuinely optimal: drown node 1 in
# infeed and make every trade cost more than the energy is worth
wastey = sc.Scenario(
    name="dump", units="MWh",
    prosumers=[sc.ProsumerParams(id=0, d_min=0, d_max=3, g_min=0, g_max=0,
                                 d_star=1, a_tilde=8, b_tilde=30, a=1, b=5,
                                 d=0, delta_g=0),
               sc.ProsumerParams(id=1, d_min=0, d_max=3, g_min=0, g_max=0,
                                 d_star=1, a_tilde=8, b_tilde=30, a=1, b=5,
                                 d=0, delta_g=20)],
    links=[sc.TradeLink(n=0, m=1, kappa=50, c_nm=20, c_mn=20)])
wsol = market.solve_centralized(wastey)
print()
print(f"wasteful variant: node 1 sends {-wsol.q[0][1]:.3f} units "
      f"(q[0][1]={wsol.q[0][1]:+.3f}) but node 0 accepts "
      f"{max(wsol.q[1][0], 0.0):.3f}; waste = {wsol.waste_total:.3f}")
print("with 20/unit trading friction the planner prefers burning the "
      "surplus on the line over delivering it")
