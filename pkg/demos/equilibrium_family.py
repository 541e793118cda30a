"""From the variational equilibrium to the whole family of Nash outcomes.

The market has one welfare-optimal equilibrium (the VE) but a continuum
of other generalized Nash equilibria in which the two sides of a trade
value it differently.  Sweeping the omega parameter enumerates them and
bounds the price of anarchy from below.

Run:  python3 demos/equilibrium_family.py
"""

from peertrade import equilibrium as eq
from peertrade import scenario as sc

scn = sc.builtin("three_node")

ve = eq.solve_ve(scn)
print(f"variational equilibrium: SW = {ve.sw:.5f}, "
      f"lambda = ({ve.lam[0]:.4f}, {ve.lam[1]:.4f}, {ve.lam[2]:.4f})")

# one specific non-variational equilibrium: penalize node 1's purchases
# from the root heavily and its sales to node 2 moderately
omega = eq.OmegaVector({(1, 0): 87.0, (2, 0): 16.0, (1, 2): 80.0})
g = eq.solve_parameterized(scn, omega)
print()
print(f"omega = {dict(omega.items())}")
print(f"  is an equilibrium: {g.is_gne} "
      f"(complementarity violation {g.violation:.2e})")
print(f"  SW = {g.sw:.4f}  (vs {ve.sw:.4f} at the optimum)")
print(f"  lambda = ({g.solution.lam[0]:.3f}, {g.solution.lam[1]:.3f}, "
      f"{g.solution.lam[2]:.3f})")
print(f"  trades: q[0][1]={g.solution.q[0][1]:.2f}  "
      f"q[1][2]={g.solution.q[1][2]:.2f}  q[2][0]={g.solution.q[2][0]:.2f}")
print("  node 1 now sells its whole line to node 2 and buys nothing; "
      "its price jumps to 90")

# each side of a trade can value it differently at a GNE; the recovered
# per-agent prices make that visible
rep1 = eq.check_agent_kkt(scn, g.solution, 1)
rep2 = eq.check_agent_kkt(scn, g.solution, 2)
print(f"  node 1 values the 1-2 trade at {rep1.zeta[2]:.1f}, "
      f"node 2 values it at {rep2.zeta[1]:.1f}")

# sweep a small grid around the interesting omega values
strategy = eq.AxisStrategy(values=[0.0, 16.0, 80.0, 87.0],
                           support=[(1, 0), (2, 0), (1, 2)])
samples = eq.sweep_gne(scn, strategy)
print()
print(f"sweep over 4^3 omega points kept {len(samples)} distinct equilibria")
bound = eq.poa_bound(samples, ve.sw)
worst = bound["worst_sample"]
print(f"worst social welfare: {worst.sw:.4f} at "
      f"omega = {dict(worst.omega.items())}")
print(f"price of anarchy is at least {bound['poa_lower_bound']:.5f}")
print()
print("a bigger sweep (say GridStrategy(0, 100, 1)) tightens the bound; "
      "the CLI command 'peertrade gne' wraps exactly this")
