"""Centralized social-welfare market: assembly, solving, price extraction.

The centralized problem maximizes the sum of agent utilities over demand
``D``, flexible generation ``G``, and signed bilateral trades ``q``
(``q[m][n]`` is node n's purchase from m; positive means energy flows
m -> n).  It is solved as a minimization QP; every Lagrange multiplier is
mapped back to its economic name:

* ``lam[n]``: nodal price, from the balance equality of node n.
* ``zeta[n][m]``: bilateral trade price, from the reciprocity row of the
  pair (one row per pair, so the value is shared by both directions,
  which is exactly variational-equilibrium pricing).
* ``xi[n][m]``: congestion price, from the capacity row of the trade
  variable q[m][n] (the index order follows the pricing convention: the
  flow m -> n is priced by xi[n][m]).
* ``mu_lo/mu_hi``, ``nu_lo/nu_hi``: demand and generation bound prices.

Bounds with equal endpoints become equality rows (the interior-point
engine needs slack in its inequalities); their duals are split back into
the lo/hi pair by sign so the reported multiplier surface is uniform.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .scenario import Scenario

DEFAULT_TOL = 1e-8


class MarketError(RuntimeError):
    pass


class InfeasibleMarketError(MarketError):
    """Scenario admits no feasible dispatch; message names the worst rows."""


@dataclass(frozen=True)
class MarketSolution:
    """Primal decisions, prices, and diagnostics of one market solve.

    All per-node containers are dicts keyed by node id; ``q``, ``zeta``
    and ``xi`` are nested dicts so that ``q[m][n]`` reads exactly like
    the math.  ``kind`` records how the solution was produced
    ("centralized", "ve", or "gne"), which downstream analyses use to
    decide whether centralized-only theory applies.
    """

    D: dict
    G: dict
    q: dict
    Q: dict
    lam: dict
    zeta: dict
    xi: dict
    mu_lo: dict
    mu_hi: dict
    nu_lo: dict
    nu_hi: dict
    sw: float
    waste: dict
    waste_total: float
    kind: str = "centralized"
    eps_reg: float = 0.0
    solver_status: str = "optimal"
    solver_iterations: int = 0
    kkt_residuals: dict = field(default_factory=dict)

    def trade(self, m: int, n: int) -> float:
        return self.q[m][n]


@dataclass(frozen=True)
class _MarketIndex:
    """Positions of variables and constraint rows in the assembled QP."""

    nodes: tuple
    dpos: dict
    gpos: dict
    qpos: dict            # (m, n) -> column of q[m][n]
    bal_row: dict         # node -> equality row
    fix_d_row: dict       # node -> equality row (d_min == d_max)
    fix_g_row: dict
    d_lo_row: dict
    d_hi_row: dict
    g_lo_row: dict
    g_hi_row: dict
    cap_row: dict         # (m, n) -> inequality row capping q[m][n]
    recip_row: dict       # unordered pair -> inequality row


def _require_valid(scenario: Scenario) -> None:
    errors = [v for v in scenario.validate() if v.severity == "error"]
    if errors:
        listing = "; ".join(str(v) for v in errors)
        raise ValueError(f"scenario {scenario.name!r} is invalid: {listing}")


def assemble(scenario: Scenario) -> tuple[qp.QpProblem, _MarketIndex]:
    """Build the minimization QP and the index mapping back to the market."""
    _require_valid(scenario)
    nodes = scenario.node_ids
    dpairs = list(scenario.directed_pairs())
    nN = len(nodes)
    n_var = 2 * nN + len(dpairs)

    dpos = {node: i for i, node in enumerate(nodes)}
    gpos = {node: nN + i for i, node in enumerate(nodes)}
    qpos = {pair: 2 * nN + i for i, pair in enumerate(dpairs)}

    P = np.zeros((n_var, n_var))
    r = np.zeros(n_var)
    names = []
    for node in nodes:
        p = scenario.prosumer(node)
        P[dpos[node], dpos[node]] = 2.0 * p.a_tilde
        r[dpos[node]] = -2.0 * p.a_tilde * p.d_star
        names.append(f"D[{node}]")
    for node in nodes:
        p = scenario.prosumer(node)
        P[gpos[node], gpos[node]] = p.a
        r[gpos[node]] = p.b
        names.append(f"G[{node}]")
    for (m, n) in dpairs:
        r[qpos[(m, n)]] = scenario.c(n, m)   # the buyer n pays c(n, m)
        names.append(f"q[{m}][{n}]")

    eq_rows, eq_rhs = [], []
    bal_row, fix_d_row, fix_g_row = {}, {}, {}
    for node in nodes:
        p = scenario.prosumer(node)
        row = np.zeros(n_var)
        row[dpos[node]] = 1.0
        row[gpos[node]] = -1.0
        for (m, n) in dpairs:
            if n == node:
                row[qpos[(m, n)]] = -1.0
        bal_row[node] = len(eq_rows)
        eq_rows.append(row)
        eq_rhs.append(p.delta_g)
    for node in nodes:
        p = scenario.prosumer(node)
        if p.d_min == p.d_max:
            row = np.zeros(n_var)
            row[dpos[node]] = 1.0
            fix_d_row[node] = len(eq_rows)
            eq_rows.append(row)
            eq_rhs.append(p.d_min)
        if p.g_min == p.g_max:
            row = np.zeros(n_var)
            row[gpos[node]] = 1.0
            fix_g_row[node] = len(eq_rows)
            eq_rows.append(row)
            eq_rhs.append(p.g_min)

    in_rows, in_rhs = [], []
    d_lo_row, d_hi_row, g_lo_row, g_hi_row = {}, {}, {}, {}
    for node in nodes:
        p = scenario.prosumer(node)
        if p.d_min != p.d_max:
            row = np.zeros(n_var); row[dpos[node]] = -1.0
            d_lo_row[node] = len(in_rows); in_rows.append(row); in_rhs.append(-p.d_min)
            row = np.zeros(n_var); row[dpos[node]] = 1.0
            d_hi_row[node] = len(in_rows); in_rows.append(row); in_rhs.append(p.d_max)
        if p.g_min != p.g_max:
            row = np.zeros(n_var); row[gpos[node]] = -1.0
            g_lo_row[node] = len(in_rows); in_rows.append(row); in_rhs.append(-p.g_min)
            row = np.zeros(n_var); row[gpos[node]] = 1.0
            g_hi_row[node] = len(in_rows); in_rows.append(row); in_rhs.append(p.g_max)
    cap_row = {}
    for (m, n) in dpairs:
        row = np.zeros(n_var); row[qpos[(m, n)]] = 1.0
        cap_row[(m, n)] = len(in_rows)
        in_rows.append(row)
        in_rhs.append(scenario.kappa(m, n))
    recip_row = {}
    for pair in sorted(scenario.links):
        lo, hi = pair
        row = np.zeros(n_var)
        row[qpos[(lo, hi)]] = 1.0
        row[qpos[(hi, lo)]] = 1.0
        recip_row[pair] = len(in_rows)
        in_rows.append(row)
        in_rhs.append(0.0)

    problem = qp.QpProblem(
        P=P, r=r,
        A_ineq=np.array(in_rows).reshape(-1, n_var),
        b_ineq=np.array(in_rhs, dtype=float),
        A_eq=np.array(eq_rows).reshape(-1, n_var),
        b_eq=np.array(eq_rhs, dtype=float),
        var_names=tuple(names))
    index = _MarketIndex(nodes=nodes, dpos=dpos, gpos=gpos, qpos=qpos,
                         bal_row=bal_row, fix_d_row=fix_d_row,
                         fix_g_row=fix_g_row, d_lo_row=d_lo_row,
                         d_hi_row=d_hi_row, g_lo_row=g_lo_row,
                         g_hi_row=g_hi_row, cap_row=cap_row,
                         recip_row=recip_row)
    return problem, index


def build_centralized_qp(scenario: Scenario) -> qp.QpProblem:
    """The centralized welfare problem in minimization form.

    Variables are ordered deterministically: every ``D`` by node id,
    every ``G``, then the trades by (seller, buyer) lexicographic.
    """
    return assemble(scenario)[0]


def trade_reg_mask(problem: qp.QpProblem) -> np.ndarray:
    """Mask selecting the trade variables, for Tikhonov regularization."""
    if problem.var_names is None:
        raise ValueError("problem carries no variable names")
    return np.array([1.0 if name.startswith("q[") else 0.0
                     for name in problem.var_names])


def social_welfare(scenario: Scenario, D: dict, G: dict, q: dict) -> float:
    """Sum of agent utilities at the given (not necessarily feasible) point."""
    total = 0.0
    try:
        for node in scenario.node_ids:
            p = scenario.prosumer(node)
            total += p.usage_benefit(D[node]) - p.generation_cost(G[node])
            for m in scenario.neighbors(node):
                total -= scenario.c(node, m) * q[m][node]
    except KeyError as e:
        raise ValueError(f"decision container is missing entry {e}") from None
    return total


def solve_centralized(scenario: Scenario, tol: float = DEFAULT_TOL,
                      max_iter: int = 100, eps_reg: float = 0.0,
                      kind: str = "centralized") -> MarketSolution:
    """Solve the welfare problem and map every dual to its market name.

    ``eps_reg > 0`` adds a Tikhonov term on the trade variables only; use
    it to pick a reproducible representative when preferences make the
    optimal trades non-unique.  The value is echoed in the solution.
    """
    problem, idx = assemble(scenario)
    mask = trade_reg_mask(problem) if eps_reg else None
    sol = qp.solve(problem, tol=tol, max_iter=max_iter, eps_reg=eps_reg,
                   reg_mask=mask)
    if sol.status == qp.STATUS_INFEASIBLE:
        raise InfeasibleMarketError(
            f"scenario {scenario.name!r}: " + _attribute_infeasibility(problem, sol))
    if sol.status != qp.STATUS_OPTIMAL:
        raise MarketError(f"solver returned status {sol.status!r}: {sol.message}")

    solution = extract_solution(scenario, idx, sol, eps_reg, kind)
    verify_solution(scenario, solution, tol, eps_reg)
    return solution


def _attribute_infeasibility(problem: qp.QpProblem, sol: qp.QpSolution) -> str:
    x = sol.x
    viol = []
    if problem.n_eq:
        res = problem.A_eq @ x - problem.b_eq
        for i in np.argsort(-np.abs(res))[:3]:
            if abs(res[i]) > 1e-6:
                viol.append(f"equality row {i} off by {res[i]:.3g}")
    if problem.n_ineq:
        res = problem.A_ineq @ x - problem.b_ineq
        for i in np.argsort(-res)[:3]:
            if res[i] > 1e-6:
                viol.append(f"inequality row {i} violated by {res[i]:.3g}")
    detail = "; ".join(viol) if viol else sol.message
    return f"no feasible dispatch ({detail})"


def extract_solution(scenario: Scenario, idx: _MarketIndex, sol: qp.QpSolution,
                     eps_reg: float = 0.0, kind: str = "centralized") -> MarketSolution:
    """Map a raw QP solution back to market quantities and prices."""
    x, z, y = sol.x, sol.mult_ineq, sol.mult_eq
    nodes = idx.nodes

    D = {n: float(x[idx.dpos[n]]) for n in nodes}
    G = {n: float(x[idx.gpos[n]]) for n in nodes}
    q = {n: {} for n in nodes}
    for (m, n), col in idx.qpos.items():
        q[m][n] = float(x[col])
    Q = {n: sum(q[m][n] for m in scenario.neighbors(n)) for n in nodes}

    lam = {n: float(y[idx.bal_row[n]]) for n in nodes}

    mu_lo, mu_hi, nu_lo, nu_hi = {}, {}, {}, {}
    for n in nodes:
        if n in idx.fix_d_row:
            t = float(y[idx.fix_d_row[n]])
            mu_hi[n], mu_lo[n] = max(t, 0.0), max(-t, 0.0)
        else:
            mu_lo[n] = float(z[idx.d_lo_row[n]])
            mu_hi[n] = float(z[idx.d_hi_row[n]])
        if n in idx.fix_g_row:
            t = float(y[idx.fix_g_row[n]])
            nu_hi[n], nu_lo[n] = max(t, 0.0), max(-t, 0.0)
        else:
            nu_lo[n] = float(z[idx.g_lo_row[n]])
            nu_hi[n] = float(z[idx.g_hi_row[n]])

    xi = {n: {} for n in nodes}
    for (m, n), row in idx.cap_row.items():
        xi[n][m] = float(z[row])     # the flow m -> n is priced by xi[n][m]
    zeta = {n: {} for n in nodes}
    for (lo, hi), row in idx.recip_row.items():
        zeta[lo][hi] = zeta[hi][lo] = float(z[row])

    waste = {}
    total = 0.0
    for pair in sorted(scenario.links):
        lo, hi = pair
        w = -(q[lo][hi] + q[hi][lo])
        waste[pair] = w
        total += max(w, 0.0)

    sw = social_welfare(scenario, D, G, q)
    return MarketSolution(D=D, G=G, q=q, Q=Q, lam=lam, zeta=zeta, xi=xi,
                          mu_lo=mu_lo, mu_hi=mu_hi, nu_lo=nu_lo, nu_hi=nu_hi,
                          sw=sw, waste=waste, waste_total=total, kind=kind,
                          eps_reg=eps_reg, solver_status=sol.status,
                          solver_iterations=sol.iterations,
                          kkt_residuals=dict(sol.kkt_residuals))


def verify_solution(scenario: Scenario, s: MarketSolution, tol: float,
                    eps_reg: float = 0.0, price_shift=None) -> None:
    """Re-derive the optimality identities from the extracted quantities.

    ``price_shift`` maps directed pairs (n, m) to an amount added to the
    effective purchase price c(n, m) (used by the parameterized
    equilibrium problems).  A failure here means the assembly or
    extraction mapped something to the wrong place, so it raises rather
    than warns.
    """
    shift = dict(price_shift) if price_shift else {}
    qmax = max((abs(v) for row in s.q.values() for v in row.values()),
               default=0.0)
    scale = 1.0 + max(max(abs(v) for v in s.lam.values()), qmax)
    thr = 10.0 * tol * scale + 2.0 * eps_reg * (1.0 + qmax)

    for n in scenario.node_ids:
        p = scenario.prosumer(n)
        r1 = 2.0 * p.a_tilde * (s.D[n] - p.d_star) - s.mu_lo[n] + s.mu_hi[n] + s.lam[n]
        r2 = p.a * s.G[n] + p.b - s.nu_lo[n] + s.nu_hi[n] - s.lam[n]
        if abs(r1) > thr or abs(r2) > thr:
            raise MarketError(
                f"stationarity identity violated at node {n}: D-residual {r1:.3e}, "
                f"G-residual {r2:.3e} (threshold {thr:.3e})")
        bal = s.D[n] - s.G[n] - scenario.prosumer(n).delta_g - s.Q[n]
        if abs(bal) > thr:
            raise MarketError(f"balance identity violated at node {n}: {bal:.3e}")
        for m in scenario.neighbors(n):
            res = (scenario.c(n, m) + shift.get((n, m), 0.0)
                   + s.xi[n][m] + s.zeta[n][m] - s.lam[n])
            if abs(res) > thr:
                raise MarketError(
                    f"trade price identity violated on ({n},{m}): {res:.3e}")
    # Closed-form primal recovery from the prices.
    for n in scenario.node_ids:
        p = scenario.prosumer(n)
        d_hat = p.d_star - (s.lam[n] + s.mu_hi[n] - s.mu_lo[n]) / (2.0 * p.a_tilde)
        g_hat = -p.b / p.a + (s.lam[n] - (s.nu_hi[n] - s.nu_lo[n])) / p.a
        if abs(d_hat - s.D[n]) > thr or abs(g_hat - s.G[n]) > thr * (1 + 1 / p.a):
            raise MarketError(
                f"closed-form primal mismatch at node {n}: "
                f"D {d_hat - s.D[n]:.3e}, G {g_hat - s.G[n]:.3e}")


def nodal_price_closed_form(scenario: Scenario, solution: MarketSolution,
                            tol: float = 1e-6):
    """Recompute all nodal prices from root-link data and bound multipliers.

    Works under two preconditions: the dispatch wastes no energy (the
    derivation assumes net imports sum to zero) and every node trades
    directly with the root (the root-price formula folds all other nodes
    through their root link).  Returns ``(lambda_hat, deviation)`` where
    ``deviation`` is the max-norm gap to the solver's prices.
    """
    if solution.waste_total > tol:
        raise MarketError(
            f"waste present ({solution.waste_total:.3g} > {tol:g}); the closed "
            "form assumes net imports sum to zero")
    others = [n for n in scenario.node_ids if n != 0]
    not_adjacent = [n for n in others if not scenario.has_link(0, n)]
    if not_adjacent:
        raise MarketError(
            f"closed form needs every node adjacent to the root; missing "
            f"links to {not_adjacent}")

    coef = {}
    num = 0.0
    for n in scenario.node_ids:
        p = scenario.prosumer(n)
        coef[n] = 1.0 / (2.0 * p.a_tilde) + 1.0 / p.a
        num += (p.d_star
                - (solution.mu_hi[n] - solution.mu_lo[n]) / (2.0 * p.a_tilde)
                + p.b / p.a
                + (solution.nu_hi[n] - solution.nu_lo[n]) / p.a
                - p.delta_g)
    for n in others:
        gap = (scenario.c(n, 0) - scenario.c(0, n)
               + solution.xi[n][0] - solution.xi[0][n])
        num -= coef[n] * gap
    lam0 = num / sum(coef.values())

    lam_hat = {0: lam0}
    for n in others:
        lam_hat[n] = (scenario.c(n, 0) - scenario.c(0, n)
                      + solution.xi[n][0] - solution.xi[0][n] + lam0)
    deviation = max(abs(lam_hat[n] - solution.lam[n]) for n in scenario.node_ids)
    return lam_hat, deviation


# -- reporting ------------------------------------------------------------

def solution_to_dict(solution: MarketSolution) -> dict:
    """JSON-ready report: decisions, prices, residuals, waste, welfare."""
    def pairmap(nested):
        return {f"{m}->{n}": nested[m][n]
                for m in sorted(nested) for n in sorted(nested[m])}

    wasteful = [
        {"pair": list(pair), "waste": w}
        for pair, w in sorted(solution.waste.items()) if w > 1e-6
    ]
    return {
        "kind": solution.kind,
        "sw": solution.sw,
        "decisions": {
            "D": {str(k): v for k, v in sorted(solution.D.items())},
            "G": {str(k): v for k, v in sorted(solution.G.items())},
            "q": pairmap(solution.q),
            "Q": {str(k): v for k, v in sorted(solution.Q.items())},
        },
        "prices": {
            "lambda": {str(k): v for k, v in sorted(solution.lam.items())},
            "zeta": pairmap(solution.zeta),
            "xi": pairmap(solution.xi),
            "mu_lo": {str(k): v for k, v in sorted(solution.mu_lo.items())},
            "mu_hi": {str(k): v for k, v in sorted(solution.mu_hi.items())},
            "nu_lo": {str(k): v for k, v in sorted(solution.nu_lo.items())},
            "nu_hi": {str(k): v for k, v in sorted(solution.nu_hi.items())},
        },
        "waste": {"total": solution.waste_total, "pairs": wasteful},
        "residuals": dict(solution.kkt_residuals),
        "solver": {"status": solution.solver_status,
                   "iterations": solution.solver_iterations,
                   "eps_reg": solution.eps_reg},
    }


def solution_to_json(solution: MarketSolution) -> str:
    return json.dumps(solution_to_dict(solution), indent=2) + "\n"


def solution_to_csv(solution: MarketSolution) -> str:
    """Two CSV blocks: one row per node, then one row per directed pair."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["node", "D", "G", "Q", "lambda", "mu_lo", "mu_hi",
                "nu_lo", "nu_hi"])
    for n in sorted(solution.D):
        w.writerow([n, solution.D[n], solution.G[n], solution.Q[n],
                    solution.lam[n], solution.mu_lo[n], solution.mu_hi[n],
                    solution.nu_lo[n], solution.nu_hi[n]])
    w.writerow([])
    w.writerow(["seller_m", "buyer_n", "q_mn", "zeta_nm", "xi_nm", "waste_pair"])
    for m in sorted(solution.q):
        for n in sorted(solution.q[m]):
            pair = (m, n) if m < n else (n, m)
            w.writerow([m, n, solution.q[m][n], solution.zeta[n][m],
                        solution.xi[n][m], solution.waste[pair]])
    return buf.getvalue()
