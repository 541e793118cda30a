"""Variational and generalized Nash equilibria of the trading game.

Each agent maximizes its own utility subject to its demand/generation
bounds, its balance equation, trade capacities, and the shared
reciprocity constraints q[m][n] + q[n][m] <= 0.  Because the reciprocity
constraints are shared, equilibria come in families distinguished by how
the two agents of a pair price that constraint.

* The Variational Equilibrium (VE) gives both sides the same price; it
  coincides with the centralized welfare optimum, so :func:`solve_ve`
  delegates to the market solver.
* Other equilibria are sampled by perturbing the objective with a
  nonnegative weight ``omega[(n, m)]`` on agent n's purchase from m and
  solving the same QP.  The perturbed solution is a true equilibrium of
  the unperturbed game exactly when each weighted pair's reciprocity
  constraint closes (omega * slack = 0); :func:`solve_parameterized`
  applies that filter and recovers the agent-side constraint prices
  ``zeta_hat[n][m] = zeta[n][m] + omega[(n, m)]``.

:func:`sweep_gne` runs many omega points through the batched QP path and
keeps the distinct equilibria; :func:`poa_bound` turns a sample set into
a Price-of-Anarchy lower bound.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np
import scipy.optimize

from . import market, qp
from .market import MarketSolution
from .scenario import Scenario

SUPPORT_LOW_BUYS_HIGH = "n_gt_m"   # omega on q[m][n] for n > m (the default)
SUPPORT_FULL = "full"


@dataclass(frozen=True)
class OmegaVector:
    """Nonnegative perturbation weights on directed trades.

    Keys are directed pairs ``(n, m)``: the weight is added to what agent
    ``n`` pays per unit bought from ``m``.
    """

    entries: Mapping = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for pair, w in dict(self.entries).items():
            n, m = pair
            if w < 0:
                raise ValueError(f"omega[{pair}] = {w} is negative")
            clean[(int(n), int(m))] = float(w)
        object.__setattr__(self, "entries", clean)

    @property
    def support(self) -> tuple:
        return tuple(sorted(self.entries))

    def get(self, pair, default=0.0) -> float:
        return self.entries.get(pair, default)

    def items(self):
        return sorted(self.entries.items())

    def max_weight(self) -> float:
        return max(self.entries.values(), default=0.0)


@dataclass(frozen=True)
class GneSample:
    """One point of the equilibrium family reached at a given omega."""

    omega: OmegaVector
    solution: MarketSolution
    recovered_zeta: dict
    is_gne: bool
    violation: float
    r: dict

    @property
    def sw(self) -> float:
        return self.solution.sw


def epsilon_comp(scenario: Scenario) -> float:
    """Unit-free tolerance for the equilibrium filter omega*(q+q) = 0."""
    kmax = max((l.kappa for l in scenario.links.values()), default=0.0)
    return 1e-6 * (1.0 + kmax)


def default_support(scenario: Scenario, mode: str = SUPPORT_LOW_BUYS_HIGH) -> tuple:
    """Directed pairs that carry omega weights.

    The default puts a weight on each pair's higher-id buyer only, which
    keeps the sweep dimension at one per link.  ``mode="full"`` doubles
    it to every directed pair.  An explicit list of directed pairs passes
    through unchanged (after checking the links exist).
    """
    if isinstance(mode, (list, tuple)):
        for (n, m) in mode:
            if not scenario.has_link(n, m):
                raise ValueError(f"support pair ({n}, {m}) has no link")
        return tuple(mode)
    if mode == SUPPORT_LOW_BUYS_HIGH:
        return tuple((hi, lo) for lo, hi in sorted(scenario.links))
    if mode == SUPPORT_FULL:
        return tuple(scenario.directed_pairs())
    raise ValueError(f"unknown support mode {mode!r}")


def solve_ve(scenario: Scenario, tol: float = market.DEFAULT_TOL,
             eps_reg: float = 0.0) -> MarketSolution:
    """The Variational Equilibrium: the welfare optimum with shared prices."""
    sol = market.solve_centralized(scenario, tol=tol, eps_reg=eps_reg, kind="ve")
    for n in sol.zeta:
        for m, v in sol.zeta[n].items():
            if abs(v - sol.zeta[m][n]) > 1e-12:
                raise market.MarketError(
                    f"reciprocity price not symmetric on ({n},{m})")
    return sol


def solve_parameterized(scenario: Scenario, omega: OmegaVector,
                        tol: float = market.DEFAULT_TOL,
                        eps_reg: float = 0.0) -> GneSample:
    """Solve the omega-perturbed problem and classify the outcome."""
    problem, idx = market.assemble(scenario)
    r = problem.r.copy()
    for (n, m), w in omega.items():
        if (m, n) not in idx.qpos:
            raise ValueError(f"omega[{(n, m)}] refers to a pair with no link")
        r[idx.qpos[(m, n)]] += w
    shifted = qp.QpProblem(P=problem.P, r=r, A_ineq=problem.A_ineq,
                           b_ineq=problem.b_ineq, A_eq=problem.A_eq,
                           b_eq=problem.b_eq, var_names=problem.var_names)
    mask = market.trade_reg_mask(problem) if eps_reg else None
    sol = qp.solve(shifted, tol=tol, eps_reg=eps_reg, reg_mask=mask)
    if sol.status != qp.STATUS_OPTIMAL:
        raise market.MarketError(
            f"parameterized solve returned {sol.status!r}: {sol.message}")
    ms = market.extract_solution(scenario, idx, sol, eps_reg, kind="gne")
    market.verify_solution(scenario, ms, tol, eps_reg,
                           price_shift=dict(omega.items()))
    return _classify(scenario, omega, ms)


def _classify(scenario: Scenario, omega: OmegaVector,
              ms: MarketSolution) -> GneSample:
    recovered = {n: dict(row) for n, row in ms.zeta.items()}
    for (n, m), w in omega.items():
        recovered[n][m] += w

    violation = 0.0
    for (n, m), w in omega.items():
        slack = ms.q[m][n] + ms.q[n][m]
        violation = max(violation, abs(w * slack))
    is_gne = violation <= epsilon_comp(scenario)

    r = {}
    for n in scenario.neighbors(0):
        denom = recovered[0].get(n, 0.0)
        if denom > 1e-8:
            r[n] = recovered[n][0] / denom
    return GneSample(omega=omega, solution=ms, recovered_zeta=recovered,
                     is_gne=is_gne, violation=violation, r=r)


# -- omega enumeration strategies ----------------------------------------

@dataclass(frozen=True)
class GridStrategy:
    """Cartesian grid: each support direction takes values lo..hi step."""

    start: float = 0.0
    stop: float = 100.0
    step: float = 1.0
    support: object = SUPPORT_LOW_BUYS_HIGH

    def axis_values(self) -> np.ndarray:
        if self.step <= 0:
            raise ValueError("grid step must be positive")
        count = int(np.floor((self.stop - self.start) / self.step + 0.5)) + 1
        return self.start + self.step * np.arange(count)

    def count(self, k: int) -> int:
        return len(self.axis_values()) ** k

    def generate(self, support: tuple) -> Iterator[tuple]:
        vals = self.axis_values()
        grids = np.meshgrid(*([vals] * len(support)), indexing="ij")
        stacked = np.stack([g.ravel() for g in grids], axis=1)
        return iter(stacked)


@dataclass(frozen=True)
class AxisStrategy:
    """Cartesian product of an explicit value list on every direction."""

    values: Sequence
    support: object = SUPPORT_LOW_BUYS_HIGH

    def count(self, k: int) -> int:
        return len(self.values) ** k

    def generate(self, support: tuple) -> Iterator[tuple]:
        vals = np.asarray(list(self.values), dtype=float)
        grids = np.meshgrid(*([vals] * len(support)), indexing="ij")
        return iter(np.stack([g.ravel() for g in grids], axis=1))


@dataclass(frozen=True)
class RandomStrategy:
    """Uniform draws over [lo, hi] per direction, reproducible by seed."""

    count_: int
    low: float = 0.0
    high: float = 100.0
    seed: int = 0
    support: object = SUPPORT_LOW_BUYS_HIGH

    def count(self, k: int) -> int:
        return self.count_

    def generate(self, support: tuple) -> Iterator[tuple]:
        if self.count_ <= 0:
            raise ValueError("random strategy needs a positive sample count")
        rng = np.random.default_rng(self.seed)
        return iter(rng.uniform(self.low, self.high,
                                size=(self.count_, len(support))))


def sweep_gne(scenario: Scenario, strategy, keep_all: bool = False,
              budget: int = 10**6, tol: float = market.DEFAULT_TOL,
              eps_reg: float = 0.0, batch_size: int = 1024) -> list:
    """Run an omega enumeration and collect the distinct equilibria.

    Evaluation order is deterministic (lexicographic for grids, seeded
    for random draws).  Samples failing the equilibrium filter are
    dropped unless ``keep_all``; surviving duplicates, i.e. omega points
    mapping to the same primal solution after rounding (D, G, q) to
    1e-4, are collapsed to their first occurrence.
    """
    support = default_support(scenario, strategy.support)
    k = len(support)
    total = strategy.count(k)
    if total > budget:
        raise ValueError(
            f"sweep would evaluate {total} points, over the budget of {budget}; "
            "raise the budget explicitly if this is intended")

    problem, idx = market.assemble(scenario)
    mask = market.trade_reg_mask(problem) if eps_reg else None
    omega_cols = []
    for (n, m) in support:
        if (m, n) not in idx.qpos:
            raise ValueError(f"support pair ({n}, {m}) has no link")
        omega_cols.append(idx.qpos[(m, n)])
    omega_cols = np.array(omega_cols, dtype=int)

    pairs = sorted(scenario.links)
    pair_cols = np.array([[idx.qpos[(lo, hi)], idx.qpos[(hi, lo)]]
                          for lo, hi in pairs], dtype=int)
    support_pair_index = np.array(
        [pairs.index((n, m) if n < m else (m, n)) for (n, m) in support],
        dtype=int)
    eps = epsilon_comp(scenario)

    seen = set()
    out = []
    stream = strategy.generate(support)
    while True:
        chunk = list(_take(stream, batch_size))
        if not chunk:
            break
        W = np.asarray(chunk, dtype=float)   # (B, k)
        if W.size and W.min() < 0:
            raise ValueError("omega values must be nonnegative")
        R = np.tile(problem.r, (len(W), 1))
        R[:, omega_cols] += W
        batch = qp.solve_batch(problem, R, tol=tol, eps_reg=eps_reg,
                               reg_mask=mask)
        x = batch.x
        slack = x[:, pair_cols[:, 0]] + x[:, pair_cols[:, 1]]   # (B, n_pairs)
        viol = np.abs(W * slack[:, support_pair_index]).max(axis=1) if k else \
            np.zeros(len(W))
        ok_status = batch.status_code == 0
        good = ok_status & ((viol <= eps) | keep_all)

        for i in np.flatnonzero(good):
            key = np.round(x[i], 4).tobytes()
            if key in seen:
                continue
            seen.add(key)
            omega = OmegaVector({pair: W[i, j] for j, pair in enumerate(support)
                                 if W[i, j] != 0.0})
            shim = qp.QpSolution(
                x=x[i], mult_ineq=batch.mult_ineq[i], mult_eq=batch.mult_eq[i],
                objective=float(batch.objective[i]), status=batch.status(i),
                kkt_residuals={}, iterations=int(batch.iterations[i]),
                eps_reg=eps_reg)
            ms = market.extract_solution(scenario, idx, shim, eps_reg, kind="gne")
            sample = _classify(scenario, omega, ms)
            out.append(sample)
    return out


def _take(it: Iterator, count: int) -> Iterator:
    for _ in range(count):
        try:
            yield next(it)
        except StopIteration:
            return


def poa_bound(samples: Iterable, ve_sw: float) -> dict:
    """Price-of-Anarchy lower bound from a sample set.

    Returns ``{"poa_lower_bound", "worst_sample", "note"}``.  The bound
    is ``ve_sw`` over the smallest sampled equilibrium welfare; sampling
    can only miss worse equilibria, hence "lower bound".
    """
    valid = [s for s in samples if s.is_gne]
    if not valid:
        raise ValueError("no valid equilibrium samples to bound the PoA with")
    worst = min(valid, key=lambda s: s.sw)
    if worst.sw <= 0:
        return {"poa_lower_bound": None, "worst_sample": worst,
                "note": f"undefined: worst sampled welfare {worst.sw:.6g} "
                        "is nonpositive, ratio not meaningful"}
    return {"poa_lower_bound": ve_sw / worst.sw, "worst_sample": worst,
            "note": "lower bound; sampling may miss worse equilibria"}


# -- per-agent equilibrium verification ----------------------------------

@dataclass(frozen=True)
class AgentKktReport:
    """Best agent-local multipliers for one node and the residuals left.

    ``stationarity`` is the max gradient row residual after fitting the
    multipliers, ``feasibility`` the worst violation of the agent's own
    constraints, ``complementarity`` the worst multiplier*slack product.
    """

    node: int
    stationarity: float
    feasibility: float
    complementarity: float
    lam: float
    mu_lo: float
    mu_hi: float
    nu_lo: float
    nu_hi: float
    xi: dict
    zeta: dict

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)


def check_agent_kkt(scenario: Scenario, candidate: MarketSolution,
                    node: int, active_tol: float = 1e-5,
                    ridge: float = 1e-4) -> AgentKktReport:
    """Check whether ``node`` is best-responding in the candidate point.

    Fixing everyone else's trades, the agent's problem is a small QP; the
    candidate is a best response iff multipliers exist that zero out its
    KKT system.  Multipliers of constraints that are slack at the
    candidate are pinned to zero, the rest are fitted by nonnegative
    least squares.  ``ridge`` lightly penalizes the congestion
    multipliers so that when a trade is simultaneously at capacity and
    reciprocity-tight, the explanation defaults to the trade price.
    """
    p = scenario.prosumer(node)
    neigh = scenario.neighbors(node)
    D, G = candidate.D[node], candidate.G[node]

    # Own-constraint slacks (negative = violated).
    slacks = {
        "mu_lo": D - p.d_min,
        "mu_hi": p.d_max - D,
        "nu_lo": G - p.g_min,
        "nu_hi": p.g_max - G,
    }
    for m in neigh:
        slacks[("xi", m)] = scenario.kappa(node, m) - candidate.q[m][node]
        slacks[("zeta", m)] = -(candidate.q[m][node] + candidate.q[node][m])
    balance = D - G - p.delta_g - sum(candidate.q[m][node] for m in neigh)
    feasibility = max([abs(balance)] + [max(-s, 0.0) for s in slacks.values()])

    scale = 1.0 + max([abs(D), abs(G)] + [abs(candidate.q[m][node]) for m in neigh],
                      default=0.0)
    act = active_tol * scale
    active = {k: s <= act for k, s in slacks.items()}

    # Columns: lam+ , lam-, then each active multiplier.
    cols = ["lam+", "lam-"] + [k for k, on in active.items() if on]
    col_of = {c: i for i, c in enumerate(cols)}
    rows = []
    rhs = []

    def add_row(entries, b):
        row = np.zeros(len(cols))
        for cname, v in entries:
            if cname in col_of:
                row[col_of[cname]] = v
        rows.append(row)
        rhs.append(b)

    # d/dD: 2a~(D - D*) + lam - mu_lo + mu_hi = 0
    add_row([("lam+", 1.0), ("lam-", -1.0), ("mu_lo", -1.0), ("mu_hi", 1.0)],
            -2.0 * p.a_tilde * (D - p.d_star))
    # d/dG: a G + b - lam - nu_lo + nu_hi = 0
    add_row([("lam+", -1.0), ("lam-", 1.0), ("nu_lo", -1.0), ("nu_hi", 1.0)],
            -(p.a * G + p.b))
    # d/dq[m][node]: c + xi + zeta - lam = 0
    for m in neigh:
        add_row([("lam+", -1.0), ("lam-", 1.0), (("xi", m), 1.0),
                 (("zeta", m), 1.0)], -scenario.c(node, m))
    # Ridge rows nudging congestion multipliers toward zero.
    for m in neigh:
        if (("xi", m)) in col_of:
            add_row([(("xi", m), np.sqrt(ridge))], 0.0)

    A = np.array(rows)
    b = np.array(rhs)
    coef, _ = scipy.optimize.nnls(A, b)

    n_stat = 2 + len(neigh)
    stationarity = float(np.abs(A[:n_stat] @ coef - b[:n_stat]).max())

    def val(cname):
        return float(coef[col_of[cname]]) if cname in col_of else 0.0

    lam = val("lam+") - val("lam-")
    xi = {m: val(("xi", m)) for m in neigh}
    zeta = {m: val(("zeta", m)) for m in neigh}
    mults = {"mu_lo": val("mu_lo"), "mu_hi": val("mu_hi"),
             "nu_lo": val("nu_lo"), "nu_hi": val("nu_hi")}
    comp = 0.0
    for key, s in slacks.items():
        m_val = val(key) if key in col_of else 0.0
        comp = max(comp, abs(m_val * s))
    return AgentKktReport(node=node, stationarity=stationarity,
                          feasibility=feasibility, complementarity=comp,
                          lam=lam, xi=xi, zeta=zeta, **mults)


# -- exports --------------------------------------------------------------

def samples_to_csv(samples: Sequence, scenario: Scenario,
                   support: Optional[tuple] = None) -> str:
    """One row per sample: omega coordinates, welfare, filter, trades."""
    if support is None:
        seen = sorted({pair for s in samples for pair in s.omega.support})
        support = tuple(seen)
    dpairs = list(scenario.directed_pairs())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"omega[{n}][{m}]" for (n, m) in support]
               + ["sw", "is_gne", "violation"]
               + [f"q[{m}][{n}]" for (m, n) in dpairs])
    for s in samples:
        w.writerow([s.omega.get(pair) for pair in support]
                   + [s.sw, int(s.is_gne), s.violation]
                   + [s.solution.q[m][n] for (m, n) in dpairs])
    return buf.getvalue()


def point_cloud_csv(samples: Sequence) -> str:
    """(q[0][1], q[1][2], q[2][0]) triples for 3-node equilibrium clouds."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["q01", "q12", "q20"])
    for s in samples:
        try:
            w.writerow([s.solution.q[0][1], s.solution.q[1][2],
                        s.solution.q[2][0]])
        except KeyError:
            raise ValueError("point cloud needs the 3-node ring topology "
                             "(links 0-1, 1-2, 0-2)") from None
    return buf.getvalue()
