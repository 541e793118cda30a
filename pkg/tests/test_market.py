"""Centralized welfare optimum: prices, identities, reporting."""

import json
import math

import numpy as np
import pytest

from generators import random_scenario
from peertrade import market, scenario as sc
from peertrade.scenario import ProsumerParams, Scenario, TradeLink

# exact optimum of the 3-node benchmark, derived by hand from the KKT
# system (rational arithmetic): lambda = (233, 255, 244)/11
LAM_EXACT = {0: 233.0 / 11.0, 1: 255.0 / 11.0, 2: 244.0 / 11.0}
SW_EXACT = 19842.0 / 55.0


@pytest.fixture(scope="module")
def three_node():
    return sc.builtin("three_node")


@pytest.fixture(scope="module")
def solved(three_node):
    return market.solve_centralized(three_node)


def test_three_node_prices_exact(solved):
    for n, lam in LAM_EXACT.items():
        assert solved.lam[n] == pytest.approx(lam, abs=1e-9)
    assert solved.lam[1] - solved.lam[0] == pytest.approx(2.0, abs=1e-9)
    assert solved.lam[2] - solved.lam[0] == pytest.approx(1.0, abs=1e-9)


def test_three_node_welfare_exact(solved):
    assert solved.sw == pytest.approx(SW_EXACT, rel=1e-10)


def test_three_node_congested_link(solved, three_node):
    # node 1 buys the full line capacity from node 2
    assert solved.q[2][1] == pytest.approx(5.0, abs=1e-9)
    assert solved.q[2][1] == pytest.approx(three_node.kappa(1, 2))
    assert solved.xi[1][2] > 1e-6
    assert solved.xi[2][1] == pytest.approx(0.0, abs=1e-9)


def test_three_node_no_waste(solved):
    assert solved.waste_total == pytest.approx(0.0, abs=1e-9)
    assert all(w == pytest.approx(0.0, abs=1e-9)
               for w in solved.waste.values())


def test_balance_identity(solved, three_node):
    for n in three_node.node_ids:
        p = three_node.prosumer(n)
        bal = solved.D[n] - solved.G[n] - solved.Q[n]
        assert bal == pytest.approx(p.delta_g, abs=1e-8)
    assert sum(solved.Q.values()) == pytest.approx(0.0, abs=1e-8)


def test_zeta_symmetric_in_centralized(solved, three_node):
    for lo, hi in three_node.links:
        assert solved.zeta[lo][hi] == pytest.approx(solved.zeta[hi][lo],
                                                    abs=1e-12)


def test_active_link_price_identity(solved, three_node):
    # lambda_n = c_nm + xi_nm + zeta_nm wherever the pair trades
    for n in three_node.node_ids:
        for m in three_node.neighbors(n):
            if abs(solved.q[m][n]) < 1e-7 and abs(solved.q[n][m]) < 1e-7:
                continue
            lhs = (three_node.c(n, m) + solved.xi[n][m] + solved.zeta[n][m])
            assert lhs == pytest.approx(solved.lam[n], abs=1e-6)


def test_social_welfare_recomputes_objective(solved, three_node):
    sw = market.social_welfare(three_node, solved.D, solved.G, solved.q)
    assert sw == pytest.approx(solved.sw, abs=1e-8)
    with pytest.raises(ValueError, match="missing entry"):
        market.social_welfare(three_node, {}, solved.G, solved.q)


def test_closed_form_prices_match_solver(solved, three_node):
    lam_hat, deviation = market.nodal_price_closed_form(three_node, solved)
    assert deviation < 1e-6
    assert lam_hat[0] == pytest.approx(LAM_EXACT[0], abs=1e-6)


def test_closed_form_requires_root_adjacency(three_node):
    chain = Scenario(
        name="chain", units="MWh",
        prosumers=[three_node.prosumer(n) for n in three_node.node_ids],
        links=[l for l in three_node.links.values() if l.pair != (0, 2)])
    sol = market.solve_centralized(chain)
    with pytest.raises(market.MarketError, match="adjacent to the root"):
        market.nodal_price_closed_form(chain, sol)


def test_kind_tag_and_ve(three_node):
    ve = market.solve_centralized(three_node, kind="ve")
    assert ve.kind == "ve"
    cen = market.solve_centralized(three_node)
    assert cen.kind == "centralized"
    assert ve.sw == pytest.approx(cen.sw, rel=1e-10)


def test_identical_nodes_get_identical_prices():
    twin = dict(d_min=0.0, d_max=8.0, g_min=0.0, g_max=0.0, d_star=4.0,
                a_tilde=6.0, b_tilde=120.0, a=0.5, b=2.0, d=0.0, delta_g=2.0)
    scn = Scenario(
        name="twins", units="MWh",
        prosumers=[ProsumerParams(id=0, d_min=0.0, d_max=10.0, g_min=0.0,
                                  g_max=10.0, d_star=5.0, a_tilde=4.0,
                                  b_tilde=120.0, a=1.0, b=3.0, d=0.0,
                                  delta_g=0.0),
                   ProsumerParams(id=1, **twin), ProsumerParams(id=2, **twin)],
        links=[TradeLink(n=0, m=1, kappa=6.0, c_nm=1.0, c_mn=1.5),
               TradeLink(n=0, m=2, kappa=6.0, c_nm=1.0, c_mn=1.5)])
    sol = market.solve_centralized(scn)
    assert sol.lam[1] == pytest.approx(sol.lam[2], abs=1e-7)
    assert sol.D[1] == pytest.approx(sol.D[2], abs=1e-6)


def test_waste_appears_when_dumping_is_cheapest():
    # node 1 drowns in infeed it can neither consume nor profitably send:
    # the optimum burns energy on the line instead
    scn = Scenario(
        name="dump", units="MWh",
        prosumers=[ProsumerParams(id=0, d_min=0.0, d_max=3.0, g_min=0.0,
                                  g_max=0.0, d_star=1.0, a_tilde=8.0,
                                  b_tilde=30.0, a=1.0, b=5.0, d=0.0,
                                  delta_g=0.0),
                   ProsumerParams(id=1, d_min=0.0, d_max=3.0, g_min=0.0,
                                  g_max=0.0, d_star=1.0, a_tilde=8.0,
                                  b_tilde=30.0, a=1.0, b=5.0, d=0.0,
                                  delta_g=20.0)],
        links=[TradeLink(n=0, m=1, kappa=50.0, c_nm=20.0, c_mn=20.0)])
    sol = market.solve_centralized(scn)
    assert sol.waste_total > 1.0
    assert sol.waste[(0, 1)] == pytest.approx(sol.waste_total)
    # waste is the negative reciprocity slack
    assert sol.waste[(0, 1)] == pytest.approx(-(sol.q[0][1] + sol.q[1][0]),
                                              abs=1e-8)


def test_infeasible_scenario_raises_with_attribution():
    scn = Scenario(
        name="starved", units="MWh",
        prosumers=[ProsumerParams(id=0, d_min=0.0, d_max=5.0, g_min=0.0,
                                  g_max=2.0, d_star=1.0, a_tilde=5.0,
                                  b_tilde=10.0, a=4.0, b=30.0, d=10.0,
                                  delta_g=0.0),
                   ProsumerParams(id=1, d_min=8.0, d_max=10.0, g_min=0.0,
                                  g_max=0.0, d_star=9.0, a_tilde=15.0,
                                  b_tilde=135.0, a=0.01, b=0.01, d=0.1,
                                  delta_g=0.0)],
        links=[TradeLink(n=0, m=1, kappa=1.0, c_nm=1.0, c_mn=1.0)])
    with pytest.raises(market.InfeasibleMarketError, match="no feasible"):
        market.solve_centralized(scn)


def test_invalid_scenario_rejected_before_solving():
    scn = Scenario(
        name="broken", units="MWh",
        prosumers=[ProsumerParams(id=0, d_min=0.0, d_max=5.0, g_min=0.0,
                                  g_max=2.0, d_star=1.0, a_tilde=-5.0,
                                  b_tilde=10.0, a=4.0, b=30.0, d=10.0,
                                  delta_g=0.0)],
        links=[])
    with pytest.raises(ValueError, match="invalid"):
        market.solve_centralized(scn)


def test_regularization_echoed_and_stable():
    scn = sc.ieee14_cost_case("a")
    s1 = market.solve_centralized(scn, eps_reg=1e-7)
    s2 = market.solve_centralized(scn, eps_reg=1e-7)
    assert s1.eps_reg == 1e-7
    for lo, hi in scn.links:
        assert s1.q[lo][hi] == s2.q[lo][hi]


def test_report_dict_json_csv(solved):
    d = market.solution_to_dict(solved)
    assert d["sw"] == pytest.approx(SW_EXACT, rel=1e-10)
    assert d["decisions"]["q"]["2->1"] == pytest.approx(5.0)
    assert d["kind"] == "centralized"
    assert "residuals" in d

    text = market.solution_to_json(solved)
    assert json.loads(text) == d

    csv_text = market.solution_to_csv(solved)
    header = csv_text.splitlines()[0].split(",")
    assert "lambda" in header and "node" in header


def test_random_scenarios_roundtrip_welfare():
    rng = np.random.default_rng(7)
    for _ in range(10):
        scn = random_scenario(rng)
        sol = market.solve_centralized(scn)
        sw = market.social_welfare(scn, sol.D, sol.G, sol.q)
        assert sw == pytest.approx(sol.sw, abs=1e-7 * (1 + abs(sol.sw)))
        assert sol.kkt_residuals["stationarity"] <= 1e-6
