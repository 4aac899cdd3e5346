import math

import numpy as np
import pytest

from jumpbsde import (
    A_process,
    optimal_strategy,
    solve_quadratic,
    value_function,
    verify_optimality,
)
from jumpbsde.errors import AdmissibilityError, ParameterError, ShapeError
from jumpbsde.lattice import build
from jumpbsde.utility import (
    constant_strategy,
    random_strategies,
    validate_strategy,
    wealth_on_tree,
)

from conftest import make_market


def test_value_function_examples():
    assert value_function(0.0, 1.0, 1.0) == pytest.approx(-math.exp(-1.0))
    assert value_function(0.0, 2.0, 1.0) > value_function(0.0, 1.0, 1.0)
    assert value_function(0.5, 1.0, 1.0) < value_function(0.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        value_function(0.0, 1.0, 0.0)
    with pytest.raises(ParameterError):
        value_function(1000.0, 0.0, 1.0)


def test_optimal_strategy_degenerate_zero():
    mkt = make_market(b=0.0, lo=-1.0, hi=1.0)
    lat = build(4, mkt.grid, 1.0)
    sol, _ = solve_quadratic(lat, mkt, np.zeros(lat.slice_size(4)))
    tables = optimal_strategy(sol, mkt, lat)
    for tab in tables:
        assert np.max(np.abs(tab)) <= 1e-7


def test_optimal_strategy_merton_and_clipped():
    for lo, hi, expect in ((-2.0, 2.0, 0.2), (0.0, 0.1, 0.1)):
        mkt = make_market(b=0.2, lo=lo, hi=hi)
        lat = build(6, mkt.grid, 1.0)
        sol, _ = solve_quadratic(lat, mkt, np.zeros(lat.slice_size(6)))
        tables = optimal_strategy(sol, mkt, lat)
        for tab in tables:
            assert np.allclose(tab, expect, atol=1e-4)


def test_a_process_signs(jump_market):
    lat = build(4, jump_market.grid, 1.0)
    rng = np.random.default_rng(0)
    b_bar = rng.uniform(-0.1, 0.1, lat.slice_size(4))
    sol, _ = solve_quadratic(lat, jump_market, b_bar)
    pi_star = optimal_strategy(sol, jump_market, lat)

    incs = A_process(pi_star, sol, jump_market, lat)
    assert max(float(np.max(np.abs(a))) for a in incs) <= 1e-6

    for tables in random_strategies(lat, jump_market, 5, 123):
        incs = A_process(tables, sol, jump_market, lat)
        assert min(float(np.min(a)) for a in incs) >= -1e-9

    shifted = [np.clip(t + 0.05, 0.0, 1.0) for t in pi_star]
    incs = A_process(shifted, sol, jump_market, lat)
    assert max(float(np.max(a)) for a in incs) > 1e-7


def test_strategy_validation(jump_market):
    lat = build(3, jump_market.grid, 1.0)
    with pytest.raises(ShapeError):
        validate_strategy([np.zeros(1)], lat, jump_market)
    bad = [np.full(lat.slice_size(i), 2.0) for i in range(3)]
    with pytest.raises(AdmissibilityError):
        validate_strategy(bad, lat, jump_market)
    with pytest.raises(AdmissibilityError):
        constant_strategy(5.0, lat, jump_market)


def test_wealth_on_tree_matches_manual(jump_market):
    lat = build(2, jump_market.grid, 1.0)
    tables = constant_strategy(0.5, lat, jump_market)
    wealth = wealth_on_tree(jump_market, lat, 1.0, tables)
    # manual: X1 = 1 + 0.5 * (b dt + sigma dW + beta 1_jump - dt w beta)
    inc = (jump_market.b(0.0) * lat.dt + jump_market.sigma(0.0) * lat.branch_dw
           - lat.dt * jump_market.grid.w[0] * 0.1
           + np.where(lat.branch_jump == 0, 0.1, 0.0))
    assert np.allclose(wealth[1], 1.0 + 0.5 * inc, atol=1e-15)


def test_verify_optimality_degenerate_market():
    # theta = 0 and zero liability: pi* = 0 and V(x) = -exp(-alpha x) exactly
    mkt = make_market(b=0.0, lo=-1.0, hi=1.0)
    lat = build(5, mkt.grid, 1.0)
    sol, _ = solve_quadratic(lat, mkt, np.zeros(lat.slice_size(5)))
    pi_star = optimal_strategy(sol, mkt, lat)
    report = verify_optimality(mkt, lat, sol, 1.0, {"optimal": pi_star},
                               paths=500, seed=9)
    assert report.V_formula == pytest.approx(-math.exp(-1.0))
    assert report.V_mc_estimate == pytest.approx(report.V_formula, abs=1e-9)
    assert report.A_max_abs_optimal <= 1e-9
    opt = report.per_strategy[0]
    assert opt.verdict == "ok"
    assert abs(opt.martingale_max_gap) <= 1e-9


def test_verify_optimality_theta_zero_jumps_supermartingale_exact():
    mkt = make_market(b=0.0, beta=[0.2], atoms=[0.5], weights=[0.8],
                      lo=-1.0, hi=1.0)
    lat = build(6, mkt.grid, 1.0)
    sol, _ = solve_quadratic(lat, mkt, np.zeros(lat.slice_size(6)))
    strategies = {"optimal": optimal_strategy(sol, mkt, lat)}
    for i, tabs in enumerate(random_strategies(lat, mkt, 10, 11)):
        strategies[f"random_{i}"] = tabs
    report = verify_optimality(mkt, lat, sol, 1.0, strategies, paths=400, seed=3)
    assert report.supermartingale_worst_gap >= -1e-9
    assert not report.multi_step_violations
    assert report.wealth_bound_ok


def test_verify_optimality_envelope_covers_gap(merton_market):
    lat = build(8, merton_market.grid, 1.0)
    sol, _ = solve_quadratic(lat, merton_market, np.zeros(lat.slice_size(8)))
    strategies = {"optimal": optimal_strategy(sol, merton_market, lat)}
    for i, tabs in enumerate(random_strategies(lat, merton_market, 5, 21)):
        strategies[f"random_{i}"] = tabs
    report = verify_optimality(merton_market, lat, sol, 1.0, strategies,
                               paths=200, seed=5)
    # one-step defects exist at theta != 0 but stay inside the dt^2 envelope
    assert report.supermartingale_worst_gap >= -report.supermartingale_envelope
    for entry in report.per_strategy:
        assert entry.verdict == "ok"
        assert entry.a_min_increment >= -1e-9


def test_verify_optimality_errors(merton_market):
    lat = build(4, merton_market.grid, 1.0)
    sol, _ = solve_quadratic(lat, merton_market, np.zeros(lat.slice_size(4)))
    tables = constant_strategy(0.2, lat, merton_market)
    with pytest.raises(ParameterError):
        verify_optimality(merton_market, lat, sol, 1.0, {"optimal": tables},
                          paths=1, seed=0)
    bad = [np.full(lat.slice_size(i), 3.0) for i in range(4)]
    with pytest.raises(AdmissibilityError):
        verify_optimality(merton_market, lat, sol, 1.0, {"bad": bad},
                          paths=10, seed=0)
