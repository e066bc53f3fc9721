import math

import pytest

from storemkt.config import load_setup
from storemkt.deadlines import make_rng
from storemkt.dispatch import (
    GridTooLarge,
    InfeasibleModel,
    SolverConfig,
    beta_bar,
    brute_force_oracle,
    conditional_beta,
    default_caps,
    estimate_lipschitz_K,
    grid_levels,
    q_star_minus,
    quantize_up,
    solve_outer,
)
from storemkt.mdp import MdpModel, StateSpace, solve_dp
from storemkt.presets import preset_config
from storemkt.scenarios import random_floored_pmf, random_small_instance, random_tiny_instance

# gen rates dotted with demand, in dollars (rates are $/MWh, energies kWh)
TABLE1_BASELINE_DISPATCH_COST = 6.48500773624
TABLE1_NO_EV_Q = 6.71367001309
TABLE1_ONE_EV_Q = -3.1621319869100004
EXAMPLE1_K_HAT = 28.284271247461902


def setup_for(preset: str):
    return load_setup(preset_config(preset))


def test_quantize_up():
    assert quantize_up(0.1, 10.0) == 10.0
    assert quantize_up(10.0, 10.0) == 10.0
    assert quantize_up(73.9188, 10.0) == 80.0
    assert quantize_up(-5.0, 10.0) == 0.0
    assert quantize_up(0.0, 10.0) == 0.0
    # rounding guard: a hair over a multiple stays on it
    assert quantize_up(20.0 + 1e-12, 10.0) == 20.0


def test_default_caps_and_grid_levels():
    s = setup_for("table1:n=1")
    caps = default_caps(s.market, s.specs, 10.0)
    assert caps == (50.0, 50.0, 70.0, 90.0, 70.0)
    levels = grid_levels(s.market, s.specs, SolverConfig(step=10.0))
    assert [len(l) for l in levels] == [6, 6, 8, 10, 8]
    assert levels[0][:3] == [0.0, 10.0, 20.0]


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(step=0.0)
    with pytest.raises(ValueError):
        SolverConfig(mode="annealing")
    with pytest.raises(ValueError):
        SolverConfig(beam_width=0)


def test_beta_bar_frozen_values():
    s = setup_for("example1:p=0.19")
    assert beta_bar(s.params, (1.0, 0.0), s.market, s.specs) == pytest.approx(
        1.9, abs=1e-12
    )
    assert beta_bar(s.params, (0.0, 1.0), s.market, s.specs) == pytest.approx(
        2.0, abs=1e-12
    )
    t = setup_for("table1:n=0")
    assert beta_bar((), t.market.demand, t.market, ()) == pytest.approx(
        TABLE1_BASELINE_DISPATCH_COST, abs=1e-9
    )


def test_threshold_sweep_and_flip():
    for p in (0.05, 0.12, 0.19, 0.2, 0.25, 0.31):
        s = setup_for(f"example1:p={p}")
        res = solve_outer(s.params, s.solver, s.market, s.specs)
        assert res.q_star == pytest.approx(min(2.0, 10.0 * p), abs=1e-9)
        assert res.candidates_evaluated == 2
        # ties go to the lexicographically smaller plan, so the flip
        # lands exactly on p = 0.2
        expected = (1.0, 0.0) if p < 0.2 else (0.0, 1.0)
        assert res.g_star == expected


def test_table1_frozen_solutions():
    t0 = setup_for("table1:n=0")
    r0 = solve_outer(t0.params, t0.solver, t0.market, t0.specs)
    assert r0.q_star == pytest.approx(TABLE1_NO_EV_Q, abs=1e-9)
    assert r0.g_star == (30.0, 30.0, 50.0, 0.0, 50.0)
    t1 = setup_for("table1:n=1")
    r1 = solve_outer(t1.params, t1.solver, t1.market, t1.specs)
    assert r1.q_star == pytest.approx(TABLE1_ONE_EV_Q, abs=1e-9)
    assert r1.g_star == (40.0, 30.0, 50.0, 0.0, 50.0)


def test_q_star_minus():
    s = setup_for("example1:p=0.19")
    assert q_star_minus(s.params, 0, s.solver, s.market, s.specs) == pytest.approx(
        2.0, abs=1e-12
    )
    with pytest.raises(IndexError):
        q_star_minus(s.params, 1, s.solver, s.market, s.specs)


def test_grid_too_large_suggests_beam():
    t = setup_for("table1:n=0")
    tight = SolverConfig(step=10.0, max_candidates=100)
    with pytest.raises(GridTooLarge, match="beam"):
        solve_outer(t.params, tight, t.market, t.specs)


def test_beam_matches_exhaustive_when_wide():
    rng = make_rng(47)
    for _ in range(3):
        market, specs, bids, config, _ = random_small_instance(rng)
        exact = solve_outer(bids, config, market, specs)
        wide = SolverConfig(step=10.0, mode="beam", beam_width=1000)
        res = solve_outer(bids, wide, market, specs)
        assert res.q_star == pytest.approx(exact.q_star, abs=1e-9)
        narrow = SolverConfig(step=10.0, mode="beam", beam_width=1)
        res1 = solve_outer(bids, narrow, market, specs)
        assert res1.q_star >= exact.q_star - 1e-9


def test_conditional_beta_toy_values():
    s = setup_for("example1:p=0.19")
    model = MdpModel(s.market, s.specs, s.params, (1.0, 0.0))
    _, policy = solve_dp(model)
    assert conditional_beta(model, policy, 0, 1) == pytest.approx(10.0, abs=1e-12)
    assert conditional_beta(model, policy, 0, 2) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(IndexError):
        conditional_beta(model, policy, 1, 1)
    with pytest.raises(ValueError):
        conditional_beta(model, policy, 0, 3)


def test_conditional_beta_total_expectation():
    # averaging the conditional costs over the bid recovers the
    # unconditional optimum
    rng = make_rng(31)
    for _ in range(4):
        market, specs, bids, config, _ = random_small_instance(rng)
        res = solve_outer(bids, config, market, specs)
        model = MdpModel(market, specs, bids, res.g_star)
        space = StateSpace(specs, bids)
        for i in range(len(specs)):
            total = sum(
                bids[i].pmf[t - 1] * conditional_beta(model, res.policy, i, t, space)
                for t in range(1, market.horizon + 1)
                if bids[i].pmf[t - 1] > 0.0
            )
            assert total == pytest.approx(res.q_star, abs=1e-9)


def test_lipschitz_estimate_frozen_and_monotone():
    s = setup_for("example1:p=0.19")
    k1 = estimate_lipschitz_K([s.params], 1, s.solver, s.market, s.specs)
    assert k1 == pytest.approx(EXAMPLE1_K_HAT, abs=1e-12)

    def sampler(rng):
        return tuple(
            type(s.params[0])(random_floored_pmf(rng, 2, 0.02), floor=0.02)
            for _ in s.specs
        )

    a = estimate_lipschitz_K(sampler, 1, s.solver, s.market, s.specs, make_rng(7))
    b = estimate_lipschitz_K(sampler, 4, s.solver, s.market, s.specs, make_rng(7))
    assert b >= a  # running max over a replayed stream
    with pytest.raises(ValueError):
        estimate_lipschitz_K(sampler, 1, s.solver, s.market, s.specs)
    with pytest.raises(ValueError):
        estimate_lipschitz_K([s.params], 0, s.solver, s.market, s.specs)


def test_infeasible_when_every_candidate_fails():
    s = setup_for("example1:p=0.19")
    # without the EV, generating early strands a unit the reserve table
    # cannot absorb
    only_bad = SolverConfig(step=1.0, candidates=((1.0, 0.0),))
    with pytest.raises(InfeasibleModel):
        solve_outer((), only_bad, s.market, ())


def test_oracle_threshold_sweep():
    grid = ((1.0, 0.0), (0.0, 1.0))
    for p in (0.05, 0.19, 0.2, 0.31):
        s = setup_for(f"example1:p={p}")
        got = brute_force_oracle(s.params, s.market, s.specs, grid)
        assert got == pytest.approx(min(2.0, 10.0 * p), abs=1e-9)


def test_oracle_agrees_with_solver_on_random_instances():
    rng = make_rng(17)
    for _ in range(5):
        bids, market, specs, grid = random_tiny_instance(rng)
        res = solve_outer(bids, SolverConfig(step=10.0, candidates=grid), market, specs)
        got = brute_force_oracle(bids, market, specs, grid)
        assert abs(res.q_star - got) <= 1e-9


def test_oracle_rejects_oversized_instances():
    s = setup_for("table1:n=1")
    with pytest.raises(ValueError, match="too large"):
        brute_force_oracle(s.params, s.market, s.specs, ((0.0,) * 5,))


def test_extra_storage_never_hurts():
    # an idle EV is always available, so enlarging the fleet cannot raise
    # the optimum
    rng = make_rng(61)
    checked = 0
    while checked < 4:
        market, specs, bids, config, _ = random_small_instance(rng)
        full = solve_outer(bids, config, market, specs).q_star
        fewer = solve_outer(bids[:-1], config, market, specs[:-1]).q_star
        assert full <= fewer + 1e-9
        checked += 1


def test_two_stage_consistency():
    rng = make_rng(73)
    for _ in range(3):
        market, specs, bids, config, _ = random_small_instance(rng)
        res = solve_outer(bids, config, market, specs)
        again = beta_bar(bids, res.g_star, market, specs)
        assert again == pytest.approx(res.q_star, abs=1e-9)
        assert math.isfinite(res.q_star)


def test_solve_result_export_shape():
    s = setup_for("example1:p=0.19")
    res = solve_outer(s.params, s.solver, s.market, s.specs)
    payload = res.to_jsonable()
    assert payload["g_star"] == [1.0, 0.0]
    assert payload["q_star"] == pytest.approx(1.9)
    assert payload["candidates_evaluated"] == 2
    assert "values" in payload and "policy" in payload
