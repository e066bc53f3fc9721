import json
import math

import numpy as np
import pytest

from storemkt.costs import MarketModel, asym_lin_quad, linear, table
from storemkt.deadlines import DeadlineDistribution, make_rng
from storemkt.mdp import (
    EVSpec,
    MdpModel,
    NoFeasibleContinuation,
    StateSpace,
    UnreachableStateError,
    beta,
    enumerated_outcome,
    expected_outcome,
    feasible_actions,
    monte_carlo_outcome,
    policy_artifact,
    rollout,
    solve_dp,
    stage_cost,
    terminal_cost,
    transition_prob,
)
from storemkt.scenarios import random_small_instance

UNIFORM5 = DeadlineDistribution((0.2,) * 5)


def two_slot_market():
    return MarketModel(
        demand=(0.0, 1.0),
        generator=table([{0.0: 0.0, 1.0: 0.0}, {0.0: 0.0, 1.0: 2.0}]),
        reserves=table([{0.0: 0.0}, {0.0: 0.0, 1.0: 11.0}]),
        ev_energy_value=1.0,
    )


def two_slot_model(p: float, dispatch):
    return MdpModel(
        two_slot_market(),
        (EVSpec(1.0, (0.0, 1.0)),),
        (DeadlineDistribution((p, 1.0 - p)),),
        dispatch,
    )


def test_ev_spec_validation():
    EVSpec(10.0, (0.0, 10.0))
    with pytest.raises(ValueError):
        EVSpec(10.0, (10.0, 0.0))
    with pytest.raises(ValueError):
        EVSpec(10.0, (0.0, 20.0))
    with pytest.raises(ValueError):
        EVSpec(10.0, (0.0, 5.0, 5.0))


def test_feasible_actions_order():
    specs = (EVSpec(1.0, (0.0, 1.0)), EVSpec(1.0, (0.0, 1.0)))
    state = ((True, 0.0), (False, 1.0))
    acts = feasible_actions(specs, state)
    assert acts == [(0.0, 0.0), (1.0, 0.0)]
    # fully disconnected fleet freezes
    assert feasible_actions(specs, ((False, 0.0), (False, 1.0))) == [(0.0, 0.0)]


def test_stage_and_terminal_cost():
    m = two_slot_market()
    assert stage_cost(m, 2, 0.0, (0.0,)) == 11.0
    assert stage_cost(m, 2, 1.0, (0.0,)) == 0.0
    assert stage_cost(m, 1, 0.0, (1.0,)) == math.inf
    assert terminal_cost(m, ((False, 1.0), (True, 0.5))) == -1.5


def test_hazard_values_uniform_profile():
    params = (UNIFORM5,)
    connected = ((True, 0.0),)
    stay = ((True, 0.0),)
    leave = ((False, 0.0),)
    # slot 1: hazard 0.2 / 1.0
    assert transition_prob(params, 1, connected, (0.0,), leave) == pytest.approx(0.2)
    assert transition_prob(params, 1, connected, (0.0,), stay) == pytest.approx(0.8)
    # slot 3: hazard 0.2 / 0.6
    assert transition_prob(params, 3, connected, (0.0,), leave) == pytest.approx(1 / 3)
    # slot 5: certain departure
    assert transition_prob(params, 5, connected, (0.0,), leave) == pytest.approx(1.0)
    assert transition_prob(params, 5, connected, (0.0,), stay) == pytest.approx(0.0)
    # charge bookkeeping gates the move
    charged = ((True, 1.0),)
    assert transition_prob(params, 1, connected, (1.0,), charged) == pytest.approx(0.8)
    assert transition_prob(params, 1, connected, (1.0,), stay) == 0.0


def test_zero_survival_query_raises():
    first_only = (DeadlineDistribution((1.0, 0.0), floor=0.0),)
    with pytest.raises(UnreachableStateError):
        transition_prob(first_only, 2, ((True, 0.0),), (0.0,), ((True, 0.0),))


def test_disconnected_transitions_freeze():
    params = (UNIFORM5,)
    s = ((False, 1.0),)
    assert transition_prob(params, 2, s, (0.0,), ((False, 1.0),)) == 1.0
    assert transition_prob(params, 2, s, (0.0,), ((False, 0.0),)) == 0.0


def test_kernel_rows_are_stochastic():
    # rows where the state is reachable and the action feasible must carry
    # exactly one unit of probability; infeasible rows are zeroed instead
    rng = make_rng(11)
    for _ in range(5):
        market, specs, bids, _, _ = random_small_instance(rng)
        space = StateSpace(specs, bids)
        feas = space.feasibility()
        for slot in range(1, len(market.demand) + 1):
            valid = space.valid_mask(slot - 1)
            for a_idx in range(len(space.global_actions)):
                k = space.kernel(slot, a_idx)
                sums = k.sum(axis=1)
                rows = valid & feas[:, a_idx]
                assert np.all(np.abs(sums[rows] - 1.0) < 1e-9)
                assert np.all(sums[~feas[:, a_idx]] == 0.0)


def test_two_slot_value_is_ten_p():
    for p in (0.05, 0.19, 0.33):
        values, policy = solve_dp(two_slot_model(p, (1.0, 0.0)))
        assert values.v0() == pytest.approx(10.0 * p, abs=1e-12)
        # committed plan charges immediately
        assert policy.action(1, 0) == (1.0,)


def test_two_slot_alternative_plan_value():
    values, _ = solve_dp(two_slot_model(0.19, (0.0, 1.0)))
    assert values.v0() == pytest.approx(0.0, abs=1e-12)


def test_infeasible_initial_state_raises():
    # no EV to absorb the slot-1 surplus and the reserve table has no entry
    model = MdpModel(two_slot_market(), (), (), (1.0, 0.0))
    with pytest.raises(NoFeasibleContinuation):
        solve_dp(model)


def test_rollout_paths_and_departure_freeze():
    model = two_slot_model(0.19, (1.0, 0.0))
    _, policy = solve_dp(model)
    early = rollout(model, policy, (1,))
    assert early.storage.tolist() == [[1.0, 1.0]]
    assert early.terminal.tolist() == [1.0]
    assert early.mismatch.tolist() == [0.0, 1.0]
    assert early.reserve_cost == pytest.approx(11.0)
    late = rollout(model, policy, (2,))
    assert late.storage.tolist() == [[1.0, 0.0]]
    assert late.terminal.tolist() == [0.0]
    assert late.reserve_cost == pytest.approx(0.0)
    assert beta(model, policy, (1,)) == pytest.approx(10.0)
    assert beta(model, policy, (2,)) == pytest.approx(0.0)


def test_expected_outcome_matches_enumeration_and_dp():
    # forward propagation, explicit profile enumeration, and the DP value
    # are three independent routes to the same expectation
    rng = make_rng(23)
    for _ in range(6):
        market, specs, bids, _, _ = random_small_instance(rng)
        dispatch = tuple(float(round(d, 0)) for d in market.demand)
        model = MdpModel(market, specs, bids, dispatch)
        values, policy = solve_dp(model)
        space = StateSpace(specs, bids)
        fwd = expected_outcome(model, policy, space)
        enum = enumerated_outcome(model, policy, space)
        assert fwd.beta == pytest.approx(enum.beta, abs=1e-9)
        assert fwd.reserve_cost == pytest.approx(enum.reserve_cost, abs=1e-9)
        assert np.allclose(fwd.terminal_charge, enum.terminal_charge, atol=1e-9)
        assert fwd.beta == pytest.approx(
            market.generator_cost(dispatch) + values.v0(), abs=1e-9
        )


def test_monte_carlo_outcome_converges():
    model = two_slot_model(0.19, (1.0, 0.0))
    _, policy = solve_dp(model)
    est = monte_carlo_outcome(model, policy, 4000, make_rng(5))
    # E[beta] = 10 p = 1.9, sigma = 10 sqrt(p(1-p)) / sqrt(n)
    assert est.beta == pytest.approx(1.9, abs=5 * 10 * 0.392 / math.sqrt(4000))


def test_policy_artifact_round_trip():
    model = two_slot_model(0.19, (1.0, 0.0))
    values, policy = solve_dp(model)
    payload = json.loads(policy_artifact(values, policy))
    assert "values" in payload and "policy" in payload
    key = next(iter(payload["policy"]))
    assert "," in key  # "slot,state" keys


def test_policy_rejects_unknown_state():
    model = two_slot_model(0.19, (1.0, 0.0))
    _, policy = solve_dp(model)
    with pytest.raises(UnreachableStateError):
        policy.action(1, 10**6)


def test_state_space_encode_decode_round_trip():
    specs = (EVSpec(1.0, (0.0, 1.0)), EVSpec(2.0, (0.0, 1.0, 2.0)))
    bids = (UNIFORM5, UNIFORM5)
    space = StateSpace(specs, bids)
    assert space.initial == space.encode(((True, 0.0), (True, 0.0)))
    for s in range(space.n_states):
        assert space.encode(space.decode(s)) == s


def test_model_validation():
    with pytest.raises(ValueError):
        MdpModel(two_slot_market(), (EVSpec(1.0, (0.0, 1.0)),), (), (0.0, 1.0))
    with pytest.raises(ValueError):
        two_slot_model(0.19, (0.0,))
    with pytest.raises(ValueError):
        two_slot_model(0.19, (-1.0, 0.0))
