"""Finite-horizon storage MDP: state space, backward induction, rollouts.

The day has slots 1..T.  Each EV starts connected with an empty battery and
disconnects at most once; once disconnected its stored energy is frozen.
The joint state at the end of slot t collects, per EV, a connected flag and
a charge level drawn from that EV's admissible set.  Actions are per-EV
charge deltas applied during a slot; the slot's reserve mismatch is
``demand + sum(deltas) - dispatch``.

Connectivity evolves by the hazard implied by the EV's deadline
distribution: an EV still connected at the end of slot t-1 disconnects at
the end of slot t with probability pmf(t) / P(deadline >= t).  States whose
survival probability is exactly zero are unreachable; the solver assigns
them +inf and skips them, and explicit kernel queries on them raise.

Values are expected dollars to go.  The terminal layer credits stored
energy at the market's ``ev_energy_value``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .costs import MarketModel
from .deadlines import DeadlineDistribution

IDENTITY_TOL = 1e-9
#: refuse exhaustive deadline-profile enumeration beyond this many profiles
ENUMERATION_GUARD = 10_000_000


class UnreachableStateError(ValueError):
    """A kernel or policy query hit a zero-survival-probability state."""


class NoFeasibleContinuation(RuntimeError):
    """Some state has no action with finite cost at some slot."""


@dataclass(frozen=True)
class EVSpec:
    """Storage capability of one EV: capacity and admissible charge levels."""

    capacity: float
    levels: tuple[float, ...]

    def __post_init__(self) -> None:
        levels = tuple(float(h) for h in self.levels)
        if not levels or levels[0] != 0.0:
            raise ValueError("levels must start at 0")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if levels[-1] > self.capacity + 1e-12:
            raise ValueError("levels exceed capacity")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "capacity", float(self.capacity))


@dataclass(frozen=True)
class MdpModel:
    """One day-ahead problem instance: market, fleet, beliefs, dispatch."""

    market: MarketModel
    specs: tuple[EVSpec, ...]
    params: tuple[DeadlineDistribution, ...]
    dispatch: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "dispatch", tuple(float(g) for g in self.dispatch))
        if len(self.specs) != len(self.params):
            raise ValueError("one deadline distribution per EV is required")
        horizon = self.market.horizon
        if len(self.dispatch) != horizon:
            raise ValueError("dispatch length does not match horizon")
        if any(g < 0 for g in self.dispatch):
            raise ValueError("dispatch must be nonnegative")
        for k, dist in enumerate(self.params):
            if dist.horizon != horizon:
                raise ValueError(f"params[{k}] horizon {dist.horizon} != {horizon}")

    @property
    def horizon(self) -> int:
        return self.market.horizon

    @property
    def n_evs(self) -> int:
        return len(self.specs)


def feasible_actions(
    specs: Sequence[EVSpec], state: Sequence[tuple[bool, float]]
) -> list[tuple[float, ...]]:
    """All joint charge-delta vectors, ordered lexicographically by EV.

    A connected EV may move to any admissible level; a disconnected EV's
    only action is 0.
    """
    per_ev: list[list[float]] = []
    for spec, (connected, h) in zip(specs, state):
        if connected:
            per_ev.append(sorted(lvl - h for lvl in spec.levels))
        else:
            per_ev.append([0.0])
    return [tuple(a) for a in itertools.product(*per_ev)]


def stage_cost(
    market: MarketModel, slot: int, g_slot: float, actions: Sequence[float]
) -> float:
    """Reserve cost of one slot given the dispatch and joint charge deltas."""
    mismatch = market.demand[slot - 1] + float(sum(actions)) - g_slot
    return market.reserve_cost_at(slot, mismatch)


def terminal_cost(market: MarketModel, state: Sequence[tuple[bool, float]]) -> float:
    """Terminal credit: stored energy valued at ev_energy_value, negated."""
    return -market.ev_energy_value * float(sum(h for _, h in state))


def transition_prob(
    params: Sequence[DeadlineDistribution],
    slot: int,
    state: Sequence[tuple[bool, float]],
    action: Sequence[float],
    next_state: Sequence[tuple[bool, float]],
) -> float:
    """Product-form kernel for the joint state transition during ``slot``."""
    prob = 1.0
    for dist, (connected, h), a, (connected2, h2) in zip(params, state, action, next_state):
        if not connected:
            if a != 0.0:
                return 0.0
            prob *= 1.0 if (not connected2 and h2 == h) else 0.0
            continue
        surv = dist.survival()[slot - 1]
        if surv <= 0.0:
            raise UnreachableStateError(
                f"unreachable state queried: connected EV has zero survival entering slot {slot}"
            )
        hazard = min(max(dist.pmf[slot - 1] / surv, 0.0), 1.0)
        if not math.isclose(h + a, h2, abs_tol=1e-9):
            return 0.0
        prob *= hazard if not connected2 else 1.0 - hazard
        if prob == 0.0:
            return 0.0
    return prob


class StateSpace:
    """Dense mixed-radix indexing of joint EV states plus cached kernels.

    Per-EV state ids place connected charge levels first (ascending), then
    disconnected ones; EV 1 is the most significant digit of the joint id,
    so joint id 0 is the initial all-connected all-empty state.
    """

    def __init__(self, specs: Sequence[EVSpec], params: Sequence[DeadlineDistribution]):
        self.specs = tuple(specs)
        self.params = tuple(params)
        self.n_per = [2 * len(s.levels) for s in self.specs]
        self.n_states = int(np.prod(self.n_per)) if self.specs else 1
        self.horizon = self.params[0].horizon if self.params else None
        # joint-id digit arrays, one per EV
        ids = np.arange(self.n_states)
        self._digits: list[np.ndarray] = []
        stride = self.n_states
        for n in self.n_per:
            stride //= n
            self._digits.append((ids // stride) % n)
        # per-EV charge and connectivity lookup by per-EV id
        self._charges = [np.array(list(s.levels) * 2) for s in self.specs]
        self._connected = [
            np.array([True] * len(s.levels) + [False] * len(s.levels)) for s in self.specs
        ]
        # kWh stored per EV for every joint state
        self.charge_by_ev = np.array(
            [self._charges[i][self._digits[i]] for i in range(len(self.specs))]
        ).reshape(len(self.specs), self.n_states)
        self.total_charge = (
            self.charge_by_ev.sum(axis=0) if self.specs else np.zeros(self.n_states)
        )
        # global per-EV action values (all level-to-level deltas)
        self._ev_actions = [
            sorted({b - a for a in s.levels for b in s.levels}) for s in self.specs
        ]
        self.global_actions = [tuple(a) for a in itertools.product(*self._ev_actions)]
        self.action_sums = np.array([sum(a) for a in self.global_actions])
        self._level_index = [
            {lvl: k for k, lvl in enumerate(s.levels)} for s in self.specs
        ]
        self._feas_cache: np.ndarray | None = None

    # ---- encoding ------------------------------------------------------

    def encode(self, state: Sequence[tuple[bool, float]]) -> int:
        joint = 0
        for (connected, h), spec, n, idx in zip(
            state, self.specs, self.n_per, self._level_index
        ):
            per = idx[h] if connected else len(spec.levels) + idx[h]
            joint = joint * n + per
        return joint

    def decode(self, joint: int) -> tuple[tuple[bool, float], ...]:
        out = []
        for i in range(len(self.specs) - 1, -1, -1):
            n = self.n_per[i]
            per = joint % n
            joint //= n
            out.append((bool(self._connected[i][per]), float(self._charges[i][per])))
        return tuple(reversed(out))

    @property
    def initial(self) -> int:
        return 0

    # ---- survival / validity -------------------------------------------

    def survival(self, i: int) -> np.ndarray:
        return np.maximum(self.params[i].survival(), 0.0)

    def valid_mask(self, layer: int) -> np.ndarray:
        """States with positive probability of existing at the given layer.

        Connected per-EV states are invalid once the EV's survival
        probability hits exactly zero.  The terminal layer is exempt: the
        terminal cost is defined everywhere.
        """
        mask = np.ones(self.n_states, dtype=bool)
        if layer >= (self.horizon or 0):
            return mask
        for i in range(len(self.specs)):
            if self.survival(i)[layer] <= 0.0:
                mask &= ~self._connected[i][self._digits[i]]
        return mask

    # ---- actions ---------------------------------------------------------

    def feasible_per_ev(self, i: int, per_id: int) -> list[float]:
        spec = self.specs[i]
        if per_id < len(spec.levels):
            h = spec.levels[per_id]
            return sorted(lvl - h for lvl in spec.levels)
        return [0.0]

    def feasible_joint(self, joint: int) -> list[tuple[float, ...]]:
        per_lists = []
        rest = joint
        ids = []
        for n in reversed(self.n_per):
            ids.append(rest % n)
            rest //= n
        ids.reverse()
        for i, per in enumerate(ids):
            per_lists.append(self.feasible_per_ev(i, per))
        return [tuple(a) for a in itertools.product(*per_lists)]

    def feasibility(self) -> np.ndarray:
        """Boolean (n_states, n_actions) mask over the global action list."""
        if self._feas_cache is not None:
            return self._feas_cache
        masks = np.ones((self.n_states, len(self.global_actions)), dtype=bool)
        for a_idx, action in enumerate(self.global_actions):
            col = np.ones(self.n_states, dtype=bool)
            for i, a in enumerate(action):
                spec = self.specs[i]
                ok = np.zeros(self.n_per[i], dtype=bool)
                for per in range(self.n_per[i]):
                    if per < len(spec.levels):
                        ok[per] = (spec.levels[per] + a) in self._level_index[i]
                    else:
                        ok[per] = a == 0.0
                col &= ok[self._digits[i]]
            masks[:, a_idx] = col
        self._feas_cache = masks
        return masks

    # ---- kernels ---------------------------------------------------------

    def _ev_block(self, i: int, slot: int, a: float) -> np.ndarray:
        """Per-EV transition matrix for one slot under per-EV delta ``a``.

        Rows of states where the action is infeasible are zero; rows of
        zero-survival connected states use an immediate-disconnect stub
        (they carry no probability mass from any valid state).
        """
        spec = self.specs[i]
        n = self.n_per[i]
        nl = len(spec.levels)
        block = np.zeros((n, n))
        surv = self.survival(i)[slot - 1]
        hazard = 1.0
        if surv > 0.0:
            hazard = min(max(self.params[i].pmf[slot - 1] / surv, 0.0), 1.0)
        for per in range(n):
            if per < nl:
                target = spec.levels[per] + a
                t_idx = self._level_index[i].get(target)
                if t_idx is None:
                    continue
                block[per, nl + t_idx] = hazard
                block[per, t_idx] = 1.0 - hazard
            elif a == 0.0:
                block[per, per] = 1.0
        return block

    def kernel(self, slot: int, action_idx: int) -> np.ndarray:
        """Joint (n_states, n_states) kernel for one slot and global action.
        Built fresh on every call; callers stream through these once."""
        out = np.ones((1, 1))
        for i, a in enumerate(self.global_actions[action_idx]):
            out = np.kron(out, self._ev_block(i, slot, a))
        return out

    def successors(
        self, slot: int, joint: int, action: Sequence[float]
    ) -> list[tuple[int, float]]:
        """Enumerate (next joint id, probability) pairs, skipping zeros."""
        per_outcomes: list[list[tuple[int, float]]] = []
        rest = joint
        ids: list[int] = []
        for n in reversed(self.n_per):
            ids.append(rest % n)
            rest //= n
        ids.reverse()
        for i, (per, a) in enumerate(zip(ids, action)):
            spec = self.specs[i]
            nl = len(spec.levels)
            if per < nl:
                surv = self.survival(i)[slot - 1]
                if surv <= 0.0:
                    raise UnreachableStateError(
                        f"unreachable state queried: EV {i + 1} cannot be connected entering slot {slot}"
                    )
                hazard = min(max(self.params[i].pmf[slot - 1] / surv, 0.0), 1.0)
                t_idx = self._level_index[i][spec.levels[per] + a]
                outs = []
                if hazard < 1.0:
                    outs.append((t_idx, 1.0 - hazard))
                if hazard > 0.0:
                    outs.append((nl + t_idx, hazard))
                per_outcomes.append(outs)
            else:
                per_outcomes.append([(per, 1.0)])
        joint_out: list[tuple[int, float]] = []
        for combo in itertools.product(*per_outcomes):
            nid = 0
            p = 1.0
            for (pid, pp), n in zip(combo, self.n_per):
                nid = nid * n + pid
                p *= pp
            joint_out.append((nid, p))
        return joint_out


@dataclass
class ValueTable:
    """Expected dollars-to-go per layer and joint state; +inf marks states
    that are unreachable or have no feasible continuation."""

    values: np.ndarray  # (T+1, n_states)

    def v0(self) -> float:
        return float(self.values[0, 0])

    def to_jsonable(self) -> list[list[float]]:
        return [[float(x) for x in row] for row in self.values]


@dataclass
class MarkovPolicy:
    """Deterministic slot-indexed feedback policy on joint state ids."""

    n_evs: int
    actions: dict[tuple[int, int], tuple[float, ...]]

    def action(self, slot: int, joint: int) -> tuple[float, ...]:
        try:
            return self.actions[(slot, joint)]
        except KeyError:
            raise UnreachableStateError(
                f"policy has no action for slot {slot}, state {joint}"
            ) from None

    def to_jsonable(self) -> dict[str, list[float]]:
        return {
            f"{slot},{joint}": list(act)
            for (slot, joint), act in sorted(self.actions.items())
        }


def policy_artifact(values: ValueTable, policy: MarkovPolicy) -> str:
    """JSON export of a solved policy and its value table."""
    payload = {"values": values.to_jsonable(), "policy": policy.to_jsonable()}
    return json.dumps(payload, sort_keys=True)


def solve_dp(model: MdpModel, space: StateSpace | None = None) -> tuple[ValueTable, MarkovPolicy]:
    """Backward induction over all joint states.

    Ties between equal-value actions resolve to the lexicographically
    smallest action vector.  States with no finite-cost continuation keep
    +inf (they may simply be unreachable); only an infeasible *initial*
    state raises ``NoFeasibleContinuation``.  Zero-survival states are
    assigned +inf and skipped silently.
    """
    space = space or StateSpace(model.specs, model.params)
    horizon = model.horizon
    n = space.n_states
    values = np.empty((horizon + 1, n))
    values[horizon] = -model.market.ev_energy_value * space.total_charge
    actions: dict[tuple[int, int], tuple[float, ...]] = {}
    for slot in range(horizon, 0, -1):
        layer = slot - 1
        valid = space.valid_mask(layer)
        nxt = values[slot]
        for s in range(n):
            if not valid[s]:
                values[layer, s] = math.inf
                continue
            best = math.inf
            best_action: tuple[float, ...] | None = None
            for action in space.feasible_joint(s):
                c = stage_cost(model.market, slot, model.dispatch[slot - 1], action)
                if c == math.inf:
                    continue
                total = c
                for nid, p in space.successors(slot, s, action):
                    total += p * nxt[nid]
                if total < best:
                    best = total
                    best_action = action
            values[layer, s] = best
            if best_action is not None:
                actions[(slot, s)] = best_action
    if not math.isfinite(values[0, space.initial]):
        raise NoFeasibleContinuation(
            f"no feasible continuation from the initial state "
            f"{space.decode(space.initial)} under dispatch {tuple(model.dispatch)}"
        )
    return ValueTable(values), MarkovPolicy(len(model.specs), actions)


@dataclass(frozen=True)
class RolloutResult:
    """One day's realized schedule under reported deadlines."""

    storage: np.ndarray  # (n_evs, T) stored kWh at the end of each slot
    mismatch: np.ndarray  # (T,) reserve kWh, positive = production
    reserve_cost: float
    terminal: np.ndarray  # (n_evs,) kWh at end of day (frozen at departure)


def rollout(
    model: MdpModel, policy: MarkovPolicy, reported: Sequence[int], space: StateSpace | None = None
) -> RolloutResult:
    """Deterministic unroll: EV j disconnects at the end of slot reported_j.

    The slot-``reported_j`` action still applies to EV j; afterwards its
    storage is frozen, matching the implementability constraint.
    """
    space = space or StateSpace(model.specs, model.params)
    horizon = model.horizon
    n_evs = len(model.specs)
    connected = [True] * n_evs
    charge = [0.0] * n_evs
    storage = np.zeros((n_evs, horizon))
    mismatch = np.zeros(horizon)
    reserve_total = 0.0
    for slot in range(1, horizon + 1):
        state = tuple((connected[i], charge[i]) for i in range(n_evs))
        action = policy.action(slot, space.encode(state))
        for i in range(n_evs):
            charge[i] += action[i]
        m = model.market.demand[slot - 1] + float(sum(action)) - model.dispatch[slot - 1]
        mismatch[slot - 1] = m
        reserve_total += model.market.reserve_cost_at(slot, m)
        for i in range(n_evs):
            if slot >= reported[i]:
                connected[i] = False
        storage[:, slot - 1] = charge
    return RolloutResult(storage, mismatch, float(reserve_total), storage[:, -1].copy())


def beta(model: MdpModel, policy: MarkovPolicy, reported: Sequence[int],
         space: StateSpace | None = None) -> float:
    """Realized system cost for one reported-deadline profile:
    dispatch cost + reserve cost - value of energy handed to EVs."""
    r = rollout(model, policy, reported, space)
    return (
        model.market.generator_cost(model.dispatch)
        + r.reserve_cost
        - model.market.ev_energy_value * float(r.terminal.sum())
    )


@dataclass(frozen=True)
class ExpectedOutcome:
    reserve_cost: float
    terminal_charge: np.ndarray  # (n_evs,) expected kWh at departure
    beta: float


def expected_outcome(
    model: MdpModel, policy: MarkovPolicy, space: StateSpace | None = None
) -> ExpectedOutcome:
    """Exact expectations under the model's deadline beliefs by forward
    propagation of the state distribution through the policy."""
    space = space or StateSpace(model.specs, model.params)
    horizon = model.horizon
    mu = np.zeros(space.n_states)
    mu[space.initial] = 1.0
    exp_reserve = 0.0
    for slot in range(1, horizon + 1):
        mu_next = np.zeros(space.n_states)
        for s in np.nonzero(mu)[0]:
            w = mu[s]
            action = policy.action(slot, int(s))
            exp_reserve += w * stage_cost(
                model.market, slot, model.dispatch[slot - 1], action
            )
            for nid, p in space.successors(slot, int(s), action):
                mu_next[nid] += w * p
        mu = mu_next
    terminal = (
        space.charge_by_ev @ mu if model.specs else np.zeros(0)
    )
    total = (
        model.market.generator_cost(model.dispatch)
        + exp_reserve
        - model.market.ev_energy_value * float(terminal.sum())
    )
    return ExpectedOutcome(float(exp_reserve), terminal, float(total))


def iter_profiles(model: MdpModel) -> Iterable[tuple[tuple[int, ...], float]]:
    """Yield every reported-deadline profile with its probability under the
    model's beliefs.  Guarded against combinatorial blowup."""
    horizon = model.horizon
    count = horizon ** len(model.specs)
    if count > ENUMERATION_GUARD:
        raise ValueError(
            f"profile enumeration would visit {count} profiles; "
            "use monte_carlo_outcome with an explicit sample count and seed"
        )
    slots = range(1, horizon + 1)
    for profile in itertools.product(slots, repeat=len(model.specs)):
        p = 1.0
        for dist, t in zip(model.params, profile):
            p *= dist.pmf[t - 1]
        yield profile, p


def enumerated_outcome(
    model: MdpModel, policy: MarkovPolicy, space: StateSpace | None = None
) -> ExpectedOutcome:
    """Expectations by exhaustive deadline-profile enumeration.

    Independent of the forward-propagation path; the two must agree to
    IDENTITY_TOL and tests hold them to it.
    """
    space = space or StateSpace(model.specs, model.params)
    exp_reserve = 0.0
    terminal = np.zeros(len(model.specs))
    for profile, p in iter_profiles(model):
        if p == 0.0:
            continue
        r = rollout(model, policy, profile, space)
        exp_reserve += p * r.reserve_cost
        terminal += p * r.terminal
    total = (
        model.market.generator_cost(model.dispatch)
        + exp_reserve
        - model.market.ev_energy_value * float(terminal.sum())
    )
    return ExpectedOutcome(float(exp_reserve), terminal, float(total))


def monte_carlo_outcome(
    model: MdpModel,
    policy: MarkovPolicy,
    samples: int,
    rng: np.random.Generator,
    space: StateSpace | None = None,
) -> ExpectedOutcome:
    """Sampled stand-in for ``enumerated_outcome`` on oversized fleets.

    Only used when enumeration is explicitly refused; never consulted by
    exact code paths.
    """
    space = space or StateSpace(model.specs, model.params)
    exp_reserve = 0.0
    terminal = np.zeros(len(model.specs))
    for _ in range(samples):
        profile = tuple(int(d.sample(rng)) for d in model.params)
        r = rollout(model, policy, profile, space)
        exp_reserve += r.reserve_cost
        terminal += r.terminal
    exp_reserve /= samples
    terminal /= samples
    total = (
        model.market.generator_cost(model.dispatch)
        + exp_reserve
        - model.market.ev_energy_value * float(terminal.sum())
    )
    return ExpectedOutcome(float(exp_reserve), terminal, float(total))


def expected_terminal_charge(
    model: MdpModel, policy: MarkovPolicy, ev: int, space: StateSpace | None = None
) -> float:
    """Expected kWh EV ``ev`` (0-based) departs with, under the beliefs."""
    return float(expected_outcome(model, policy, space).terminal_charge[ev])
