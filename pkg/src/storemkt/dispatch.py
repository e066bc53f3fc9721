"""Two-stage dispatch search: outer grid over generator plans, inner MDP.

The outer stage enumerates quantized dispatch vectors; the inner stage
prices each one by solving the storage MDP.  ``beta_bar(g)`` is that
price: dispatch cost plus the optimal expected recourse value from the
initial state.  The exhaustive search shares inner-DP suffixes across the
whole grid (the value at layer t depends only on the dispatch tail), so
the grid costs little more than one DP per distinct tail.

The winning plan is re-solved by the plain reference recursion and the
two values must agree; disagreement is a bug, not a tolerance question.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .costs import MarketModel
from .deadlines import DeadlineDistribution
from .mdp import (
    ENUMERATION_GUARD,
    EVSpec,
    MarkovPolicy,
    MdpModel,
    NoFeasibleContinuation,
    StateSpace,
    ValueTable,
    beta,
    policy_artifact,
    solve_dp,
)

DEFAULT_STEP = 10.0
DEFAULT_MAX_CANDIDATES = 2_000_000
#: finite stand-in for +inf inside matrix products (0 * inf is nan; 0 * proxy is 0)
INF_PROXY = 1e30
INF_THRESHOLD = 1e20
CROSS_CHECK_TOL = 1e-6
ORACLE_POLICY_GUARD = 500_000


class GridTooLarge(ValueError):
    """Exhaustive grid exceeds the configured candidate budget."""


class InfeasibleModel(RuntimeError):
    """No dispatch candidate admits a finite-cost storage policy."""


@dataclass(frozen=True)
class SolverConfig:
    """Outer-search settings.

    ``candidates`` pins an explicit list of dispatch plans and bypasses the
    grid entirely (used by fixed scenarios whose published options are a
    strict subset of the quantized grid).  ``caps`` overrides the default
    per-slot bound demand-rounded-up + total fleet capacity.
    """

    step: float = DEFAULT_STEP
    mode: str = "exhaustive"  # "exhaustive" | "beam"
    beam_width: int = 8
    caps: tuple[float, ...] | None = None
    candidates: tuple[tuple[float, ...], ...] | None = None
    max_candidates: int = DEFAULT_MAX_CANDIDATES

    def __post_init__(self) -> None:
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.mode not in ("exhaustive", "beam"):
            raise ValueError(f"unknown search mode {self.mode!r}")
        if self.beam_width < 1:
            raise ValueError("beam width must be >= 1")
        if self.candidates is not None:
            object.__setattr__(
                self,
                "candidates",
                tuple(tuple(float(g) for g in c) for c in self.candidates),
            )
        if self.caps is not None:
            object.__setattr__(self, "caps", tuple(float(c) for c in self.caps))


@dataclass(frozen=True)
class SolveResult:
    g_star: tuple[float, ...]
    q_star: float
    values: ValueTable
    policy: MarkovPolicy
    candidates_evaluated: int

    def to_jsonable(self) -> dict:
        import json

        payload = json.loads(policy_artifact(self.values, self.policy))
        payload.update(
            g_star=list(self.g_star),
            q_star=self.q_star,
            candidates_evaluated=self.candidates_evaluated,
        )
        return payload


def quantize_up(x: float, step: float) -> float:
    """Smallest nonnegative multiple of ``step`` that is >= x."""
    if x <= 0:
        return 0.0
    return math.ceil(round(x / step, 9)) * step


def default_caps(market: MarketModel, specs: Sequence[EVSpec], step: float) -> tuple[float, ...]:
    """Per-slot dispatch bound: demand rounded up plus total fleet capacity.
    Producing beyond that is weakly dominated under nonnegative costs."""
    fleet = sum(s.capacity for s in specs)
    return tuple(quantize_up(d, step) + fleet for d in market.demand)


def grid_levels(
    market: MarketModel, specs: Sequence[EVSpec], config: SolverConfig
) -> list[list[float]]:
    caps = config.caps or default_caps(market, specs, config.step)
    if len(caps) != market.horizon:
        raise ValueError("caps length does not match horizon")
    out = []
    for cap in caps:
        n = int(round(cap / config.step, 9) // 1)
        out.append([k * config.step for k in range(n + 1)])
    return out


def beta_bar(
    bids: Sequence[DeadlineDistribution],
    g: Sequence[float],
    market: MarketModel,
    specs: Sequence[EVSpec],
) -> float:
    """Expected total cost of dispatch ``g`` under the optimal storage
    policy: generator cost plus the DP value at the initial state."""
    model = MdpModel(market, tuple(specs), tuple(bids), tuple(g))
    values, _ = solve_dp(model)
    return market.generator_cost(g) + values.v0()


def _greedy_tail(market: MarketModel, levels: list[list[float]], start_slot: int) -> list[float]:
    """Storage-blind completion: per slot, the level with the cheapest
    dispatch-plus-mismatch cost, ties to the smaller level."""
    tail = []
    for slot in range(start_slot, market.horizon + 1):
        best = None
        best_cost = math.inf
        for g in levels[slot - 1]:
            c = market.generator.cost(slot, g) + market.reserve_cost_at(
                slot, market.demand[slot - 1] - g
            )
            if c < best_cost:
                best_cost = c
                best = g
        tail.append(best if best is not None else levels[slot - 1][0])
    return tail


def _batched_inner_values(
    market: MarketModel,
    specs: Sequence[EVSpec],
    bids: Sequence[DeadlineDistribution],
    levels: list[list[float]],
    space: StateSpace,
) -> np.ndarray:
    """Inner DP value v0 for every grid plan at once, suffix-shared.

    Returns a flat array over plans in lexicographic product order.
    Entries at or above INF_THRESHOLD mean no finite-cost policy exists.
    """
    horizon = market.horizon
    n = space.n_states
    feas = space.feasibility()
    v = (-market.ev_energy_value * space.total_charge).reshape(n, 1)
    for slot in range(horizon, 1, -1):
        lt = levels[slot - 1]
        s_count = v.shape[1]
        new_v = np.full((n, len(lt) * s_count), INF_PROXY)
        v_safe = np.minimum(v, INF_PROXY)
        for a_idx in range(len(space.global_actions)):
            w = space.kernel(slot, a_idx) @ v_safe
            asum = space.action_sums[a_idx]
            blocked = ~feas[:, a_idx]
            for gi, g in enumerate(lt):
                c = market.reserve_cost_at(
                    slot, market.demand[slot - 1] + asum - g
                )
                if c == math.inf:
                    continue
                cand = w + c
                cand[blocked] = INF_PROXY
                block = new_v[:, gi * s_count : (gi + 1) * s_count]
                np.minimum(block, cand, out=block)
        v = new_v
    # slot 1: only the initial state's row matters
    l1 = levels[0]
    s_count = v.shape[1]
    v0 = np.full((len(l1), s_count), INF_PROXY)
    v_safe = np.minimum(v, INF_PROXY)
    init = space.initial
    for a_idx in range(len(space.global_actions)):
        if not feas[init, a_idx]:
            continue
        w = space.kernel(1, a_idx)[init] @ v_safe
        asum = space.action_sums[a_idx]
        for gi, g in enumerate(l1):
            c = market.reserve_cost_at(1, market.demand[0] + asum - g)
            if c == math.inf:
                continue
            np.minimum(v0[gi], w + c, out=v0[gi])
    return v0.reshape(-1)


def _grid_gen_costs(market: MarketModel, levels: list[list[float]]) -> np.ndarray:
    """Dispatch cost of every grid plan, lexicographic flat order."""
    acc = np.zeros(1)
    for slot in range(1, market.horizon + 1):
        per = np.array(
            [min(market.generator.cost(slot, g), INF_PROXY) for g in levels[slot - 1]]
        )
        acc = (acc[:, None] + per[None, :]).reshape(-1)
    return acc


def _solve_explicit(
    bids: Sequence[DeadlineDistribution],
    candidates: Sequence[tuple[float, ...]],
    market: MarketModel,
    specs: Sequence[EVSpec],
) -> tuple[tuple[float, ...], int]:
    best_q = math.inf
    best_g: tuple[float, ...] | None = None
    for g in candidates:
        try:
            q = beta_bar(bids, g, market, specs)
        except NoFeasibleContinuation:
            continue
        if q == math.inf:
            continue
        if best_g is None or q < best_q or (q == best_q and g < best_g):
            best_q = q
            best_g = g
    if best_g is None:
        raise InfeasibleModel("every candidate dispatch is infeasible")
    return best_g, len(candidates)


def _solve_beam(
    bids: Sequence[DeadlineDistribution],
    levels: list[list[float]],
    market: MarketModel,
    specs: Sequence[EVSpec],
    width: int,
) -> tuple[tuple[float, ...], int]:
    prefixes: list[tuple[float, ...]] = [()]
    evaluated = 0

    def score(prefix: tuple[float, ...]) -> float:
        tail = _greedy_tail(market, levels, len(prefix) + 1)
        try:
            return beta_bar(bids, list(prefix) + tail, market, specs)
        except NoFeasibleContinuation:
            return math.inf

    for slot in range(1, market.horizon + 1):
        extended = [p + (g,) for p in prefixes for g in levels[slot - 1]]
        scored = sorted((score(p), p) for p in extended)
        evaluated += len(extended)
        prefixes = [p for _, p in scored[:width]]
    best_q, best_g = math.inf, None
    for p in prefixes:
        try:
            q = beta_bar(bids, p, market, specs)
        except NoFeasibleContinuation:
            continue
        if q < best_q or (q == best_q and best_g is not None and p < best_g):
            best_q, best_g = q, p
    if best_g is None or best_q == math.inf:
        raise InfeasibleModel("beam search found no feasible dispatch")
    return best_g, evaluated


def solve_outer(
    bids: Sequence[DeadlineDistribution],
    config: SolverConfig,
    market: MarketModel,
    specs: Sequence[EVSpec],
) -> SolveResult:
    """Search the dispatch space, price each plan by the inner DP, return
    the cheapest plan with its policy.  Ties go to the lexicographically
    smallest plan.  The winner is independently re-solved by the reference
    recursion; any disagreement beyond CROSS_CHECK_TOL raises."""
    bids = tuple(bids)
    specs = tuple(specs)
    space = StateSpace(specs, bids)
    if config.candidates is not None:
        g_star, evaluated = _solve_explicit(bids, config.candidates, market, specs)
    elif config.mode == "beam":
        levels = grid_levels(market, specs, config)
        g_star, evaluated = _solve_beam(bids, levels, market, specs, config.beam_width)
    else:
        levels = grid_levels(market, specs, config)
        total = 1
        for lt in levels:
            total *= len(lt)
        if total > config.max_candidates:
            raise GridTooLarge(
                f"exhaustive grid has {total} candidates "
                f"(limit {config.max_candidates}); use beam search"
            )
        inner = _batched_inner_values(market, specs, bids, levels, space)
        q_flat = _grid_gen_costs(market, levels) + inner
        best_idx = int(np.argmin(q_flat))
        if q_flat[best_idx] >= INF_THRESHOLD:
            raise InfeasibleModel("every dispatch plan on the grid is infeasible")
        g_star = _unflatten(best_idx, levels)
        evaluated = total
        batched_q = float(q_flat[best_idx])
    model = MdpModel(market, specs, bids, g_star)
    values, policy = solve_dp(model, space)
    q_star = market.generator_cost(g_star) + values.v0()
    if config.candidates is None and config.mode == "exhaustive":
        if abs(q_star - batched_q) > CROSS_CHECK_TOL:
            raise RuntimeError(
                f"batched and reference inner values disagree: "
                f"{batched_q} vs {q_star} at g={g_star}"
            )
    return SolveResult(tuple(g_star), float(q_star), values, policy, evaluated)


def _unflatten(idx: int, levels: list[list[float]]) -> tuple[float, ...]:
    out = []
    for lt in reversed(levels):
        out.append(lt[idx % len(lt)])
        idx //= len(lt)
    return tuple(reversed(out))


def q_star(
    bids: Sequence[DeadlineDistribution],
    config: SolverConfig,
    market: MarketModel,
    specs: Sequence[EVSpec],
) -> float:
    return solve_outer(bids, config, market, specs).q_star


def q_star_minus(
    bids: Sequence[DeadlineDistribution],
    i: int,
    config: SolverConfig,
    market: MarketModel,
    specs: Sequence[EVSpec],
) -> float:
    """Counterfactual system cost with EV ``i`` removed (full re-solve)."""
    if not 0 <= i < len(specs):
        raise IndexError(f"EV index {i} out of range for {len(specs)} EVs")
    rest_bids = tuple(b for k, b in enumerate(bids) if k != i)
    rest_specs = tuple(s for k, s in enumerate(specs) if k != i)
    return solve_outer(rest_bids, config, market, rest_specs).q_star


def conditional_beta(
    model: MdpModel,
    policy: MarkovPolicy,
    i: int,
    t: int,
    space: StateSpace | None = None,
) -> float:
    """Expected realized cost given EV ``i`` reports slot ``t``, others
    drawn from their distributions.  Exact by enumeration."""
    if not 0 <= i < model.n_evs:
        raise IndexError(f"EV index {i} out of range")
    if not 1 <= t <= model.horizon:
        raise ValueError(f"slot {t} outside 1..{model.horizon}")
    if model.params[i].pmf[t - 1] <= 0.0:
        raise ValueError(f"slot {t} has zero probability for EV {i + 1}")
    space = space or StateSpace(model.specs, model.params)
    others = [k for k in range(model.n_evs) if k != i]
    count = model.horizon ** len(others)
    if count > ENUMERATION_GUARD:
        raise ValueError("conditional enumeration too large")
    total = 0.0
    slots = range(1, model.horizon + 1)
    for combo in itertools.product(slots, repeat=len(others)):
        p = 1.0
        for k, tk in zip(others, combo):
            p *= model.params[k].pmf[tk - 1]
        if p == 0.0:
            continue
        profile = [0] * model.n_evs
        profile[i] = t
        for k, tk in zip(others, combo):
            profile[k] = tk
        total += p * beta(model, policy, profile, space)
    return total


def estimate_lipschitz_K(
    sampler: Callable[[np.random.Generator], Sequence[DeadlineDistribution]]
    | Sequence[Sequence[DeadlineDistribution]],
    trials: int,
    config: SolverConfig,
    market: MarketModel,
    specs: Sequence[EVSpec],
    rng: np.random.Generator | None = None,
) -> float:
    """Sampled bound on the cost sensitivity to belief perturbations.

    For each sampled bid profile, solve the two-stage problem and take
    2*sqrt(T) times the l2 norm of the per-slot conditional costs; the
    estimate is the running max, so it is nondecreasing in ``trials``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    best = 0.0
    horizon = market.horizon
    for k in range(trials):
        if callable(sampler):
            if rng is None:
                raise ValueError("a sampler callable requires an rng")
            bids = tuple(sampler(rng))
        else:
            bids = tuple(sampler[k % len(sampler)])
        result = solve_outer(bids, config, market, specs)
        model = MdpModel(market, tuple(specs), bids, result.g_star)
        space = StateSpace(model.specs, model.params)
        for i in range(len(specs)):
            vec = np.array(
                [
                    conditional_beta(model, result.policy, i, t, space)
                    for t in range(1, horizon + 1)
                    if model.params[i].pmf[t - 1] > 0.0
                ]
            )
            best = max(best, 2.0 * math.sqrt(horizon) * float(np.linalg.norm(vec)))
    return best


# ---------------------------------------------------------------------------
# brute-force oracle: no dynamic programming anywhere
# ---------------------------------------------------------------------------


def _oracle_feasible(spec: EVSpec, state: tuple[bool, float]) -> list[tuple[float, ...]]:
    connected, h = state
    if connected:
        return [lvl - h for lvl in spec.levels]
    return [0.0]


def brute_force_oracle(
    bids: Sequence[DeadlineDistribution],
    market: MarketModel,
    specs: Sequence[EVSpec],
    grid: Sequence[Sequence[float]],
) -> float:
    """Minimum expected cost over every (plan, deterministic policy) pair.

    Policies are enumerated as explicit action tables over the states each
    policy can actually reach, and every policy is priced by summing
    realized costs over all deadline profiles.  No value recursion is used
    anywhere, so this is an independent check of the DP solver.  Tiny
    instances only.
    """
    horizon = market.horizon
    n_evs = len(specs)
    if horizon > 3 or n_evs > 2 or any(len(s.levels) > 2 for s in specs) or len(grid) > 9:
        raise ValueError("oracle instance too large: need T<=3, <=2 EVs, <=2 levels, <=9 plans")
    profiles = []
    for combo in itertools.product(range(1, horizon + 1), repeat=n_evs):
        p = 1.0
        for dist, t in zip(bids, combo):
            p *= dist.pmf[t - 1]
        if p > 0.0:
            profiles.append((combo, p))

    hazards = []
    for dist in bids:
        surv = np.maximum(dist.survival(), 0.0)
        hz = []
        for slot in range(1, horizon + 1):
            s = surv[slot - 1]
            hz.append(min(max(dist.pmf[slot - 1] / s, 0.0), 1.0) if s > 0 else None)
        hazards.append(hz)

    best = math.inf
    for g in grid:
        g = tuple(float(x) for x in g)
        gen = market.generator_cost(g)
        if gen == math.inf:
            continue
        count = 0

        def branches(slot: int, state, action):
            """Positive-probability successor states (connectivity splits)."""
            per_ev = []
            for i in range(n_evs):
                connected, h = state[i]
                h2 = h + action[i]
                if not connected:
                    per_ev.append([(False, h2)])
                    continue
                hz = hazards[i][slot - 1]
                if hz is None:
                    raise UnreachableOracleState()
                outs = []
                if hz < 1.0:
                    outs.append((True, h2))
                if hz > 0.0:
                    outs.append((False, h2))
                per_ev.append(outs)
            return [tuple(c) for c in itertools.product(*per_ev)]

        init = tuple((True, 0.0) for _ in range(n_evs))
        policy: dict[tuple[int, tuple], tuple[float, ...]] = {}
        values: list[float] = []

        def price_policy() -> float:
            total = 0.0
            for profile, p in profiles:
                connected = [True] * n_evs
                charge = [0.0] * n_evs
                reserve = 0.0
                for slot in range(1, horizon + 1):
                    state = tuple((connected[i], charge[i]) for i in range(n_evs))
                    action = policy[(slot, state)]
                    for i in range(n_evs):
                        charge[i] += action[i]
                    m = market.demand[slot - 1] + sum(action) - g[slot - 1]
                    reserve += market.reserve_cost_at(slot, m)
                    if reserve == math.inf:
                        break
                    for i in range(n_evs):
                        if slot >= profile[i]:
                            connected[i] = False
                if reserve == math.inf:
                    return math.inf
                total += p * (reserve - market.ev_energy_value * sum(charge))
            return total

        def rec(slot: int, states: tuple) -> None:
            nonlocal count
            if slot > horizon:
                count += 1
                if count > ORACLE_POLICY_GUARD:
                    raise ValueError("oracle policy count guard exceeded")
                values.append(price_policy())
                return
            option_lists = []
            for s in states:
                acts = [
                    tuple(a)
                    for a in itertools.product(
                        *(_oracle_feasible(specs[i], s[i]) for i in range(n_evs))
                    )
                ]
                option_lists.append(acts)
            for combo in itertools.product(*option_lists):
                nxt = set()
                for s, a in zip(states, combo):
                    policy[(slot, s)] = a
                    nxt.update(branches(slot, s, a))
                rec(slot + 1, tuple(sorted(nxt)))

        try:
            rec(1, (init,))
        except UnreachableOracleState:
            continue
        finite = [v for v in values if v < math.inf]
        if finite:
            best = min(best, gen + min(finite))
    if best == math.inf:
        raise InfeasibleModel("oracle: every plan/policy pair is infeasible")
    return best


class UnreachableOracleState(Exception):
    pass
