"""Randomized instance generators for cross-checks and property suites.

Everything here is seed-deterministic: generators take an explicit
``numpy.random.Generator`` so suites replay exactly.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .costs import MarketModel, asym_lin_quad, linear
from .deadlines import DeadlineDistribution
from .dispatch import SolverConfig, quantize_up
from .mdp import EVSpec


def random_floored_pmf(
    rng: np.random.Generator, horizon: int, floor: float = 0.02
) -> tuple[float, ...]:
    """Dirichlet draw squeezed onto the floored simplex."""
    w = rng.dirichlet(np.ones(horizon))
    pmf = floor + (1.0 - horizon * floor) * w
    return tuple(float(p) for p in pmf)


def shift_mass_earlier(
    dist: DeadlineDistribution, rng: np.random.Generator, moves: int = 3
) -> DeadlineDistribution:
    """A distribution that dominates ``dist`` (departs stochastically
    earlier) by moving random probability mass to earlier slots, keeping
    the same floor.  Guaranteed strictly earlier somewhere when any slot
    above the floor exists past slot 1."""
    pmf = list(dist.pmf)
    horizon = len(pmf)
    moved = 0.0
    for _ in range(moves):
        candidates = [t for t in range(1, horizon) if pmf[t] > dist.floor + 1e-12]
        if not candidates:
            break
        src = int(rng.choice(candidates))
        dst = int(rng.integers(0, src))
        amount = float(rng.uniform(0.25, 1.0)) * (pmf[src] - dist.floor)
        pmf[src] -= amount
        pmf[dst] += amount
        moved += amount
    if moved == 0.0:
        return dist
    return DeadlineDistribution(tuple(pmf), floor=dist.floor)


def random_tiny_instance(rng: np.random.Generator):
    """A brute-force-sized market: returns (bids, market, specs, grid).

    Sizes are weighted toward the cheap corner of the allowed box
    (T <= 3, <= 2 EVs, 2 charge levels, <= 9 plans) so a batch of these
    stays fast while still exercising the largest shapes.
    """
    shapes = [(2, 1), (3, 1), (2, 2), (3, 2), (2, 0)]
    weights = [0.30, 0.30, 0.20, 0.10, 0.10]
    horizon, n_evs = shapes[int(rng.choice(len(shapes), p=weights))]
    demand = tuple(float(np.round(rng.uniform(0.0, 25.0), 1)) for _ in range(horizon))
    market = MarketModel(
        demand=demand,
        generator=linear(tuple(float(np.round(rng.uniform(5.0, 40.0), 2)) for _ in range(horizon))),
        reserves=asym_lin_quad(
            tuple(float(np.round(rng.uniform(10.0, 50.0), 2)) for _ in range(horizon))
        ),
        ev_energy_value=1.0,
    )
    specs = tuple(EVSpec(10.0, (0.0, 10.0)) for _ in range(n_evs))
    bids = tuple(
        DeadlineDistribution(random_floored_pmf(rng, horizon, 0.05), floor=0.05)
        for _ in range(n_evs)
    )
    base = tuple(quantize_up(d, 10.0) for d in demand)
    plans = {base}
    levels = (0.0, 10.0, 20.0, 30.0)
    target = int(rng.integers(4, 10))
    attempts = 0
    while len(plans) < target and attempts < 50:
        plans.add(tuple(float(rng.choice(levels)) for _ in range(horizon)))
        attempts += 1
    grid = tuple(sorted(plans))
    return bids, market, specs, grid


def random_small_instance(rng: np.random.Generator):
    """A grid-searchable instance for cost-monotonicity checks: returns
    (market, specs, bids, config, focal EV index)."""
    horizon = int(rng.integers(2, 4))
    n_evs = int(rng.integers(1, 3))
    demand = tuple(float(np.round(rng.uniform(5.0, 25.0), 1)) for _ in range(horizon))
    market = MarketModel(
        demand=demand,
        generator=linear(tuple(float(np.round(rng.uniform(5.0, 40.0), 2)) for _ in range(horizon))),
        reserves=asym_lin_quad(
            tuple(float(np.round(rng.uniform(10.0, 50.0), 2)) for _ in range(horizon))
        ),
        ev_energy_value=float(np.round(rng.uniform(0.02, 0.06), 3)),
    )
    specs = tuple(EVSpec(10.0, (0.0, 10.0)) for _ in range(n_evs))
    bids = tuple(
        DeadlineDistribution(random_floored_pmf(rng, horizon, 0.02), floor=0.02)
        for _ in range(n_evs)
    )
    config = SolverConfig(step=10.0)
    focal = int(rng.integers(0, n_evs))
    return market, specs, bids, config, focal
