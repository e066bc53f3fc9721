"""Payments: day-ahead VCG transfer plus end-of-day settlement.

The day-ahead payment charges each EV its externality: the system cost
with the EV absent minus everyone else's share of the expected cost with
it present.  The settlement trues up the energy account (expected minus
realized departure charge, valued at the energy price) and levies an
escalating penalty when an EV's report frequencies drift out of a
shrinking tolerance window around its bid.

Window and penalty schedules are deliberately simple closed forms: the
window must shrink slower than sampling noise so honest EVs are safe,
and the penalty must grow faster than linearly in the day count so no
bounded per-day gain survives it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .deadlines import DeadlineDistribution
from .dispatch import SolveResult
from .mdp import ExpectedOutcome

IDENTITY_TOL = 1e-9
DEVIATION_SUM_TOL = 1e-12
LEDGER_HEADER = "day,ev,p_da,charge_gap,penalty,event,total_payment"


@dataclass(frozen=True)
class WindowSchedule:
    """Report-frequency tolerance r(l) = scale * sqrt(gamma * ln(l+1) / l)."""

    gamma: float = 1.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.gamma <= 0.5:
            raise ValueError(f"gamma must exceed 0.5, got {self.gamma}")
        if self.scale < 1.0:
            raise ValueError(
                f"scale must be >= 1 (got {self.scale}); smaller scales shrink "
                "the window below the honest-noise floor"
            )

    def window(self, l: int) -> float:
        if l < 1:
            raise ValueError("day index starts at 1")
        return self.scale * math.sqrt(self.gamma * math.log(l + 1) / l)


@dataclass(frozen=True)
class PenaltySchedule:
    """Event fine J_p(l) = coefficient * l**exponent; superlinear growth."""

    coefficient: float = 1.0
    exponent: float = 2.0

    def __post_init__(self) -> None:
        if self.coefficient <= 0:
            raise ValueError("penalty coefficient must be positive")
        if self.exponent <= 1.0:
            raise ValueError(
                f"penalty exponent must exceed 1 (got {self.exponent}); "
                "otherwise the average penalty stays bounded"
            )

    def penalty(self, l: int) -> float:
        if l < 1:
            raise ValueError("day index starts at 1")
        return self.coefficient * float(l) ** self.exponent


@dataclass
class EmpiricalRecord:
    """Running per-slot report counts for one EV.  Single writer: the
    simulation loop updates it exactly once per day."""

    horizon: int
    counts: np.ndarray = field(default=None)  # type: ignore[assignment]
    days: int = 0

    def __post_init__(self) -> None:
        if self.counts is None:
            self.counts = np.zeros(self.horizon, dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.horizon,):
                raise ValueError("counts shape does not match horizon")
        if int(self.counts.sum()) != self.days:
            raise ValueError("counts must sum to the day count")

    def update(self, report: int) -> None:
        if not 1 <= report <= self.horizon:
            raise ValueError(f"report slot {report} outside 1..{self.horizon}")
        self.counts[report - 1] += 1
        self.days += 1

    def frequencies(self) -> np.ndarray:
        if self.days == 0:
            raise ValueError("no reports recorded yet")
        return self.counts / self.days

    def copy(self) -> "EmpiricalRecord":
        return EmpiricalRecord(self.horizon, self.counts.copy(), self.days)


def empirical_deviation(record: EmpiricalRecord, phi: DeadlineDistribution) -> np.ndarray:
    """Per-slot gap between observed report frequencies and the bid."""
    if record.horizon != phi.horizon:
        raise ValueError("record and bid horizons differ")
    return record.frequencies() - np.array(phi.pmf)


def penalty_event(
    record: EmpiricalRecord, phi: DeadlineDistribution, schedule: WindowSchedule
) -> bool:
    """True when the worst per-slot frequency gap reaches the day's window."""
    f = empirical_deviation(record, phi)
    return bool(np.max(np.abs(f)) >= schedule.window(record.days))


@dataclass(frozen=True)
class SettlementResult:
    charge_gap: float
    penalty: float
    event_triggered: bool

    @property
    def payment(self) -> float:
        return self.charge_gap - self.penalty


def day_ahead_payment(
    i: int,
    solve: SolveResult,
    solve_minus_i: SolveResult,
    expected: ExpectedOutcome,
    generator_cost: float,
    ev_energy_value: float,
) -> float:
    """VCG transfer for EV ``i``.

    ``expected`` must be the exact expectation of the full solve's policy
    under the bids.  Computed two ways that only agree when the backward
    values and the forward expectations are consistent; disagreement
    raises rather than returning either number.
    """
    n_evs = len(expected.terminal_charge)
    if not 0 <= i < n_evs:
        raise IndexError(f"EV index {i} out of range")
    others = ev_energy_value * float(
        expected.terminal_charge.sum() - expected.terminal_charge[i]
    )
    direct = solve_minus_i.q_star - (generator_cost + expected.reserve_cost - others)
    own = ev_energy_value * float(expected.terminal_charge[i])
    via_q = solve_minus_i.q_star - solve.q_star - own
    if abs(direct - via_q) > IDENTITY_TOL:
        raise RuntimeError(
            f"payment identity violated: {direct} vs {via_q} for EV {i + 1}"
        )
    return via_q


def settlement(
    l: int,
    record: EmpiricalRecord,
    phi: DeadlineDistribution,
    expected_charge: float,
    realized_charge: float,
    window_schedule: WindowSchedule,
    penalty_schedule: PenaltySchedule,
    ev_energy_value: float = 1.0,
) -> SettlementResult:
    """End-of-day transfer.  ``record`` must already include day ``l``'s
    report; the event test therefore sees today's frequencies."""
    if record.days != l:
        raise ValueError(
            f"record covers {record.days} days but settling day {l}; "
            "update the record before settlement"
        )
    gap = ev_energy_value * (expected_charge - realized_charge)
    event = penalty_event(record, phi, window_schedule)
    pen = penalty_schedule.penalty(l) if event else 0.0
    return SettlementResult(float(gap), float(pen), event)


def total_payment(day_ahead: float, result: SettlementResult) -> float:
    return day_ahead + result.payment


def ledger_row(
    day: int, ev: int, p_da: float, result: SettlementResult
) -> str:
    """One CSV ledger line; 12 significant digits, locale-independent."""
    total = total_payment(p_da, result)
    return (
        f"{day},{ev},{p_da:.12g},{result.charge_gap:.12g},"
        f"{result.penalty:.12g},{int(result.event_triggered)},{total:.12g}"
    )
