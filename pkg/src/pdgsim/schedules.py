"""Per-agent time-varying stepsize families and admissibility checkers.

Finite-horizon partial sums cannot certify infinite-sum conditions, so every
verdict combines the numeric partial sums with an analytic tail certificate
attached to the declared family. Sequences outside the declared families
(``custom``) get ``undecided-at-horizon`` for the tail conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FAMILIES = (
    "diminishing-heterogeneous",
    "nondiminishing-heterogeneous",
    "constant-homogeneous",
    "finite-deviation",
    "custom",
)

PASS, FAIL, UNDECIDED = "pass", "fail", "undecided-at-horizon"

# checker condition names, diminishing regime
DIVERGES = "per-agent-sum-diverges"
SQUARES = "per-agent-squares-summable"
PAIRWISE = "pairwise-gap-summable"

# checker condition names, non-diminishing regime
MEAN_DIVERGES = "mean-sum-diverges"
CHANGE_SQUARES = "step-change-squares-summable"
SPREAD = "spread-over-mean-summable"
COND_MAX_STEP = "max-over-mean-step"
COND_MEAN_STEP = "mean-step"
COND_TRACKER = "tracker-contraction"
COND_CROSS = "cross-term"

_MEAN_STEP_NOTE = (
    "mean-step is checked as lambda_bar*L <= delta/(1+delta); the multiplied-out "
    "form without L appears in some statements but the contraction argument needs the L factor"
)


class StepsizeSchedule:
    """Deterministic per-agent stepsize sequence from a declared analytic family.

    Evaluation is pure and replayable: agent i's randomness comes from its own
    stream seeded by (seed, i), and draws are cached in iteration order so any
    access pattern yields the same sequence.
    """

    def __init__(self, family: str, m: int, lambda_base: float = 0.0, seed=0,
                 deviation_scale: float = 0.0, deviation_rounds: int = 0,
                 values: Callable[[int, int], float] | None = None,
                 overrides: dict[tuple[int, int], float] | None = None):
        if family not in FAMILIES:
            raise ValueError(f"unknown stepsize family {family!r}")
        if m < 1:
            raise ValueError("agent count must be positive")
        if family == "custom" and values is None:
            raise ValueError("custom schedules need a values callable")
        self.family = family
        self.m = m
        self.lambda_base = float(lambda_base)
        self.seed = seed
        self.deviation_scale = float(deviation_scale)
        self.deviation_rounds = int(deviation_rounds)
        self.values = values
        self.overrides = dict(overrides or {})
        self._streams = [np.random.default_rng([int(seed) & 0xFFFFFFFFFFFF, 0x5C0, i])
                         for i in range(1, m + 1)]
        self._draws: list[list[float]] = [[] for _ in range(m)]

    def _draw(self, i: int, k: int) -> float:
        cache = self._draws[i - 1]
        while len(cache) <= k:
            cache.append(float(self._streams[i - 1].random()))
        return cache[k]

    def evaluate(self, i: int, k: int) -> float:
        """Stepsize of agent i at iteration k (both validated, k from 0)."""
        if not 1 <= i <= self.m:
            raise ValueError(f"agent {i} out of range 1..{self.m}")
        if k < 0:
            raise ValueError("iteration index must be nonnegative")
        if (i, k) in self.overrides:
            return self.overrides[(i, k)]
        if self.family == "diminishing-heterogeneous":
            return (1.0 - self._draw(i, k) / (k + 1) ** 2) / (k + 1)
        if self.family == "nondiminishing-heterogeneous":
            return self.lambda_base * (1.0 - self._draw(i, k) / (k + 1) ** 2)
        if self.family == "constant-homogeneous":
            return self.lambda_base
        if self.family == "finite-deviation":
            if k < self.deviation_rounds:
                dev = self.deviation_scale * (2.0 * self._draw(i, k) - 1.0)
                return max(self.lambda_base + dev, 0.0)
            return self.lambda_base
        return float(self.values(i, k))

    def vector(self, k: int) -> np.ndarray:
        return np.array([self.evaluate(i, k) for i in range(1, self.m + 1)])

    def with_overrides(self, agent: int, values: dict[int, float]) -> "StepsizeSchedule":
        """Copy of this schedule with agent's stepsize replaced at finitely many iterations."""
        merged = dict(self.overrides)
        merged.update({(agent, k): float(v) for k, v in values.items()})
        clone = StepsizeSchedule(self.family, self.m, lambda_base=self.lambda_base,
                                 seed=self.seed, deviation_scale=self.deviation_scale,
                                 deviation_rounds=self.deviation_rounds, values=self.values,
                                 overrides=merged)
        return clone

    def describe(self) -> dict:
        doc = {"family": self.family, "m": self.m, "seed": self.seed}
        if self.family in ("nondiminishing-heterogeneous", "constant-homogeneous", "finite-deviation"):
            doc["lambda_base"] = self.lambda_base
        if self.family == "finite-deviation":
            doc["deviation_scale"] = self.deviation_scale
            doc["deviation_rounds"] = self.deviation_rounds
        if self.overrides:
            doc["overrides"] = len(self.overrides)
        return doc


def make_schedule(family: str, m: int, **kwargs) -> StepsizeSchedule:
    return StepsizeSchedule(family, m, **kwargs)


def evaluate(schedule: StepsizeSchedule, i: int, k: int) -> float:
    return schedule.evaluate(i, k)


@dataclass
class ConditionReport:
    """Numeric certificate that a schedule satisfies an admissibility regime.

    ``verdicts`` maps condition names to pass/fail/undecided-at-horizon; a
    condition passes only when the finite-horizon numerics are consistent AND
    the family carries an analytic tail certificate for it.
    """

    regime: str
    family: str
    horizon: int
    start: int
    verdicts: dict[str, str]
    partial_sums: dict[str, float]
    margins: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    delta: float | None = None
    c: float | None = None
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return all(v == PASS for v in self.verdicts.values())

    def to_dict(self) -> dict:
        doc = {
            "regime": self.regime,
            "family": self.family,
            "horizon": self.horizon,
            "start": self.start,
            "passed": self.passed,
            "verdicts": dict(self.verdicts),
            "partial_sums": dict(self.partial_sums),
            "notes": list(self.notes),
        }
        if self.delta is not None:
            doc["delta"] = self.delta
            doc["c"] = self.c
        if self.margins:
            doc["margins"] = {
                name: {key: np.asarray(arr).tolist() for key, arr in sides.items()}
                for name, sides in self.margins.items()
            }
        return doc


def _tail_certificates(schedule: StepsizeSchedule) -> dict[str, bool | None]:
    """Analytic infinite-tail verdicts per family (None = no certificate).

    Finitely many overrides never change a tail verdict.
    """
    base_positive = schedule.lambda_base > 0
    fam = schedule.family
    if fam == "diminishing-heterogeneous":
        # lambda_i^k in [(1 - 1/(k+1)^2)/(k+1), 1/(k+1)]: harmonic lower bound,
        # squares below 1/(k+1)^2, pairwise gaps below 1/(k+1)^3
        return {DIVERGES: True, SQUARES: True, PAIRWISE: True,
                MEAN_DIVERGES: True, CHANGE_SQUARES: True, SPREAD: True}
    if fam == "nondiminishing-heterogeneous":
        return {DIVERGES: base_positive, SQUARES: False, PAIRWISE: True,
                MEAN_DIVERGES: base_positive, CHANGE_SQUARES: True, SPREAD: True}
    if fam == "constant-homogeneous":
        return {DIVERGES: base_positive, SQUARES: False, PAIRWISE: True,
                MEAN_DIVERGES: base_positive, CHANGE_SQUARES: True, SPREAD: True}
    if fam == "finite-deviation":
        # constant after deviation_rounds: at most deviation_rounds+1 nonzero
        # change/spread terms, so those sums are trivially finite
        return {DIVERGES: base_positive, SQUARES: False, PAIRWISE: True,
                MEAN_DIVERGES: base_positive, CHANGE_SQUARES: True, SPREAD: True}
    return {DIVERGES: None, SQUARES: None, PAIRWISE: None,
            MEAN_DIVERGES: None, CHANGE_SQUARES: None, SPREAD: None}


def _verdict(cert: bool | None) -> str:
    if cert is None:
        return UNDECIDED
    return PASS if cert else FAIL


def check_diminishing(schedule: StepsizeSchedule, horizon: int) -> ConditionReport:
    """Admissibility for the diminishing regime.

    Conditions: every agent's stepsize sum diverges, its squared sum is finite,
    and the summed pairwise stepsize gaps across agents are finite.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    m = schedule.m
    lam = np.array([schedule.vector(k) for k in range(horizon + 1)])  # (K+1, m)
    if np.any(lam < 0):
        raise ValueError("schedule produced a negative stepsize")
    per_agent_sum = lam.sum(axis=0)
    per_agent_sq = (lam ** 2).sum(axis=0)
    gaps = np.abs(lam[:, :, None] - lam[:, None, :]).sum(axis=(1, 2))  # counts both orders
    certs = _tail_certificates(schedule)
    partial = {
        "sum_mean_stepsize": float(lam.mean(axis=1).sum()),
        "min_per_agent_sum": float(per_agent_sum.min()),
        "max_per_agent_square_sum": float(per_agent_sq.max()),
        "pairwise_gap_sum": float(gaps.sum()),
    }
    verdicts = {DIVERGES: _verdict(certs[DIVERGES]),
                SQUARES: _verdict(certs[SQUARES]),
                PAIRWISE: _verdict(certs[PAIRWISE])}
    return ConditionReport(regime="diminishing", family=schedule.family, horizon=horizon,
                           start=0, verdicts=verdicts, partial_sums=partial)


def check_nondiminishing(schedule: StepsizeSchedule, L: float, eta: float, r: float,
                         delta: float, c: float, horizon: int, start: int = 0) -> ConditionReport:
    """Admissibility for the non-diminishing regime.

    Reports the margins of the four per-iteration inequalities for every
    k in [start, horizon] together with the three summability conditions.
    """
    if not 0.0 < delta < 1.0 or not 0.0 < c < 1.0:
        raise ValueError(f"delta and c must lie in (0, 1), got ({delta}, {c})")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if not 0 <= start <= horizon:
        raise ValueError("start must lie in [0, horizon]")
    m = schedule.m
    lam = np.array([schedule.vector(k) for k in range(horizon + 2)])  # need lambda^{k+1}
    if np.any(lam < 0):
        raise ValueError("schedule produced a negative stepsize")
    ks = np.arange(start, horizon + 1)
    lam_w = lam[start:horizon + 1]
    lam_next = lam[start + 1:horizon + 2]
    lbar = lam_w.mean(axis=1)
    lmax = lam_w.max(axis=1)
    next_sq = (lam_next ** 2).sum(axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        lhs_a = np.where(lmax > 0, 2.0 * L / (m * lbar) * lmax ** 2, 0.0)
    rhs_a = np.full_like(lhs_a, 1.0 - eta)
    lhs_b = lbar * L
    rhs_b = np.full_like(lhs_b, delta / (1.0 + delta))
    lhs_c = eta + 6.0 * m * m * L * L / (1.0 - eta) * next_sq
    rhs_c = np.full_like(lhs_c, c)
    lhs_d = max(m ** 3 * r * r, m * m) * 6.0 * L * L * next_sq
    rhs_d = np.full_like(lhs_d, (1.0 - eta) ** 3 * (1.0 - c) * (1.0 - delta))

    margins = {
        COND_MAX_STEP: {"k": ks, "lhs": lhs_a, "rhs": rhs_a},
        COND_MEAN_STEP: {"k": ks, "lhs": lhs_b, "rhs": rhs_b},
        COND_TRACKER: {"k": ks, "lhs": lhs_c, "rhs": rhs_c},
        COND_CROSS: {"k": ks, "lhs": lhs_d, "rhs": rhs_d},
    }
    spread_sq = ((lam_w - lbar[:, None]) ** 2).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        spread_terms = np.where(spread_sq > 0, spread_sq / lbar, 0.0)
    partial = {
        "sum_mean_stepsize": float(lbar.sum()),
        "step_change_square_sum": float(((lam_next - lam_w) ** 2).sum()),
        "spread_over_mean_sum": float(spread_terms.sum()),
    }
    certs = _tail_certificates(schedule)
    verdicts = {
        MEAN_DIVERGES: _verdict(certs[MEAN_DIVERGES]),
        CHANGE_SQUARES: _verdict(certs[CHANGE_SQUARES]),
        SPREAD: _verdict(certs[SPREAD]),
        COND_MAX_STEP: PASS if np.all(lhs_a <= rhs_a) else FAIL,
        COND_MEAN_STEP: PASS if np.all(lhs_b <= rhs_b) else FAIL,
        COND_TRACKER: PASS if np.all(lhs_c <= rhs_c) else FAIL,
        COND_CROSS: PASS if np.all(lhs_d <= rhs_d) else FAIL,
    }
    return ConditionReport(regime="nondiminishing", family=schedule.family, horizon=horizon,
                           start=start, verdicts=verdicts, partial_sums=partial,
                           margins=margins, delta=delta, c=c, notes=(_MEAN_STEP_NOTE,))


def tail_verdicts(schedule: StepsizeSchedule) -> dict[str, str]:
    """Analytic tail verdicts for all six summability conditions."""
    return {name: _verdict(cert) for name, cert in _tail_certificates(schedule).items()}


def from_description(desc: dict) -> StepsizeSchedule:
    """Rebuild a schedule from its describe() document (custom ones cannot be rebuilt)."""
    family = desc["family"]
    if family == "custom":
        raise ValueError("custom schedules are not reconstructible from a description")
    return StepsizeSchedule(family, desc["m"], lambda_base=desc.get("lambda_base", 0.0),
                            seed=desc.get("seed", 0),
                            deviation_scale=desc.get("deviation_scale", 0.0),
                            deviation_rounds=desc.get("deviation_rounds", 0))


def find_feasible_delta_c(schedule: StepsizeSchedule, L: float, eta: float, r: float,
                          horizon: int, start: int = 0) -> tuple[float, float] | None:
    """Grid search over (delta, c) in {0.05,...,0.95}^2; first passing pair or None.

    The per-iteration left-hand sides do not depend on (delta, c), so they are
    computed once and the grid only compares scalars.
    """
    certs = _tail_certificates(schedule)
    if any(certs[name] is not True for name in (MEAN_DIVERGES, CHANGE_SQUARES, SPREAD)):
        return None
    m = schedule.m
    lam = np.array([schedule.vector(k) for k in range(horizon + 2)])
    lam_w = lam[start:horizon + 1]
    lam_next = lam[start + 1:horizon + 2]
    lbar = lam_w.mean(axis=1)
    lmax = lam_w.max(axis=1)
    next_sq = (lam_next ** 2).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        max_a = float(np.where(lmax > 0, 2.0 * L / (m * lbar) * lmax ** 2, 0.0).max())
    max_b = float((lbar * L).max())
    max_c = float((eta + 6.0 * m * m * L * L / (1.0 - eta) * next_sq).max())
    max_d = float((max(m ** 3 * r * r, m * m) * 6.0 * L * L * next_sq).max())
    if max_a > 1.0 - eta:
        return None
    grid = [round(0.05 * i, 2) for i in range(1, 20)]
    for delta in grid:
        for c in grid:
            if (max_b <= delta / (1.0 + delta) and max_c <= c
                    and max_d <= (1.0 - eta) ** 3 * (1.0 - c) * (1.0 - delta)):
                return delta, c
    return None
