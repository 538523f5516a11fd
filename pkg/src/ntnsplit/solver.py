"""Exhaustive minimum-power search over all (platform, option) assignments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

from .cost_model import (
    PLATFORMS,
    SPLIT_OPTIONS,
    Assignment,
    FeasibilityReport,
    Scenario,
    check_feasibility,
    total_power,
)


class Candidate(NamedTuple):
    assignment: Assignment
    power_w: float
    feasible: bool
    report: FeasibilityReport


@dataclass(frozen=True)
class OptimalDecision:
    assignment: Assignment
    power_w: float
    report: FeasibilityReport
    ranked_alternatives: tuple  # every Candidate, best feasible first

    @property
    def feasible(self) -> bool:
        return True


@dataclass(frozen=True)
class Infeasible:
    """No assignment satisfies every constraint; ``candidates`` says why."""

    lambda_ru: float
    candidates: tuple

    @property
    def feasible(self) -> bool:
        return False

    @property
    def reports(self) -> tuple:
        return tuple(c.report for c in self.candidates)


Decision = Union[OptimalDecision, Infeasible]


def enumerate_assignments() -> list[Assignment]:
    return [Assignment(p, o.id) for p in PLATFORMS for o in SPLIT_OPTIONS]


def _tie_key(c: Candidate):
    # Lower power, then lower option id, then SAT before HAP.
    return (c.power_w, c.assignment.option, c.assignment.platform_index)


def evaluate_all(lambda_ru: float, scenario: Scenario) -> list[Candidate]:
    out = []
    for a in enumerate_assignments():
        report = check_feasibility(a, lambda_ru, scenario)
        out.append(Candidate(a, total_power(a, lambda_ru, scenario), report.feasible, report))
    return out


def solve_optimal(lambda_ru: float, scenario: Scenario) -> Decision:
    if lambda_ru < 0:
        raise ValueError("lambda_ru must be nonnegative")
    candidates = evaluate_all(lambda_ru, scenario)
    ranked = sorted(candidates, key=lambda c: (not c.feasible, *_tie_key(c)))
    best = ranked[0]
    if not best.feasible:
        return Infeasible(lambda_ru, tuple(candidates))
    return OptimalDecision(best.assignment, best.power_w, best.report, tuple(ranked))


def worst_feasible_power(lambda_ru: float, scenario: Scenario) -> float | None:
    """Highest power among feasible assignments; the normaliser for reported power."""
    powers = [c.power_w for c in evaluate_all(lambda_ru, scenario) if c.feasible]
    return max(powers) if powers else None
