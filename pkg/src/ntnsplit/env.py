"""Markov decision process around the cost model.

State: the 11 observed quantities of the active configuration.  Action: one
of 6 (split move x platform choice).  Reward: +/- alpha_j per constraint,
optionally minus a power term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cost_model import (
    PLATFORMS,
    SPLIT_OPTIONS,
    Assignment,
    FeasibilityReport,
    Scenario,
    as_option,
    check_feasibility,
    gateway_comp_load,
    node_comp_load,
    total_power,
)
from .errors import ConfigError, EpisodeFinishedError
from .traffic import MINUTES_PER_DAY, TrafficProfile, generate_day

N_FEATURES = 11
MAX_OPTION = len(SPLIT_OPTIONS) - 1

FEATURE_NAMES = (
    "option_id",
    "platform_id",
    "tra_mbps",
    "latency_limit_ms",
    "lambda_ru",
    "total_power_w",
    "total_latency_ms",
    "link_capacity_mbps",
    "node_comp_gops",
    "gateway_comp_gops",
    "node_comp_max_tops",
)

# Divisors bringing each raw feature to order one.
FEATURE_SCALES = np.array([3.0, 1.0, 2500.0, 30.0, 2500.0, 100.0, 30.0, 2500.0, 1480.0, 1480.0, 32.0])

SPLIT_MOVES = ("Up", "Down", "Stay")
RAN_CHOICES = ("Keep", "Switch")
_SPLIT_DELTA = {"Up": 1, "Down": -1, "Stay": 0}


@dataclass(frozen=True)
class Action:
    split_move: str
    ran_choice: str

    @property
    def index(self) -> int:
        return SPLIT_MOVES.index(self.split_move) * len(RAN_CHOICES) + RAN_CHOICES.index(self.ran_choice)

    @classmethod
    def from_index(cls, index: int) -> "Action":
        return ACTIONS[index]

    def __str__(self) -> str:
        return f"{self.split_move}/{self.ran_choice}"


ACTIONS = tuple(Action(m, r) for m in SPLIT_MOVES for r in RAN_CHOICES)
N_ACTIONS = len(ACTIONS)


def apply_action(a: Assignment, action: Action | int) -> Assignment:
    """Move the split point (towards higher option id on ``Up``) and maybe switch platform.

    Moves past either end of the option range are clamped.
    """
    if not isinstance(action, Action):
        action = ACTIONS[int(action)]
    option = min(max(a.option + _SPLIT_DELTA[action.split_move], 0), MAX_OPTION)
    platform = a.platform
    if action.ran_choice == "Switch":
        platform = PLATFORMS[1 - a.platform_index]
    return Assignment(platform, option)


@dataclass(frozen=True)
class RewardConfig:
    alpha: tuple = (1.0, 1.0, 1.0, 1.0)
    beta_power: float = 1.0
    power_ref_w: float = 20.0

    def __post_init__(self):
        alpha = tuple(float(x) for x in self.alpha)
        if len(alpha) != 4 or min(alpha) <= 0:
            raise ConfigError("alpha needs four strictly positive coefficients")
        object.__setattr__(self, "alpha", alpha)
        if self.beta_power < 0:
            raise ConfigError("beta_power must be nonnegative")
        if self.power_ref_w <= 0:
            raise ConfigError("power_ref_w must be strictly positive")

    @property
    def paper_faithful(self) -> bool:
        return self.beta_power == 0


def compute_reward(report: FeasibilityReport, power_w: float, cfg: RewardConfig) -> float:
    # Constraint order: latency, traffic, node compute, gateway compute.
    r = sum(a if ok else -a for a, ok in zip(cfg.alpha, report.flags))
    return r - cfg.beta_power * (power_w / cfg.power_ref_w)


@dataclass(frozen=True)
class EnvState:
    option_id: int
    platform_id: int
    tra_mbps: float
    latency_limit_ms: float
    lambda_ru: float
    total_power_w: float
    total_latency_ms: float
    link_capacity_mbps: float
    node_comp_gops: float
    gateway_comp_gops: float
    node_comp_max_tops: float
    step: int = 0
    report: FeasibilityReport | None = field(default=None, compare=False, repr=False)

    @property
    def assignment(self) -> Assignment:
        return Assignment(PLATFORMS[self.platform_id], self.option_id)

    def raw(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=float)


def make_state(a: Assignment, lambda_ru: float, scenario: Scenario, step: int = 0) -> EnvState:
    p = scenario.platform(a.platform)
    report = check_feasibility(a, lambda_ru, scenario)
    return EnvState(
        option_id=a.option,
        platform_id=a.platform_index,
        tra_mbps=report.tra_mbps,
        latency_limit_ms=as_option(a.option).latency_limit_ms,
        lambda_ru=float(lambda_ru),
        total_power_w=total_power(a, lambda_ru, scenario),
        total_latency_ms=report.latency_ms,
        link_capacity_mbps=p.link_capacity_mbps,
        node_comp_gops=node_comp_load(a.option, scenario.loads),
        gateway_comp_gops=gateway_comp_load(a.option, scenario.loads),
        node_comp_max_tops=p.comp_max_tops,
        step=step,
        report=report,
    )


def build_feature_vector(s: EnvState) -> np.ndarray:
    return s.raw() / FEATURE_SCALES


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    step: int
    lambda_ru: float
    assignment: Assignment
    power_w: float
    report: FeasibilityReport

    @property
    def feasible(self) -> bool:
        return self.report.feasible


TRACE_COLUMNS = ("step", "minute", "lambda_mbps", "platform", "option", "power_w",
                 "latency_ms", "tra_mbps", "feasible", "reward")


class SplitEnv:
    """One simulated day of split/platform decisions.

    Each ``step`` applies the action to the current assignment, advances the
    traffic clock by one step, and scores the new assignment at the new load.
    With an external ``trace`` the same series is replayed every episode;
    otherwise each ``reset`` seed draws a fresh noisy day from ``profile``.
    """

    def __init__(
        self,
        scenario: Scenario,
        profile: TrafficProfile | None = None,
        reward: RewardConfig | None = None,
        step_minutes: int = 15,
        steps_per_episode: int | None = None,
        trace: np.ndarray | None = None,
        mask_actions: bool = False,
    ):
        self.scenario = scenario
        self.profile = profile or TrafficProfile()
        self.reward_cfg = reward or RewardConfig()
        self.step_minutes = step_minutes
        self.steps_per_day = MINUTES_PER_DAY // step_minutes
        self.steps_per_episode = steps_per_episode or self.steps_per_day
        self.trace = None if trace is None else np.asarray(trace, dtype=float)
        if self.trace is not None and len(self.trace) != self.steps_per_day:
            raise ConfigError("trace length does not match step_minutes")
        self.mask_actions = mask_actions
        self.traffic = None
        self.state: EnvState | None = None
        self.done = True

    def lambda_at(self, n: int) -> float:
        return float(self.traffic[n % len(self.traffic)])

    def reset(self, seed: int | None = None, assignment: Assignment | None = None) -> EnvState:
        ss = np.random.SeedSequence(seed)
        init_seq, traffic_seq = ss.spawn(2)
        rng = np.random.default_rng(init_seq)
        if self.trace is not None:
            self.traffic = self.trace
        else:
            self.traffic = generate_day(self.profile, self.step_minutes,
                                        seed=int(traffic_seq.generate_state(1)[0]))
        if assignment is None:
            assignment = Assignment(PLATFORMS[rng.integers(len(PLATFORMS))],
                                    int(rng.integers(len(SPLIT_OPTIONS))))
        self.state = make_state(assignment, self.lambda_at(0), self.scenario, 0)
        self.done = False
        return self.state

    def features(self) -> np.ndarray:
        return build_feature_vector(self.state)

    def action_mask(self) -> np.ndarray:
        """Actions whose resulting assignment is feasible at the current load.

        All-true when masking is disabled or nothing is feasible.
        """
        if not self.mask_actions:
            return np.ones(N_ACTIONS, dtype=bool)
        a, lam = self.state.assignment, self.state.lambda_ru
        mask = np.array([check_feasibility(apply_action(a, i), lam, self.scenario).feasible
                         for i in range(N_ACTIONS)])
        return mask if mask.any() else np.ones(N_ACTIONS, dtype=bool)

    def step(self, action: Action | int):
        if self.state is None or self.done:
            raise EpisodeFinishedError("episode finished; call reset()")
        index = action.index if isinstance(action, Action) else int(action)
        before = self.features()
        n = self.state.step + 1
        new_assignment = apply_action(self.state.assignment, index)
        self.state = make_state(new_assignment, self.lambda_at(n), self.scenario, n)
        reward = compute_reward(self.state.report, self.state.total_power_w, self.reward_cfg)
        self.done = n >= self.steps_per_episode
        after = self.features()
        t = Transition(before, index, reward, after, self.done, n, self.state.lambda_ru,
                       new_assignment, self.state.total_power_w, self.state.report)
        return after, reward, self.done, t

    def minute_of(self, n: int) -> int:
        return (n % self.steps_per_day) * self.step_minutes

    def trace_row(self, t: Transition) -> dict:
        return {
            "step": t.step,
            "minute": self.minute_of(t.step),
            "lambda_mbps": t.lambda_ru,
            "platform": t.assignment.platform,
            "option": t.assignment.option,
            "power_w": t.power_w,
            "latency_ms": t.report.latency_ms,
            "tra_mbps": t.report.tra_mbps,
            "feasible": t.feasible,
            "reward": t.reward,
        }
