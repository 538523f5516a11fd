"""Command line entry point: ``ntnsplit oracle|train|eval``.

Exit status: 0 success, 1 configuration error, 2 infeasible day or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import __version__
from .cost_model import Scenario, default_scenario, read_config_file, scenario_from_dict
from .env import TRACE_COLUMNS, RewardConfig, SplitEnv
from .errors import ConfigError, WeightsFormatError
from .qlearn import (
    EpsilonSchedule,
    StepRecord,
    TrainConfig,
    evaluate,
    load_weights,
    save_weights,
    train,
)
from .solver import evaluate_all, solve_optimal
from .traffic import TrafficProfile, generate_day, read_trace_csv

log = logging.getLogger("ntnsplit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
WEIGHTS_NAME = "qnet.weights"
NORMALIZER_NOTE = "normalized_power = agent power_w / max power_w over feasible assignments at the same step"


@dataclass
class RunConfig:
    scenario: Scenario = field(default_factory=default_scenario)
    profile: TrafficProfile = field(default_factory=TrafficProfile)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: Path = Path("out")
    seed: int = 0
    step_minutes: int = 15
    trace_path: Path | None = None
    mask_actions: bool = False
    config_path: Path | None = None

    def as_dict(self) -> dict:
        t = asdict(self.train)
        t["epsilon"] = asdict(self.train.epsilon)
        return {
            "scenario": self.scenario.to_dict(),
            "profile": asdict(self.profile),
            "reward": asdict(self.reward),
            "train": t,
            "seed": self.seed,
            "step_minutes": self.step_minutes,
            "trace": str(self.trace_path) if self.trace_path else None,
            "mask_actions": self.mask_actions,
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def make_env(self) -> SplitEnv:
        trace = None
        if self.trace_path is not None:
            trace, step = read_trace_csv(self.trace_path)
            if step != self.step_minutes:
                raise ConfigError(f"trace step {step} min != step_minutes {self.step_minutes}")
        return SplitEnv(self.scenario, self.profile, self.reward, self.step_minutes,
                        trace=trace, mask_actions=self.mask_actions)

    def day_traffic(self):
        if self.trace_path is not None:
            return read_trace_csv(self.trace_path)[0]
        return generate_day(self.profile, self.step_minutes, seed=self.seed)


def _section(data, name, cls, skip=()):
    sec = dict(data.get(name, {}))
    known = {f.name for f in fields(cls)} - set(skip)
    unknown = set(sec) - known
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {sorted(unknown)}")
    return sec


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional config file, then command-line flags."""
    data = read_config_file(args.config) if args.config else {}
    scenario = scenario_from_dict(data)
    run = dict(data.get("run", {}))

    traffic_sec = dict(data.get("traffic", {}))
    trace = traffic_sec.pop("trace", None)
    traffic = _section({"traffic": traffic_sec}, "traffic", TrafficProfile, skip=("seed",))
    if args.profile:
        traffic["kind"] = args.profile
    seed = args.seed if args.seed is not None else int(run.get("seed", 0))
    try:
        profile = TrafficProfile(**traffic, seed=seed)
    except TypeError as exc:
        raise ConfigError(f"[traffic]: {exc}") from None

    reward_kw = _section(data, "reward", RewardConfig)
    if args.paper_faithful_reward:
        reward_kw["beta_power"] = 0.0
    reward = RewardConfig(**reward_kw)

    train_kw = _section(data, "train", TrainConfig, skip=("seed",))
    if "epsilon" in train_kw:
        train_kw["epsilon"] = EpsilonSchedule(**train_kw["epsilon"])
    if getattr(args, "episodes", None) is not None:
        train_kw["episodes"] = args.episodes
    if getattr(args, "target_network", None) is not None:
        train_kw["target_update_every"] = args.target_network
    try:
        train_cfg = TrainConfig(**train_kw, seed=seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[train]: {exc}") from None

    trace_path = args.trace or trace
    if trace_path is not None and not Path(trace_path).is_file():
        raise ConfigError(f"trace file not found: {trace_path}")
    step_minutes = int(run.get("step_minutes", 15))
    if step_minutes <= 0 or 1440 % step_minutes:
        raise ConfigError("step_minutes must divide 1440")
    return RunConfig(
        scenario=scenario,
        profile=profile,
        reward=reward,
        train=train_cfg,
        out_dir=Path(args.out),
        seed=seed,
        step_minutes=step_minutes,
        trace_path=Path(trace_path) if trace_path else None,
        mask_actions=args.mask_actions or bool(run.get("mask_actions", False)),
        config_path=Path(args.config) if args.config else None,
    )


# --------------------------------------------------------------------------
# CSV helpers
# --------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_csv(path: Path, cfg: RunConfig, columns, rows, notes=()) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# ntnsplit {__version__} seed={cfg.seed} config_hash={cfg.config_hash}"
                 f" profile={cfg.profile.kind} beta_power={cfg.reward.beta_power!r}\n")
        for note in notes:
            fh.write(f"# {note}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    """Read one of our CSV outputs, skipping ``#`` comment rows."""
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

CANDIDATE_KEYS = [f"{p}_{o}" for p in ("SAT", "HAP") for o in range(4)]


def _candidate_columns():
    return [f"feasible_{k}" for k in CANDIDATE_KEYS] + [f"power_w_{k}" for k in CANDIDATE_KEYS]


def oracle_row(step: int, minute: int, lam: float, cfg: RunConfig) -> dict:
    decision = solve_optimal(lam, cfg.scenario)
    row = {"step": step, "minute": minute, "lambda_mbps": float(lam)}
    if decision.feasible:
        row.update(platform=decision.assignment.platform, option=decision.assignment.option,
                   power_w=decision.power_w, status="OPTIMAL")
    else:
        row.update(platform="", option="", power_w=None, status="INFEASIBLE")
    for c in evaluate_all(lam, cfg.scenario):
        key = f"{c.assignment.platform}_{c.assignment.option}"
        row[f"feasible_{key}"] = c.feasible
        row[f"power_w_{key}"] = c.power_w
    return row


ORACLE_COLUMNS = ["step", "minute", "lambda_mbps", "platform", "option", "power_w", "status"]


def cmd_oracle(cfg: RunConfig, lambda_ru: float | None = None) -> int:
    columns = ORACLE_COLUMNS + _candidate_columns()
    if lambda_ru is not None:
        w = csv.writer(sys.stdout)
        w.writerow(["platform", "option", "power_w", "feasible", "latency_ok", "traffic_ok",
                    "node_comp_ok", "gateway_comp_ok", "optimal"])
        decision = solve_optimal(lambda_ru, cfg.scenario)
        for c in evaluate_all(lambda_ru, cfg.scenario):
            best = decision.feasible and c.assignment == decision.assignment
            w.writerow([_fmt(v) for v in (c.assignment.platform, c.assignment.option, c.power_w,
                                          c.feasible, *c.report.flags, best)])
        return EXIT_OK if decision.feasible else EXIT_RUNTIME

    traffic = cfg.day_traffic()
    rows = [oracle_row(k, k * cfg.step_minutes, lam, cfg) for k, lam in enumerate(traffic)]
    write_csv(cfg.out_dir / "oracle_day.csv", cfg, columns, rows)
    feasible = [r for r in rows if r["status"] == "OPTIMAL"]
    hist = Counter(r["option"] for r in feasible)
    mean_power = sum(r["power_w"] for r in feasible) / len(feasible) if feasible else float("nan")
    print(f"oracle profile={cfg.profile.kind} steps={len(rows)} mean_power_w={mean_power:.4f} "
          + " ".join(f"option{o}={hist.get(o, 0)}" for o in range(4))
          + f" infeasible={len(rows) - len(feasible)}")
    return EXIT_OK if len(feasible) == len(rows) else EXIT_RUNTIME


METRICS_COLUMNS = ["episode", "cumulative_reward", "mean_power_w", "violation_rate",
                   "oracle_match_rate", "updates"]
NORMALIZED_COLUMNS = ["episode", "step", "global_step", "lambda_mbps", "platform", "option",
                      "power_w", "feasible", "oracle_power_w", "worst_feasible_power_w",
                      "normalized_power"]


def normalized_row(rec: StepRecord, global_step: int, scenario: Scenario) -> dict:
    t = rec.transition
    powers = [c.power_w for c in evaluate_all(t.lambda_ru, scenario) if c.feasible]
    worst = max(powers) if powers else None
    return {
        "episode": rec.episode,
        "step": t.step,
        "global_step": global_step,
        "lambda_mbps": t.lambda_ru,
        "platform": t.assignment.platform,
        "option": t.assignment.option,
        "power_w": t.power_w,
        "feasible": t.feasible,
        "oracle_power_w": rec.decision.power_w if rec.decision.feasible else None,
        "worst_feasible_power_w": worst,
        "normalized_power": t.power_w / worst if worst else None,
    }


def cmd_train(cfg: RunConfig) -> int:
    env = cfg.make_env()
    steps = []
    net, metrics = train(env, cfg.train, on_step=lambda rec: steps.append(
        normalized_row(rec, len(steps), cfg.scenario)))
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(cfg.out_dir / "metrics.csv", cfg, METRICS_COLUMNS, [asdict(m) for m in metrics])
    write_csv(cfg.out_dir / "normalized_power.csv", cfg, NORMALIZED_COLUMNS, steps,
              notes=[NORMALIZER_NOTE])
    save_weights(net, cfg.out_dir / WEIGHTS_NAME)
    summary, _ = evaluate(net, env, cfg.seed, days=1)
    last = metrics[-min(50, len(metrics)):] if metrics else []
    viol = sum(m.violation_rate for m in last) / len(last) if last else float("nan")
    print(f"train episodes={len(metrics)} final50_violation_rate={viol:.4f} "
          f"heldout_match={summary.oracle_match_rate:.4f} heldout_power_ratio={summary.power_ratio:.4f} "
          f"weights={cfg.out_dir / WEIGHTS_NAME}")
    return EXIT_OK


EVAL_COLUMNS = list(TRACE_COLUMNS) + ["oracle_platform", "oracle_option", "oracle_power_w", "match", "day"]


def eval_row(env: SplitEnv, rec: StepRecord) -> dict:
    row = env.trace_row(rec.transition)
    d = rec.decision
    row.update(
        oracle_platform=d.assignment.platform if d.feasible else "",
        oracle_option=d.assignment.option if d.feasible else "",
        oracle_power_w=d.power_w if d.feasible else None,
        match=rec.oracle_match,
        day=rec.episode,
    )
    return row


def cmd_eval(cfg: RunConfig, weights: Path, days: int = 1) -> int:
    net = load_weights(weights)
    env = cfg.make_env()
    summary, records = evaluate(net, env, cfg.seed, days=days)
    write_csv(cfg.out_dir / "eval_trace.csv", cfg, EVAL_COLUMNS, [eval_row(env, r) for r in records])
    items = {**asdict(summary), "power_ratio": summary.power_ratio, "weights": str(weights)}
    write_csv(cfg.out_dir / "eval_summary.csv", cfg, ["metric", "value"],
              [{"metric": k, "value": v} for k, v in items.items()])
    print(f"eval days={days} oracle_match={100 * summary.oracle_match_rate:.2f}% "
          f"violation_rate={summary.violation_rate:.4f} mean_power_w={summary.mean_power_w:.4f} "
          f"oracle_mean_power_w={summary.oracle_mean_power_w:.4f} power_ratio={summary.power_ratio:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML scenario/run file")
    common.add_argument("--profile", choices=["business", "residential"])
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--trace", help="external minute,lambda_mbps traffic CSV")
    common.add_argument("--paper-faithful-reward", action="store_true",
                        help="drop the power term from the reward (beta_power = 0)")
    common.add_argument("--mask-actions", action="store_true",
                        help="restrict exploration and greedy choice to feasible moves")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ntnsplit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ntnsplit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("oracle", parents=[common], help="exhaustive optimum for one load or a day")
    p.add_argument("--lambda", dest="lambda_ru", type=float, help="single RU load in Mbps")

    p = sub.add_parser("train", parents=[common], help="train the DQN agent")
    p.add_argument("--episodes", type=int)
    p.add_argument("--target-network", type=int, metavar="N",
                   help="sync a target network every N updates (default: off)")

    p = sub.add_parser("eval", parents=[common], help="greedy rollout of saved weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--days", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_run_config(args)
        if args.command == "oracle":
            return cmd_oracle(cfg, args.lambda_ru)
        if args.command == "train":
            return cmd_train(cfg)
        return cmd_eval(cfg, Path(args.weights), args.days)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, WeightsFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
