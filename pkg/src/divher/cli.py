"""Training, evaluation, and benchmarking entry points.

The training loop alternates environment rollouts with batched updates drawn
from the diversity-scored replay buffer, evaluates once per epoch, and
appends one CSV row per epoch as it goes.  All randomness descends from the
single run seed through named sub-streams.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .agent import SAMPLER_VARIANTS, DdpgAgent, TrainConfig
from .dpp import SamplerStats, kdpp_sample
from .envs import make_env
from .replay import EpisodicBuffer, Trajectory, Transition, trajectory_diversity

log = logging.getLogger("divher")

CSV_HEADER = "epoch,success_rate,critic_loss,actor_loss,mean_diversity,kdpp_fallbacks,seconds"

# variant -> (trajectory sampling mode, goal sampling mode, force her_ratio 0)
_VARIANT_PLAN = {
    "dtgsh": ("diversity", "kdpp", False),
    "dtsh": ("diversity", "uniform", False),
    "dgsh": ("uniform", "kdpp", False),
    "her-uniform": ("uniform", "uniform", False),
    "none": ("uniform", "uniform", True),
}


class BenchmarkError(RuntimeError):
    """Raised when measured scaling violates the expected complexity bounds."""


class RngStreams(NamedTuple):
    """Independent generators deterministically derived from one seed."""

    env: np.random.Generator
    exploration: np.random.Generator
    replay: np.random.Generator
    dpp: np.random.Generator
    eval: np.random.Generator
    init: np.random.Generator


def spawn_streams(seed) -> RngStreams:
    children = np.random.SeedSequence(seed).spawn(len(RngStreams._fields))
    return RngStreams(*(np.random.default_rng(c) for c in children))


@dataclass
class RunConfig:
    """A full training-run description: hyperparameters plus run plumbing."""

    env: str = "bitflip"
    env_overrides: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs/latest"
    checkpoint_every: int = 0
    record_timing: bool = True

    def validate(self):
        self.train.validate()
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be nonnegative")
        return self


@dataclass
class EpochMetrics:
    epoch: int
    success_rate: float
    critic_loss: float
    actor_loss: float
    mean_diversity: float
    kdpp_fallbacks: int
    seconds: float

    def csv_row(self):
        return (
            f"{self.epoch},{self.success_rate:.6f},{self.critic_loss:.8f},"
            f"{self.actor_loss:.8f},{self.mean_diversity:.8f},"
            f"{self.kdpp_fallbacks},{self.seconds:.3f}"
        )


def _rollout(env, agent, env_rng, explore_rng):
    state, goal = env.reset(env_rng)
    achieved = [env.achieved_goal(state)]
    transitions = []
    for _ in range(env.spec.horizon):
        action = agent.act_with_noise(state, goal, explore_rng)
        result = env.step(action)
        transitions.append(
            Transition(
                state=state,
                action=np.asarray(action, dtype=float),
                reward=result.reward,
                next_state=result.next_state,
                desired_goal=goal,
                achieved_goal_next=result.achieved_goal,
            )
        )
        achieved.append(result.achieved_goal)
        state = result.next_state
    return Trajectory(transitions=transitions, achieved_goals=np.array(achieved))


def train_run(config: RunConfig) -> List[EpochMetrics]:
    """Run the full training loop, returning (and writing) per-epoch metrics.

    Each episode is rolled out with exploration noise, scored, and stored;
    a fixed number of minibatch updates follows every episode.  Metrics are
    flushed to CSV after every epoch so an aborted run leaves a usable
    partial file.
    """
    config.validate()
    cfg = config.train
    env = make_env(config.env, **config.env_overrides)
    streams = spawn_streams(cfg.seed)
    agent = DdpgAgent(env.spec, cfg, streams.init)
    buffer = EpisodicBuffer(cfg.buffer_capacity, cfg.window, env.compute_reward)
    traj_mode, goal_mode, no_relabel = _VARIANT_PLAN[cfg.variant]
    her_ratio = 0.0 if no_relabel else cfg.her_ratio

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log.info(
        "training %s on %s: %d epochs x %d episodes, seed %d",
        cfg.variant, config.env, cfg.epochs, cfg.episodes_per_epoch, cfg.seed,
    )

    metrics: List[EpochMetrics] = []
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        fh.flush()
        for epoch in range(cfg.epochs):
            start = time.perf_counter() if config.record_timing else 0.0
            stats = SamplerStats()
            critic_losses = []
            actor_losses = []
            diversities = []
            for _ in range(cfg.episodes_per_epoch):
                trajectory = _rollout(env, agent, streams.env, streams.exploration)
                buffer.store_episode(trajectory)
                agent.observe_episode(trajectory)
                diversities.append(trajectory.diversity)
                for _ in range(cfg.updates_per_episode):
                    batch = buffer.sample_minibatch(
                        cfg.candidate_count,
                        cfg.minibatch_size,
                        streams.replay,
                        her_ratio=her_ratio,
                        trajectory_mode=traj_mode,
                        goal_mode=goal_mode,
                        dpp_rng=streams.dpp,
                        stats=stats,
                    )
                    critic_loss, actor_loss, grads = agent.compute_losses(
                        batch, cfg.gamma
                    )
                    agent.update(grads)
                    critic_losses.append(critic_loss)
                    actor_losses.append(actor_loss)
            success = agent.evaluate(env, cfg.eval_episodes, streams.eval)
            seconds = time.perf_counter() - start if config.record_timing else 0.0
            entry = EpochMetrics(
                epoch=epoch,
                success_rate=success,
                critic_loss=float(np.mean(critic_losses)),
                actor_loss=float(np.mean(actor_losses)),
                mean_diversity=float(np.mean(diversities)),
                kdpp_fallbacks=stats.fallbacks,
                seconds=seconds,
            )
            metrics.append(entry)
            fh.write(entry.csv_row() + "\n")
            fh.flush()
            log.info(
                "epoch %d: success %.3f, critic loss %.4f, diversity %.4f",
                epoch, success, entry.critic_loss, entry.mean_diversity,
            )
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                agent.save(out_dir / f"checkpoint_epoch{epoch}.npz",
                           extra_meta=_checkpoint_meta(config))
    agent.save(out_dir / "checkpoint.npz", extra_meta=_checkpoint_meta(config))
    return metrics


def _checkpoint_meta(config: RunConfig):
    return {"env_name": config.env, "env_overrides": dict(config.env_overrides)}


def eval_run(checkpoint, env_name, n_episodes, seed):
    """Load a checkpoint and report its deterministic success rate."""
    path = Path(checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    agent, extra = DdpgAgent.load(path)
    stored = extra.get("env_name")
    if stored is not None and stored != env_name:
        raise ValueError(
            f"checkpoint was trained on {stored!r} but --env is {env_name!r}"
        )
    env = make_env(env_name, **extra.get("env_overrides", {}))
    if (env.spec.state_dim, env.spec.action_dim, env.spec.goal_dim) != (
        agent.spec.state_dim, agent.spec.action_dim, agent.spec.goal_dim,
    ):
        raise ValueError("environment dimensions do not match the checkpoint")
    return agent.evaluate(env, n_episodes, np.random.default_rng(seed))


# -- benchmarking -----------------------------------------------------------


def _time_per_call(fn, calls, blocks=5):
    """Mean seconds per call over `blocks * calls` runs plus a stable median.

    Returns (overall mean, median of per-block means).
    """
    for _ in range(3):
        fn()
    block_means = []
    for _ in range(blocks):
        start = time.perf_counter()
        for _ in range(calls):
            fn()
        block_means.append((time.perf_counter() - start) / calls)
    return float(np.mean(block_means)), float(np.median(block_means))


def bench_run(suite, calls_per_block=200):
    """Measure diversity-scoring or sampler timings and check their scaling.

    Scoring cost may grow at most cubically in the window length (slack
    factor 10 per doubling at fixed window count); sampling cost at most
    quadratically in the draw size (slack factor 5 per doubling at fixed
    candidate count).  Violations raise BenchmarkError.
    """
    rng = np.random.default_rng(1234)
    report = {"suite": suite, "calls": calls_per_block * 5, "results": []}
    failures = []

    if suite == "dpp":
        m, dim = 100, 64
        features = rng.normal(size=(dim, m))
        medians = {}
        for k in (16, 32, 64):
            sample_rng = np.random.default_rng(99)
            mean, median = _time_per_call(
                lambda: kdpp_sample(features, k, sample_rng), calls_per_block
            )
            medians[k] = median
            report["results"].append(
                {"m": m, "k": k, "per_call_seconds": mean}
            )
        for small, big in ((16, 32), (32, 64)):
            ratio = medians[big] / medians[small]
            if ratio > 5.0:
                failures.append(
                    f"sampling time grew {ratio:.2f}x from k={small} to "
                    f"k={big}, above the quadratic bound factor 5"
                )
        ks = sorted(medians)
        for a, b in zip(ks, ks[1:]):
            if medians[b] < medians[a]:
                failures.append(
                    f"sampling time decreased from k={a} to k={b}"
                )
    elif suite == "replay":
        dim = 8
        fixed_windows = 40
        medians = {}
        for b in (2, 4, 8):
            goals = rng.normal(size=(fixed_windows + b - 1, dim))
            mean, median = _time_per_call(
                lambda: trajectory_diversity(goals, b), calls_per_block
            )
            medians[b] = median
            report["results"].append(
                {"windows": fixed_windows, "b": b, "per_call_seconds": mean}
            )
        for small, big in ((2, 4), (4, 8)):
            ratio = medians[big] / medians[small]
            if ratio > 10.0:
                failures.append(
                    f"scoring time grew {ratio:.2f}x from b={small} to "
                    f"b={big}, above the cubic bound factor 10"
                )
        horizon_goals = rng.normal(size=(51, dim))
        horizon_medians = {}
        for b in (2, 4, 8):
            mean, median = _time_per_call(
                lambda: trajectory_diversity(horizon_goals, b), calls_per_block
            )
            horizon_medians[b] = median
            report["results"].append(
                {"horizon": 50, "b": b, "per_call_seconds": mean}
            )
        bs = sorted(horizon_medians)
        for a, b in zip(bs, bs[1:]):
            if horizon_medians[b] < horizon_medians[a]:
                failures.append(f"scoring time decreased from b={a} to b={b}")
    else:
        raise ValueError(f"unknown bench suite {suite!r}; known: dpp, replay")

    report["failures"] = failures
    if failures:
        raise BenchmarkError("; ".join(failures))
    return report


# -- multi-seed experiments ---------------------------------------------------


def run_experiment(base: RunConfig, variants: Sequence[str], seeds: Sequence[int],
                   out_dir) -> Dict[str, dict]:
    """Train every (variant, seed) pair and aggregate success-rate curves.

    Writes each run under out_dir/<variant>/seed<k>/ and a per-variant
    summary CSV with the median and 25th/75th-percentile success rate per
    epoch.  Returns {variant: {"per_seed": array, "median": ..., "p25": ...,
    "p75": ...}}.
    """
    out_dir = Path(out_dir)
    summary: Dict[str, dict] = {}
    for variant in variants:
        curves = []
        for seed in seeds:
            run_cfg = replace(
                base,
                train=replace(base.train, variant=variant, seed=seed),
                out_dir=str(out_dir / variant / f"seed{seed}"),
            )
            metrics = train_run(run_cfg)
            curves.append([m.success_rate for m in metrics])
        per_seed = np.array(curves)
        entry = {
            "per_seed": per_seed,
            "median": np.median(per_seed, axis=0),
            "p25": np.percentile(per_seed, 25, axis=0),
            "p75": np.percentile(per_seed, 75, axis=0),
        }
        summary[variant] = entry
        with open(out_dir / f"{variant}_summary.csv", "w", newline="") as fh:
            fh.write("epoch,median,p25,p75\n")
            for epoch in range(per_seed.shape[1]):
                fh.write(
                    f"{epoch},{entry['median'][epoch]:.6f},"
                    f"{entry['p25'][epoch]:.6f},{entry['p75'][epoch]:.6f}\n"
                )
    return summary


def epochs_to_reach(success_curve, threshold):
    """First epoch index at which the curve reaches threshold, else +inf."""
    for i, value in enumerate(success_curve):
        if value >= threshold:
            return i
    return float("inf")


# -- command line -------------------------------------------------------------


def _parse_config_file(path):
    """Flat key = value settings file; '#' starts a comment."""
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


_TRAIN_KEYS = {
    # flag/config key -> (TrainConfig field, converter)
    "epochs": ("epochs", int),
    "episodes_per_epoch": ("episodes_per_epoch", int),
    "updates_per_episode": ("updates_per_episode", int),
    "k": ("minibatch_size", int),
    "m": ("candidate_count", int),
    "b": ("window", int),
    "her_ratio": ("her_ratio", float),
    "seed": ("seed", int),
    "variant": ("variant", str),
    "gamma": ("gamma", float),
    "actor_lr": ("actor_lr", float),
    "critic_lr": ("critic_lr", float),
    "polyak": ("polyak", float),
    "noise_scale": ("noise_scale", float),
    "random_action_prob": ("random_action_prob", float),
    "capacity": ("buffer_capacity", int),
    "eval_episodes": ("eval_episodes", int),
}

_ENV_KEYS = {
    "n_bits": int,
    "horizon": int,
    "epsilon": float,
}


def _resolve(args, file_values, key, convert):
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    if key in file_values:
        return convert(file_values[key])
    return None


def _build_run_config(args) -> RunConfig:
    file_values = _parse_config_file(args.config) if args.config else {}
    train_kwargs = {}
    for key, (attr, convert) in _TRAIN_KEYS.items():
        value = _resolve(args, file_values, key, convert)
        if value is not None:
            train_kwargs[attr] = value
    env_name = _resolve(args, file_values, "env", str) or "bitflip"
    env_overrides = {}
    for key, convert in _ENV_KEYS.items():
        value = _resolve(args, file_values, key, convert)
        if value is not None:
            env_overrides[key] = value
    if env_name == "pointpush":
        env_overrides.pop("n_bits", None)
    out_dir = _resolve(args, file_values, "out", str) or "runs/latest"
    checkpoint_every = _resolve(args, file_values, "checkpoint_every", int) or 0
    record_timing = not getattr(args, "no_timing", False)
    if "record_timing" in file_values and getattr(args, "no_timing", False) is False:
        record_timing = file_values["record_timing"].lower() not in ("0", "false", "no")
    return RunConfig(
        env=env_name,
        env_overrides=env_overrides,
        train=TrainConfig(**train_kwargs),
        out_dir=out_dir,
        checkpoint_every=checkpoint_every,
        record_timing=record_timing,
    )


def build_parser():
    parser = argparse.ArgumentParser(
        prog="divher",
        description="Goal-conditioned RL with diversity-weighted hindsight replay",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a training experiment")
    train.add_argument("--env", choices=("bitflip", "pointpush"), default=None)
    train.add_argument("--variant", choices=SAMPLER_VARIANTS, default=None)
    train.add_argument("--epochs", type=int, default=None)
    train.add_argument("--episodes-per-epoch", dest="episodes_per_epoch",
                       type=int, default=None)
    train.add_argument("--updates-per-episode", dest="updates_per_episode",
                       type=int, default=None)
    train.add_argument("--k", type=int, default=None, help="minibatch size")
    train.add_argument("--m", type=int, default=None, help="candidate transitions per update")
    train.add_argument("--b", type=int, default=None, help="diversity window length")
    train.add_argument("--her-ratio", dest="her_ratio", type=float, default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out", default=None, help="output directory")
    train.add_argument("--config", default=None, help="key = value settings file")
    train.add_argument("--gamma", type=float, default=None)
    train.add_argument("--actor-lr", dest="actor_lr", type=float, default=None)
    train.add_argument("--critic-lr", dest="critic_lr", type=float, default=None)
    train.add_argument("--polyak", type=float, default=None)
    train.add_argument("--noise-scale", dest="noise_scale", type=float, default=None)
    train.add_argument("--random-action-prob", dest="random_action_prob",
                       type=float, default=None)
    train.add_argument("--capacity", type=int, default=None, help="buffer capacity")
    train.add_argument("--eval-episodes", dest="eval_episodes", type=int, default=None)
    train.add_argument("--n-bits", dest="n_bits", type=int, default=None)
    train.add_argument("--horizon", type=int, default=None)
    train.add_argument("--epsilon", type=float, default=None)
    train.add_argument("--checkpoint-every", dest="checkpoint_every",
                       type=int, default=None)
    train.add_argument("--no-timing", action="store_true",
                       help="write 0.0 in the seconds column (deterministic output)")

    evaluate = sub.add_parser("eval", help="evaluate a saved checkpoint")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--env", choices=("bitflip", "pointpush"), required=True)
    evaluate.add_argument("--episodes", type=int, default=100)
    evaluate.add_argument("--seed", type=int, default=0)

    bench = sub.add_parser("bench", help="time the diversity and sampling paths")
    bench.add_argument("--suite", choices=("dpp", "replay"), required=True)
    return parser


def _configure_logging():
    level_name = os.environ.get("DIVHER_LOG", "info").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(message)s"
    )


def main(argv=None):
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            config = _build_run_config(args)
            train_run(config)
            log.info("run complete: %s", config.out_dir)
        elif args.command == "eval":
            rate = eval_run(args.checkpoint, args.env, args.episodes, args.seed)
            print(f"success_rate {rate:.4f}")
        elif args.command == "bench":
            report = bench_run(args.suite)
            for row in report["results"]:
                label = ", ".join(f"{k}={v}" for k, v in row.items()
                                  if k != "per_call_seconds")
                print(f"{label}: {row['per_call_seconds'] * 1e3:.3f} ms/call")
            print("scaling assertions passed")
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
