"""Episodic replay with diversity-weighted sampling and hindsight relabelling.

Episodes are scored by how much their achieved goals spread out: each length-b
sliding window of unit-normalized achieved goals contributes the determinant
of its Gram matrix, and the per-episode sum drives proportional trajectory
sampling.  Minibatches are assembled by relabelling one transition per sampled
trajectory and picking a determinant-diverse subset of the relabelled goals.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import dpp

# Below this total score the proportional draw is ill-defined; fall back to
# uniform so training proceeds before anything has moved.
_TOTAL_DIVERSITY_FLOOR = 1e-12
# Full recompute cadence for the cached buffer total, guarding drift.
_RECOMPUTE_EVERY = 100

TRAJECTORY_MODES = ("diversity", "uniform")
GOAL_MODES = ("kdpp", "uniform")


@dataclass(eq=False)
class Transition:
    """One environment step: (s, a, r, s', desired goal, next achieved goal)."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    desired_goal: np.ndarray
    achieved_goal_next: np.ndarray


@dataclass(eq=False)
class Trajectory:
    """A full episode: T transitions plus the T+1 achieved goals around them."""

    transitions: List[Transition]
    achieved_goals: np.ndarray
    diversity: Optional[float] = None

    def __post_init__(self):
        self.achieved_goals = np.asarray(self.achieved_goals, dtype=float)
        if len(self.achieved_goals) != len(self.transitions) + 1:
            raise ValueError(
                f"expected {len(self.transitions) + 1} achieved goals, "
                f"got {len(self.achieved_goals)}"
            )

    @property
    def horizon(self):
        return len(self.transitions)

    @property
    def desired_goal(self):
        return self.transitions[0].desired_goal


@dataclass(eq=False)
class CandidateTransition:
    """A stored transition paired with a (possibly) rewritten goal and reward."""

    base: Transition
    relabelled_goal: np.ndarray
    recomputed_reward: float


def trajectory_diversity(achieved_goals, window):
    """Sum of Gram determinants over all sliding windows of achieved goals.

    Goals are unit-normalized per window; identical (or all-zero) goals give
    zero.  The sequence must be at least as long as the window.
    """
    goals = np.asarray(achieved_goals, dtype=float)
    if goals.ndim != 2:
        raise ValueError("achieved goals must be a 2-D sequence of vectors")
    if window < 2:
        raise ValueError("window length must be at least 2")
    if len(goals) < window:
        raise ValueError(
            f"need at least {window} achieved goals, got {len(goals)}"
        )
    total = 0.0
    for start in range(len(goals) - window + 1):
        cols = goals[start : start + window].T
        total += dpp.det_psd(dpp.gram_kernel(dpp.normalize_columns(cols)))
    return total


def relabel(transition, future_achieved, her_ratio, rng, reward_fn):
    """Swap in a future achieved goal with probability her_ratio.

    The reward is recomputed against the transition's next achieved goal under
    whichever goal ends up attached.  An empty future pool keeps the original
    goal.
    """
    future = np.asarray(future_achieved, dtype=float)
    goal = transition.desired_goal
    if her_ratio > 0 and len(future) > 0 and rng.random() < her_ratio:
        goal = future[int(rng.integers(len(future)))]
    goal = np.array(goal, dtype=float)
    return CandidateTransition(
        base=transition,
        relabelled_goal=goal,
        recomputed_reward=reward_fn(goal, transition.achieved_goal_next),
    )


class EpisodicBuffer:
    """Bounded FIFO of episodes with cached diversity scores.

    Single writer, arbitrarily many concurrent readers; storing and sampling
    must not interleave.
    """

    def __init__(self, capacity, window, reward_fn: Callable[[np.ndarray, np.ndarray], float]):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        if window < 2:
            raise ValueError("window length must be at least 2")
        self.capacity = capacity
        self.window = window
        self.reward_fn = reward_fn
        self._episodes: deque[Trajectory] = deque()
        self.total_diversity = 0.0
        self._stores = 0

    def __len__(self):
        return len(self._episodes)

    @property
    def episodes(self):
        return self._episodes

    def store_episode(self, trajectory: Trajectory):
        """Score and append an episode, evicting the oldest when full."""
        if trajectory.diversity is None:
            trajectory.diversity = trajectory_diversity(
                trajectory.achieved_goals, self.window
            )
        self._episodes.append(trajectory)
        self.total_diversity += trajectory.diversity
        if len(self._episodes) > self.capacity:
            evicted = self._episodes.popleft()
            self.total_diversity = sum(t.diversity for t in self._episodes)
            del evicted
        self._stores += 1
        if self._stores % _RECOMPUTE_EVERY == 0:
            self.total_diversity = sum(t.diversity for t in self._episodes)

    def sample_trajectories(self, m, rng, uniform=False):
        """Draw m episodes with replacement, proportionally to diversity.

        Falls back to uniform draws when nothing stored has any diversity, or
        when `uniform` is set (ablation mode).
        """
        if not self._episodes:
            raise ValueError("cannot sample from an empty buffer")
        n = len(self._episodes)
        episodes = list(self._episodes)
        if uniform or self.total_diversity < _TOTAL_DIVERSITY_FLOOR:
            idx = rng.integers(n, size=m)
        else:
            weights = np.array([t.diversity for t in episodes])
            idx = rng.choice(n, size=m, p=weights / weights.sum())
        return [episodes[i] for i in idx]

    def sample_minibatch(
        self,
        m,
        k,
        rng,
        her_ratio=0.8,
        trajectory_mode="diversity",
        goal_mode="kdpp",
        dpp_rng=None,
        stats: Optional[dpp.SamplerStats] = None,
    ):
        """Assemble k relabelled transitions from m sampled candidates.

        One transition is drawn uniformly from each sampled trajectory (never
        the last one when relabelling, so a future goal exists), relabelled,
        and the final k are chosen from the m candidate goals either by the
        fixed-size determinantal sampler or uniformly.
        """
        if k > m:
            raise ValueError(f"minibatch size k={k} cannot exceed candidates m={m}")
        if trajectory_mode not in TRAJECTORY_MODES:
            raise ValueError(f"trajectory_mode must be one of {TRAJECTORY_MODES}")
        if goal_mode not in GOAL_MODES:
            raise ValueError(f"goal_mode must be one of {GOAL_MODES}")
        if dpp_rng is None:
            dpp_rng = rng

        trajectories = self.sample_trajectories(
            m, rng, uniform=(trajectory_mode == "uniform")
        )
        candidates = []
        for traj in trajectories:
            horizon = traj.horizon
            high = horizon - 1 if (her_ratio > 0 and horizon > 1) else horizon
            t = int(rng.integers(high))
            # Future pool starts at the transition's own next achieved goal.
            future = traj.achieved_goals[t + 1 :]
            candidates.append(
                relabel(traj.transitions[t], future, her_ratio, rng, self.reward_fn)
            )
        if goal_mode == "kdpp":
            features = np.stack([c.relabelled_goal for c in candidates], axis=1)
            picked = dpp.kdpp_sample(features, k, dpp_rng, stats=stats)
        else:
            picked = rng.choice(m, size=k, replace=False)
        return [candidates[int(i)] for i in picked]

    def save(self, path):
        """Dump all episodes and settings to a .npz checkpoint.

        Rewards and goals round-trip bit-exactly.  Requires a uniform horizon
        across stored episodes.
        """
        episodes = list(self._episodes)
        if not episodes:
            raise ValueError("refusing to checkpoint an empty buffer")
        horizons = {t.horizon for t in episodes}
        if len(horizons) > 1:
            raise ValueError("checkpointing requires a uniform episode length")
        arrays = {
            "version": np.array(1),
            "capacity": np.array(self.capacity),
            "window": np.array(self.window),
            "states": np.stack(
                [[tr.state for tr in t.transitions] for t in episodes]
            ),
            "actions": np.stack(
                [[tr.action for tr in t.transitions] for t in episodes]
            ),
            "rewards": np.stack(
                [[tr.reward for tr in t.transitions] for t in episodes]
            ),
            "next_states": np.stack(
                [[tr.next_state for tr in t.transitions] for t in episodes]
            ),
            "desired_goals": np.stack([t.desired_goal for t in episodes]),
            "achieved_goals": np.stack([t.achieved_goals for t in episodes]),
            "diversities": np.array([t.diversity for t in episodes]),
        }
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path, reward_fn):
        """Rebuild a buffer from a checkpoint written by `save`."""
        with np.load(path) as data:
            version = int(data["version"])
            if version != 1:
                raise ValueError(f"unsupported buffer checkpoint version {version}")
            buffer = cls(int(data["capacity"]), int(data["window"]), reward_fn)
            n_episodes = data["states"].shape[0]
            for e in range(n_episodes):
                achieved = data["achieved_goals"][e]
                transitions = [
                    Transition(
                        state=data["states"][e, t].copy(),
                        action=data["actions"][e, t].copy(),
                        reward=float(data["rewards"][e, t]),
                        next_state=data["next_states"][e, t].copy(),
                        desired_goal=data["desired_goals"][e].copy(),
                        achieved_goal_next=achieved[t + 1].copy(),
                    )
                    for t in range(data["states"].shape[1])
                ]
                trajectory = Trajectory(
                    transitions=transitions,
                    achieved_goals=achieved.copy(),
                    diversity=float(data["diversities"][e]),
                )
                buffer._episodes.append(trajectory)
                buffer.total_diversity += trajectory.diversity
        return buffer
