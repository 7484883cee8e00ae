"""Goal-conditioned environments with sparse rewards.

Two desk-scale tasks share one interface: a bit-flipping task whose achieved
goal is the bit string itself, and a planar pushing task where a disc-shaped
agent shoves a disc-shaped block toward a target position.  Both reward 0 on
reaching the goal and -1 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    """Static description of an environment's spaces and episode shape."""

    state_dim: int
    action_dim: int
    goal_dim: int
    horizon: int
    epsilon: float
    action_low: np.ndarray
    action_high: np.ndarray

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if min(self.state_dim, self.action_dim, self.goal_dim) < 1:
            raise ValueError("all dimensions must be at least 1")


@dataclass
class StepResult:
    next_state: np.ndarray
    achieved_goal: np.ndarray
    reward: float
    terminal: bool


def sparse_reward(desired, achieved, epsilon):
    """0 when the goals are within epsilon in Euclidean distance, else -1."""
    d = np.asarray(desired, dtype=float)
    a = np.asarray(achieved, dtype=float)
    if d.shape != a.shape:
        raise ValueError(f"goal shapes differ: {d.shape} vs {a.shape}")
    return 0.0 if np.linalg.norm(a - d) <= epsilon else -1.0


class BitFlipEnv:
    """Flip one bit per step; succeed by matching a target bit string.

    Actions are real vectors so a continuous-control learner applies
    unmodified: the index of the largest component selects the bit to flip.
    """

    name = "bitflip"

    def __init__(self, n_bits=15, horizon=None):
        if n_bits < 1:
            raise ValueError("n_bits must be at least 1")
        self.n_bits = n_bits
        self.spec = EnvSpec(
            state_dim=n_bits,
            action_dim=n_bits,
            goal_dim=n_bits,
            horizon=horizon if horizon is not None else n_bits,
            epsilon=0.5,
            action_low=np.full(n_bits, -1.0),
            action_high=np.full(n_bits, 1.0),
        )
        self._state = None
        self._goal = None
        self._t = 0

    def compute_reward(self, desired, achieved):
        # Hamming distance; epsilon 0.5 makes this an exact-match test.
        d = np.asarray(desired)
        a = np.asarray(achieved)
        if d.shape != a.shape:
            raise ValueError(f"goal shapes differ: {d.shape} vs {a.shape}")
        return 0.0 if np.count_nonzero(d != a) <= self.spec.epsilon else -1.0

    @staticmethod
    def achieved_goal(state):
        return np.asarray(state, dtype=float).copy()

    def reset(self, rng):
        self._state = rng.integers(0, 2, size=self.n_bits).astype(float)
        self._goal = rng.integers(0, 2, size=self.n_bits).astype(float)
        while np.array_equal(self._goal, self._state):
            self._goal = rng.integers(0, 2, size=self.n_bits).astype(float)
        self._t = 0
        return self._state.copy(), self._goal.copy()

    def step(self, action):
        if self._state is None:
            raise RuntimeError("reset() must be called before step()")
        if self._t >= self.spec.horizon:
            raise RuntimeError("episode is over; call reset()")
        a = np.clip(np.asarray(action, dtype=float), self.spec.action_low, self.spec.action_high)
        idx = int(np.argmax(a))
        # Dead zone: a non-positive winning component leaves the state alone,
        # so the goal can be held once reached (episodes are fixed-length).
        if a[idx] > 0.0:
            self._state[idx] = 1.0 - self._state[idx]
        self._t += 1
        achieved = self.achieved_goal(self._state)
        return StepResult(
            next_state=self._state.copy(),
            achieved_goal=achieved,
            reward=self.compute_reward(self._goal, achieved),
            terminal=self._t == self.spec.horizon,
        )


class PointPushEnv:
    """Push a block disc to a goal position inside the unit square.

    The action is a 2-D velocity command.  When the agent disc contacts the
    block disc, the block is displaced along the contact normal so the discs
    never overlap; a move that would wedge the block against a wall is undone.
    """

    name = "pointpush"

    ARENA = 1.0
    AGENT_RADIUS = 0.03
    BLOCK_RADIUS = 0.04
    MAX_SPEED = 0.05
    SPAWN_LOW = 0.2
    SPAWN_HIGH = 0.8

    def __init__(self, horizon=50, epsilon=0.05):
        self.spec = EnvSpec(
            state_dim=4,
            action_dim=2,
            goal_dim=2,
            horizon=horizon,
            epsilon=epsilon,
            action_low=np.full(2, -1.0),
            action_high=np.full(2, 1.0),
        )
        self._agent = None
        self._block = None
        self._goal = None
        self._t = 0

    def compute_reward(self, desired, achieved):
        return sparse_reward(desired, achieved, self.spec.epsilon)

    @staticmethod
    def achieved_goal(state):
        return np.asarray(state, dtype=float)[2:4].copy()

    def _state_vector(self):
        return np.concatenate([self._agent, self._block])

    def reset(self, rng):
        self._block = rng.uniform(self.SPAWN_LOW, self.SPAWN_HIGH, size=2)
        self._goal = rng.uniform(self.SPAWN_LOW, self.SPAWN_HIGH, size=2)
        while np.linalg.norm(self._goal - self._block) <= self.spec.epsilon:
            self._goal = rng.uniform(self.SPAWN_LOW, self.SPAWN_HIGH, size=2)
        min_dist = self.AGENT_RADIUS + self.BLOCK_RADIUS
        self._agent = rng.uniform(self.SPAWN_LOW, self.SPAWN_HIGH, size=2)
        while np.linalg.norm(self._agent - self._block) < min_dist:
            self._agent = rng.uniform(self.SPAWN_LOW, self.SPAWN_HIGH, size=2)
        self._t = 0
        return self._state_vector(), self._goal.copy()

    def _clip_agent(self, pos):
        r = self.AGENT_RADIUS
        return np.clip(pos, r, self.ARENA - r)

    def _clip_block(self, pos):
        r = self.BLOCK_RADIUS
        return np.clip(pos, r, self.ARENA - r)

    def step(self, action):
        if self._agent is None:
            raise RuntimeError("reset() must be called before step()")
        if self._t >= self.spec.horizon:
            raise RuntimeError("episode is over; call reset()")
        a = np.clip(np.asarray(action, dtype=float), self.spec.action_low, self.spec.action_high)
        disp = a * self.MAX_SPEED
        speed = np.linalg.norm(disp)
        if speed > self.MAX_SPEED:
            disp *= self.MAX_SPEED / speed

        prev_agent = self._agent.copy()
        prev_block = self._block.copy()
        min_dist = self.AGENT_RADIUS + self.BLOCK_RADIUS

        agent = self._clip_agent(self._agent + disp)
        block = self._block.copy()
        delta = block - agent
        dist = np.linalg.norm(delta)
        if dist < min_dist:
            normal = delta / dist if dist > 1e-12 else np.array([1.0, 0.0])
            pushed = agent + normal * min_dist
            block = self._clip_block(pushed)
            if not np.array_equal(block, pushed):
                # Block hit a wall; back the agent off along the new normal.
                delta = block - agent
                dist = np.linalg.norm(delta)
                if dist < min_dist:
                    normal = delta / dist if dist > 1e-12 else normal
                    agent = self._clip_agent(block - normal * min_dist)
                    if np.linalg.norm(block - agent) < min_dist - 1e-9:
                        # Wedged in a corner: the whole move is blocked.
                        agent = prev_agent
                        block = prev_block

        self._agent = agent
        self._block = block
        self._t += 1
        achieved = self._block.copy()
        return StepResult(
            next_state=self._state_vector(),
            achieved_goal=achieved,
            reward=self.compute_reward(self._goal, achieved),
            terminal=self._t == self.spec.horizon,
        )


_ENV_REGISTRY = {
    "bitflip": BitFlipEnv,
    "pointpush": PointPushEnv,
}


def make_env(name, **overrides):
    """Instantiate an environment by name with constructor overrides."""
    try:
        cls = _ENV_REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_ENV_REGISTRY))
        raise ValueError(f"unknown environment {name!r}; known: {known}") from None
    return cls(**overrides)
