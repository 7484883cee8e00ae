"""Deterministic-policy-gradient learner with hand-rolled numpy networks.

An actor maps normalized (state, goal) inputs to bounded actions through a
tanh head; a critic scores (state, goal, action) triples.  Both are small
fully-connected networks trained with adaptive-moment steps, with slowly
tracking target copies providing bootstrap values.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .envs import EnvSpec
from .replay import CandidateTransition

HIDDEN_SIZES = (64, 64)

SAMPLER_VARIANTS = ("dtgsh", "dtsh", "dgsh", "her-uniform", "none")


@dataclass
class TrainConfig:
    """Hyperparameters for a training run."""

    gamma: float = 0.98
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    polyak: float = 0.95
    noise_scale: float = 0.1
    random_action_prob: float = 0.2
    epochs: int = 50
    episodes_per_epoch: int = 100
    updates_per_episode: int = 40
    minibatch_size: int = 64
    candidate_count: int = 100
    window: int = 2
    her_ratio: float = 0.8
    buffer_capacity: int = 10_000
    eval_episodes: int = 20
    seed: int = 0
    variant: str = "dtgsh"

    def validate(self):
        problems = []
        if not 0.0 <= self.gamma < 1.0:
            problems.append(f"gamma must be in [0, 1), got {self.gamma}")
        if self.minibatch_size > self.candidate_count:
            problems.append(
                f"minibatch size k={self.minibatch_size} exceeds "
                f"candidate count m={self.candidate_count}"
            )
        if self.window < 2:
            problems.append(f"window b must be at least 2, got {self.window}")
        if not 0.0 <= self.her_ratio <= 1.0:
            problems.append(f"her_ratio must be in [0, 1], got {self.her_ratio}")
        if not 0.0 <= self.polyak <= 1.0:
            problems.append(f"polyak must be in [0, 1], got {self.polyak}")
        if self.variant not in SAMPLER_VARIANTS:
            problems.append(
                f"variant must be one of {SAMPLER_VARIANTS}, got {self.variant!r}"
            )
        for name in ("epochs", "episodes_per_epoch", "updates_per_episode",
                     "minibatch_size", "candidate_count", "buffer_capacity",
                     "eval_episodes"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be at least 1")
        if problems:
            raise ValueError("; ".join(problems))
        return self


class Mlp:
    """Fully connected network with tanh hidden units.

    Weights are lists of (in, out) matrices applied as x @ W + b.  The output
    is linear unless `output_tanh` is set.
    """

    def __init__(self, weights, biases, output_tanh=False):
        self.weights = weights
        self.biases = biases
        self.output_tanh = output_tanh

    @classmethod
    def initialize(cls, rng, sizes: Sequence[int], output_tanh=False):
        weights, biases = [], []
        for d_in, d_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(d_in)
            weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            biases.append(rng.uniform(-bound, bound, size=d_out))
        return cls(weights, biases, output_tanh)

    def copy(self):
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_tanh,
        )

    @property
    def n_layers(self):
        return len(self.weights)

    def forward(self, x, with_cache=False):
        h = np.asarray(x, dtype=float)
        activations = [h]
        for i in range(self.n_layers - 1):
            h = np.tanh(h @ self.weights[i] + self.biases[i])
            activations.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        if self.output_tanh:
            out = np.tanh(out)
        activations.append(out)
        if with_cache:
            return out, activations
        return out

    def backward(self, activations, d_out):
        """Exact gradients of a scalar loss given d(loss)/d(output).

        Returns ([(dW, db) per layer], d(loss)/d(input)).
        """
        if self.output_tanh:
            out = activations[-1]
            delta = d_out * (1.0 - out * out)
        else:
            delta = d_out
        grads = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            h_in = activations[i]
            grads[i] = (h_in.T @ delta, delta.sum(axis=0))
            if i > 0:
                d_h = delta @ self.weights[i].T
                delta = d_h * (1.0 - h_in * h_in)
        return grads, delta @ self.weights[0].T

    def flat_params(self):
        return [arr for pair in zip(self.weights, self.biases) for arr in pair]


class Adam:
    """Adaptive-moment optimizer state for one network."""

    def __init__(self, net: Mlp, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.flat_params()]
        self.v = [np.zeros_like(p) for p in net.flat_params()]

    def step(self, net: Mlp, grads):
        flat_grads = [arr for pair in grads for arr in pair]
        params = net.flat_params()
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, flat_grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


class RunningNormalizer:
    """Running mean/std standardizer with clipping.

    Tracks per-dimension first and second moments; before any update it is
    the identity (mean 0, std 1).
    """

    CLIP = 5.0
    STD_FLOOR = 1e-2

    def __init__(self, dim):
        self.dim = dim
        self.count = 0.0
        self.total = np.zeros(dim)
        self.total_sq = np.zeros(dim)

    def update(self, rows):
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        self.count += rows.shape[0]
        self.total += rows.sum(axis=0)
        self.total_sq += (rows * rows).sum(axis=0)

    @property
    def mean(self):
        if self.count == 0:
            return np.zeros(self.dim)
        return self.total / self.count

    @property
    def std(self):
        if self.count == 0:
            return np.ones(self.dim)
        var = np.maximum(self.total_sq / self.count - self.mean**2, 0.0)
        return np.sqrt(np.maximum(var, self.STD_FLOOR**2))

    def normalize(self, rows):
        rows = np.asarray(rows, dtype=float)
        return np.clip((rows - self.mean) / self.std, -self.CLIP, self.CLIP)


def _check_finite_grads(name, grads):
    for i, (dw, db) in enumerate(grads):
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise FloatingPointError(f"non-finite gradient in {name} layer {i}")


def _check_finite_params(name, net: Mlp):
    for i, p in enumerate(net.flat_params()):
        if not np.isfinite(p).all():
            raise FloatingPointError(
                f"non-finite parameter in {name} layer {i // 2}"
            )


class DdpgAgent:
    """Actor-critic learner with target networks and input normalization."""

    def __init__(self, env_spec: EnvSpec, config: TrainConfig, rng,
                 hidden: Sequence[int] = HIDDEN_SIZES):
        self.spec = env_spec
        self.config = config
        self.hidden = tuple(hidden)
        ds, da, dg = env_spec.state_dim, env_spec.action_dim, env_spec.goal_dim
        self.actor = Mlp.initialize(rng, (ds + dg, *hidden, da), output_tanh=True)
        self.critic = Mlp.initialize(rng, (ds + dg + da, *hidden, 1))
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(self.actor, config.actor_lr)
        self.critic_opt = Adam(self.critic, config.critic_lr)
        self.normalizer = RunningNormalizer(ds + dg)
        self._action_center = (env_spec.action_high + env_spec.action_low) / 2.0
        self._action_half = (env_spec.action_high - env_spec.action_low) / 2.0

    # -- forward passes ----------------------------------------------------

    def _net_inputs(self, state, goal):
        sg = np.concatenate(
            [np.atleast_2d(state), np.atleast_2d(goal)], axis=1
        )
        return self.normalizer.normalize(sg)

    def _scale_action(self, raw):
        return self._action_center + self._action_half * raw

    def actor_forward(self, state, goal, params: Optional[Mlp] = None):
        """Deterministic bounded action for (state, goal); batch or single."""
        net = params if params is not None else self.actor
        single = np.asarray(state).ndim == 1
        raw = net.forward(self._net_inputs(state, goal))
        action = self._scale_action(raw)
        return action[0] if single else action

    def critic_forward(self, state, action, goal, params: Optional[Mlp] = None):
        """Estimated return for (state, action, goal); batch or single."""
        net = params if params is not None else self.critic
        single = np.asarray(state).ndim == 1
        x = np.concatenate(
            [self._net_inputs(state, goal), np.atleast_2d(action)], axis=1
        )
        q = net.forward(x)[:, 0]
        return float(q[0]) if single else q

    # -- training ----------------------------------------------------------

    def compute_losses(self, minibatch: Sequence[CandidateTransition], gamma):
        """Losses and exact gradients for one minibatch.

        The critic regresses onto clipped bootstrap targets from the target
        networks; the actor gradient flows through the online critic into the
        online actor only.
        """
        states = np.stack([c.base.state for c in minibatch])
        actions = np.stack([c.base.action for c in minibatch])
        rewards = np.array([c.recomputed_reward for c in minibatch])
        next_states = np.stack([c.base.next_state for c in minibatch])
        goals = np.stack([c.relabelled_goal for c in minibatch])
        batch = len(minibatch)

        next_inputs = self._net_inputs(next_states, goals)
        next_actions = self._scale_action(self.target_actor.forward(next_inputs))
        next_q = self.target_critic.forward(
            np.concatenate([next_inputs, next_actions], axis=1)
        )[:, 0]
        targets = rewards + gamma * next_q
        targets = np.clip(targets, -1.0 / (1.0 - gamma), 0.0)

        sg = self._net_inputs(states, goals)
        q, critic_cache = self.critic.forward(
            np.concatenate([sg, actions], axis=1), with_cache=True
        )
        errors = q[:, 0] - targets
        critic_loss = float(np.mean(errors**2))
        d_q = (2.0 / batch) * errors[:, None]
        critic_grads, _ = self.critic.backward(critic_cache, d_q)

        raw_pi, actor_cache = self.actor.forward(sg, with_cache=True)
        actions_pi = self._scale_action(raw_pi)
        q_pi, pi_cache = self.critic.forward(
            np.concatenate([sg, actions_pi], axis=1), with_cache=True
        )
        actor_loss = float(-np.mean(q_pi))
        d_qpi = np.full((batch, 1), -1.0 / batch)
        _, d_critic_in = self.critic.backward(pi_cache, d_qpi)
        d_action = d_critic_in[:, -self.spec.action_dim :]
        actor_grads, _ = self.actor.backward(actor_cache, d_action * self._action_half)

        _check_finite_grads("critic", critic_grads)
        _check_finite_grads("actor", actor_grads)
        return critic_loss, actor_loss, {"actor": actor_grads, "critic": critic_grads}

    def update(self, gradients):
        """One optimizer step plus target tracking; parameters must stay finite."""
        self.actor_opt.step(self.actor, gradients["actor"])
        self.critic_opt.step(self.critic, gradients["critic"])
        _check_finite_params("actor", self.actor)
        _check_finite_params("critic", self.critic)
        p = self.config.polyak
        for target, online in (
            (self.target_actor, self.actor),
            (self.target_critic, self.critic),
        ):
            for t_arr, o_arr in zip(target.flat_params(), online.flat_params()):
                t_arr *= p
                t_arr += (1.0 - p) * o_arr

    # -- acting ------------------------------------------------------------

    def act_with_noise(self, state, goal, rng, noise_scale=None, random_prob=None):
        """Exploratory action: jittered actor output or a fully random draw."""
        if noise_scale is None:
            noise_scale = self.config.noise_scale
        if random_prob is None:
            random_prob = self.config.random_action_prob
        low, high = self.spec.action_low, self.spec.action_high
        if random_prob > 0 and rng.random() < random_prob:
            return rng.uniform(low, high)
        action = self.actor_forward(state, goal)
        if noise_scale > 0:
            action = action + rng.normal(0.0, noise_scale * (high - low))
        return np.clip(action, low, high)

    def observe_episode(self, trajectory):
        """Fold an episode's states and goals into the input normalizer."""
        states = np.stack([t.state for t in trajectory.transitions])
        desired = np.broadcast_to(
            trajectory.desired_goal, (len(states), self.spec.goal_dim)
        )
        achieved = trajectory.achieved_goals[1:]
        self.normalizer.update(np.concatenate([states, desired], axis=1))
        self.normalizer.update(np.concatenate([states, achieved], axis=1))

    def evaluate(self, env, n_episodes, rng):
        """Deterministic-policy success rate over fresh episodes."""
        return evaluate_policy(self.actor_forward, env, n_episodes, rng)

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra_meta=None):
        """Write a versioned checkpoint that restores the agent bit-exactly."""
        meta = {
            "version": 1,
            "hidden": list(self.hidden),
            "config": asdict(self.config),
            "spec": {
                "state_dim": self.spec.state_dim,
                "action_dim": self.spec.action_dim,
                "goal_dim": self.spec.goal_dim,
                "horizon": self.spec.horizon,
                "epsilon": self.spec.epsilon,
            },
            "extra": extra_meta or {},
        }
        arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
        arrays["action_low"] = self.spec.action_low
        arrays["action_high"] = self.spec.action_high
        for name, net in (
            ("actor", self.actor),
            ("critic", self.critic),
            ("target_actor", self.target_actor),
            ("target_critic", self.target_critic),
        ):
            for i, (w, b) in enumerate(zip(net.weights, net.biases)):
                arrays[f"{name}_w{i}"] = w
                arrays[f"{name}_b{i}"] = b
        for name, opt in (("actor_opt", self.actor_opt), ("critic_opt", self.critic_opt)):
            arrays[f"{name}_t"] = np.array(opt.t)
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                arrays[f"{name}_m{i}"] = m
                arrays[f"{name}_v{i}"] = v
        arrays["norm_count"] = np.array(self.normalizer.count)
        arrays["norm_total"] = self.normalizer.total
        arrays["norm_total_sq"] = self.normalizer.total_sq
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path):
        """Rebuild an agent (and its metadata) from a checkpoint."""
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta["version"] != 1:
                raise ValueError(f"unsupported checkpoint version {meta['version']}")
            config = TrainConfig(**meta["config"])
            spec = EnvSpec(
                state_dim=meta["spec"]["state_dim"],
                action_dim=meta["spec"]["action_dim"],
                goal_dim=meta["spec"]["goal_dim"],
                horizon=meta["spec"]["horizon"],
                epsilon=meta["spec"]["epsilon"],
                action_low=data["action_low"].copy(),
                action_high=data["action_high"].copy(),
            )
            agent = cls(
                spec, config, np.random.default_rng(0), hidden=meta["hidden"]
            )
            for name, net in (
                ("actor", agent.actor),
                ("critic", agent.critic),
                ("target_actor", agent.target_actor),
                ("target_critic", agent.target_critic),
            ):
                for i in range(net.n_layers):
                    net.weights[i] = data[f"{name}_w{i}"].copy()
                    net.biases[i] = data[f"{name}_b{i}"].copy()
            for name, opt, net in (
                ("actor_opt", agent.actor_opt, agent.actor),
                ("critic_opt", agent.critic_opt, agent.critic),
            ):
                opt.t = int(data[f"{name}_t"])
                opt.m = [data[f"{name}_m{i}"].copy() for i in range(net.n_layers * 2)]
                opt.v = [data[f"{name}_v{i}"].copy() for i in range(net.n_layers * 2)]
            agent.normalizer.count = float(data["norm_count"])
            agent.normalizer.total = data["norm_total"].copy()
            agent.normalizer.total_sq = data["norm_total_sq"].copy()
        return agent, meta["extra"]


def evaluate_policy(policy, env, n_episodes, rng):
    """Fraction of episodes whose final step attains the goal.

    `policy(state, goal)` must return an in-bounds action.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be at least 1")
    successes = 0
    for _ in range(n_episodes):
        state, goal = env.reset(rng)
        result = None
        for _ in range(env.spec.horizon):
            result = env.step(policy(state, goal))
            state = result.next_state
        if result.reward == 0.0:
            successes += 1
    return successes / n_episodes
