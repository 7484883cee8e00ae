"""Environment mechanics, reward boundaries, and determinism."""

import numpy as np
import pytest

from divher import envs


class TestSparseReward:
    def test_equal_goals(self):
        assert envs.sparse_reward(np.array([1.0, 2.0]), np.array([1.0, 2.0]), 0.1) == 0.0

    def test_distance_exactly_epsilon_succeeds(self):
        assert envs.sparse_reward(np.array([0.0]), np.array([0.05]), 0.05) == 0.0

    def test_distance_twice_epsilon_fails(self):
        assert envs.sparse_reward(np.array([0.0]), np.array([0.1]), 0.05) == -1.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            envs.sparse_reward(np.zeros(2), np.zeros(3), 0.1)

    def test_agrees_with_independent_distance(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            d = rng.normal(size=3)
            a = rng.normal(size=3)
            eps = float(rng.uniform(0.01, 2.0))
            expected = 0.0 if np.sqrt(((d - a) ** 2).sum()) <= eps else -1.0
            assert envs.sparse_reward(d, a, eps) == expected


class TestBitFlip:
    def test_reset_avoids_solved_start(self):
        env = envs.BitFlipEnv(8)
        rng = np.random.default_rng(1)
        for _ in range(100):
            state, goal = env.reset(rng)
            assert set(np.unique(state)) <= {0.0, 1.0}
            assert set(np.unique(goal)) <= {0.0, 1.0}
            assert not np.array_equal(state, goal)

    def test_flip_single_bit(self):
        env = envs.BitFlipEnv(4)
        env.reset(np.random.default_rng(2))
        env._state = np.zeros(4)
        action = np.array([-1.0, -1.0, 1.0, -1.0])
        result = env.step(action)
        np.testing.assert_array_equal(result.next_state, [0.0, 0.0, 1.0, 0.0])

    def test_nonpositive_winner_is_noop(self):
        env = envs.BitFlipEnv(4)
        env.reset(np.random.default_rng(3))
        before = env._state.copy()
        result = env.step(np.full(4, -0.5))
        np.testing.assert_array_equal(result.next_state, before)

    def test_achieved_goal_is_state(self):
        env = envs.BitFlipEnv(5)
        state, _ = env.reset(np.random.default_rng(4))
        np.testing.assert_array_equal(envs.BitFlipEnv.achieved_goal(state), state)
        result = env.step(np.ones(5))
        np.testing.assert_array_equal(result.achieved_goal, result.next_state)

    def test_hamming_reward_exact_match_only(self):
        env = envs.BitFlipEnv(4)
        g = np.array([1.0, 0.0, 1.0, 0.0])
        assert env.compute_reward(g, g.copy()) == 0.0
        off = g.copy()
        off[0] = 0.0
        assert env.compute_reward(g, off) == -1.0

    def test_episode_length_and_single_terminal(self):
        env = envs.BitFlipEnv(6)
        rng = np.random.default_rng(5)
        env.reset(rng)
        terminals = 0
        for t in range(6):
            result = env.step(rng.uniform(-1, 1, 6))
            terminals += result.terminal
            assert result.terminal == (t == 5)
        assert terminals == 1
        with pytest.raises(RuntimeError):
            env.step(np.zeros(6))

    def test_seeded_determinism(self):
        actions = np.random.default_rng(6).uniform(-1, 1, size=(8, 8))
        rollouts = []
        for _ in range(2):
            env = envs.BitFlipEnv(8)
            state, goal = env.reset(np.random.default_rng(7))
            states = [state]
            for a in actions:
                states.append(env.step(a).next_state)
            rollouts.append((np.array(states), goal))
        np.testing.assert_array_equal(rollouts[0][0], rollouts[1][0])
        np.testing.assert_array_equal(rollouts[0][1], rollouts[1][1])


class TestPointPush:
    def test_reset_layout(self):
        env = envs.PointPushEnv()
        rng = np.random.default_rng(8)
        for _ in range(50):
            state, goal = env.reset(rng)
            agent_pos, block = state[:2], state[2:]
            assert ((block >= 0.2) & (block <= 0.8)).all()
            assert ((goal >= 0.2) & (goal <= 0.8)).all()
            assert np.linalg.norm(block - goal) > env.spec.epsilon
            assert np.linalg.norm(agent_pos - block) >= env.AGENT_RADIUS + env.BLOCK_RADIUS

    def test_no_contact_leaves_block(self):
        env = envs.PointPushEnv()
        env.reset(np.random.default_rng(9))
        env._agent = np.array([0.2, 0.2])
        env._block = np.array([0.7, 0.7])
        result = env.step(np.array([0.5, 0.0]))
        np.testing.assert_array_equal(result.next_state[2:], [0.7, 0.7])

    def test_contact_pushes_block_along_normal(self):
        env = envs.PointPushEnv()
        env.reset(np.random.default_rng(10))
        env._agent = np.array([0.43, 0.5])
        env._block = np.array([0.5, 0.5])
        result = env.step(np.array([1.0, 0.0]))  # drive straight at the block
        agent_pos, block = result.next_state[:2], result.next_state[2:]
        min_dist = env.AGENT_RADIUS + env.BLOCK_RADIUS
        # Independent geometric projection: block sits exactly min_dist along
        # the contact normal from the agent, still on the original line.
        assert block[0] > 0.5
        assert abs(block[1] - 0.5) < 1e-12
        assert abs(np.linalg.norm(block - agent_pos) - min_dist) <= 1e-9

    def test_never_overlapping_under_random_play(self):
        env = envs.PointPushEnv()
        rng = np.random.default_rng(11)
        min_dist = env.AGENT_RADIUS + env.BLOCK_RADIUS
        worst = 0.0
        for _ in range(40):
            env.reset(rng)
            for _ in range(50):
                result = env.step(rng.uniform(-1, 1, 2))
                d = np.linalg.norm(result.next_state[:2] - result.next_state[2:])
                worst = max(worst, min_dist - d)
        assert worst <= 1e-9

    def test_corner_squeeze_blocks_the_move(self):
        env = envs.PointPushEnv()
        env.reset(np.random.default_rng(12))
        env._block = np.array([env.BLOCK_RADIUS, env.BLOCK_RADIUS])
        env._agent = np.array([env.BLOCK_RADIUS + 0.071, env.BLOCK_RADIUS])
        min_dist = env.AGENT_RADIUS + env.BLOCK_RADIUS
        for _ in range(5):
            result = env.step(np.array([-1.0, 0.0]))
            d = np.linalg.norm(result.next_state[:2] - result.next_state[2:])
            assert d >= min_dist - 1e-9

    def test_speed_clipped_to_max(self):
        env = envs.PointPushEnv()
        env.reset(np.random.default_rng(13))
        env._agent = np.array([0.5, 0.5])
        env._block = np.array([0.9, 0.9])
        before = env._agent.copy()
        result = env.step(np.array([1.0, 1.0]))
        moved = np.linalg.norm(result.next_state[:2] - before)
        assert moved <= env.MAX_SPEED + 1e-12

    def test_achieved_goal_is_block_position(self):
        env = envs.PointPushEnv()
        state, _ = env.reset(np.random.default_rng(14))
        np.testing.assert_array_equal(envs.PointPushEnv.achieved_goal(state), state[2:])

    def test_seeded_determinism(self):
        actions = np.random.default_rng(15).uniform(-1, 1, size=(50, 2))
        finals = []
        for _ in range(2):
            env = envs.PointPushEnv()
            env.reset(np.random.default_rng(16))
            for a in actions:
                result = env.step(a)
            finals.append(result.next_state)
        np.testing.assert_array_equal(finals[0], finals[1])

    def test_random_policy_rarely_succeeds(self):
        # Desk-scale sanity behind the task constants: a random policy should
        # not crack the task.
        env = envs.PointPushEnv()
        rng = np.random.default_rng(17)
        successes = 0
        n = 400
        for _ in range(n):
            env.reset(rng)
            for _ in range(env.spec.horizon):
                result = env.step(rng.uniform(-1, 1, 2))
            successes += result.reward == 0.0
        assert successes / n < 0.05


class TestRegistry:
    def test_make_env_by_name(self):
        assert isinstance(envs.make_env("bitflip", n_bits=5), envs.BitFlipEnv)
        assert isinstance(envs.make_env("pointpush"), envs.PointPushEnv)

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown environment"):
            envs.make_env("cartpole")

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            envs.EnvSpec(1, 1, 1, 1, 0.1, np.zeros(1), np.ones(1))
        with pytest.raises(ValueError):
            envs.EnvSpec(1, 1, 1, 5, -0.1, np.zeros(1), np.ones(1))

    def test_step_before_reset(self):
        env = envs.BitFlipEnv(4)
        with pytest.raises(RuntimeError):
            env.step(np.zeros(4))
