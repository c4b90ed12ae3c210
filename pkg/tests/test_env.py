from collections import deque

import numpy as np
import pytest
from scipy import stats

from spikeq.env import CatchEnv, EpisodeOver, GridWorldEnv, make_env
from spikeq.tensor import Rng


def catch_reference_policy(env: CatchEnv) -> int:
    """Move the paddle edge toward the (deterministic) landing column."""
    target = int(np.clip(env.landing_column() - 1, 0, env.GRID - env.PADDLE))
    if env._paddle < target:
        return 2
    if env._paddle > target:
        return 0
    return 1


def gridworld_shortest_path() -> list[int]:
    env = GridWorldEnv()
    start, goal = env.START, env.GOAL
    walls = set(env.WALLS)
    prev = {start: None}
    frontier = deque([start])
    while frontier:
        pos = frontier.popleft()
        if pos == goal:
            break
        for action, (dr, dc) in env._MOVES.items():
            nxt = (pos[0] + dr, pos[1] + dc)
            if (
                0 <= nxt[0] < env.SIZE
                and 0 <= nxt[1] < env.SIZE
                and nxt not in walls
                and nxt not in prev
            ):
                prev[nxt] = (pos, action)
                frontier.append(nxt)
    actions = []
    pos = goal
    while prev[pos] is not None:
        pos, action = prev[pos]
        actions.append(action)
    return actions[::-1]


class TestCatch:
    def test_observation_contract(self):
        env = CatchEnv()
        obs = env.reset(Rng(0).stream("env"))
        assert obs.shape == (4, 24, 24) and obs.dtype == np.uint8
        assert set(np.unique(obs)) <= {0, 255}

    def test_reset_determinism(self):
        a = CatchEnv().reset(Rng(5).stream("env"))
        b = CatchEnv().reset(Rng(5).stream("env"))
        np.testing.assert_array_equal(a, b)

    def test_episode_length_and_return_alphabet(self):
        env = CatchEnv()
        rng = Rng(1).stream("env")
        for _ in range(30):
            env.reset(rng)
            steps, total = 0, 0.0
            terminal = False
            while not terminal:
                res = env.step(1)
                steps += 1
                total += res.reward
                terminal = res.terminal
            assert steps == 23 <= 24
            assert total in (-1.0, 1.0)

    def test_step_after_terminal_raises(self):
        env = CatchEnv()
        env.reset(Rng(0).stream("env"))
        while not env.step(1).terminal:
            pass
        with pytest.raises(EpisodeOver):
            env.step(1)

    def test_ball_column_uniform(self):
        env = CatchEnv()
        rng = Rng(123).stream("env")
        counts = np.zeros(24, dtype=int)
        for _ in range(10_000):
            env.reset(rng)
            counts[env._col] += 1
        assert stats.chisquare(counts).pvalue > 0.01

    def test_reference_policy_always_catches(self):
        env = CatchEnv()
        rng = Rng(9).stream("env")
        returns = []
        for _ in range(50):
            env.reset(rng)
            terminal = False
            while not terminal:
                res = env.step(catch_reference_policy(env))
                terminal = res.terminal
            returns.append(res.reward)
        assert np.mean(returns) == 1.0

    def test_paddle_under_ball_rewards(self):
        env = CatchEnv()
        rng = Rng(2).stream("env")
        env.reset(rng)
        caught = env.step(catch_reference_policy(env))
        while not caught.terminal:
            caught = env.step(catch_reference_policy(env))
        assert caught.reward == 1.0


class TestGridWorld:
    def test_reset_planes(self):
        env = GridWorldEnv()
        obs = env.reset(Rng(0).stream("env"))
        assert obs.shape == (4, 8, 8) and obs.dtype == np.uint8
        assert np.count_nonzero(obs[0]) == 1  # agent plane
        assert np.count_nonzero(obs[1]) == 1  # goal plane
        assert np.count_nonzero(obs[2]) == len(env.WALLS)
        assert set(np.unique(obs)) <= {0, 255}

    def test_wall_blocks_and_penalizes(self):
        env = GridWorldEnv()
        env.reset(Rng(0).stream("env"))
        env.step(1)  # down to (1,0)
        env.step(3)  # right to (1,1)
        env.step(3)  # right to (1,2)
        res = env.step(3)  # into wall at (1,3): stay put
        assert env._pos == (1, 2)
        assert res.reward == pytest.approx(-0.01)

    def test_boundary_blocks(self):
        env = GridWorldEnv()
        env.reset(Rng(0).stream("env"))
        res = env.step(0)  # up from (0,0)
        assert env._pos == (0, 0) and res.reward == pytest.approx(-0.01)

    def test_goal_reward_and_terminal(self):
        env = GridWorldEnv()
        env.reset(Rng(0).stream("env"))
        path = gridworld_shortest_path()
        assert len(path) == 14  # Manhattan distance; the walls leave it clear
        total = 0.0
        for action in path:
            res = env.step(action)
            total += res.reward
        assert res.terminal
        assert total == pytest.approx(1.0 - 0.01 * len(path))
        assert total >= 0.85

    def test_step_cap_bounds_return(self):
        env = GridWorldEnv()
        env.reset(Rng(0).stream("env"))
        total, steps = 0.0, 0
        res = env.step(0)
        total += res.reward
        while not res.terminal:
            res = env.step(0)  # bump the wall forever
            total += res.reward
            steps += 1
        assert steps + 1 == env.MAX_STEPS
        assert total == pytest.approx(-1.0)

    def test_step_after_terminal_raises(self):
        env = GridWorldEnv()
        env.reset(Rng(0).stream("env"))
        for _ in range(env.MAX_STEPS):
            env.step(0)
        with pytest.raises(EpisodeOver):
            env.step(0)


def test_make_env_by_name():
    assert isinstance(make_env("catch"), CatchEnv)
    assert isinstance(make_env("gridworld"), GridWorldEnv)
    with pytest.raises(ValueError):
        make_env("pong")
