"""Desk-scale pixel environments with a step/reset interface.

Both environments render 4-channel {0,255} uint8 pixel planes so the conv
stack sees the same observation contract it would get from a full frame
stack, and both confine stochasticity to reset: dynamics are deterministic,
which keeps acceptance statistics tight. The interface (reset/step/
action_count/observation_shape) is the stable contract for plugging in
other environments by name.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .tensor import Rng, Tensor


@dataclass
class StepResult:
    next_obs: Tensor
    reward: float
    terminal: bool


class EpisodeOver(RuntimeError):
    """step() was called on a terminal episode before reset()."""


class CatchEnv:
    """A ball falls through a 24x24 grid; a 3-wide paddle tries to catch it.

    The ball starts at a random column with a random horizontal drift in
    {-1, 0, +1}; it advances one row per step, drifting sideways and
    bouncing off the walls. Actions move the paddle {left, stay, right}.
    Reward is +1 if the paddle is under the ball on the final row, -1
    otherwise, 0 before that. Observations are 4 stacked binary frames
    (most recent last) at 4x24x24 with pixel values 0 or 255.
    """

    GRID = 24
    PADDLE = 3
    FRAMES = 4
    ACTIONS = 3  # left, stay, right

    def __init__(self):
        self._frames: deque[np.ndarray] = deque(maxlen=self.FRAMES)
        self._terminal = True
        self._row = 0
        self._col = 0
        self._drift = 0
        self._paddle = 0  # left edge, in [0, GRID - PADDLE]

    @property
    def action_count(self) -> int:
        return self.ACTIONS

    @property
    def observation_shape(self) -> tuple[int, int, int]:
        return (self.FRAMES, self.GRID, self.GRID)

    def _render(self) -> np.ndarray:
        frame = np.zeros((self.GRID, self.GRID), dtype=np.uint8)
        frame[self._row, self._col] = 255
        frame[self.GRID - 1, self._paddle : self._paddle + self.PADDLE] = 255
        return frame

    def _obs(self) -> Tensor:
        return np.stack(self._frames)

    def reset(self, rng: Rng) -> Tensor:
        self._row = 0
        self._col = int(rng.gen.integers(self.GRID))
        self._drift = int(rng.gen.integers(-1, 2))
        self._paddle = (self.GRID - self.PADDLE) // 2
        self._terminal = False
        frame = self._render()
        self._frames.clear()
        for _ in range(self.FRAMES):
            self._frames.append(frame)
        return self._obs()

    def step(self, action: int) -> StepResult:
        if self._terminal:
            raise EpisodeOver("CatchEnv.step() after terminal; call reset()")
        if action not in (0, 1, 2):
            raise ValueError(f"action must be 0 (left), 1 (stay) or 2 (right), got {action}")
        self._paddle = int(np.clip(self._paddle + (action - 1), 0, self.GRID - self.PADDLE))
        self._row += 1
        self._col += self._drift
        if self._col < 0:
            self._col = -self._col
            self._drift = -self._drift
        elif self._col >= self.GRID:
            self._col = 2 * (self.GRID - 1) - self._col
            self._drift = -self._drift
        reward = 0.0
        if self._row == self.GRID - 1:
            caught = self._paddle <= self._col < self._paddle + self.PADDLE
            reward = 1.0 if caught else -1.0
            self._terminal = True
        self._frames.append(self._render())
        return StepResult(self._obs(), reward, self._terminal)

    def landing_column(self) -> int:
        """Deterministic final ball column (used by the reference policy)."""
        row, col, drift = self._row, self._col, self._drift
        while row < self.GRID - 1:
            row += 1
            col += drift
            if col < 0:
                col, drift = -col, -drift
            elif col >= self.GRID:
                col, drift = 2 * (self.GRID - 1) - col, -drift
        return col


class GridWorldEnv:
    """8x8 grid: fixed start corner, goal in the opposite corner, 4 walls.

    Actions {up, down, left, right}; moving into a wall or off the grid
    leaves the position unchanged. Reward is -0.01 per step plus +1 on
    reaching the goal; episodes cap at 100 steps. Observations are 4
    one-hot planes (agent, goal, walls, step-phase parity) scaled to
    {0,255} at 4x8x8.
    """

    SIZE = 8
    MAX_STEPS = 100
    STEP_PENALTY = 0.01
    ACTIONS = 4  # up, down, left, right
    START = (0, 0)
    GOAL = (7, 7)
    WALLS = ((1, 3), (3, 1), (4, 5), (6, 3))

    _MOVES = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}

    def __init__(self):
        self._pos = self.START
        self._steps = 0
        self._terminal = True
        self._wall_plane = np.zeros((self.SIZE, self.SIZE), dtype=np.uint8)
        for r, c in self.WALLS:
            self._wall_plane[r, c] = 255

    @property
    def action_count(self) -> int:
        return self.ACTIONS

    @property
    def observation_shape(self) -> tuple[int, int, int]:
        return (4, self.SIZE, self.SIZE)

    def _obs(self) -> Tensor:
        agent = np.zeros((self.SIZE, self.SIZE), dtype=np.uint8)
        agent[self._pos] = 255
        goal = np.zeros((self.SIZE, self.SIZE), dtype=np.uint8)
        goal[self.GOAL] = 255
        phase = np.full(
            (self.SIZE, self.SIZE), 255 if self._steps % 2 else 0, dtype=np.uint8
        )
        return np.stack([agent, goal, self._wall_plane, phase])

    def reset(self, rng: Rng) -> Tensor:
        del rng  # start state is fixed; signature kept uniform across envs
        self._pos = self.START
        self._steps = 0
        self._terminal = False
        return self._obs()

    def step(self, action: int) -> StepResult:
        if self._terminal:
            raise EpisodeOver("GridWorldEnv.step() after terminal; call reset()")
        if action not in self._MOVES:
            raise ValueError(f"action must be in 0..3, got {action}")
        dr, dc = self._MOVES[action]
        nr, nc = self._pos[0] + dr, self._pos[1] + dc
        if 0 <= nr < self.SIZE and 0 <= nc < self.SIZE and (nr, nc) not in self.WALLS:
            self._pos = (nr, nc)
        self._steps += 1
        reward = -self.STEP_PENALTY
        if self._pos == self.GOAL:
            reward += 1.0
            self._terminal = True
        elif self._steps >= self.MAX_STEPS:
            self._terminal = True
        return StepResult(self._obs(), reward, self._terminal)


ENVIRONMENTS = {"catch": CatchEnv, "gridworld": GridWorldEnv}


def make_env(name: str):
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(
            f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}"
        ) from None
