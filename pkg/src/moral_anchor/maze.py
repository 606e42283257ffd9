"""5x5 gridworld with a tabular Q-learning agent and Q-table drift injection.

The environment is deliberately small and deterministic: a fixed wall layout,
four unit moves, one goal cell. Misalignment is simulated by corrupting the
Q-table mid-episode with Gaussian noise over every entry plus an extra push
on the currently-greedy action, which scrambles the policy while leaving the
environment itself untouched. Each step carries ground-truth drift labels so
downstream detectors can be scored offline.

Cells are (x, y) with x growing rightward and y growing upward. Action
indices follow the fixed order up, down, left, right; greedy ties break
toward the lowest index.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

ACTIONS = ("up", "down", "left", "right")
MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))

DEFAULT_WALLS = frozenset({(1, 1), (1, 2), (2, 3), (3, 1)})

Cell = tuple[int, int]

# Callback per step: (outcome, drifted, injected_now). The two flags are the
# ground truth the trace also records; streaming consumers need them live.
StepHook = Callable[["StepOutcome", bool, bool], None]


class MazeLayoutError(ValueError):
    """Layout violates the reachability or placement invariants."""


@dataclass(frozen=True)
class MazeConfig:
    """Static maze definition plus derived BFS distances to the goal."""

    width: int = 5
    height: int = 5
    walls: frozenset[Cell] = DEFAULT_WALLS
    start: Cell = (0, 0)
    goal: Cell = (4, 4)
    step_reward: float = -0.01
    goal_reward: float = 1.0
    wall_bump_reward: float = -0.1
    max_steps: int = 200
    distances: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise MazeLayoutError("maze must be at least 2x2")
        if self.max_steps < 1:
            raise MazeLayoutError("max_steps must be positive")
        for cell in (self.start, self.goal):
            if not self._in_bounds(cell):
                raise MazeLayoutError(f"cell {cell} out of bounds")
            if cell in self.walls:
                raise MazeLayoutError(f"cell {cell} is a wall")
        for wall in self.walls:
            if not self._in_bounds(wall):
                raise MazeLayoutError(f"wall {wall} out of bounds")
        object.__setattr__(self, "distances", self._bfs_from_goal())
        if not np.isfinite(self.distance(self.start)):
            raise MazeLayoutError("no path from start to goal")

    def _in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def _bfs_from_goal(self) -> np.ndarray:
        dist = np.full((self.width, self.height), np.inf)
        dist[self.goal] = 0.0
        queue = deque([self.goal])
        while queue:
            x, y = queue.popleft()
            for dx, dy in MOVES:
                nxt = (x + dx, y + dy)
                if not self._in_bounds(nxt) or nxt in self.walls:
                    continue
                if np.isinf(dist[nxt]):
                    dist[nxt] = dist[x, y] + 1.0
                    queue.append(nxt)
        return dist

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def state_index(self, cell: Cell) -> int:
        return cell[0] * self.height + cell[1]

    def distance(self, cell: Cell) -> float:
        """BFS distance to the goal; inf for walls and unreachable cells."""
        return float(self.distances[cell])

    def is_free(self, cell: Cell) -> bool:
        return self._in_bounds(cell) and cell not in self.walls


def build_default_maze() -> MazeConfig:
    return MazeConfig()


@dataclass
class QTable:
    """Dense state-action values, shape (n_states, 4)."""

    values: np.ndarray

    @classmethod
    def zeros(cls, maze: MazeConfig) -> "QTable":
        return cls(np.zeros((maze.n_states, len(ACTIONS))))

    def snapshot(self) -> np.ndarray:
        return self.values.copy()

    def greedy_action(self, state_index: int) -> int:
        # np.argmax resolves ties toward the lowest index, as required.
        return int(np.argmax(self.values[state_index]))


@dataclass
class StepOutcome:
    state: Cell
    action: int
    next_state: Cell
    reward: float
    done: bool
    bumped_wall: bool
    progress_delta: int
    q_residual: float


@dataclass
class EpisodeTrace:
    steps: list[StepOutcome]
    drift_labels: list[bool]
    drift_injection_indices: list[int]


def apply_move(maze: MazeConfig, state: Cell, action: int) -> tuple[Cell, float, bool, bool]:
    """Resolve one move: (next_state, reward, done, bumped_wall).

    Moves into walls or off the grid leave the agent in place and charge
    the bump penalty. Reaching the goal pays goal_reward and terminates.
    """
    dx, dy = MOVES[action]
    target = (state[0] + dx, state[1] + dy)
    if not maze.is_free(target):
        return state, maze.wall_bump_reward, False, True
    if target == maze.goal:
        return target, maze.goal_reward, True, False
    return target, maze.step_reward, False, False


def q_learning_step(
    q: QTable,
    maze: MazeConfig,
    state: Cell,
    epsilon: float,
    alpha: float,
    gamma: float,
    rng: np.random.Generator,
) -> tuple[int, StepOutcome, QTable]:
    """One epsilon-greedy step with an in-place TD(0) update.

    q_residual is the absolute TD error against the table as it stood
    before this update; it doubles as the behavioral residual observed by
    the drift detector.
    """
    s_idx = maze.state_index(state)
    if epsilon > 0.0 and rng.random() < epsilon:
        action = int(rng.integers(len(ACTIONS)))
    else:
        action = q.greedy_action(s_idx)

    next_state, reward, done, bumped = apply_move(maze, state, action)
    n_idx = maze.state_index(next_state)
    target = reward if done else reward + gamma * float(np.max(q.values[n_idx]))
    predicted = float(q.values[s_idx, action])
    residual = abs(target - predicted)
    q.values[s_idx, action] = predicted + alpha * (target - predicted)

    d_before = maze.distance(state)
    d_after = maze.distance(next_state)
    progress = int(d_before - d_after)

    outcome = StepOutcome(
        state=state,
        action=action,
        next_state=next_state,
        reward=reward,
        done=done,
        bumped_wall=bumped,
        progress_delta=progress,
        q_residual=residual,
    )
    return action, outcome, q


def inject_drift(
    q: QTable,
    state: Cell,
    prob: float,
    noise_sigma: float,
    rng: np.random.Generator,
    maze: MazeConfig | None = None,
) -> tuple[QTable, bool]:
    """With probability prob, corrupt the whole table in place.

    Adds iid N(0, noise_sigma^2) to every entry, then pushes the pre-noise
    greedy action at the agent's current state up by a further +noise_sigma,
    the overly-greedy nudge. Returns (table, injected).
    """
    if rng.random() >= prob:
        return q, False
    height = maze.height if maze is not None else int(round(np.sqrt(q.values.shape[0])))
    s_idx = state[0] * height + state[1]
    greedy = q.greedy_action(s_idx)
    q.values += rng.normal(0.0, noise_sigma, q.values.shape)
    q.values[s_idx, greedy] += noise_sigma
    return q, True


def episode_steps(
    maze: MazeConfig,
    q: QTable,
    *,
    epsilon: float,
    alpha: float = 0.1,
    gamma: float = 0.95,
    drift_prob: float = 0.0,
    noise_sigma: float = 1.0,
    rng: np.random.Generator,
) -> Iterator[tuple[StepOutcome, bool, bool]]:
    """Drive one episode step by step, yielding (outcome, drifted, injected).

    Injection is evaluated before each action, so an injected step is itself
    drift-labeled. The table state from just before the first injection is
    restored when the episode ends (or the generator is closed), so drift
    never leaks into the next episode; with drift_prob=0 the table carries
    every update forward untouched.
    """
    state = maze.start
    snapshot: np.ndarray | None = None
    try:
        for _ in range(maze.max_steps):
            injected = False
            if drift_prob > 0.0 and rng.random() < drift_prob:
                if snapshot is None:
                    snapshot = q.snapshot()
                q, injected = inject_drift(q, state, 1.0, noise_sigma, rng, maze)
            _, outcome, q = q_learning_step(q, maze, state, epsilon, alpha, gamma, rng)
            yield outcome, snapshot is not None, injected
            state = outcome.next_state
            if outcome.done:
                break
    finally:
        if snapshot is not None:
            q.values[:] = snapshot


def run_episode(
    maze: MazeConfig,
    q: QTable,
    *,
    epsilon: float,
    alpha: float = 0.1,
    gamma: float = 0.95,
    drift_prob: float = 0.0,
    noise_sigma: float = 1.0,
    rng: np.random.Generator,
    hooks: Sequence[StepHook] = (),
) -> EpisodeTrace:
    """Collect a full episode trace, forwarding each step to the hooks."""
    steps: list[StepOutcome] = []
    labels: list[bool] = []
    injections: list[int] = []
    gen = episode_steps(
        maze,
        q,
        epsilon=epsilon,
        alpha=alpha,
        gamma=gamma,
        drift_prob=drift_prob,
        noise_sigma=noise_sigma,
        rng=rng,
    )
    for index, (outcome, drifted, injected) in enumerate(gen):
        steps.append(outcome)
        labels.append(drifted)
        if injected:
            injections.append(index)
        for hook in hooks:
            hook(outcome, drifted, injected)
    return EpisodeTrace(steps=steps, drift_labels=labels, drift_injection_indices=injections)
