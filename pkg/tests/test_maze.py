"""Environment tests: layout, learning arithmetic, drift injection."""

import numpy as np
import pytest

from moral_anchor.maze import (
    ACTIONS,
    DEFAULT_WALLS,
    MOVES,
    MazeConfig,
    MazeLayoutError,
    QTable,
    apply_move,
    build_default_maze,
    episode_steps,
    inject_drift,
    q_learning_step,
    run_episode,
)


def bfs_oracle(maze):
    """Independent BFS over free cells, distance to goal."""
    dist = {maze.goal: 0}
    frontier = [maze.goal]
    while frontier:
        nxt = []
        for cell in frontier:
            for dx, dy in MOVES:
                cand = (cell[0] + dx, cell[1] + dy)
                if (
                    0 <= cand[0] < maze.width
                    and 0 <= cand[1] < maze.height
                    and cand not in maze.walls
                    and cand not in dist
                ):
                    dist[cand] = dist[cell] + 1
                    nxt.append(cand)
        frontier = nxt
    return dist


class TestLayout:
    def test_default_dimensions(self):
        maze = build_default_maze()
        assert (maze.width, maze.height) == (5, 5)
        assert maze.start == (0, 0)
        assert maze.goal == (4, 4)
        assert maze.walls == DEFAULT_WALLS
        assert maze.n_states == 25

    def test_bfs_matches_independent_oracle(self):
        maze = build_default_maze()
        oracle = bfs_oracle(maze)
        for x in range(5):
            for y in range(5):
                cell = (x, y)
                if cell in maze.walls:
                    assert np.isinf(maze.distance(cell))
                else:
                    assert maze.distance(cell) == oracle[cell]

    def test_optimal_path_length_is_8(self):
        maze = build_default_maze()
        assert maze.distance(maze.start) == 8.0

    def test_state_index_bijection(self):
        maze = build_default_maze()
        seen = {maze.state_index((x, y)) for x in range(5) for y in range(5)}
        assert seen == set(range(25))

    def test_invalid_layouts_raise(self):
        with pytest.raises(MazeLayoutError):
            MazeConfig(walls=frozenset({(0, 0)}))  # start on a wall
        with pytest.raises(MazeLayoutError):
            MazeConfig(walls=frozenset({(4, 3), (3, 4)}))  # goal sealed off
        with pytest.raises(MazeLayoutError):
            MazeConfig(start=(9, 9))
        with pytest.raises(MazeLayoutError):
            MazeConfig(max_steps=0)


class TestMoves:
    def test_step_into_open_cell(self):
        maze = build_default_maze()
        nxt, reward, done, bumped = apply_move(maze, (0, 0), 0)  # up
        assert nxt == (0, 1)
        assert reward == maze.step_reward
        assert not done and not bumped

    def test_bump_wall_and_edge(self):
        maze = build_default_maze()
        # down from the start exits the grid
        nxt, reward, done, bumped = apply_move(maze, (0, 0), 1)
        assert nxt == (0, 0)
        assert reward == maze.wall_bump_reward
        assert bumped and not done
        # right from (0, 1) hits the wall at (1, 1)
        nxt, reward, done, bumped = apply_move(maze, (0, 1), 3)
        assert nxt == (0, 1)
        assert bumped

    def test_goal_terminates(self):
        maze = build_default_maze()
        nxt, reward, done, bumped = apply_move(maze, (4, 3), 0)
        assert nxt == maze.goal
        assert reward == maze.goal_reward
        assert done and not bumped


class TestQLearning:
    def test_tie_break_prefers_up(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        assert q.greedy_action(maze.state_index((0, 0))) == 0
        assert ACTIONS[0] == "up"
        rng = np.random.default_rng(0)
        action, outcome, _ = q_learning_step(q, maze, (0, 0), 0.0, 0.1, 0.95, rng)
        assert action == 0
        assert outcome.next_state == (0, 1)

    def test_update_arithmetic(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        s = maze.state_index((0, 0))
        n = maze.state_index((0, 1))
        q.values[s] = [0.5, 0.0, 0.0, 0.0]
        q.values[n] = [0.2, 0.3, 0.0, 0.0]
        rng = np.random.default_rng(0)
        _, outcome, _ = q_learning_step(q, maze, (0, 0), 0.0, 0.1, 0.95, rng)
        target = -0.01 + 0.95 * 0.3
        assert outcome.q_residual == pytest.approx(abs(target - 0.5), abs=1e-12)
        assert q.values[s, 0] == pytest.approx(0.5 + 0.1 * (target - 0.5), abs=1e-12)

    def test_terminal_target_skips_bootstrap(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        # poison the goal row; a terminal update must ignore it
        q.values[maze.state_index(maze.goal)] = [9.0, 9.0, 9.0, 9.0]
        rng = np.random.default_rng(0)
        _, outcome, _ = q_learning_step(q, maze, (4, 3), 0.0, 0.1, 0.95, rng)
        assert outcome.done
        assert outcome.q_residual == pytest.approx(1.0, abs=1e-12)
        assert q.values[maze.state_index((4, 3)), 0] == pytest.approx(0.1, abs=1e-12)

    def test_progress_delta_values(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        rng = np.random.default_rng(3)
        for _ in range(20):
            trace = run_episode(maze, q, epsilon=0.6, drift_prob=0.0, rng=rng)
            for out in trace.steps:
                assert out.progress_delta in (-1, 0, 1)
                if out.bumped_wall:
                    assert out.progress_delta == 0

    def test_greedy_policy_reaches_goal_in_8_after_training(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        rng = np.random.default_rng(7)
        for episode in range(2000):
            eps = max(0.05, 1.0 - episode / 400)
            run_episode(maze, q, epsilon=eps, drift_prob=0.0, rng=rng)
        trace = run_episode(maze, q, epsilon=0.0, drift_prob=0.0, rng=rng)
        assert len(trace.steps) == 8
        assert trace.steps[-1].done
        total = sum(s.reward for s in trace.steps)
        assert total == pytest.approx(1.0 - 7 * 0.01, abs=1e-9)


class TestDriftInjection:
    def test_injection_rate_matches_probability(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        rng = np.random.default_rng(11)
        hits = 0
        for _ in range(10_000):
            _, injected = inject_drift(q, (0, 0), 0.05, 1.0, rng, maze)
            hits += injected
        assert 400 <= hits <= 600

    def test_noise_plus_greedy_push(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        q.values[maze.state_index((2, 2)), 3] = 0.5  # greedy is "right"
        before = q.snapshot()
        rng = np.random.default_rng(5)
        twin = np.random.default_rng(5)
        _ = twin.random()  # the injection gate draw
        noise = twin.normal(0.0, 2.0, before.shape)
        _, injected = inject_drift(q, (2, 2), 1.0, 2.0, rng, maze)
        assert injected
        expected = before + noise
        expected[maze.state_index((2, 2)), 3] += 2.0
        np.testing.assert_array_equal(q.values, expected)

    def test_prob_zero_never_injects(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        rng = np.random.default_rng(1)
        trace = run_episode(maze, q, epsilon=0.3, drift_prob=0.0, rng=rng)
        assert trace.drift_labels == [False] * len(trace.steps)
        assert trace.drift_injection_indices == []

    def test_first_step_injection_restores_byte_exact(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        rng = np.random.default_rng(2)
        # warm the table with clean learning first
        for _ in range(50):
            run_episode(maze, q, epsilon=0.4, drift_prob=0.0, rng=rng)
        before = q.snapshot()
        trace = run_episode(maze, q, epsilon=0.1, drift_prob=1.0, noise_sigma=1.0, rng=rng)
        # injection happened before the first update, so the restore must
        # bring back exactly the pre-episode table
        np.testing.assert_array_equal(q.values, before)
        assert trace.drift_labels == [True] * len(trace.steps)
        assert trace.drift_injection_indices[0] == 0

    def test_labels_true_from_first_injection_onward(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        rng = np.random.default_rng(23)
        for _ in range(200):
            trace = run_episode(maze, q, epsilon=0.2, drift_prob=0.05, rng=rng)
            if not trace.drift_injection_indices:
                assert not any(trace.drift_labels)
                continue
            first = trace.drift_injection_indices[0]
            assert not any(trace.drift_labels[:first])
            assert all(trace.drift_labels[first:])
            break
        else:
            pytest.fail("no drifted episode in 200 tries")

    def test_generator_close_restores(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        rng = np.random.default_rng(9)
        before = q.snapshot()
        gen = episode_steps(maze, q, epsilon=0.5, drift_prob=1.0, rng=rng)
        next(gen)
        assert not np.array_equal(q.values, before)
        gen.close()
        np.testing.assert_array_equal(q.values, before)

    def test_same_seed_same_trace(self):
        maze = build_default_maze()
        traces = []
        for _ in range(2):
            q = QTable.zeros(maze)
            rng = np.random.default_rng(77)
            trace = run_episode(maze, q, epsilon=0.5, drift_prob=0.1, rng=rng)
            traces.append(
                [
                    (s.state, s.action, s.next_state, s.reward, s.q_residual)
                    for s in trace.steps
                ]
            )
        assert traces[0] == traces[1]

    def test_hooks_see_flags(self):
        maze = build_default_maze()
        q = QTable.zeros(maze)
        rng = np.random.default_rng(4)
        seen = []
        run_episode(
            maze,
            q,
            epsilon=0.5,
            drift_prob=1.0,
            rng=rng,
            hooks=[lambda out, drifted, injected: seen.append((drifted, injected))],
        )
        assert seen
        assert all(drifted for drifted, _ in seen)
        assert seen[0][1] is True
