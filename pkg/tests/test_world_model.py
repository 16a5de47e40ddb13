import numpy as np
import pytest

from candplan.exceptions import ContractViolation
from candplan.scenario import Agent, Corridor, Scene, generate_scene
from candplan.trajectory import Trajectory
from candplan.world_model import CELL_SIZE, cell_centers, ground_truth_grid


def _open_scene(agents=()):
    """Ego at the origin on a straight corridor far wider than any grid window."""
    line = np.stack([np.linspace(-100, 100, 11), np.zeros(11)], axis=1)
    expert = Trajectory(np.stack([np.arange(1, 9.0), np.zeros(8), np.zeros(8)], axis=1))
    return Scene(0, "routine", (0.0, 0.0), 0.0, 2.0, tuple(agents), Corridor(line, 1e6), (1.0, 0.0), expert)


def test_empty_wide_scene_is_all_free():
    assert not ground_truth_grid(_open_scene(), 0).any()


def test_single_agent_known_cells():
    # grid_size 4, cell 2 m: cell centers at -3, -1, 1, 3 on both axes
    a = Agent(1.0, -1.0, 0.0, 0.0, 0.5)
    g = ground_truth_grid(_open_scene([a]), 0, grid_size=4)
    expected = np.zeros((4, 4), dtype=np.uint8)
    expected[2, 1] = 1  # row = x index of 1.0, column = y index of -1.0
    np.testing.assert_array_equal(g, expected)


def test_agent_on_cell_corner_touches_four_cells():
    a = Agent(0.0, 0.0, 0.0, 0.0, 0.3)
    g = ground_truth_grid(_open_scene([a]), 0, grid_size=4)
    assert g.sum() == 4 and g[1:3, 1:3].all()


def test_agent_moves_with_time():
    a = Agent(-3.0, 0.5, 0.0, 4.0, 0.4)  # 4 m/s along +x
    s = _open_scene([a])
    g0 = ground_truth_grid(s, 0, grid_size=4)
    g3 = ground_truth_grid(s, 3, grid_size=4)  # t = 1.5 s -> x = 3
    assert g0[0].any() and not g0[3].any()
    assert g3[3].any() and not g3[0].any()


def test_corridor_outside_marked():
    line = np.stack([np.linspace(-50, 50, 11), np.zeros(11)], axis=1)
    s = _open_scene()
    s = Scene(0, "routine", s.ego_xy, 0.0, 2.0, (), Corridor(line, 2.5), s.goal_axis, s.expert)
    g = ground_truth_grid(s, 0, grid_size=8)
    centers = cell_centers(np.zeros(2), 8, CELL_SIZE)
    np.testing.assert_array_equal(g, (np.abs(centers[..., 1]) > 2.5).astype(np.uint8))
    assert not ground_truth_grid(s, 0, grid_size=8, channel="agents").any()


def test_deterministic_and_translation_covariant():
    s = generate_scene(3, "interactive")
    np.testing.assert_array_equal(ground_truth_grid(s, 0), ground_truth_grid(s, 0))
    moved = s.transformed(13.0, -4.0, 0.0)
    for step in (0, 4, 8):
        np.testing.assert_array_equal(ground_truth_grid(s, step), ground_truth_grid(moved, step))


def test_trajectory_centred_window():
    s = generate_scene(3, "interactive")
    trajs = np.stack([s.expert.points, s.expert.points])
    g = ground_truth_grid(s, 8, traj=trajs)
    assert g.shape == (2, 16, 16)
    np.testing.assert_array_equal(g[0], ground_truth_grid(s, 8, traj=s.expert))


def test_step_out_of_range():
    with pytest.raises(ContractViolation):
        ground_truth_grid(_open_scene(), 9)
