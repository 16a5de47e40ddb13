"""Occupancy rasterization targets for the latent world model.

Grids are ``G x G`` windows aligned with the ego heading. Row ``i`` runs
along the ego x axis and column ``j`` along the ego y axis, both increasing.
"""
from __future__ import annotations

import numpy as np

from .exceptions import ContractViolation
from .nets import WorldModel  # noqa: F401  (re-exported)
from .scenario import Scene, to_ego_frame, to_world_frame

GRID_SIZE = 16
CELL_SIZE = 2.0  # m


def cell_centers(center, grid_size: int = GRID_SIZE, cell: float = CELL_SIZE) -> np.ndarray:
    """Ego-frame cell centers ``(..., G, G, 2)`` for windows centred at ``center`` (..., 2)."""
    offs = (np.arange(grid_size) - (grid_size - 1) / 2.0) * cell
    gx, gy = np.meshgrid(offs, offs, indexing="ij")
    c = np.asarray(center, dtype=float)
    return np.stack([gx, gy], axis=-1) + c[..., None, None, :]


def _rasterize(scene: Scene, step: int, centers_ego: np.ndarray, cell: float,
               agents: bool, corridor: bool) -> np.ndarray:
    grid = np.zeros(centers_ego.shape[:-1], dtype=bool)
    if corridor:
        world = to_world_frame(scene, centers_ego)
        grid |= scene.corridor.lateral_offset(world) > scene.corridor.half_width
    if agents and scene.agents:
        t = step * scene.dt
        half = cell / 2.0
        for a in scene.agents:
            p = to_ego_frame(scene, a.positions(t))
            dx = np.maximum(np.abs(p[0] - centers_ego[..., 0]) - half, 0.0)
            dy = np.maximum(np.abs(p[1] - centers_ego[..., 1]) - half, 0.0)
            grid |= dx * dx + dy * dy < a.radius ** 2
    return grid.astype(np.uint8)


def ground_truth_grid(scene: Scene, horizon_step: int, traj=None, channel: str = "all",
                      grid_size: int = GRID_SIZE, cell: float = CELL_SIZE) -> np.ndarray:
    """Binary occupancy at ``horizon_step`` (0 = now, n = end of horizon).

    Cells touched by an agent footprint, or whose center lies outside the
    corridor, are 1. The window is centred on the ego at step 0, or on the
    waypoint of ``traj`` at ``horizon_step`` when a trajectory (or a batch
    ``(M, n, 3)``) is given. ``channel="agents"`` keeps only agent cells.
    """
    if not 0 <= horizon_step <= scene.n:
        raise ContractViolation(f"horizon_step must lie in [0, {scene.n}]")
    if channel not in ("all", "agents"):
        raise ContractViolation("channel must be 'all' or 'agents'")
    if traj is None or horizon_step == 0:
        center = np.zeros(2)
        if traj is not None and np.asarray(traj).ndim == 3:
            center = np.zeros((np.asarray(traj).shape[0], 2))
    else:
        pts = np.asarray(traj.points if hasattr(traj, "points") else traj, dtype=float)
        center = to_ego_frame(scene, pts[..., horizon_step - 1, :2])
    centers = cell_centers(center, grid_size, cell)
    return _rasterize(scene, horizon_step, centers, cell, agents=True, corridor=channel == "all")
