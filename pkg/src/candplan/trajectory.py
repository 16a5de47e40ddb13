"""Trajectory containers, distances and heading utilities.

A trajectory is ``n`` future waypoints ``(x, y, psi)`` sampled every ``dt``
seconds. Positions are meters, headings radians in ``(-pi, pi]``. Most of the
package works on plain ``(..., n, 3)`` arrays for speed; :class:`Trajectory`
is the validated, immutable value used at API boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .exceptions import ContractViolation

N_WAYPOINTS = 8
HORIZON_DT = 0.5
TWO_PI = 2.0 * math.pi

# (n, 2) array of planar positions; validated by ``check_positions``.
PositionSequence = np.ndarray


def wrap_heading(psi):
    """Map an angle (scalar or array) onto ``(-pi, pi]``.

    Values already in range are returned untouched, so the map is exactly
    idempotent.
    """
    arr = np.asarray(psi, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("heading must be finite")
    in_range = (arr > -math.pi) & (arr <= math.pi)
    if np.all(in_range):
        return float(arr) if arr.ndim == 0 else arr.copy()
    r = np.remainder(arr + math.pi, TWO_PI) - math.pi
    r = np.where(r <= -math.pi, r + TWO_PI, r)
    r = np.where(r > math.pi, r - TWO_PI, r)
    out = np.where(in_range, arr, r)
    return float(out) if out.ndim == 0 else out


def check_points(points, n: int | None = None, name: str = "trajectory") -> np.ndarray:
    """Validate an ``(n, 3)`` waypoint array and return it as float64."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ContractViolation(f"{name} must have shape (n, 3), got {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ContractViolation(f"{name} must have {n} waypoints, got {arr.shape[0]}")
    if arr.shape[0] == 0:
        raise ContractViolation(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} contains non-finite values")
    return arr


def check_positions(points, n: int | None = None, name: str = "positions") -> PositionSequence:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ContractViolation(f"{name} must have shape (n, 2), got {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ContractViolation(f"{name} must have {n} waypoints, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Immutable sequence of ``(x, y, psi)`` waypoints.

    Headings are normalized into ``(-pi, pi]`` on construction.
    """

    points: np.ndarray
    dt: float = HORIZON_DT

    def __post_init__(self):
        pts = check_points(self.points).copy()
        pts[:, 2] = wrap_heading(pts[:, 2])
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ContractViolation("dt must be positive")
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def xy(self) -> PositionSequence:
        return self.points[:, :2]

    @property
    def psi(self) -> np.ndarray:
        return self.points[:, 2]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.dt == other.dt and np.array_equal(self.points, other.points)

    __hash__ = None

    def transformed(self, dx: float = 0.0, dy: float = 0.0, dtheta: float = 0.0) -> "Trajectory":
        """Rotate by ``dtheta`` about the origin, then translate."""
        return Trajectory(rigid_transform(self.points, dx, dy, dtheta), self.dt)

    @classmethod
    def from_positions(cls, xy, dt: float = HORIZON_DT) -> "Trajectory":
        xy = check_positions(xy)
        return cls(np.column_stack([xy, headings_from_positions(xy)]), dt)

    def to_json_dict(self) -> dict:
        return {"dt": self.dt, "points": self.points.tolist()}

    @classmethod
    def from_json_dict(cls, data: dict) -> "Trajectory":
        return cls(np.asarray(data["points"], dtype=float), float(data.get("dt", HORIZON_DT)))


TrajectoryLike = Union[Trajectory, np.ndarray]


def as_points(traj: TrajectoryLike) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.points
    return check_points(traj)


def headings_from_positions(xy) -> np.ndarray:
    """Heading of each waypoint as the direction to the next one.

    The last waypoint repeats the previous heading. Works on ``(..., n, 2)``.
    """
    xy = np.asarray(xy, dtype=float)
    d = np.diff(xy, axis=-2)
    psi = np.arctan2(d[..., 1], d[..., 0])
    psi = np.concatenate([psi, psi[..., -1:]], axis=-1)
    return wrap_heading(psi)


def rigid_transform(points: np.ndarray, dx: float, dy: float, dtheta: float) -> np.ndarray:
    """Apply a planar rotation then translation to ``(..., 2)`` or ``(..., 3)`` arrays."""
    pts = np.array(points, dtype=float)
    c, s = math.cos(dtheta), math.sin(dtheta)
    x, y = pts[..., 0].copy(), pts[..., 1].copy()
    pts[..., 0] = c * x - s * y + dx
    pts[..., 1] = s * x + c * y + dy
    if pts.shape[-1] == 3:
        pts[..., 2] = wrap_heading(pts[..., 2] + dtheta)
    return pts


def _paired(a: TrajectoryLike, b: TrajectoryLike) -> tuple[np.ndarray, np.ndarray]:
    pa, pb = as_points(a), as_points(b)
    if pa.shape != pb.shape:
        raise ContractViolation(f"length mismatch: {pa.shape[0]} vs {pb.shape[0]} waypoints")
    return pa, pb


def l2_distance(a: TrajectoryLike, b: TrajectoryLike, use_heading: bool = True) -> float:
    """Euclidean norm of the stacked per-waypoint differences.

    With ``use_heading`` the heading column enters with unit weight; otherwise
    only positions are compared.
    """
    pa, pb = _paired(a, b)
    cols = 3 if use_heading else 2
    return float(np.linalg.norm((pa[:, :cols] - pb[:, :cols]).ravel()))


def l2_distances(candidates: np.ndarray, target: np.ndarray, use_heading: bool = True) -> np.ndarray:
    """Vectorized :func:`l2_distance` of ``(M, n, 3)`` candidates to one target."""
    cols = 3 if use_heading else 2
    diff = np.asarray(candidates)[..., :cols] - np.asarray(target)[..., :cols]
    return np.sqrt(np.sum(diff * diff, axis=(-2, -1)))


def ade(pred: TrajectoryLike, gt: TrajectoryLike) -> float:
    """Mean 2D displacement over all waypoints; headings are ignored."""
    pa, pb = _paired(pred, gt)
    return float(np.mean(np.linalg.norm(pa[:, :2] - pb[:, :2], axis=1)))


def ade_batch(preds: np.ndarray, gt: np.ndarray) -> np.ndarray:
    diff = np.asarray(preds)[..., :2] - np.asarray(gt)[..., :2]
    return np.mean(np.sqrt(np.sum(diff * diff, axis=-1)), axis=-1)


def second_difference_magnitude(points: np.ndarray) -> np.ndarray:
    """Mean norm of the positional second difference per trajectory (a kink measure)."""
    xy = np.asarray(points)[..., :2]
    dd = xy[..., 2:, :] - 2.0 * xy[..., 1:-1, :] + xy[..., :-2, :]
    return np.mean(np.linalg.norm(dd, axis=-1), axis=-1)
