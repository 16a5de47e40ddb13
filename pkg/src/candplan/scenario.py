"""Synthetic 2D driving scenes and rule-based trajectory metrics.

Scenes are generated in the ego frame (ego at the origin heading along +x),
but every function here works for arbitrarily placed scenes: metrics and the
feature encoding only use ego-relative quantities, so a rigid transform
applied jointly to a scene and a trajectory leaves them unchanged.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ContractViolation, GenerationError
from .trajectory import (
    HORIZON_DT,
    N_WAYPOINTS,
    Trajectory,
    TrajectoryLike,
    as_points,
    rigid_transform,
    wrap_heading,
)

DIFFICULTIES = ("routine", "interactive")

EGO_RADIUS = 1.0
TTC_THRESHOLD = 1.0  # s
A_MAX = 3.0  # m/s^2
YAW_RATE_MAX = 0.8  # rad/s
MIN_EXPERT_PROGRESS = 2.0  # m
MAX_AGENTS_ENCODED = 4
N_CORRIDOR_SAMPLES = 8
CORRIDOR_SAMPLE_SPACING = 5.0  # m
FEATURE_DIM = 4 + N_CORRIDOR_SAMPLES + 6 * MAX_AGENTS_ENCODED

CORPUS_FORMAT = "candplan.scenes"
CORPUS_VERSION = 1

METRIC_NAMES = ("nc", "dac", "ep", "ttc", "comf")
EPDMS_NAMES = ("nc", "dac", "ddc", "tlc", "ep", "ttc", "lk", "hc", "ec")


# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class Agent:
    x: float
    y: float
    heading: float
    speed: float
    radius: float

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])

    def positions(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)[..., None]
        return np.array([self.x, self.y]) + t * self.velocity


@dataclass(frozen=True, eq=False)
class Corridor:
    """Drivable band of ``half_width`` meters around a centerline polyline."""

    centerline: np.ndarray
    half_width: float

    def __post_init__(self):
        c = np.asarray(self.centerline, dtype=float)
        if c.ndim != 2 or c.shape[1] != 2 or c.shape[0] < 2:
            raise ContractViolation("centerline must be an (m >= 2, 2) polyline")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "centerline", c)

    def lateral_offset(self, points) -> np.ndarray:
        """Unsigned distance from each point in ``(..., 2)`` to the centerline."""
        pts = np.asarray(points, dtype=float)
        a = self.centerline[:-1]
        ab = self.centerline[1:] - a
        ab2 = np.sum(ab * ab, axis=1)
        a_ab = np.sum(a * ab, axis=1)
        a2 = np.sum(a * a, axis=1)
        flat = pts.reshape(-1, 2)
        best = np.empty(flat.shape[0])
        # chunked to bound the (points x segments) temporaries
        for start in range(0, flat.shape[0], 8192):
            p = flat[start:start + 8192]
            pa = p @ ab.T - a_ab  # (p - a) . ab
            u = np.clip(pa / ab2, 0.0, 1.0)
            d2 = (np.sum(p * p, axis=1)[:, None] - 2.0 * (p @ a.T) + a2) - 2.0 * u * pa + u * u * ab2
            best[start:start + 8192] = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
        return best.reshape(pts.shape[:-1])

    def arc_lengths(self) -> np.ndarray:
        seg = np.linalg.norm(np.diff(self.centerline, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def project(self, point) -> float:
        """Arc length of the closest centerline point to ``point``."""
        p = np.asarray(point, dtype=float)
        a = self.centerline[:-1]
        ab = self.centerline[1:] - a
        u = np.clip(np.sum((p - a) * ab, axis=1) / np.sum(ab * ab, axis=1), 0.0, 1.0)
        d = np.linalg.norm(a + u[:, None] * ab - p, axis=1)
        i = int(np.argmin(d))
        return float(self.arc_lengths()[i] + u[i] * np.linalg.norm(ab[i]))

    def point_at(self, s) -> np.ndarray:
        cum = self.arc_lengths()
        s = np.asarray(s, dtype=float)
        return np.stack([np.interp(s, cum, self.centerline[:, 0]),
                         np.interp(s, cum, self.centerline[:, 1])], axis=-1)


@dataclass(frozen=True, eq=False)
class Scene:
    seed: int
    difficulty: str
    ego_xy: tuple
    ego_heading: float
    ego_speed: float
    agents: tuple
    corridor: Corridor
    goal_axis: tuple
    expert: Trajectory

    @property
    def ego_velocity(self) -> np.ndarray:
        return self.ego_speed * np.array([math.cos(self.ego_heading), math.sin(self.ego_heading)])

    @property
    def n(self) -> int:
        return self.expert.n

    @property
    def dt(self) -> float:
        return self.expert.dt

    def transformed(self, dx: float = 0.0, dy: float = 0.0, dtheta: float = 0.0) -> "Scene":
        """Rigidly move the whole scene: rotate about the origin, then translate."""
        ego = rigid_transform(np.array([*self.ego_xy, self.ego_heading]), dx, dy, dtheta)
        agents = []
        for a in self.agents:
            p = rigid_transform(np.array([a.x, a.y, a.heading]), dx, dy, dtheta)
            agents.append(Agent(float(p[0]), float(p[1]), float(p[2]), a.speed, a.radius))
        axis = rigid_transform(np.array(self.goal_axis), 0.0, 0.0, dtheta)
        return Scene(
            seed=self.seed,
            difficulty=self.difficulty,
            ego_xy=(float(ego[0]), float(ego[1])),
            ego_heading=float(ego[2]),
            ego_speed=self.ego_speed,
            agents=tuple(agents),
            corridor=Corridor(rigid_transform(self.corridor.centerline, dx, dy, dtheta),
                              self.corridor.half_width),
            goal_axis=(float(axis[0]), float(axis[1])),
            expert=self.expert.transformed(dx, dy, dtheta),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "difficulty": self.difficulty,
            "ego": {"x": self.ego_xy[0], "y": self.ego_xy[1],
                    "heading": self.ego_heading, "speed": self.ego_speed},
            "agents": [{"x": a.x, "y": a.y, "heading": a.heading,
                        "speed": a.speed, "radius": a.radius} for a in self.agents],
            "corridor": {"half_width": self.corridor.half_width,
                         "centerline": self.corridor.centerline.tolist()},
            "goal_axis": list(self.goal_axis),
            "expert": self.expert.to_json_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scene":
        ego = d["ego"]
        return cls(
            seed=int(d["seed"]),
            difficulty=d["difficulty"],
            ego_xy=(float(ego["x"]), float(ego["y"])),
            ego_heading=float(ego["heading"]),
            ego_speed=float(ego["speed"]),
            agents=tuple(Agent(**{k: float(v) for k, v in a.items()}) for a in d["agents"]),
            corridor=Corridor(np.asarray(d["corridor"]["centerline"], dtype=float),
                              float(d["corridor"]["half_width"])),
            goal_axis=tuple(float(v) for v in d["goal_axis"]),
            expert=Trajectory.from_json_dict(d["expert"]),
        )


@dataclass(frozen=True)
class SubMetrics:
    """Per-trajectory rule-based scores, each in [0, 1]."""

    nc: float
    dac: float
    ep: float
    ttc: float
    comf: float

    def __post_init__(self):
        for name in METRIC_NAMES:
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ContractViolation(f"{name}={v} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.nc, self.dac, self.ep, self.ttc, self.comf])

    @classmethod
    def from_array(cls, arr) -> "SubMetrics":
        return cls(*(float(v) for v in arr))


# --------------------------------------------------------------------------- scores


def pdms(m) -> float:
    """NC * DAC * (5 EP + 5 TTC + 2 Comf) / 12."""
    if not isinstance(m, SubMetrics):
        m = SubMetrics(**m) if isinstance(m, Mapping) else SubMetrics.from_array(m)
    return m.nc * m.dac * (5.0 * m.ep + 5.0 * m.ttc + 2.0 * m.comf) / 12.0


def pdms_batch(metrics: np.ndarray) -> np.ndarray:
    """Row-wise PDMS for an ``(M, 5)`` array ordered as :data:`METRIC_NAMES`."""
    m = np.asarray(metrics, dtype=float)
    return m[..., 0] * m[..., 1] * (5.0 * m[..., 2] + 5.0 * m[..., 3] + 2.0 * m[..., 4]) / 12.0


def epdms(sub: Mapping[str, float]) -> float:
    """Extended score with four multiplicative gates and five weighted terms."""
    vals = {k.lower(): float(v) for k, v in sub.items()}
    missing = [k for k in EPDMS_NAMES if k not in vals]
    if missing:
        raise ContractViolation(f"missing sub-metrics: {missing}")
    for k in EPDMS_NAMES:
        if not (0.0 <= vals[k] <= 1.0):
            raise ContractViolation(f"{k}={vals[k]} outside [0, 1]")
    gate = vals["nc"] * vals["dac"] * vals["ddc"] * vals["tlc"]
    weighted = (5.0 * vals["ep"] + 5.0 * vals["ttc"] + 2.0 * vals["lk"]
                + 2.0 * vals["hc"] + 2.0 * vals["ec"])
    return gate * weighted / 16.0


# --------------------------------------------------------------------------- metrics


def _velocities(scene: Scene, xy: np.ndarray) -> np.ndarray:
    prev = np.concatenate([np.broadcast_to(np.asarray(scene.ego_xy), xy[..., :1, :].shape),
                           xy[..., :-1, :]], axis=-2)
    return (xy - prev) / scene.dt


def evaluate_submetrics_batch(scene: Scene, trajs: np.ndarray) -> np.ndarray:
    """Sub-metrics ``(M, 5)`` for ``(M, n, 3)`` candidate trajectories."""
    trajs = np.asarray(trajs, dtype=float)
    if trajs.ndim != 3 or trajs.shape[1:] != (scene.n, 3):
        raise ContractViolation(f"expected (M, {scene.n}, 3) trajectories, got {trajs.shape}")
    m, n = trajs.shape[:2]
    dt = scene.dt
    xy = trajs[..., :2]
    vel = _velocities(scene, xy)
    out = np.ones((m, 5))

    if scene.agents:
        times = dt * np.arange(1, n + 1)
        apos = np.stack([a.positions(times) for a in scene.agents])  # A, n, 2
        avel = np.stack([a.velocity for a in scene.agents])  # A, 2
        radii = np.array([a.radius for a in scene.agents])
        rel = xy[:, None] - apos[None]  # M, A, n, 2
        dist = np.sqrt(np.sum(rel * rel, axis=-1))
        gap = dist - (EGO_RADIUS + radii)[None, :, None]
        rel_vel = vel[:, None] - avel[None, :, None]
        closing = -np.sum(rel * rel_vel, axis=-1) / np.maximum(dist, 1e-9)
        collide = gap < 0.0
        ttc_fail = collide | ((closing > 0.0) & (gap < TTC_THRESHOLD * closing))
        out[:, 0] = ~np.any(collide, axis=(1, 2))
        out[:, 3] = ~np.any(ttc_fail, axis=(1, 2))

    lateral = scene.corridor.lateral_offset(xy)
    out[:, 1] = np.all(lateral <= scene.corridor.half_width, axis=1)

    axis = np.asarray(scene.goal_axis)
    origin = np.asarray(scene.ego_xy)
    expert_progress = float(np.dot(scene.expert.xy[-1] - origin, axis))
    progress = (xy[:, -1] - origin) @ axis
    if expert_progress > 1e-9:
        out[:, 2] = np.clip(progress / expert_progress, 0.0, 1.0)
    else:
        out[:, 2] = (progress >= expert_progress).astype(float)

    v_prev = np.concatenate([np.broadcast_to(scene.ego_velocity, (m, 1, 2)), vel[:, :-1]], axis=1)
    acc = np.linalg.norm((vel - v_prev) / dt, axis=-1)
    psi_prev = np.concatenate([np.full((m, 1), scene.ego_heading), trajs[:, :-1, 2]], axis=1)
    yaw_rate = np.abs(wrap_heading(trajs[..., 2] - psi_prev)) / dt
    out[:, 4] = (acc.max(axis=1) <= A_MAX + 1e-9) & (yaw_rate.max(axis=1) <= YAW_RATE_MAX + 1e-9)
    return out


def evaluate_submetrics(scene: Scene, traj: TrajectoryLike) -> SubMetrics:
    pts = as_points(traj)
    if pts.shape[0] != scene.n:
        raise ContractViolation(f"trajectory must have {scene.n} waypoints")
    return SubMetrics.from_array(evaluate_submetrics_batch(scene, pts[None])[0])


# --------------------------------------------------------------------------- encoding


def to_ego_frame(scene: Scene, points: np.ndarray) -> np.ndarray:
    """Express world ``(..., 2|3)`` points in the ego frame of ``scene``."""
    pts = np.array(points, dtype=float)
    pts[..., 0] -= scene.ego_xy[0]
    pts[..., 1] -= scene.ego_xy[1]
    return rigid_transform(pts, 0.0, 0.0, -scene.ego_heading)


def to_world_frame(scene: Scene, points: np.ndarray) -> np.ndarray:
    return rigid_transform(points, scene.ego_xy[0], scene.ego_xy[1], scene.ego_heading)


def encode_scene(scene: Scene) -> np.ndarray:
    """Fixed-length ego-frame feature vector.

    Layout (``FEATURE_DIM`` = 36):

    ====== ==========================================================
    0      ego speed / 10
    1:3    goal axis in the ego frame
    3      corridor half-width / 3
    4:12   lateral (ego-frame y) of the centerline every 5 m ahead, / 10
    12:36  4 nearest agents x (rel x/20, rel y/20, rel vx/10, rel vy/10,
           radius, present); absent agents are zero
    ====== ==========================================================
    """
    z = np.zeros(FEATURE_DIM)
    z[0] = scene.ego_speed / 10.0
    c, s = math.cos(-scene.ego_heading), math.sin(-scene.ego_heading)
    ax, ay = scene.goal_axis
    z[1], z[2] = c * ax - s * ay, s * ax + c * ay
    z[3] = scene.corridor.half_width / 3.0

    s0 = scene.corridor.project(scene.ego_xy)
    samples = scene.corridor.point_at(s0 + CORRIDOR_SAMPLE_SPACING * np.arange(1, N_CORRIDOR_SAMPLES + 1))
    z[4:4 + N_CORRIDOR_SAMPLES] = to_ego_frame(scene, samples)[:, 1] / 10.0

    if scene.agents:
        pos = to_ego_frame(scene, np.array([[a.x, a.y] for a in scene.agents]))
        vel = np.array([a.velocity for a in scene.agents]) - scene.ego_velocity
        vel = rigid_transform(vel, 0.0, 0.0, -scene.ego_heading)
        order = np.argsort(np.linalg.norm(pos, axis=1), kind="stable")[:MAX_AGENTS_ENCODED]
        base = 4 + N_CORRIDOR_SAMPLES
        for slot, i in enumerate(order):
            j = base + 6 * slot
            z[j:j + 6] = [pos[i, 0] / 20.0, pos[i, 1] / 20.0, vel[i, 0] / 10.0, vel[i, 1] / 10.0,
                          scene.agents[i].radius, 1.0]
    return z


# --------------------------------------------------------------------------- generation

_FINE_DT = 0.1
_CORRIDOR_S = np.arange(-10.0, 90.0 + 1e-9, 2.0)


def _arc(s, kappa):
    """Point, tangent heading and left normal on a constant-curvature arc from the origin."""
    s = np.asarray(s, dtype=float)
    u = kappa * s
    x = s * np.sinc(u / math.pi)
    y = 0.5 * kappa * s * s * np.sinc(u / (2.0 * math.pi)) ** 2
    return np.stack([x, y], axis=-1), u, np.stack([-np.sin(u), np.cos(u)], axis=-1)


def _arc_corridor(kappa: float, half_width: float) -> Corridor:
    pts, _, _ = _arc(_CORRIDOR_S, kappa)
    return Corridor(pts, half_width)


def _maneuvers(v0, kappa, a1, t_sw, a2, lat, t_lat, n=N_WAYPOINTS, dt=HORIZON_DT):
    """Trajectories (M, n, 3) for a family of speed/lateral-offset maneuvers along an arc."""
    a1, t_sw, a2, lat, t_lat = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (a1, t_sw, a2, lat, t_lat))
    t = np.arange(0.0, n * dt + 1e-9, _FINE_DT)
    acc = np.where(t[None] < t_sw[:, None], a1[:, None], a2[:, None])
    v = np.empty((a1.size, t.size))
    v[:, 0] = v0
    for k in range(1, t.size):
        v[:, k] = np.maximum(v[:, k - 1] + acc[:, k - 1] * _FINE_DT, 0.0)
    s = np.concatenate([np.zeros((a1.size, 1)),
                        np.cumsum(0.5 * (v[:, 1:] + v[:, :-1]) * _FINE_DT, axis=1)], axis=1)
    u = np.clip(t[None] / t_lat[:, None], 0.0, 1.0)
    d = lat[:, None] * (10 * u**3 - 15 * u**4 + 6 * u**5)
    dd = lat[:, None] * (30 * u**2 - 60 * u**3 + 30 * u**4) / t_lat[:, None]
    dd = np.where(t[None] < t_lat[:, None], dd, 0.0)
    c, theta, normal = _arc(s, kappa)
    xy = c + d[..., None] * normal
    psi = theta + np.arctan2(dd, v * (1.0 - kappa * d))
    idx = np.round(dt * np.arange(1, n + 1) / _FINE_DT).astype(int)
    return np.concatenate([xy[:, idx], wrap_heading(psi[:, idx])[..., None]], axis=-1)


def _goal_axis(kappa: float) -> tuple:
    p, _, _ = _arc(30.0, kappa)
    p = np.asarray(p, dtype=float)
    p = p / np.linalg.norm(p)
    return float(p[0]), float(p[1])


def _scene(seed, difficulty, v0, corridor, agents, goal_axis, expert_pts) -> Scene:
    return Scene(seed=seed, difficulty=difficulty, ego_xy=(0.0, 0.0), ego_heading=0.0,
                 ego_speed=float(v0), agents=tuple(agents), corridor=corridor,
                 goal_axis=goal_axis, expert=Trajectory(expert_pts))


def _expert_ok(scene: Scene) -> bool:
    m = evaluate_submetrics_batch(scene, scene.expert.points[None])[0]
    progress = float(np.dot(scene.expert.xy[-1] - np.asarray(scene.ego_xy), scene.goal_axis))
    return bool(np.all(m == 1.0)) and progress >= MIN_EXPERT_PROGRESS


def _try_routine(rng: np.random.Generator, seed: int) -> Scene | None:
    v0 = rng.uniform(4.0, 12.0)
    kappa = rng.uniform(-0.015, 0.015)
    corridor = _arc_corridor(kappa, rng.uniform(2.5, 3.5))
    v_des = float(np.clip(v0 + rng.uniform(-2.0, 3.0), 3.0, 14.0))
    a = float(np.clip((v_des - v0) / 2.0, -1.5, 1.5))
    t_reach = abs(v_des - v0) / abs(a) if abs(a) > 1e-9 else 0.0
    expert = _maneuvers(v0, kappa, a, t_reach, 0.0, 0.0, 1.0)[0]
    agents = []
    if rng.random() < 0.5:
        s = rng.uniform(0.0, 40.0)
        side = rng.choice([-1.0, 1.0])
        c, theta, normal = _arc(s, kappa)
        p = c + side * (corridor.half_width + rng.uniform(8.0, 15.0)) * normal
        heading = float(theta) + (0.0 if rng.random() < 0.5 else math.pi)
        agents.append(Agent(float(p[0]), float(p[1]), float(wrap_heading(heading)),
                            float(rng.uniform(0.0, 10.0)), float(rng.uniform(0.8, 1.2))))
    scene = _scene(seed, "routine", v0, corridor, agents, _goal_axis(kappa), expert)
    return scene if _expert_ok(scene) else None


_A1 = np.linspace(-2.5, 2.0, 10)
_TSW = np.array([1.0, 2.0, 4.0])
_A2 = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
_LAT = np.array([0.0, -0.75, 0.75, -1.5, 1.5])
_TLAT = np.array([2.0, 3.5])
_GRID = [g.ravel() for g in np.meshgrid(_A1, _TSW, _A2, _LAT, _TLAT, indexing="ij")]


def _interactive_agent(rng, kind, v0, kappa, half_width) -> Agent:
    radius = float(rng.uniform(0.8, 1.2))
    if kind == "crossing":
        t_c = rng.uniform(1.0, 3.5)
        s_c = v0 * t_c + rng.uniform(-2.0, 2.0)
        c, theta, _ = _arc(s_c, kappa)
        heading = float(theta) + rng.choice([-1.0, 1.0]) * math.pi / 2 + rng.uniform(-0.4, 0.4)
        speed = rng.uniform(3.0, 8.0)
        t_a = max(t_c + rng.uniform(-0.4, 0.4), 0.3)
        p = c - speed * t_a * np.array([math.cos(heading), math.sin(heading)])
    elif kind == "lead":
        s_l = rng.uniform(8.0, 25.0)
        c, theta, normal = _arc(s_l, kappa)
        p = c + rng.uniform(-0.6, 0.6) * normal
        heading = float(theta)
        speed = rng.uniform(0.0, max(0.5, v0 - 3.0))
    else:  # merging
        s_m = rng.uniform(15.0, 35.0)
        side = rng.choice([-1.0, 1.0])
        c, theta, normal = _arc(s_m, kappa)
        p = c + side * (half_width + rng.uniform(1.5, 4.0)) * normal
        heading = float(theta) - side * rng.uniform(0.25, 0.6)
        speed = rng.uniform(max(2.0, v0 - 4.0), v0 + 1.0)
    return Agent(float(p[0]), float(p[1]), float(wrap_heading(heading)), float(speed), radius)


def agent_enters_corridor(agent: Agent, corridor: Corridor, horizon: float) -> bool:
    """Whether the agent's straight-line path meets the corridor within ``horizon`` seconds."""
    pts = agent.positions(np.arange(0.0, horizon + 1e-9, 0.1))
    return bool(np.any(corridor.lateral_offset(pts) <= corridor.half_width))


def _try_interactive(rng: np.random.Generator, seed: int) -> Scene | None:
    v0 = rng.uniform(4.0, 12.0)
    kappa = rng.uniform(-0.008, 0.008)
    half_width = rng.uniform(2.5, 3.5)
    corridor = _arc_corridor(kappa, half_width)
    n_agents = int(rng.integers(2, 5))
    kinds = rng.choice(["crossing", "lead", "merging"], size=n_agents)
    agents = [_interactive_agent(rng, k, v0, kappa, half_width) for k in kinds]
    for a in agents:
        if math.hypot(a.x, a.y) < EGO_RADIUS + a.radius + 1.5:
            return None
    horizon = N_WAYPOINTS * HORIZON_DT
    if sum(agent_enters_corridor(a, corridor, horizon) for a in agents) < 2:
        return None
    axis = _goal_axis(kappa)
    nominal = _maneuvers(v0, kappa, 0.0, 4.0, 0.0, 0.0, 1.0)
    probe = _scene(seed, "interactive", v0, corridor, agents, axis, nominal[0])
    if np.all(evaluate_submetrics_batch(probe, nominal)[0][[0, 1, 3, 4]] == 1.0):
        return None  # agents do not force a deviation from cruising
    family = _maneuvers(v0, kappa, *_GRID)
    m = evaluate_submetrics_batch(probe, family)
    feasible = np.all(m[:, [0, 1, 3, 4]] == 1.0, axis=1)
    if not feasible.any():
        return None
    a1, t_sw, a2, lat, _ = _GRID
    progress = family[:, -1, :2] @ np.asarray(axis)
    objective = progress - 0.5 * np.abs(lat) - 0.2 * (np.abs(a1) + np.abs(a2) * (t_sw < 4.0))
    objective = np.where(feasible, objective, -np.inf)
    expert = family[int(np.argmax(objective))]
    scene = _scene(seed, "interactive", v0, corridor, agents, axis, expert)
    return scene if _expert_ok(scene) else None


def generate_scene(seed: int, difficulty: str = "routine", max_retries: int = 200) -> Scene:
    """Deterministically generate a scene whose expert scores PDMS 1.0.

    Routine scenes carry at most one far-away agent on a gently curving
    corridor. Interactive scenes place 2-4 crossing, leading or merging
    agents that make constant-speed cruising infeasible.
    """
    if difficulty not in DIFFICULTIES:
        raise ContractViolation(f"difficulty must be one of {DIFFICULTIES}")
    rng = np.random.default_rng([int(seed), DIFFICULTIES.index(difficulty)])
    attempt = _try_routine if difficulty == "routine" else _try_interactive
    for _ in range(max_retries):
        scene = attempt(rng, int(seed))
        if scene is not None:
            return scene
    raise GenerationError(f"no feasible {difficulty} scene for seed {seed} after {max_retries} tries")


def corpus_difficulties(count: int, interactive_fraction: float) -> list[str]:
    """Interleaved difficulty labels with the requested interactive share."""
    f = float(interactive_fraction)
    return ["interactive" if math.floor((i + 1) * f) > math.floor(i * f) else "routine"
            for i in range(count)]


def generate_corpus(seeds: Sequence[int], interactive_fraction: float = 0.5) -> list[Scene]:
    seeds = list(seeds)
    labels = corpus_difficulties(len(seeds), interactive_fraction)
    return [generate_scene(s, d) for s, d in zip(seeds, labels)]


def write_corpus(path, scenes: Iterable[Scene]) -> None:
    scenes = list(scenes)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(json.dumps({"format": CORPUS_FORMAT, "version": CORPUS_VERSION,
                             "count": len(scenes)}) + "\n")
        for sc in scenes:
            fh.write(json.dumps(sc.to_dict()) + "\n")
    tmp.replace(path)


def read_corpus(path) -> list[Scene]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != CORPUS_FORMAT:
            raise ContractViolation(f"{path}: not a scene corpus")
        if header.get("version") != CORPUS_VERSION:
            raise ContractViolation(f"{path}: unsupported corpus version {header.get('version')}")
        scenes = [Scene.from_dict(json.loads(line)) for line in fh if line.strip()]
    if len(scenes) != header.get("count", len(scenes)):
        raise ContractViolation(f"{path}: header count {header['count']} != {len(scenes)} records")
    return scenes
