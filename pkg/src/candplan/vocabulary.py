"""Trajectory vocabulary built by K-means over expert position sequences."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.cluster import kmeans_plusplus
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractViolation, ParameterError
from .trajectory import HORIZON_DT, Trajectory, TrajectoryLike, as_points, headings_from_positions

VOCAB_FORMAT = "candplan.vocabulary"


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """K anchor trajectories stored as a read-only ``(K, n, 3)`` array."""

    anchors: np.ndarray
    seed: int = 0
    dt: float = HORIZON_DT
    objective_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        arr = np.array(self.anchors, dtype=float)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] == 0:
            raise ContractViolation(f"anchors must have shape (K, n, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("anchors contain non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "anchors", arr)

    @property
    def k(self) -> int:
        return self.anchors.shape[0]

    @property
    def n(self) -> int:
        return self.anchors.shape[1]

    @property
    def trajectories(self) -> list[Trajectory]:
        return [Trajectory(a, self.dt) for a in self.anchors]

    def __len__(self):
        return self.k

    def to_json_dict(self) -> dict:
        return {"format": VOCAB_FORMAT, "version": 1, "k": self.k, "seed": self.seed,
                "dt": self.dt, "anchors": self.anchors.tolist()}

    @classmethod
    def from_json_dict(cls, d: dict) -> "Vocabulary":
        if d.get("format") != VOCAB_FORMAT:
            raise ContractViolation("not a vocabulary file")
        vocab = cls(np.asarray(d["anchors"], dtype=float), int(d["seed"]), float(d["dt"]))
        if vocab.k != d["k"]:
            raise ContractViolation(f"vocabulary k={d['k']} but {vocab.k} anchors stored")
        return vocab

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_json_dict()))
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def _stack_experts(experts) -> np.ndarray:
    if isinstance(experts, np.ndarray):
        arr = np.asarray(experts, dtype=float)
        if arr.ndim != 3 or arr.shape[2] not in (2, 3):
            raise ContractViolation(f"experts must have shape (N, n, 3), got {arr.shape}")
        return arr
    pts = [as_points(e) for e in experts]
    if not pts:
        raise ParameterError("experts must be non-empty")
    if len({p.shape for p in pts}) != 1:
        raise ContractViolation("experts must share one waypoint count")
    return np.stack(pts)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = np.sum(X * X, axis=1)[:, None] - 2.0 * X @ C.T + np.sum(C * C, axis=1)[None]
    return np.maximum(d, 0.0)


def build_vocabulary(experts, k: int, seed: int = 0, max_iter: int = 300,
                     dt: float = HORIZON_DT) -> Vocabulary:
    """Cluster expert trajectories into ``k`` anchors.

    Clustering runs on the flattened ``2n`` position vectors with K-means++
    seeding. Empty clusters are reseeded with the point farthest from its
    center. Anchor headings are recomputed from the clustered positions.
    """
    arr = _stack_experts(experts)
    if arr.shape[0] == 0:
        raise ParameterError("experts must be non-empty")
    n = arr.shape[1]
    X = arr[..., :2].reshape(arr.shape[0], 2 * n)
    n_distinct = np.unique(X, axis=0).shape[0]
    if not 1 <= k <= n_distinct:
        raise ParameterError(f"k={k} must be in [1, {n_distinct}] (number of distinct experts)")

    # k-means++ seeding from scikit-learn; the Lloyd loop stays here so the
    # objective history and the empty-cluster rule are explicit
    centers, _ = kmeans_plusplus(X, k, random_state=seed)
    labels = None
    history = []
    for _ in range(max_iter):
        d = _sq_dists(X, centers)
        new_labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(X.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
        counts = np.bincount(labels, minlength=k)
        if np.any(counts == 0):
            own = d[np.arange(X.shape[0]), labels]
            for j in np.flatnonzero(counts == 0):
                far = int(np.argmax(own))
                centers[j] = X[far]
                own[far] = -1.0
    pos = centers.reshape(k, n, 2)
    anchors = np.concatenate([pos, headings_from_positions(pos)[..., None]], axis=-1)
    return Vocabulary(anchors, seed=seed, dt=dt, objective_history=tuple(history))


def nearest_anchor(vocab: Vocabulary, traj: TrajectoryLike) -> int:
    """Index of the anchor closest in position space; ties go to the lowest index."""
    pts = as_points(traj)
    if pts.shape[0] != vocab.n:
        raise ContractViolation(f"trajectory must have {vocab.n} waypoints")
    d = np.sum((vocab.anchors[..., :2] - pts[:, :2]) ** 2, axis=(1, 2))
    return int(np.argmin(d))


class TrajectoryVocabulary(BaseEstimator):
    """Estimator wrapper around :func:`build_vocabulary`.

    Parameters
    ----------
    n_anchors : int, default=256
        Number of K-means clusters.
    random_state : int, default=0
        Seed of the K-means++ initialization.
    max_iter : int, default=300
        Cap on Lloyd iterations.

    Attributes
    ----------
    vocabulary_ : Vocabulary
    anchors_ : ndarray of shape (n_anchors, n, 3)
    objective_history_ : list of float
        Within-cluster sum of squares per iteration (nonincreasing).
    """

    def __init__(self, n_anchors=256, random_state=0, max_iter=300):
        self.n_anchors = n_anchors
        self.random_state = random_state
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = _stack_experts(X)
        self.vocabulary_ = build_vocabulary(X, self.n_anchors, self.random_state, self.max_iter)
        self.anchors_ = self.vocabulary_.anchors
        self.objective_history_ = list(self.vocabulary_.objective_history)
        self.n_waypoints_ = X.shape[1]
        return self

    def transform(self, X):
        """Position-space L2 distance from each trajectory to every anchor."""
        check_is_fitted(self, "vocabulary_")
        X = _stack_experts(X)
        diff = X[:, None, :, :2] - self.anchors_[None, :, :, :2]
        return np.sqrt(np.sum(diff * diff, axis=(2, 3)))

    def predict(self, X):
        return np.argmin(self.transform(X), axis=1)
