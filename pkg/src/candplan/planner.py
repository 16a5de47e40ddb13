"""Estimator facade over vocabulary building, training and decision."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import decision, training
from .config import RunConfig
from .exceptions import ParameterError
from .scenario import Scene, encode_scene, to_ego_frame
from .vocabulary import build_vocabulary


def _check_scenes(X) -> list[Scene]:
    scenes = list(X)
    if not scenes:
        raise ParameterError("need at least one scene")
    bad = [type(s).__name__ for s in scenes if not isinstance(s, Scene)]
    if bad:
        raise ParameterError(f"expected Scene objects, got {bad[0]}")
    return scenes


class UnifiedCandidatePlanner(BaseEstimator):
    """Plan by scoring vocabulary anchors together with their refined versions.

    Parameters
    ----------
    n_anchors : int, default=256
        Vocabulary size K.
    mode : {"unified", "diffusion_only", "vocab_only"}, default="unified"
        Candidate pool used by :meth:`predict`.
    refiner : {"diffusion", "regression"}, default="diffusion"
    use_hatna : bool, default=True
        Shape the truncation noise along the horizon.
    n_steps : int, default=2000
        Optimizer steps.
    learning_rate : float, default=1e-3
    random_state : int, default=0
        Seeds the vocabulary, the initialization, training noise and
        inference noise.

    Attributes
    ----------
    vocabulary_ : Vocabulary
    model_ : PlannerModel
    config_ : RunConfig
    """

    def __init__(self, n_anchors=256, mode="unified", refiner="diffusion", use_hatna=True,
                 n_steps=2000, learning_rate=1e-3, random_state=0):
        self.n_anchors = n_anchors
        self.mode = mode
        self.refiner = refiner
        self.use_hatna = use_hatna
        self.n_steps = n_steps
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _config(self) -> RunConfig:
        if self.mode not in decision.MODES:
            raise ParameterError(f"mode must be one of {decision.MODES}")
        return RunConfig(k=self.n_anchors, refiner=self.refiner, use_hatna=bool(self.use_hatna),
                         steps=self.n_steps, lr=self.learning_rate, seed=self.random_state,
                         vocab_seed=self.random_state, warmup_steps=min(100, self.n_steps))

    def fit(self, X, y=None):
        """Build the vocabulary from the scenes' experts, then train the model."""
        scenes = _check_scenes(X)
        cfg = self._config()
        experts = np.stack([to_ego_frame(s, s.expert.points) for s in scenes])
        self.vocabulary_ = build_vocabulary(experts, cfg.k, seed=cfg.vocab_seed)
        self.model_ = training.train(cfg, scenes, self.vocabulary_.anchors, log_every=0)
        self.config_ = cfg
        return self

    def decision_function(self, X) -> list[np.ndarray]:
        """Aggregated score per candidate, one array per scene."""
        check_is_fitted(self, "model_")
        out = []
        for s in _check_scenes(X):
            z = encode_scene(s)
            cs = decision.build_candidates(self.mode, self.vocabulary_, self.model_, s,
                                           self.random_state, self.config_, z)
            out.append(decision.aggregate_scores(self.model_.score_candidates(cs.trajectories, z),
                                                 self.config_.score_weights))
        return out

    def predict(self, X) -> np.ndarray:
        """Decided ego-frame trajectories ``(N, n, 3)``."""
        check_is_fitted(self, "model_")
        out = []
        for s in _check_scenes(X):
            z = encode_scene(s)
            cs = decision.build_candidates(self.mode, self.vocabulary_, self.model_, s,
                                           self.random_state, self.config_, z)
            _, traj = decision.decide(cs, self.model_.score_candidates(cs.trajectories, z),
                                      self.config_.score_weights)
            out.append(traj)
        return np.stack(out)

    def score(self, X, y=None) -> float:
        """Mean PDMS of the decided trajectories."""
        check_is_fitted(self, "model_")
        rep = decision.evaluate(_check_scenes(X), self.mode, self.model_, self.vocabulary_,
                                cfg=self.config_, seed=self.random_state)
        return rep["overall"]["pdms"]
