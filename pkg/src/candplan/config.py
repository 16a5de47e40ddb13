"""Run configuration shared by training, evaluation and the CLI."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule
from .exceptions import ParameterError
from .hatna import HatnaConfig
from .losses import LossWeights

CONFIG_VERSION = 1


@dataclass(frozen=True)
class ScoreWeights:
    """Weights of the decision score ``S = w . s`` over (im, nc, dac, ep, ttc, comf)."""

    w_im: float = 0.05
    w_nc: float = 0.5
    w_dac: float = 0.5
    w_ep: float = 1.0
    w_ttc: float = 1.0
    w_comf: float = 1.0

    def __post_init__(self):
        v = self.as_array()
        if np.any(v < 0) or not np.any(v > 0) or not np.all(np.isfinite(v)):
            raise ParameterError("score weights must be nonnegative with at least one positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_im, self.w_nc, self.w_dac, self.w_ep, self.w_ttc, self.w_comf])

    def scaled(self, c: float) -> "ScoreWeights":
        return ScoreWeights(*(c * self.as_array()))


@dataclass(frozen=True)
class RunConfig:
    version: int = CONFIG_VERSION
    n_waypoints: int = 8
    dt: float = 0.5
    k: int = 256
    vocab_seed: int = 0
    # diffusion schedule
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.05
    t_truncate: int = 8
    ddim_stride: int = 4
    noise_scale: float = 10.0  # metres per unit of diffusion noise
    # noise adapter
    use_hatna: bool = True
    learn_gain: bool = True
    kernel_size: int = 5
    kernel_sigma: float | None = None
    hatna_alpha: float = 1.0
    hatna_epsilon: float = 1e-6
    # networks
    refiner: str = "diffusion"
    hidden: int = 128
    wm_hidden: int = 64
    grid_size: int = 16
    use_heading_in_distance: bool = True
    # optimisation
    seed: int = 0
    steps: int = 2000
    scenes_per_step: int = 1
    lr: float = 1e-3
    lr_min: float = 1e-5
    weight_decay: float = 0.01
    warmup_steps: int = 100
    lwm_samples: int = 16
    loss_weights: LossWeights = field(default_factory=LossWeights)
    score_weights: ScoreWeights = field(default_factory=ScoreWeights)

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ParameterError(f"unsupported config version {self.version}")
        if self.refiner not in ("diffusion", "regression"):
            raise ParameterError("refiner must be 'diffusion' or 'regression'")
        if self.k < 1 or self.steps < 0 or self.scenes_per_step < 1:
            raise ParameterError("k, steps and scenes_per_step must be positive")
        if not self.noise_scale > 0:
            raise ParameterError("noise_scale must be positive")

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule.linear(self.T, self.beta_start, self.beta_end,
                                    self.t_truncate, self.ddim_stride)

    def hatna(self, gain_log=None) -> HatnaConfig:
        gains = np.zeros(self.n_waypoints) if gain_log is None else gain_log
        return HatnaConfig(self.kernel_size, self.kernel_sigma, self.hatna_alpha,
                           self.hatna_epsilon, gains)

    def replace(self, **changes) -> "RunConfig":
        d = self.to_json_dict()
        d.update(changes)
        return RunConfig.from_json_dict(d)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("loss_weights"), dict):
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if isinstance(d.get("score_weights"), dict):
            d["score_weights"] = ScoreWeights(**d["score_weights"])
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json_dict(json.loads(Path(path).read_text()))
