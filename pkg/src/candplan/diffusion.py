"""Noise schedule, forward noising and deterministic DDIM refinement of anchors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .exceptions import ContractViolation, ParameterError


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step ``alpha_t`` (t = 1..T) and their running products.

    ``alpha_bar`` is stored with a leading 1 so ``alpha_bar[t]`` indexes by
    step and ``alpha_bar[0]`` denotes the clean sample.
    """

    alphas: np.ndarray
    t_truncate: int = 8
    ddim_stride: int = 4
    enforce_truncation: bool = True
    validate: bool = True

    def __post_init__(self):
        a = np.array(self.alphas, dtype=float)
        if a.ndim != 1 or a.size == 0:
            raise ParameterError("alphas must be a non-empty vector")
        if self.validate and not np.all((a > 0) & (a < 1)):
            raise ParameterError("every alpha_t must lie in (0, 1)")
        if not self.validate and not np.all((a > 0) & (a <= 1)):
            raise ParameterError("every alpha_t must lie in (0, 1]")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)
        bar = np.concatenate([[1.0], np.cumprod(a)])
        bar.setflags(write=False)
        object.__setattr__(self, "alpha_bar", bar)
        if not 1 <= self.t_truncate <= self.T:
            raise ParameterError(f"t_truncate={self.t_truncate} outside [1, {self.T}]")
        if self.enforce_truncation and self.t_truncate > self.T / 4:
            raise ParameterError(f"t_truncate={self.t_truncate} exceeds T/4 = {self.T / 4}")
        if self.ddim_stride < 1:
            raise ParameterError("ddim_stride must be >= 1")

    @property
    def T(self) -> int:
        return self.alphas.size

    @classmethod
    def linear(cls, T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.05,
               t_truncate: int = 8, ddim_stride: int = 4, **kw) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, T)
        return cls(1.0 - betas, t_truncate, ddim_stride, **kw)

    def reverse_steps(self) -> list[tuple[int, int]]:
        """``(t, t_prev)`` pairs visited from ``t_truncate`` down to the clean sample."""
        ts = list(range(self.t_truncate, 0, -self.ddim_stride))
        return list(zip(ts, ts[1:] + [0]))

    def to_json_dict(self) -> dict:
        return {"alphas": self.alphas.tolist(), "t_truncate": self.t_truncate,
                "ddim_stride": self.ddim_stride, "enforce_truncation": self.enforce_truncation}

    @classmethod
    def from_json_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(np.asarray(d["alphas"]), d["t_truncate"], d["ddim_stride"],
                   d.get("enforce_truncation", True))


def _check_noise(p, eps):
    p = np.asarray(p, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if p.shape[-1] != 2 or eps.shape[-1] != 2 or p.shape[-2] != eps.shape[-2]:
        raise ContractViolation(f"positions {p.shape} and noise {eps.shape} must both be (..., n, 2)")
    return p, eps


def forward_noise(sched: NoiseSchedule, p0, t: int, eps) -> np.ndarray:
    """Closed-form sample ``sqrt(abar_t) p0 + sqrt(1 - abar_t) eps``."""
    if not 1 <= t <= sched.T:
        raise ParameterError(f"t={t} outside [1, {sched.T}]")
    p0, eps = _check_noise(p0, eps)
    ab = sched.alpha_bar[t]
    return np.sqrt(ab) * p0 + np.sqrt(1.0 - ab) * eps


def truncated_init(sched: NoiseSchedule, anchor, eps_adapted) -> np.ndarray:
    """Noised anchor at the truncation step."""
    return forward_noise(sched, anchor, sched.t_truncate, eps_adapted)


def ddim_step(sched: NoiseSchedule, p_t, p0_hat, t: int, t_prev: int) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from step ``t`` to ``t_prev``."""
    if not 0 <= t_prev < t <= sched.T:
        raise ParameterError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    p0_hat = np.asarray(p0_hat, dtype=float)
    if t_prev == 0:
        return p0_hat.copy()
    ab_t, ab_prev = sched.alpha_bar[t], sched.alpha_bar[t_prev]
    eps_hat = (np.asarray(p_t, dtype=float) - np.sqrt(ab_t) * p0_hat) / np.sqrt(1.0 - ab_t)
    return np.sqrt(ab_prev) * p0_hat + np.sqrt(1.0 - ab_prev) * eps_hat


class Refiner(Protocol):
    def predict_refinement(self, p_t, z, t): ...

    def predict_heading(self, p_t, z, t): ...


def denoise_anchor(sched: NoiseSchedule, denoiser: Refiner, z, anchor, eps_adapted):
    """Refine anchor positions by truncated DDIM with the anchor-residual parameterization.

    Works on a single ``(n, 2)`` anchor or a batch ``(K, n, 2)``. Returns the
    clean estimate of the last step and the headings predicted there.
    """
    anchor = np.asarray(anchor, dtype=float)
    p = truncated_init(sched, anchor, eps_adapted)
    p0_hat, heading = anchor, None
    for t, t_prev in sched.reverse_steps():
        p0_hat = anchor + np.asarray(denoiser.predict_refinement(p, z, t))
        if t_prev == 0:
            heading = np.asarray(denoiser.predict_heading(p, z, t))
        p = ddim_step(sched, p, p0_hat, t, t_prev)
    return p0_hat, heading
