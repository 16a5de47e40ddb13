"""Horizon-aware shaping of diffusion noise.

Injected noise of shape ``(..., n, D)`` is low-pass filtered along the
waypoint axis with a normalized Gaussian kernel, then each waypoint row is
scaled by a profile that grows toward the far end of the horizon.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractViolation, ParameterError
from .trajectory import N_WAYPOINTS


@dataclass(frozen=True, eq=False)
class HatnaConfig:
    kernel_size: int = 5
    kernel_sigma: float | None = None  # None -> kernel_size / 4
    alpha: float = 1.0
    epsilon: float = 1e-6
    gain_log: np.ndarray = field(default_factory=lambda: np.zeros(N_WAYPOINTS))

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ParameterError("kernel_size must be a positive odd integer")
        if self.alpha <= 0:
            raise ParameterError("alpha must be positive")
        if self.epsilon < 0:
            raise ParameterError("epsilon must be nonnegative")
        sigma = self.kernel_size / 4.0 if self.kernel_sigma is None else float(self.kernel_sigma)
        if sigma <= 0:
            raise ParameterError("kernel_sigma must be positive")
        object.__setattr__(self, "kernel_sigma", sigma)
        g = np.array(self.gain_log, dtype=float)
        if g.ndim != 1 or not np.all(np.isfinite(g)):
            raise ParameterError("gain_log must be a finite vector")
        object.__setattr__(self, "gain_log", g)

    @property
    def kernel(self) -> np.ndarray:
        return gaussian_kernel(self.kernel_size, self.kernel_sigma)

    def with_gains(self, gain_log) -> "HatnaConfig":
        return replace(self, gain_log=np.array(gain_log, dtype=float))

    def to_json_dict(self) -> dict:
        return {"kernel_size": self.kernel_size, "kernel_sigma": self.kernel_sigma,
                "alpha": self.alpha, "epsilon": self.epsilon, "gain_log": self.gain_log.tolist()}

    @classmethod
    def from_json_dict(cls, d: dict) -> "HatnaConfig":
        return cls(**d)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Symmetric Gaussian taps of odd length ``size`` summing to one."""
    r = size // 2
    j = np.arange(-r, r + 1, dtype=float)
    w = np.exp(-0.5 * (j / sigma) ** 2)
    return w / w.sum()


def smooth(noise, kernel) -> np.ndarray:
    """Convolve ``(..., n, D)`` noise along the waypoint axis (replicate padding)."""
    x = np.asarray(noise, dtype=float)
    if x.ndim < 2:
        raise ContractViolation("noise must have shape (..., n, D)")
    kernel = np.asarray(kernel, dtype=float)
    r = kernel.size // 2
    n = x.shape[-2]
    idx = np.clip(np.arange(-r, n + r), 0, n - 1)
    padded = x[..., idx, :]
    out = np.zeros_like(x)
    for j, g in enumerate(kernel):
        out += g * padded[..., j:j + n, :]
    return out


def scale_profile(cfg: HatnaConfig, n: int) -> np.ndarray:
    """Per-waypoint scale ``(i / (n - 1) + eps) ** alpha * exp(g_i)``."""
    if n < 2:
        raise ParameterError("scale profile needs n >= 2")
    if cfg.gain_log.shape != (n,):
        raise ContractViolation(f"gain_log has length {cfg.gain_log.size}, expected {n}")
    base = (np.arange(n) / (n - 1) + cfg.epsilon) ** cfg.alpha
    return base * np.exp(cfg.gain_log)


def adapt(cfg: HatnaConfig, noise) -> np.ndarray:
    """Smoothed noise with row ``i`` multiplied by the horizon scale."""
    sm = smooth(noise, cfg.kernel)
    return sm * scale_profile(cfg, sm.shape[-2])[:, None]


def adapt_gain_grad(cfg: HatnaConfig, noise, grad_out) -> np.ndarray:
    """Gradient w.r.t. ``gain_log`` given ``dL/d adapt(noise)``."""
    sm = smooth(noise, cfg.kernel)
    s = scale_profile(cfg, sm.shape[-2])
    contrib = np.asarray(grad_out) * sm
    return s * contrib.reshape(-1, sm.shape[-2], sm.shape[-1]).sum(axis=(0, 2))


class HorizonAwareNoiseAdapter(TransformerMixin, BaseEstimator):
    """Transformer applying :func:`adapt` to noise arrays of shape (..., n, D).

    ``fit`` only records the waypoint count and builds the kernel and scale
    profile; the adapter has no data-dependent state.
    """

    def __init__(self, kernel_size=5, kernel_sigma=None, alpha=1.0, epsilon=1e-6, gain_log=None):
        self.kernel_size = kernel_size
        self.kernel_sigma = kernel_sigma
        self.alpha = alpha
        self.epsilon = epsilon
        self.gain_log = gain_log

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim < 2:
            raise ContractViolation("noise must have shape (..., n, D)")
        n = X.shape[-2]
        gains = np.zeros(n) if self.gain_log is None else self.gain_log
        self.config_ = HatnaConfig(self.kernel_size, self.kernel_sigma, self.alpha,
                                   self.epsilon, gains)
        self.kernel_ = self.config_.kernel
        self.scale_ = scale_profile(self.config_, n)
        self.n_waypoints_ = n
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = np.asarray(X, dtype=float)
        if X.shape[-2] != self.n_waypoints_:
            raise ContractViolation(f"expected {self.n_waypoints_} waypoints, got {X.shape[-2]}")
        return adapt(self.config_, X)
