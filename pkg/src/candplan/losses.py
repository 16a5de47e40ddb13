"""Training objectives and their analytic gradients."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ContractViolation, ParameterError, TrainingDivergence
from .nets import sigmoid, softmax
from .trajectory import l2_distances

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12
FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25


@dataclass(frozen=True)
class LossWeights:
    lambda_traj: float = 4.0
    lambda_im: float = 0.01
    lambda_sim: float = 0.1
    lambda_lwm: float = 0.1
    lambda_bev: float = 10.0
    lambda_agent: float = 0.1

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (v >= 0 and math.isfinite(v)):
                raise ParameterError(f"{k} must be a nonnegative finite number")

    def as_dict(self) -> dict:
        return {k.removeprefix("lambda_"): v for k, v in asdict(self).items()}


LOSS_PARTS = ("traj", "im", "sim", "lwm", "bev", "agent")


def wta_loss(candidates, gt, use_heading: bool = True):
    """Winner-take-all L1 loss.

    The winner is the candidate with the smallest L2 distance to ``gt``
    (lowest index on ties); the loss is the mean absolute deviation of its
    stacked coordinates. Returns ``(loss, winner_index)``.
    """
    cands = np.asarray(candidates, dtype=float)
    if cands.ndim == 2:
        cands = cands[None]
    if cands.shape[0] == 0:
        raise ParameterError("candidate list is empty")
    gt = np.asarray(gt, dtype=float)
    if cands.shape[1:] != gt.shape:
        raise ContractViolation(f"candidate shape {cands.shape[1:]} != gt shape {gt.shape}")
    cols = 3 if use_heading else 2
    winner = int(np.argmin(l2_distances(cands, gt, use_heading)))
    loss = float(np.mean(np.abs(cands[winner, :, :cols] - gt[:, :cols])))
    return loss, winner


def wta_grad(candidates, gt, winner: int, use_heading: bool = True) -> np.ndarray:
    """d(wta_loss)/d(candidates) for a fixed winner."""
    cands = np.asarray(candidates, dtype=float)
    cols = 3 if use_heading else 2
    g = np.zeros_like(cands)
    diff = cands[winner, :, :cols] - np.asarray(gt)[:, :cols]
    g[winner, :, :cols] = np.sign(diff) / diff.size
    return g


def imitation_targets(anchors, gt, use_heading: bool = True) -> np.ndarray:
    """Softmax of negative anchor-to-expert L2 distances."""
    a = np.asarray(getattr(anchors, "anchors", anchors), dtype=float)
    return softmax(-l2_distances(a, np.asarray(gt, dtype=float), use_heading))


def imitation_loss(pred, target) -> float:
    """Cross-entropy ``-sum r log r_hat`` with predictions clamped at 1e-12."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ContractViolation("prediction and target shapes differ")
    if np.any(pred < PROB_CLAMP):
        log.debug("imitation_loss: clamped %d predictions", int(np.sum(pred < PROB_CLAMP)))
    return float(-np.sum(target * np.log(np.maximum(pred, PROB_CLAMP))))


def imitation_loss_logits(logits, target):
    """Loss and logit gradient when the prediction is ``softmax(logits)``."""
    p = softmax(logits)
    return imitation_loss(p, target), p - target


def _bce(p, y):
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def simulation_loss(pred, target) -> float:
    """Mean binary cross-entropy over candidates and metric heads."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ContractViolation("prediction and target shapes differ")
    return float(np.mean(_bce(pred, target)))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def simulation_loss_logits(logits, target):
    x = np.asarray(logits, dtype=float)
    y = np.asarray(target, dtype=float)
    loss = -(y * _log_sigmoid(x) + (1.0 - y) * _log_sigmoid(-x))
    return float(np.mean(loss)), (sigmoid(x) - y) / x.size


def focal_loss(pred, target, gamma: float = FOCAL_GAMMA, alpha: float = FOCAL_ALPHA) -> float:
    """Mean over cells of ``-alpha (1 - p_t)^gamma log p_t``.

    ``p_t`` is the probability assigned to the true class of each cell.
    """
    p = np.clip(np.asarray(pred, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(target, dtype=float)
    if p.shape != y.shape:
        raise ContractViolation("prediction and target shapes differ")
    pt = np.where(y > 0.5, p, 1.0 - p)
    return float(np.mean(-alpha * (1.0 - pt) ** gamma * np.log(pt)))


def focal_loss_logits(logits, target, gamma: float = FOCAL_GAMMA, alpha: float = FOCAL_ALPHA):
    """Focal loss on logits with its gradient; numerically stable in the tails."""
    x = np.asarray(logits, dtype=float)
    y = np.asarray(target, dtype=float)
    s = np.where(y > 0.5, 1.0, -1.0)
    log_pt = _log_sigmoid(s * x)
    pt = np.exp(log_pt)
    one_m = sigmoid(-s * x)  # 1 - p_t without cancellation
    loss = -alpha * one_m ** gamma * log_pt
    # d/dx of -alpha (1-pt)^g log pt with dpt/dx = s pt (1-pt)
    grad = -alpha * s * (one_m ** (gamma + 1.0) - gamma * one_m ** gamma * pt * log_pt)
    return float(np.mean(loss)), grad / x.size


def total_loss(parts, weights: LossWeights = LossWeights()) -> float:
    """Weighted sum of the six loss components; raises on a non-finite part."""
    w = weights.as_dict()
    total = 0.0
    for name in LOSS_PARTS:
        v = float(parts.get(name, 0.0))
        if not math.isfinite(v):
            raise TrainingDivergence(f"loss component {name} is not finite ({v})")
        total += w[name] * v
    return total
