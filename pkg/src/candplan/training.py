"""Per-scene losses with analytic gradients, the optimizer and the training loop."""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .diffusion import NoiseSchedule, ddim_step
from .exceptions import ContractViolation, ParameterError, TrainingDivergence
from .hatna import HatnaConfig, adapt, adapt_gain_grad
from .losses import (LOSS_PARTS, focal_loss_logits, imitation_loss_logits, imitation_targets,
                     simulation_loss_logits, total_loss, wta_grad, wta_loss)
from .nets import PlannerModel, scores_from_logits, squash_heading
from .scenario import FEATURE_DIM, Scene, encode_scene, evaluate_submetrics_batch, to_ego_frame, to_world_frame
from .world_model import ground_truth_grid

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "candplan.checkpoint"
CHECKPOINT_VERSION = 1
DIVERGENCE_LIMIT = 1e6


# --------------------------------------------------------------------------- scene preparation


@dataclass
class SceneTargets:
    """Everything about a training scene that does not depend on the weights."""

    scene: Scene
    z: np.ndarray
    gt: np.ndarray  # expert in the ego frame (n, 3)
    anchor_metrics: np.ndarray  # (K, 5)
    bev: np.ndarray  # (G*G,)
    agent: np.ndarray  # (G*G,)


def prepare_scene(scene: Scene, anchors: np.ndarray, grid_size: int = 16) -> SceneTargets:
    anchors = np.asarray(anchors, dtype=float)
    return SceneTargets(
        scene=scene,
        z=encode_scene(scene),
        gt=to_ego_frame(scene, scene.expert.points),
        anchor_metrics=evaluate_submetrics_batch(scene, to_world_frame(scene, anchors)),
        bev=ground_truth_grid(scene, 0, grid_size=grid_size).ravel().astype(float),
        agent=ground_truth_grid(scene, 0, channel="agents", grid_size=grid_size).ravel().astype(float),
    )


# --------------------------------------------------------------------------- refinement passes


def _tanh_heading(logits):
    th = np.tanh(logits)
    return squash_heading(logits), math.pi * (1.0 - th * th)


def refine_candidates(model: PlannerModel, sched: NoiseSchedule, hcfg: HatnaConfig | None,
                      anchors, z, rng: np.random.Generator | None, refiner: str = "diffusion",
                      eps=None, noise_scale: float = 1.0) -> np.ndarray:
    """Refined candidates ``(K, n, 3)`` for ego-frame anchors, without gradients.

    ``hcfg=None`` bypasses the noise adapter. Noise is drawn from ``rng``
    unless ``eps`` is given, and is multiplied by ``noise_scale`` after
    adaptation; this is the same as running DDIM on positions divided by
    ``noise_scale``.
    """
    anchors = np.asarray(anchors, dtype=float)
    xy = anchors[..., :2]
    if refiner == "regression":
        delta, hl, _ = model.denoiser.forward(xy, z, 0)
        return np.concatenate([xy + delta, squash_heading(hl)[..., None]], axis=-1)
    if eps is None:
        eps = rng.standard_normal(xy.shape)
    eps_a = adapt(hcfg, eps) if hcfg is not None else eps
    ab = sched.alpha_bar[sched.t_truncate]
    p = math.sqrt(ab) * xy + math.sqrt(1.0 - ab) * noise_scale * eps_a
    p0 = xy
    heading = None
    for t, t_prev in sched.reverse_steps():
        delta, hl, _ = model.denoiser.forward(p, z, t)
        p0 = xy + delta
        if t_prev == 0:
            heading = squash_heading(hl)
        p = ddim_step(sched, p, p0, t, t_prev)
    return np.concatenate([p0, heading[..., None]], axis=-1)


def _refiner_pass(model, cfg: RunConfig, sched, hcfg, anchors, tgt: SceneTargets, rng, grads, w_traj):
    """Run the refiner with a WTA loss per stage; accumulates ``w_traj``-scaled gradients.

    ``L_traj`` is the mean of the stage losses. Gradients flow back through
    the deterministic DDIM updates into earlier stages and the noise gains.
    Intermediate stages are matched on positions only, since headings are
    produced at the final step.
    """
    xy = anchors[..., :2]
    z, gt = tgt.z, tgt.gt
    use_h = cfg.use_heading_in_distance
    if cfg.refiner == "regression":
        stages = [(0, None)]
        p = xy
        eps = None
    else:
        stages = sched.reverse_steps()
        eps = rng.standard_normal(xy.shape)
        eps_a = adapt(hcfg, eps) if cfg.use_hatna else eps
        ab = sched.alpha_bar[sched.t_truncate]
        p = math.sqrt(ab) * xy + math.sqrt(1.0 - ab) * cfg.noise_scale * eps_a
    scale = w_traj / len(stages)
    losses, tape = [], []
    final = None
    for t, t_prev in stages:
        delta, hl, cache = model.denoiser.forward(p, z, t)
        p0 = xy + delta
        if t_prev in (0, None):
            psi, dpsi = _tanh_heading(hl)
            final = np.concatenate([p0, psi[..., None]], axis=-1)
            loss, win = wta_loss(final, gt, use_h)
            g = wta_grad(final, gt, win, use_h)
            tape.append((cache, t, t_prev, scale * g[..., :2], scale * g[..., 2] * dpsi))
        else:
            loss, win = wta_loss(p0, gt[:, :2], use_heading=False)
            g = wta_grad(p0, gt[:, :2], win, use_heading=False)
            tape.append((cache, t, t_prev, scale * g, None))
            p = ddim_step(sched, p, p0, t, t_prev)
        losses.append(loss)
    if scale == 0.0:
        return float(np.mean(losses)), final

    d_next = None  # cotangent of the input of the following stage
    for cache, t, t_prev, d_delta, d_hl in reversed(tape):
        if d_next is not None:
            # p_prev = c_p0 * p0_hat + c_pt * p_t  (deterministic DDIM)
            c_pt = math.sqrt((1.0 - sched.alpha_bar[t_prev]) / (1.0 - sched.alpha_bar[t]))
            c_p0 = math.sqrt(sched.alpha_bar[t_prev]) - c_pt * math.sqrt(sched.alpha_bar[t])
            d_delta = d_delta + c_p0 * d_next
        g_net, d_p = model.denoiser.backward(cache, d_delta, d_hl)
        _accumulate(grads, g_net, "denoiser.")
        d_next = d_p if d_next is None else d_p + c_pt * d_next
    if eps is not None and cfg.use_hatna and cfg.learn_gain:
        d_eps_a = math.sqrt(1.0 - sched.alpha_bar[sched.t_truncate]) * cfg.noise_scale * d_next
        grads["hatna.gain_log"] += adapt_gain_grad(hcfg, eps, d_eps_a)
    return float(np.mean(losses)), final


def _accumulate(grads, g, prefix):
    for k, v in g.items():
        grads[prefix + k] += v


# --------------------------------------------------------------------------- full objective


def loss_and_grads(model: PlannerModel, cfg: RunConfig, tgt: SceneTargets, anchors,
                   rng: np.random.Generator, weights=None):
    """All six loss parts for one scene and the gradient of their weighted sum.

    ``weights`` overrides ``cfg.loss_weights`` (a mapping keyed like
    ``LOSS_PARTS``). Returns ``(parts, grads, diagnostics)``.
    """
    w = cfg.loss_weights.as_dict() if weights is None else dict(weights)
    sched = cfg.schedule()
    hcfg = cfg.hatna(model.hatna_gain_log)
    anchors = np.asarray(anchors, dtype=float)
    K = anchors.shape[0]
    grads = {k: np.zeros_like(v) for k, v in model.parameters().items()}
    parts = {}

    parts["traj"], cands = _refiner_pass(model, cfg, sched, hcfg, anchors, tgt, rng, grads, w["traj"])

    # scoring over the union: anchors first, refined candidates second
    union = np.concatenate([anchors, cands], axis=0)
    union_world = to_world_frame(tgt.scene, union)
    metrics = np.concatenate([tgt.anchor_metrics, evaluate_submetrics_batch(tgt.scene, union_world[K:])])
    z_roll, c_roll = model.world.rollout_forward(tgt.z, union)
    logits, c_score = model.scorer.forward(union, tgt.z, z_roll)
    r_im = imitation_targets(union, tgt.gt, cfg.use_heading_in_distance)
    parts["im"], g_im = imitation_loss_logits(logits[:, 0], r_im)
    parts["sim"], g_sim = simulation_loss_logits(logits[:, 1:], metrics)
    d_logits = np.concatenate([w["im"] * g_im[:, None], w["sim"] * g_sim], axis=1)
    g_sc, d_zroll = model.scorer.backward(c_score, d_logits)
    _accumulate(grads, g_sc, "scorer.")

    # latent world model on a sample of the union, supervised at the horizon end
    S = min(cfg.lwm_samples, union.shape[0])
    idx = np.sort(rng.choice(union.shape[0], size=S, replace=False))
    grid = ground_truth_grid(tgt.scene, tgt.scene.n, traj=union_world[idx],
                             grid_size=model.grid_size).reshape(S, -1).astype(float)
    dec_logits, c_dec = model.world.decoder.forward(z_roll[idx])
    parts["lwm"], g_dec = focal_loss_logits(dec_logits, grid)
    g, d_lat = model.world.decoder.backward(c_dec, w["lwm"] * g_dec)
    _accumulate(grads, g, "world.decoder.")
    d_zroll[idx] += d_lat
    _accumulate(grads, model.world.rollout_backward(c_roll, d_zroll), "world.")

    # auxiliary occupancy heads on the current scene features
    for name, head, target in (("bev", model.world.bev_head, tgt.bev),
                               ("agent", model.world.agent_head, tgt.agent)):
        out, c = head.forward(tgt.z[None])
        parts[name], g_out = focal_loss_logits(out[0], target)
        g, _ = head.backward(c, w[name] * g_out[None])
        _accumulate(grads, g, f"world.{name}.")

    scores = scores_from_logits(logits)
    diag = {
        "winner_ade": float(np.min(np.mean(np.linalg.norm(cands[..., :2] - tgt.gt[:, :2], axis=-1), axis=1))),
        "im_mass_diffusion": float(scores[K:, 0].sum()),
        "sim_bce_vocab": float(simulation_loss_logits(logits[:K, 1:], metrics[:K])[0]),
        "sim_bce_diffusion": float(simulation_loss_logits(logits[K:, 1:], metrics[K:])[0]),
    }
    return parts, grads, diag


# --------------------------------------------------------------------------- optimizer


def lr_at(step: int, cfg: RunConfig) -> float:
    """Linear warmup to ``cfg.lr`` followed by cosine decay to ``cfg.lr_min``."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    span = max(cfg.steps - cfg.warmup_steps, 1)
    frac = min(max(step - cfg.warmup_steps, 0) / span, 1.0)
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


class AdamW:
    """Adam with decoupled weight decay applied to weight matrices only."""

    def __init__(self, params: dict, weight_decay=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.wd, self.b1, self.b2, self.eps = weight_decay, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] *= self.b1
            self.m[k] += (1.0 - self.b1) * g
            self.v[k] *= self.b2
            self.v[k] += (1.0 - self.b2) * g * g
            if self.wd and k.rsplit(".", 1)[-1].startswith("W"):
                p *= 1.0 - lr * self.wd
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# --------------------------------------------------------------------------- loop


def build_model(cfg: RunConfig) -> PlannerModel:
    return PlannerModel(cfg.n_waypoints, FEATURE_DIM, cfg.hidden, cfg.grid_size, cfg.wm_hidden, cfg.seed)


def train(cfg: RunConfig, scenes, anchors, curve_path=None, log_every: int = 100) -> PlannerModel:
    """Fit a :class:`PlannerModel` on ``scenes`` with ``anchors`` (ego frame, (K, n, 3)).

    Loss-curve records ``{"step", <parts>, "total", "lr"}`` are written as
    line-delimited JSON to ``curve_path`` when given.
    """
    scenes = list(scenes)
    if not scenes:
        raise ParameterError("training corpus is empty")
    anchors = np.asarray(anchors, dtype=float)
    if anchors.ndim != 3 or anchors.shape[1:] != (cfg.n_waypoints, 3):
        raise ContractViolation(f"anchors must be (K, {cfg.n_waypoints}, 3), got {anchors.shape}")
    model = build_model(cfg)
    params = model.parameters()
    if not (cfg.use_hatna and cfg.learn_gain and cfg.refiner == "diffusion"):
        params.pop("hatna.gain_log")  # gains stay at their initial zeros
    opt = AdamW(params, cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    targets: dict[int, SceneTargets] = {}
    order = np.empty(0, dtype=int)
    curve = open(curve_path, "w") if curve_path is not None else None
    try:
        for step in range(cfg.steps):
            if order.size < cfg.scenes_per_step:
                order = np.concatenate([order, rng.permutation(len(scenes))])
            batch, order = order[:cfg.scenes_per_step], order[cfg.scenes_per_step:]
            acc_parts = dict.fromkeys(LOSS_PARTS, 0.0)
            acc_grads = None
            for i in batch:
                i = int(i)
                if i not in targets:
                    targets[i] = prepare_scene(scenes[i], anchors, cfg.grid_size)
                parts, grads, _ = loss_and_grads(model, cfg, targets[i], anchors, rng)
                for k in LOSS_PARTS:
                    acc_parts[k] += parts[k] / len(batch)
                if acc_grads is None:
                    acc_grads = {k: v / len(batch) for k, v in grads.items()}
                else:
                    for k, v in grads.items():
                        acc_grads[k] += v / len(batch)
            total = total_loss(acc_parts, cfg.loss_weights)
            if not total < DIVERGENCE_LIMIT:
                raise TrainingDivergence(f"step {step}: total loss {total:.4g} exceeds {DIVERGENCE_LIMIT:g}")
            lr = lr_at(step, cfg)
            opt.step(acc_grads, lr)
            if curve is not None:
                rec = {"step": step, **{k: acc_parts[k] for k in LOSS_PARTS}, "total": total, "lr": lr}
                curve.write(json.dumps(rec) + "\n")
            if log_every and step % log_every == 0:
                log.info("step %d total %.4f traj %.4f lr %.2e", step, total, acc_parts["traj"], lr)
    finally:
        if curve is not None:
            curve.close()
    return model


# --------------------------------------------------------------------------- checkpoints


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(float)


def save_checkpoint(path, model: PlannerModel, cfg: RunConfig, extra: dict | None = None) -> None:
    """Write weights, noise-adapter gains, schedule and config hash as one JSON document (atomically)."""
    params = model.parameters()
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_json_dict(),
        "config_hash": cfg.config_hash(),
        "schedule": cfg.schedule().to_json_dict(),
        "hatna": cfg.hatna(model.hatna_gain_log).to_json_dict(),
        "weights": {k: _encode_array(params[k]) for k in sorted(params)},
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[PlannerModel, RunConfig]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ContractViolation(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ContractViolation("not a supported checkpoint file")
    cfg = RunConfig.from_json_dict(doc["config"])
    if cfg.config_hash() != doc["config_hash"]:
        raise ContractViolation("checkpoint config hash mismatch")
    model = build_model(cfg)
    model.load_parameters({k: _decode_array(v) for k, v in doc["weights"].items()})
    return model, cfg


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
