"""Candidate assembly, the decision rule, evaluation reports and SVG plots."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .config import RunConfig, ScoreWeights
from .exceptions import ContractViolation, ParameterError
from .nets import PlannerModel
from .scenario import (DIFFICULTIES, METRIC_NAMES, Scene, encode_scene, evaluate_submetrics_batch,
                       pdms_batch, to_ego_frame, to_world_frame)
from .trajectory import ade_batch, second_difference_magnitude
from .training import refine_candidates
from .vocabulary import Vocabulary

MODES = ("vocab_only", "diffusion_only", "unified")
REPORT_FORMAT = "candplan.report"
REPORT_SCHEMA_VERSION = 1
VOCAB, DIFFUSION = "vocab", "diffusion"


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Ego-frame candidates with their source and the anchor they stem from."""

    trajectories: np.ndarray  # (M, n, 3)
    provenance: tuple  # "vocab" | "diffusion" per candidate
    anchor_index: np.ndarray  # (M,)

    def __post_init__(self):
        t = np.asarray(self.trajectories, dtype=float)
        if t.ndim != 3 or t.shape[-1] != 3:
            raise ContractViolation(f"candidates must be (M, n, 3), got {t.shape}")
        if len(self.provenance) != t.shape[0] or len(self.anchor_index) != t.shape[0]:
            raise ContractViolation("provenance and anchor_index must have one entry per candidate")
        object.__setattr__(self, "trajectories", t)

    def __len__(self):
        return self.trajectories.shape[0]

    def mask(self, source: str) -> np.ndarray:
        return np.array([p == source for p in self.provenance], dtype=bool)


def noise_rng(seed: int, scene: Scene) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(scene.seed), 7])


def build_candidates(mode: str, vocab: Vocabulary, model: PlannerModel | None, scene: Scene,
                     seed: int = 0, cfg: RunConfig | None = None, z=None) -> CandidateSet:
    """Assemble the candidate set for one scene.

    ``vocab_only`` passes anchors through, ``diffusion_only`` refines every
    anchor, and ``unified`` lists anchors first and refined candidates after.
    """
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}")
    K = vocab.k
    idx = np.arange(K)
    if mode == "vocab_only":
        return CandidateSet(vocab.anchors.copy(), (VOCAB,) * K, idx)
    if model is None or cfg is None:
        raise ParameterError(f"mode {mode} needs a trained model and its config")
    z = encode_scene(scene) if z is None else z
    hcfg = cfg.hatna(model.hatna_gain_log) if cfg.use_hatna else None
    refined = refine_candidates(model, cfg.schedule(), hcfg, vocab.anchors, z,
                                noise_rng(seed, scene), cfg.refiner, noise_scale=cfg.noise_scale)
    if mode == "diffusion_only":
        return CandidateSet(refined, (DIFFUSION,) * K, idx)
    return CandidateSet(np.concatenate([vocab.anchors, refined]), (VOCAB,) * K + (DIFFUSION,) * K,
                        np.concatenate([idx, idx]))


def aggregate_scores(scores, w: ScoreWeights = ScoreWeights()) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[1] != 6:
        raise ContractViolation(f"scores must be (M, 6), got {scores.shape}")
    return scores @ w.as_array()


def decide(cands, scores, w: ScoreWeights = ScoreWeights()):
    """Index and trajectory maximizing ``w . s`` (first index wins ties)."""
    trajs = cands.trajectories if isinstance(cands, CandidateSet) else np.asarray(cands, dtype=float)
    if len(trajs) == 0:
        raise ParameterError("candidate set is empty")
    scores = np.asarray(scores, dtype=float)
    if scores.shape[0] != len(trajs):
        raise ContractViolation(f"{scores.shape[0]} score rows for {len(trajs)} candidates")
    i = int(np.argmax(aggregate_scores(scores, w)))
    return i, trajs[i]


# --------------------------------------------------------------------------- evaluation


def _summary(pd, sub, ade, extra) -> dict:
    out = {"n_scenes": int(pd.size)}
    if pd.size == 0:
        return out
    out["pdms"] = float(np.mean(pd))
    for j, name in enumerate(METRIC_NAMES):
        out[name] = float(np.mean(sub[:, j]))
    out["ade"] = float(np.mean(ade))
    for k, v in extra.items():
        out[k] = float(np.mean(v))
    return out


def evaluate_scene(scene: Scene, mode: str, vocab: Vocabulary, model, cfg, w: ScoreWeights,
                   seed: int = 0) -> dict:
    """Per-scene record: decided sub-metrics, PDMS and candidate statistics."""
    if model is None:
        raise ParameterError("evaluation needs a trained scorer")
    z = encode_scene(scene)
    cs = build_candidates(mode, vocab, model, scene, seed, cfg, z)
    scores = model.score_candidates(cs.trajectories, z)  # one call for every source
    i, traj = decide(cs, scores, w)
    world = to_world_frame(scene, traj[None])
    sub = evaluate_submetrics_batch(scene, world)[0]
    gt = to_ego_frame(scene, scene.expert.points)
    refined = cs.trajectories[cs.mask(DIFFUSION)] if mode != "vocab_only" else cs.trajectories
    cand_ade = ade_batch(refined, gt)
    return {
        "seed": scene.seed,
        "difficulty": scene.difficulty,
        "index": i,
        "source": cs.provenance[i],
        "sub": sub,
        "pdms": float(pdms_batch(sub[None])[0]),
        "ade": float(ade_batch(traj[None], gt)[0]),
        "candidate_min_ade": float(cand_ade.min()),
        "candidate_mean_ade": float(cand_ade.mean()),
        "kink": float(np.mean(second_difference_magnitude(refined))),
    }


def evaluate(scenes, mode: str, model, vocab: Vocabulary, w: ScoreWeights | None = None,
             cfg: RunConfig | None = None, seed: int = 0) -> dict:
    """Mean PDMS, sub-metrics and ADE per mode, overall and per difficulty."""
    scenes = list(scenes)
    if not scenes:
        raise ParameterError("evaluation corpus is empty")
    w = (cfg.score_weights if cfg is not None else ScoreWeights()) if w is None else w
    recs = [evaluate_scene(s, mode, vocab, model, cfg, w, seed) for s in scenes]
    extra_keys = ("candidate_min_ade", "candidate_mean_ade", "kink")

    def block(rs):
        return _summary(np.array([r["pdms"] for r in rs]),
                        np.array([r["sub"] for r in rs]).reshape(-1, len(METRIC_NAMES)),
                        np.array([r["ade"] for r in rs]),
                        {k: np.array([r[k] for r in rs]) for k in extra_keys})

    src = [r["source"] for r in recs]
    return {
        "format": REPORT_FORMAT,
        "schema_version": REPORT_SCHEMA_VERSION,
        "mode": mode,
        "refiner": None if cfg is None else cfg.refiner,
        "use_hatna": None if cfg is None else cfg.use_hatna,
        "k": vocab.k,
        "seed": seed,
        "config_hash": None if cfg is None else cfg.config_hash(),
        "overall": block(recs),
        "by_difficulty": {d: block([r for r in recs if r["difficulty"] == d]) for d in DIFFICULTIES},
        "selected_source": {s: src.count(s) / len(src) for s in (VOCAB, DIFFUSION)},
    }


def write_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def read_report(path) -> dict:
    rep = json.loads(Path(path).read_text())
    if rep.get("format") != REPORT_FORMAT or rep.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ContractViolation("unsupported report format")
    return rep


# --------------------------------------------------------------------------- plotting

_SVG_SIZE = 480
_COLORS = {"expert": "#2ca02c", "vocab": "#d62728", "diffusion": "#1f77b4",
           "corridor": "#bbbbbb", "agent": "#444444", "other": "#dddddd"}


def _polyline(pts, color, width=1.5, dash=None) -> str:
    d = " ".join(f"{x:.3f},{y:.3f}" for x, y in pts)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def plot_scene(scene: Scene, cands: CandidateSet | None, decided: int | None, path) -> None:
    """Static SVG of the scene, the expert and the selected/paired candidates.

    The chosen candidate's vocabulary anchor is drawn in red and the
    diffusion candidate refined from the same anchor in blue.
    """
    cl = to_ego_frame(scene, scene.corridor.centerline)
    pts = [cl, np.zeros((1, 2)), to_ego_frame(scene, scene.expert.xy)]
    if cands is not None and len(cands):
        pts.append(cands.trajectories[..., :2].reshape(-1, 2))
    allp = np.concatenate(pts)
    lo = np.array([-5.0, -20.0])
    hi = np.maximum(allp.max(axis=0), lo + 1.0)
    hi = np.minimum(hi, np.array([80.0, 20.0]))
    span = max(hi[0] - lo[0], hi[1] - lo[1])
    s = (_SVG_SIZE - 20) / span

    def px(p):
        p = np.atleast_2d(p)
        return np.stack([10 + (p[:, 0] - lo[0]) * s, _SVG_SIZE - 10 - (p[:, 1] - lo[1]) * s], axis=1)

    hw = scene.corridor.half_width
    nrm = np.gradient(cl, axis=0)
    nrm = np.stack([-nrm[:, 1], nrm[:, 0]], axis=1) / np.linalg.norm(nrm, axis=1, keepdims=True)
    body = [f'<rect width="{_SVG_SIZE}" height="{_SVG_SIZE}" fill="white"/>',
            _polyline(px(cl + hw * nrm), _COLORS["corridor"]),
            _polyline(px(cl - hw * nrm), _COLORS["corridor"]),
            _polyline(px(cl), _COLORS["corridor"], 0.8, "4,3")]
    for a in scene.agents:
        c = px(to_ego_frame(scene, np.array([a.x, a.y])))[0]
        body.append(f'<circle cx="{c[0]:.3f}" cy="{c[1]:.3f}" r="{a.radius * s:.3f}" '
                    f'fill="{_COLORS["agent"]}" fill-opacity="0.6"/>')
    if cands is not None and len(cands):
        for t in cands.trajectories[:: max(1, len(cands) // 64)]:
            body.append(_polyline(px(t[:, :2]), _COLORS["other"], 0.6))
    body.append(_polyline(px(to_ego_frame(scene, scene.expert.xy)), _COLORS["expert"], 2.5))
    if cands is not None and decided is not None and len(cands):
        if not 0 <= decided < len(cands):
            raise ContractViolation("decided index outside the candidate set")
        a = cands.anchor_index[decided]
        for src in (VOCAB, DIFFUSION):
            hit = np.flatnonzero(cands.mask(src) & (cands.anchor_index == a))
            if hit.size:
                body.append(_polyline(px(cands.trajectories[hit[0], :, :2]), _COLORS[src], 2.0))
    e = px(np.zeros(2))[0]
    body.append(f'<circle cx="{e[0]:.3f}" cy="{e[1]:.3f}" r="{s:.3f}" fill="black"/>')
    title = escape(f"scene {scene.seed} ({scene.difficulty})")
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_SIZE}" height="{_SVG_SIZE}" '
           f'viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">\n<title>{title}</title>\n'
           + "\n".join(body) + "\n</svg>\n")
    Path(path).write_text(svg)


def ablation_grid(modes=MODES, hatna=(True, False), refiners=("diffusion", "regression")):
    """Rows of the ablation grid: vocabulary-only once, then every trained variant."""
    rows = [("vocab_only", None, None)]
    for ref in refiners:
        for h in hatna:
            if ref == "regression" and h:
                continue  # the noise adapter does not apply to the one-shot refiner
            for m in modes:
                if m != "vocab_only":
                    rows.append((m, ref, h))
    return rows
