import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from candplan.config import ScoreWeights
from candplan.decision import (DIFFUSION, MODES, VOCAB, CandidateSet, aggregate_scores, ablation_grid,
                               build_candidates, decide, evaluate, plot_scene)
from candplan.exceptions import ParameterError
from candplan.nets import PlannerModel
from candplan.scenario import evaluate_submetrics_batch, pdms_batch
from candplan.vocabulary import Vocabulary

FIXTURES = Path(__file__).parent / "fixtures"


def test_decide_hand_example():
    s = np.array([[1, 1, 1, 0, 0, 0], [0, 0, 0, 1, 1, 1]], dtype=float)
    np.testing.assert_allclose(aggregate_scores(s), [1.05, 3.0])
    i, _ = decide(np.zeros((2, 8, 3)), s)
    assert i == 1


def test_decide_dominance_ties_and_errors(rng):
    s = rng.uniform(size=(10, 6))
    s[6] = 1.0
    assert decide(np.zeros((10, 8, 3)), s)[0] == 6
    assert decide(np.zeros((3, 8, 3)), np.ones((3, 6)))[0] == 0
    with pytest.raises(ParameterError):
        decide(np.zeros((0, 8, 3)), np.zeros((0, 6)))


def test_decide_invariant_to_weight_scaling(rng):
    w = ScoreWeights()
    for _ in range(200):
        s = rng.uniform(size=(30, 6))
        c = float(rng.uniform(0.01, 100))
        assert decide(np.zeros((30, 8, 3)), s, w)[0] == decide(np.zeros((30, 8, 3)), s, w.scaled(c))[0]


def test_decide_order_invariance(rng):
    s = rng.uniform(size=(20, 6))
    trajs = rng.normal(size=(20, 8, 3))
    perm = rng.permutation(20)
    _, t1 = decide(trajs, s)
    _, t2 = decide(trajs[perm], s[perm])
    np.testing.assert_array_equal(t1, t2)


def test_score_weights_validation():
    with pytest.raises(ParameterError):
        ScoreWeights(w_im=-1.0)
    with pytest.raises(ParameterError):
        ScoreWeights(0, 0, 0, 0, 0, 0)


def test_build_candidates_modes(small_corpus, small_vocab, small_model, small_cfg):
    scene = small_corpus[0]
    v = build_candidates("vocab_only", small_vocab, None, scene)
    assert np.array_equal(v.trajectories, small_vocab.anchors)
    d = build_candidates("diffusion_only", small_vocab, small_model, scene, 0, small_cfg)
    u = build_candidates("unified", small_vocab, small_model, scene, 0, small_cfg)
    K = small_vocab.k
    assert len(d) == K and len(u) == 2 * K
    assert u.provenance == (VOCAB,) * K + (DIFFUSION,) * K
    np.testing.assert_array_equal(u.trajectories[K:], d.trajectories)
    np.testing.assert_array_equal(u.anchor_index[:K], u.anchor_index[K:])
    with pytest.raises(ParameterError):
        build_candidates("diffusion_only", small_vocab, None, scene)
    with pytest.raises(ParameterError):
        build_candidates("both", small_vocab, small_model, scene, 0, small_cfg)


def test_unified_size_for_default_k(small_corpus, small_cfg):
    rng = np.random.default_rng(0)
    anchors = np.concatenate([rng.normal(size=(256, 8, 2)), np.zeros((256, 8, 1))], axis=2)
    vocab = Vocabulary(anchors)
    cfg = small_cfg.replace(k=256)
    model = PlannerModel(8, 36, 16, 16, 16, seed=0)
    assert len(build_candidates("unified", vocab, model, small_corpus[0], 0, cfg)) == 512


def test_zero_refiner_returns_anchor_positions(small_corpus, small_vocab, small_cfg):
    model = PlannerModel(8, 36, 16, 16, 16, seed=0)  # zero-initialized output heads
    d = build_candidates("diffusion_only", small_vocab, model, small_corpus[0], 0, small_cfg)
    np.testing.assert_array_equal(d.trajectories[..., :2], small_vocab.anchors[..., :2])


def test_candidates_deterministic(small_corpus, small_vocab, small_model, small_cfg):
    a = build_candidates("unified", small_vocab, small_model, small_corpus[2], 5, small_cfg)
    b = build_candidates("unified", small_vocab, small_model, small_corpus[2], 5, small_cfg)
    np.testing.assert_array_equal(a.trajectories, b.trajectories)


def test_unified_decision_dominates_subsets(small_corpus, small_vocab, small_model, small_cfg):
    from candplan.scenario import encode_scene
    K = small_vocab.k
    for scene in small_corpus[:10]:
        u = build_candidates("unified", small_vocab, small_model, scene, 0, small_cfg)
        z = encode_scene(scene)
        s = small_model.score_candidates(u.trajectories, z)
        agg = aggregate_scores(s, small_cfg.score_weights)
        i, _ = decide(u, s, small_cfg.score_weights)
        assert agg[i] >= agg[:K].max() and agg[i] >= agg[K:].max()


def test_experts_as_sole_candidate_score_one(small_corpus):
    for scene in small_corpus:
        i, traj = decide(scene.expert.points[None], np.ones((1, 6)))
        assert pdms_batch(evaluate_submetrics_batch(scene, traj[None]))[0] == 1.0


def test_report_schema_golden(small_corpus, small_vocab, small_model, small_cfg):
    rep = evaluate(small_corpus[:6], "unified", small_model, small_vocab, cfg=small_cfg)
    golden = json.loads((FIXTURES / "report_schema.json").read_text())

    def shape(d):
        return {k: shape(v) if isinstance(v, dict) else type(v).__name__ for k, v in d.items()}

    assert list(rep) == golden["top_level_order"]
    assert shape(rep) == golden["shape"]


def test_evaluate_deterministic(small_corpus, small_vocab, small_model, small_cfg):
    a = evaluate(small_corpus[:6], "diffusion_only", small_model, small_vocab, cfg=small_cfg)
    b = evaluate(small_corpus[:6], "diffusion_only", small_model, small_vocab, cfg=small_cfg)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_evaluate_needs_model(small_corpus, small_vocab):
    with pytest.raises(ParameterError):
        evaluate(small_corpus[:2], "vocab_only", None, small_vocab)


def test_plot_scene_valid_and_deterministic(small_corpus, small_vocab, small_model, small_cfg, tmp_path):
    scene = small_corpus[1]
    u = build_candidates("unified", small_vocab, small_model, scene, 0, small_cfg)
    plot_scene(scene, u, 3, tmp_path / "a.svg")
    plot_scene(scene, u, 3, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    root = ET.parse(tmp_path / "a.svg").getroot()
    colors = {el.get("stroke") for el in root.iter() if el.get("stroke")}
    assert {"#2ca02c", "#d62728", "#1f77b4"} <= colors


def test_plot_empty_set_is_valid_xml(small_corpus, tmp_path):
    empty = CandidateSet(np.zeros((0, 8, 3)), (), np.zeros(0, dtype=int))
    plot_scene(small_corpus[0], empty, None, tmp_path / "e.svg")
    ET.parse(tmp_path / "e.svg")


def test_plot_io_error_surfaces(small_corpus, tmp_path):
    with pytest.raises(OSError):
        plot_scene(small_corpus[0], None, None, tmp_path / "missing" / "x.svg")


def test_ablation_grid_rows():
    rows = ablation_grid()
    assert rows[0] == ("vocab_only", None, None)
    assert ("unified", "diffusion", True) in rows and ("unified", "diffusion", False) in rows
    assert ("diffusion_only", "regression", False) in rows
    assert len(rows) == len(set(rows))
    assert set(m for m, _, _ in rows) == set(MODES)
