"""Command-line entry point: ``candplan <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import decision, training
from .config import RunConfig
from .exceptions import ContractViolation, GenerationError, ParameterError, TrainingDivergence
from .scenario import encode_scene, generate_corpus, read_corpus, to_ego_frame, write_corpus
from .vocabulary import Vocabulary, build_vocabulary

log = logging.getLogger("candplan")

EXIT_CONTRACT = 2
EXIT_DIVERGED = 3


def _seed_range(text: str) -> range:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("seed range must look like START:STOP") from None
    if hi <= lo:
        raise argparse.ArgumentTypeError("seed range must be non-empty")
    return range(lo, hi)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    changes = {}
    for name in ("steps", "seed", "lr", "k"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    if getattr(args, "no_hatna", False):
        changes["use_hatna"] = False
    if getattr(args, "refiner", None):
        changes["refiner"] = args.refiner
    return cfg.replace(**changes) if changes else cfg


def _experts(scenes):
    return [to_ego_frame(s, s.expert.points) for s in scenes]


def cmd_gen_data(args) -> None:
    scenes = generate_corpus(args.seed_range, args.interactive_fraction)
    write_corpus(args.out, scenes)
    log.info("wrote %d scenes to %s", len(scenes), args.out)


def cmd_build_vocab(args) -> None:
    scenes = read_corpus(args.corpus)
    vocab = build_vocabulary(_experts(scenes), args.k, seed=args.seed)
    vocab.save(args.out)
    log.info("wrote %d anchors to %s", vocab.k, args.out)


def cmd_train(args) -> None:
    cfg = _load_config(args)
    vocab = Vocabulary.load(args.vocab)
    if vocab.k != cfg.k:
        cfg = cfg.replace(k=vocab.k)
    scenes = read_corpus(args.corpus)
    model = training.train(cfg, scenes, vocab.anchors, curve_path=args.curve)
    training.save_checkpoint(args.out, model, cfg)
    log.info("saved checkpoint to %s", args.out)


def cmd_eval(args) -> None:
    model, cfg = training.load_checkpoint(args.checkpoint)
    if args.no_hatna:
        cfg = cfg.replace(use_hatna=False)
    vocab = Vocabulary.load(args.vocab)
    scenes = read_corpus(args.corpus)
    report = decision.evaluate(scenes, args.mode, model, vocab, cfg=cfg, seed=args.seed)
    decision.write_report(args.out, report)
    o = report["overall"]
    print(f"{args.mode}: PDMS {o['pdms']:.4f} over {o['n_scenes']} scenes")


def cmd_ablate(args) -> None:
    train_scenes = read_corpus(args.train_corpus)
    test_scenes = read_corpus(args.test_corpus)
    base = _load_config(args)
    vocab = build_vocabulary(_experts(train_scenes), base.k, seed=base.vocab_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.json")
    models = {}
    rows = []
    for mode, refiner, hatna in decision.ablation_grid():
        key = ("diffusion", True) if refiner is None else (refiner, hatna)
        if key not in models:
            cfg = base.replace(refiner=key[0], use_hatna=key[1])
            tag = f"{key[0]}_{'hatna' if key[1] else 'nohatna'}"
            m = training.train(cfg, train_scenes, vocab.anchors, curve_path=out / f"curve_{tag}.jsonl")
            training.save_checkpoint(out / f"checkpoint_{tag}.json", m, cfg)
            models[key] = (m, cfg)
        m, cfg = models[key]
        rep = decision.evaluate(test_scenes, mode, m, vocab, cfg=cfg, seed=base.seed)
        rows.append({"mode": mode, "refiner": key[0], "use_hatna": key[1], "report": rep})
        print(f"{mode:15s} {key[0]:10s} hatna={key[1]!s:5s} PDMS {rep['overall']['pdms']:.4f}")
    doc = {"format": "candplan.ablation", "schema_version": decision.REPORT_SCHEMA_VERSION, "rows": rows}
    (out / "ablation.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_plot(args) -> None:
    model, cfg = training.load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    scenes = read_corpus(args.corpus)
    if not 0 <= args.index < len(scenes):
        raise ParameterError(f"scene index {args.index} outside corpus of {len(scenes)}")
    scene = scenes[args.index]
    cs = decision.build_candidates(args.mode, vocab, model, scene, args.seed, cfg)
    i, _ = decision.decide(cs, model.score_candidates(cs.trajectories, encode_scene(scene)), cfg.score_weights)
    decision.plot_scene(scene, cs, i, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="candplan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic scene corpus")
    g.add_argument("--seed-range", type=_seed_range, required=True, metavar="START:STOP")
    g.add_argument("--interactive-fraction", type=float, default=0.5)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    b = sub.add_parser("build-vocab", help="cluster expert trajectories into anchors")
    b.add_argument("--corpus", required=True)
    b.add_argument("--k", type=int, default=256)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_vocab)

    def train_flags(q):
        q.add_argument("--config", help="run config JSON")
        q.add_argument("--steps", type=int)
        q.add_argument("--seed", type=int)
        q.add_argument("--lr", type=float)
        q.add_argument("--no-hatna", action="store_true")
        q.add_argument("--refiner", choices=("diffusion", "regression"))

    t = sub.add_parser("train", help="train the planner")
    train_flags(t)
    t.add_argument("--corpus", required=True)
    t.add_argument("--vocab", required=True)
    t.add_argument("--curve", help="loss-curve JSONL path")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    e.add_argument("--corpus", required=True)
    e.add_argument("--vocab", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mode", choices=decision.MODES, default="unified")
    e.add_argument("--no-hatna", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate the ablation grid")
    train_flags(a)
    a.add_argument("--k", type=int)
    a.add_argument("--train-corpus", required=True)
    a.add_argument("--test-corpus", required=True)
    a.add_argument("--out", required=True, help="output directory")
    a.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("plot", help="render one scene and its decision as SVG")
    pl.add_argument("--corpus", required=True)
    pl.add_argument("--vocab", required=True)
    pl.add_argument("--checkpoint", required=True)
    pl.add_argument("--index", type=int, default=0)
    pl.add_argument("--mode", choices=decision.MODES, default="unified")
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ContractViolation, ParameterError, GenerationError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    return 0


if __name__ == "__main__":
    sys.exit(main())
