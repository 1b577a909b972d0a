"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime/data error. Diagnostics
go to stderr; machine-readable output goes to files or stdout.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data, fusion, gradcheck, metrics
from .concepts import ConceptPool, attach_embeddings, filter_and_insert, load_pool, save_pool
from .data import write_embeddings
from .engine import ContinualTrainer, RunConfig
from .errors import AlignmentError, ConceptCilError, ParseError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def build_parser():
    parser = _Parser(
        prog="conceptcil",
        description="Concept-guided exemplar-free class-incremental learning on frozen embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic benchmark directory")
    spec_defaults = data.SyntheticSpec()
    synth.add_argument("--classes", type=_positive_int, default=spec_defaults.n_classes)
    synth.add_argument("--dim", type=_positive_int, default=spec_defaults.dim)
    synth.add_argument("--train-per-class", type=_positive_int, default=spec_defaults.train_per_class)
    synth.add_argument("--test-per-class", type=_positive_int, default=spec_defaults.test_per_class)
    synth.add_argument("--concepts-per-class", type=_positive_int, default=spec_defaults.concepts_per_class)
    synth.add_argument("--tasks", type=_positive_int, default=5)
    synth.add_argument("--center-scale", type=float, default=spec_defaults.center_scale)
    synth.add_argument("--noise", type=float, default=spec_defaults.sample_noise)
    synth.add_argument("--anchor-noise", type=float, default=spec_defaults.anchor_noise)
    synth.add_argument("--dup-fraction", type=float, default=spec_defaults.duplicate_fraction)
    synth.add_argument("--seed", type=_nonneg_int, default=spec_defaults.seed)
    synth.add_argument("-o", "--out", required=True)

    pool_build = sub.add_parser("pool-build", help="build a concept pool from a concepts JSON")
    pool_build.add_argument("--concepts", required=True, help="JSON {class: [concept, ...]}")
    pool_build.add_argument("--tau", type=float, default=0.5)
    pool_build.add_argument("--k", type=_positive_int, default=3)
    pool_build.add_argument(
        "--embeddings", default=None,
        help="optional CEMB aligned to the concepts JSON; writes the pooled rows next to the pool file",
    )
    pool_build.add_argument("-o", "--out", required=True, help="output pool JSON path")

    train = sub.add_parser("train", help="run the class-incremental schedule on a benchmark dir")
    train.add_argument("--data", required=True, help="benchmark directory (from synth or the exporter)")
    train.add_argument("-o", "--out", required=True, help="output directory for the run artifacts")
    train.add_argument("--config", default=None, help="optional JSON with RunConfig fields")
    train.add_argument("--alpha", type=float, default=None)
    train.add_argument("--lambda", dest="lam", type=float, default=None)
    train.add_argument("--tau", type=float, default=None)
    train.add_argument("--k", type=_positive_int, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--weight-decay", type=float, default=None)
    train.add_argument("--batch-size", type=_positive_int, default=None)
    train.add_argument("--epochs", type=_positive_int, default=None)
    train.add_argument("--shrink", type=float, default=None)
    train.add_argument("--seed", type=_nonneg_int, default=None)
    train.add_argument("--replay-per-class", type=_nonneg_int, default=None)
    train.add_argument("--infer-alpha", type=float, default=None)
    train.add_argument("--no-attn-loss-on-replay", action="store_true")
    train.add_argument("--no-concept-branch", action="store_true")
    train.add_argument("--no-attn-loss", action="store_true")

    evaluate = sub.add_parser("eval", help="recompute stage metrics from a checkpoint")
    evaluate.add_argument("--checkpoint", required=True, help="checkpoint manifest JSON")
    evaluate.add_argument("--data", required=True, help="benchmark directory with test.json")
    evaluate.add_argument("--infer-alpha", type=float, default=None)

    attn = sub.add_parser("attn-export", help="export mean attention per class as CSV")
    attn.add_argument("--checkpoint", required=True)
    attn.add_argument("--pool", required=True, help="pool JSON (for concept texts and class map)")
    attn.add_argument("--data", required=True)
    attn.add_argument("-o", "--out", required=True)

    grad = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    grad.add_argument("--seed", type=_nonneg_int, default=0)

    return parser


def _cmd_synth(args):
    spec = data.SyntheticSpec(
        n_classes=args.classes,
        dim=args.dim,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        concepts_per_class=args.concepts_per_class,
        center_scale=args.center_scale,
        sample_noise=args.noise,
        anchor_noise=args.anchor_noise,
        duplicate_fraction=args.dup_fraction,
        seed=args.seed,
    )
    bundle = data.generate_synthetic(spec)
    data.write_benchmark(bundle, args.out, args.tasks)
    print(
        f"wrote benchmark to {args.out}: {spec.n_classes} classes, dim {spec.dim}, "
        f"{args.tasks} tasks, {spec.train_per_class}/{spec.test_per_class} train/test per class, "
        f"seed {spec.seed}"
    )
    return 0


def _cmd_pool_build(args):
    texts = data.load_concept_texts(args.concepts)
    pool = ConceptPool(tau=args.tau, k=args.k)
    for name, items in texts.items():
        filter_and_insert(pool, name, items)
    save_pool(pool, args.out)
    if args.embeddings is not None:
        _, source = data.load_concept_embedding_source(args.concepts, args.embeddings)
        rows = []
        for concept in pool.concepts:
            if concept.text not in source:
                raise AlignmentError(f"no embedding for pooled concept {concept.text!r}")
            rows.append(source[concept.text])
        attach_embeddings(pool, np.stack(rows))
        write_embeddings(Path(args.out).with_suffix(".cemb"), pool.feature_matrix())
    print(f"pool with {pool.size} concepts for {len(texts)} classes -> {args.out}")
    return 0


def _cmd_train(args):
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{args.config}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
        cfg = RunConfig.from_dict(doc)
    else:
        cfg = RunConfig()
    overrides = (
        "alpha", "lam", "tau", "k", "lr", "weight_decay", "batch_size",
        "epochs", "shrink", "seed", "replay_per_class", "infer_alpha",
    )
    for attr in overrides:
        value = getattr(args, attr)
        if value is not None:
            setattr(cfg, attr, value)
    if args.no_attn_loss_on_replay:
        cfg.attn_loss_on_replay = False
    if args.no_concept_branch:
        cfg.disable_concept_branch = True
    if args.no_attn_loss:
        cfg.disable_attn_loss = True
    cfg.validate()
    bench = data.load_benchmark(args.data)
    trainer = ContinualTrainer(
        cfg, bench.schedule, bench.train, bench.test,
        bench.concept_texts, bench.concept_embeddings, args.out,
    )
    report = trainer.run()
    print(json.dumps(report["aggregate"]))
    return 0


def _cmd_eval(args):
    params, concept_feats, class_order, manifest = fusion.load_checkpoint(args.checkpoint)
    test = data.load_dataset(Path(args.data) / "test.json")
    alpha = args.infer_alpha
    if alpha is None:
        alpha = manifest.get("infer_alpha")
    if alpha is None:
        alpha = 0.8
    sel = np.isin(test.labels, class_order)
    stage = metrics.evaluate_stage(
        params,
        concept_feats,
        np.ascontiguousarray(test.features[sel]),
        test.labels[sel],
        class_order,
        alpha,
        stage=manifest.get("task_index") or 0,
    )
    print(
        json.dumps(
            {
                "stage": stage.stage,
                "accuracy": stage.accuracy,
                "mcr": stage.mcr,
                "n_seen_classes": stage.n_seen_classes,
                "per_class_recall": {str(k): v for k, v in stage.per_class_recall.items()},
            }
        )
    )
    return 0


def _cmd_attn_export(args):
    params, concept_feats, class_order, _ = fusion.load_checkpoint(args.checkpoint)
    pool = load_pool(args.pool)
    if concept_feats is None or pool.size != concept_feats.shape[0]:
        have = 0 if concept_feats is None else concept_feats.shape[0]
        raise AlignmentError(f"checkpoint has {have} concept rows, pool has {pool.size}")
    test = data.load_dataset(Path(args.data) / "test.json")
    matrix, mask, missing = metrics.attention_matrix(
        params, concept_feats, test.features, test.labels,
        class_order, test.class_names, pool.class_map,
    )
    metrics.write_attention_csv(
        args.out, matrix, mask,
        [test.class_names[gid] for gid in class_order],
        [c.text for c in pool.concepts],
        missing,
    )
    print(f"wrote attention matrix for {len(class_order)} classes x {pool.size} concepts -> {args.out}")
    return 0


def _cmd_gradcheck(args):
    results = gradcheck.run_all(args.seed)
    failed = False
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name}: max_rel_err={result.max_rel_err:.3e} tol={result.tolerance:g}")
        failed = failed or not result.passed
    return 2 if failed else 0


_COMMANDS = {
    "synth": _cmd_synth,
    "pool-build": _cmd_pool_build,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "attn-export": _cmd_attn_export,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConceptCilError, OSError) as exc:
        print(f"conceptcil {args.command}: error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
