"""Class-incremental training engine.

Per task: ingest the new classes' concepts into the pool, grow the
classifier heads, train on shuffled real batches augmented with
pseudo-features sampled from the saved per-class Gaussians, then fit
Gaussians for the new classes and evaluate on the cumulative test set.
Stage metrics are computed from the just-saved checkpoint so a later
``eval`` of that checkpoint reproduces them exactly.

Determinism: every random draw comes from a generator derived as
``default_rng([seed, tag, ...])`` with a fixed purpose tag, so reruns are
bit-identical and independent code paths never shift each other's
streams. Tags: per-tensor init (10..13, in FusionParams), head expansion
(20, per task), epoch shuffling (30, per task/epoch), replay sampling
(40, per task/epoch).
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fusion, kernels, metrics, replay
from .autodiff import AdamW, cosine_lr
from .concepts import ConceptPool, attach_embeddings, filter_and_insert, save_pool
from .data import write_embeddings
from .errors import ConfigError, ScheduleError, ShapeError

_TAG_EXPAND = 20
_TAG_SHUFFLE = 30
_TAG_REPLAY = 40


@dataclass
class RunConfig:
    alpha: float = 0.8
    lam: float = 0.6
    tau: float = 0.5
    k: int = 3
    lr: float = 0.005
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    shrink: float = replay.DEFAULT_SHRINK
    seed: int = 0
    replay_per_class: int = 2
    attn_loss_on_replay: bool = True
    disable_concept_branch: bool = False
    disable_attn_loss: bool = False
    infer_alpha: "float | None" = None

    _JSON_NAMES = None  # filled below

    def validate(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lam < 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 < self.tau:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.shrink <= 0.0:
            raise ConfigError(f"shrink must be > 0, got {self.shrink}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.replay_per_class < 0:
            raise ConfigError(f"replay_per_class must be >= 0, got {self.replay_per_class}")
        if self.infer_alpha is not None and not 0.0 <= self.infer_alpha <= 1.0:
            raise ConfigError(f"infer_alpha must be in [0, 1], got {self.infer_alpha}")
        return self

    def resolved_infer_alpha(self):
        return self.alpha if self.infer_alpha is None else self.infer_alpha

    def to_dict(self):
        out = {}
        for attr, key in self._JSON_NAMES.items():
            out[key] = getattr(self, attr)
        return out

    @classmethod
    def from_dict(cls, doc):
        by_key = {key: attr for attr, key in cls._JSON_NAMES.items()}
        kwargs = {}
        for key, value in doc.items():
            if key not in by_key:
                raise ConfigError(f"unknown config field {key!r}")
            kwargs[by_key[key]] = value
        return cls(**kwargs).validate()


RunConfig._JSON_NAMES = {
    "alpha": "alpha",
    "lam": "lambda",
    "tau": "tau",
    "k": "k",
    "lr": "lr",
    "weight_decay": "weight_decay",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "shrink": "shrink",
    "seed": "seed",
    "replay_per_class": "replay_per_class",
    "attn_loss_on_replay": "attn_loss_on_replay",
    "disable_concept_branch": "disable_concept_branch",
    "disable_attn_loss": "disable_attn_loss",
    "infer_alpha": "infer_alpha",
}


def epoch_permutation(seed, task_index, epoch, n):
    """Shuffle order for one epoch; depends only on (seed, task, epoch)."""
    return np.random.default_rng([seed, _TAG_SHUFFLE, task_index, epoch]).permutation(n)


def compose_batch(
    real_feats,
    real_cols,
    old_class_ids,
    stats_by_class,
    replay_per_class,
    rng,
    col_of,
    class_sets,
    attn_on_replay=True,
):
    """Append replay_per_class pseudo-features per old class to a real batch.

    Old classes are visited in ascending global id. Returns
    (features, label_cols, concept_sets, attn_mask); concept_sets is None
    when ``class_sets`` is None (concept branch disabled).
    """
    n_real = real_feats.shape[0]
    if replay_per_class > 0 and old_class_ids:
        pseudo = []
        pseudo_cols = []
        for gid in old_class_ids:
            pseudo.append(replay.sample(stats_by_class[gid], replay_per_class, rng))
            pseudo_cols.extend([col_of[gid]] * replay_per_class)
        feats = np.ascontiguousarray(np.concatenate([real_feats] + pseudo))
        cols = np.concatenate([real_cols, np.asarray(pseudo_cols, dtype=np.int64)])
    else:
        feats = real_feats
        cols = real_cols
    mask = np.ones(feats.shape[0], dtype=bool)
    if not attn_on_replay:
        mask[n_real:] = False
    sets = None if class_sets is None else [class_sets[c] for c in cols]
    return feats, cols, sets, mask


class ContinualTrainer:
    """Runs a full task schedule and writes all artifacts into out_dir."""

    def __init__(self, config, schedule, train_set, test_set, concept_texts, concept_embeddings, out_dir):
        config.validate()
        self.cfg = config
        self.schedule = schedule
        self.train_set = train_set
        self.test_set = test_set
        self.concept_texts = concept_texts
        self.concept_embeddings = concept_embeddings
        self.out_dir = Path(out_dir)
        names = train_set.class_names
        if schedule.n_classes != len(names):
            raise ScheduleError(
                f"schedule covers {schedule.n_classes} classes, dataset has {len(names)}"
            )
        if not config.disable_concept_branch:
            if concept_texts is None or concept_embeddings is None:
                raise ConfigError("concept branch enabled but no concepts were provided")
            for task in schedule.tasks:
                for cid in task:
                    if not concept_texts.get(names[cid]):
                        raise ConfigError(f"class {names[cid]!r} has no concepts")

        self.params = fusion.FusionParams.init(train_set.dim, config.seed)
        self.pool = ConceptPool(tau=config.tau, k=config.k)
        self.stats = {}
        self.class_order = []
        self.col_of = {}
        self.sets_by_col = []
        self.pool_feats = None
        self.stage_metrics = []
        self.stages = []

    @property
    def concept_branch(self):
        return not self.cfg.disable_concept_branch

    def run(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for t in range(self.schedule.n_tasks):
            self.run_task(t)
        return self._finalize()

    # -- per-task protocol ---------------------------------------------------

    def run_task(self, task_index):
        classes = self.schedule.tasks[task_index]
        already = [c for c in classes if c in self.col_of]
        if already:
            raise ScheduleError(f"task {task_index} re-introduces classes {already}")

        if self.concept_branch:
            self._ingest_concepts(classes)
        rng = np.random.default_rng([self.cfg.seed, _TAG_EXPAND, task_index])
        fusion.expand_classes(self.params, len(self.class_order) + len(classes), rng)
        old_class_ids = sorted(self.col_of)
        for cid in classes:
            self.col_of[cid] = len(self.class_order)
            self.class_order.append(int(cid))
        if self.concept_branch:
            names = self.train_set.class_names
            self.sets_by_col = [
                np.asarray(sorted(self.pool.class_map[names[gid]]), dtype=np.int64)
                for gid in self.class_order
            ]

        loss_curve = self._train(task_index, classes, old_class_ids)

        for cid in classes:
            sel = self.train_set.labels == cid
            self.stats[int(cid)] = replay.fit_class(
                self.train_set.features[sel], cid, self.cfg.shrink
            )

        stage = self._checkpoint_and_eval(task_index)
        self.stage_metrics.append(stage)
        self.stages.append(
            {
                "task": task_index,
                "classes": [int(c) for c in classes],
                "n_seen_classes": stage.n_seen_classes,
                "accuracy": stage.accuracy,
                "mcr": stage.mcr,
                "per_class_recall": {str(k): v for k, v in stage.per_class_recall.items()},
                "missing_test_classes": stage.missing_classes,
                "loss_curve": loss_curve,
                "checkpoint": f"checkpoint_task{task_index}.json",
            }
        )
        return stage

    def _ingest_concepts(self, classes):
        names = self.train_set.class_names
        for cid in classes:
            filter_and_insert(self.pool, names[cid], self.concept_texts[names[cid]])
        rows = []
        for concept in self.pool.concepts:
            if concept.text not in self.concept_embeddings:
                raise ConfigError(
                    f"no embedding for pooled concept {concept.text!r}; "
                    "rebuild the concept embeddings to cover the training order"
                )
            rows.append(self.concept_embeddings[concept.text])
        mat = np.stack(rows)
        if mat.shape[1] != self.train_set.dim:
            raise ShapeError(
                f"concept embedding width {mat.shape[1]} != feature width {self.train_set.dim}"
            )
        attach_embeddings(self.pool, mat)
        self.pool_feats = self.pool.feature_matrix()

    def _train(self, task_index, classes, old_class_ids):
        cfg = self.cfg
        sel = np.isin(self.train_set.labels, classes)
        feats = np.ascontiguousarray(self.train_set.features[sel])
        cols = np.asarray([self.col_of[g] for g in self.train_set.labels[sel]], dtype=np.int64)
        n = feats.shape[0]
        n_batches = math.ceil(n / cfg.batch_size)
        total_steps = cfg.epochs * n_batches
        optimizer = AdamW(
            self.params.trainable(self.concept_branch), weight_decay=cfg.weight_decay
        )
        lam = 0.0 if cfg.disable_attn_loss else cfg.lam
        step = 0
        curve = []
        for epoch in range(cfg.epochs):
            perm = epoch_permutation(cfg.seed, task_index, epoch, n)
            replay_rng = np.random.default_rng([cfg.seed, _TAG_REPLAY, task_index, epoch])
            sums = {"total": 0.0, "ce": 0.0, "aux": 0.0, "attn": 0.0}
            for b in range(n_batches):
                rows = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                batch, batch_cols, sets, attn_mask = compose_batch(
                    np.ascontiguousarray(feats[rows]),
                    cols[rows],
                    old_class_ids,
                    self.stats,
                    cfg.replay_per_class,
                    replay_rng,
                    self.col_of,
                    self.sets_by_col if self.concept_branch else None,
                    cfg.attn_loss_on_replay,
                )
                optimizer.zero_grad()
                if self.concept_branch:
                    trace = fusion.forward(self.params, batch, self.pool_feats)
                    total, parts = fusion.composite_loss(
                        self.params, trace, batch_cols, sets, cfg.alpha, lam, attn_mask
                    )
                else:
                    total = fusion.image_only_loss(self.params, batch, batch_cols)
                    parts = {"ce": total, "aux": 0.0, "attn": 0.0}
                optimizer.step(cosine_lr(step, total_steps, cfg.lr))
                step += 1
                sums["total"] += total
                for key in ("ce", "aux", "attn"):
                    sums[key] += parts[key]
            curve.append({k: v / n_batches for k, v in sums.items()})
        return curve

    def _checkpoint_and_eval(self, task_index):
        manifest = fusion.save_checkpoint(
            self.out_dir,
            f"checkpoint_task{task_index}",
            self.params,
            self.pool_feats if self.concept_branch else None,
            self.class_order,
            task_index=task_index,
            infer_alpha=self.cfg.resolved_infer_alpha(),
        )
        loaded_params, loaded_feats, loaded_order, _ = fusion.load_checkpoint(manifest)
        sel = np.isin(self.test_set.labels, loaded_order)
        return metrics.evaluate_stage(
            loaded_params,
            loaded_feats,
            np.ascontiguousarray(self.test_set.features[sel]),
            self.test_set.labels[sel],
            loaded_order,
            self.cfg.resolved_infer_alpha(),
            stage=task_index,
        )

    # -- artifacts -------------------------------------------------------------

    def _finalize(self):
        out = self.out_dir
        metrics.write_metrics_csv(out / "metrics.csv", self.stage_metrics)
        artifacts = {"metrics_csv": "metrics.csv", "stats": "stats.json"}
        replay.save_stats(list(self.stats.values()), out / "stats.json")
        if self.concept_branch:
            save_pool(self.pool, out / "pool.json")
            write_embeddings(out / "pool.cemb", self.pool_feats)
            artifacts["pool"] = "pool.json"
            self._export_attention(out / "attention.csv")
            artifacts["attention_csv"] = "attention.csv"
        report = {
            "config": self.cfg.to_dict(),
            "backend": kernels.active_backend(),
            "class_names": list(self.train_set.class_names),
            "stages": self.stages,
            "aggregate": metrics.aggregate(self.stage_metrics),
            "artifacts": artifacts,
        }
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        return report

    def _export_attention(self, path):
        manifest = self.out_dir / f"checkpoint_task{self.schedule.n_tasks - 1}.json"
        params, feats, order, _ = fusion.load_checkpoint(manifest)
        names = self.test_set.class_names
        matrix, mask, missing = metrics.attention_matrix(
            params,
            feats,
            self.test_set.features,
            self.test_set.labels,
            order,
            names,
            self.pool.class_map,
        )
        metrics.write_attention_csv(
            path,
            matrix,
            mask,
            [names[gid] for gid in order],
            [c.text for c in self.pool.concepts],
            missing,
        )
