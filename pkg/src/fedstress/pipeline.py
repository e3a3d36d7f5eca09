"""End-to-end orchestration: pre-training, federated fine-tuning, the
plain and pretrained baselines, evaluation, and artifact persistence.

Three experiment modes share one evaluation protocol:

* plain      - random init trained centrally on the union of fine-tune
               client training splits; never touches the pre-training data.
* pretrained - trained on the pre-training dataset only, evaluated
               zero-shot.
* finetuned  - pre-trained, then federated fine-tuning across per-user
               clients with the configured privacy mechanism.

All modes are evaluated on the identical union of per-user chronological
test splits. Normalization bounds are fitted once on whatever data the
mode may legitimately see (pre-training set, or the fine-tune training
union for plain) and reused unchanged everywhere downstream.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_to_dict, dump_config
from .data import (ClientShard, Dataset, binarize_dataset, concat_datasets,
                   generate_cohort, load_dataset_csv, partition_clients)
from .errors import ConfigError, DataError
from .federation import RoundRecord, make_clients, run_round
from .hrv import FeatureBounds
from .metrics import RocCurve, classification_metrics, confusion, roc
from .nn import AdamState, MlpModel, adam_step, load_model, save_model
from .privacy import PrivacyConfig

logger = logging.getLogger(__name__)

# Stream tags; every random draw in a run derives from (seed, tag, ...).
INIT_STREAM = 11
PRETRAIN_STREAM = 12
PLAIN_INIT_STREAM = 13
PLAIN_TRAIN_STREAM = 14
CENTRAL_FT_STREAM = 15

_USE_CONFIG_PRIVACY = object()


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


# -- shared training loop ------------------------------------------------------


def train_epochs(model: MlpModel, X: np.ndarray, y: np.ndarray, *, epochs: int,
                 batch_size: int, learning_rate: float,
                 rng: np.random.Generator) -> tuple[MlpModel, list[float]]:
    """Centralized minibatch Adam; returns the model and per-epoch mean loss."""
    n = X.shape[0]
    if n == 0:
        raise ConfigError("cannot train on an empty dataset")
    adam = AdamState.initial(model.params.layout, learning_rate)
    losses = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for lo in range(0, n, batch_size):
            idx = order[lo: lo + batch_size]
            grad, loss = model.backward(X[idx], y[idx], rng=rng)
            new_params, adam = adam_step(model.params, grad, adam)
            model = model.with_params(new_params)
            total += loss
            batches += 1
        losses.append(total / batches)
    return model, losses


# -- data plumbing -------------------------------------------------------------


def load_finetune_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data.finetune_csv is not None:
        return load_dataset_csv(cfg.data.finetune_csv)
    return generate_cohort(cfg.data.finetune_cohort, role="finetune")


def load_pretrain_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data.pretrain_csv is not None:
        return load_dataset_csv(cfg.data.pretrain_csv)
    return generate_cohort(cfg.data.pretrain_cohort, role="pretrain")


def build_raw_shards(cfg: ExperimentConfig, finetune_ds: Dataset) -> list[ClientShard]:
    """Binarize labels and partition the fine-tune data per user."""
    labeled = binarize_dataset(finetune_ds, cfg.binarize_threshold)
    return partition_clients(labeled, cfg.test_fraction)


def normalize_shards(shards: list[ClientShard], bounds: FeatureBounds) -> list[ClientShard]:
    out = []
    for shard in shards:
        out.append(ClientShard(
            shard.user_id,
            replace(shard.train, features=bounds.transform(shard.train.features)),
            replace(shard.test, features=bounds.transform(shard.test.features)),
        ))
    return out


def train_union(shards: list[ClientShard]) -> Dataset:
    return concat_datasets([s.train for s in shards])


def test_union(shards: list[ClientShard]) -> Dataset:
    return concat_datasets([s.test for s in shards])


# -- phases --------------------------------------------------------------------


def pretrain(cfg: ExperimentConfig, dataset: Dataset
             ) -> tuple[MlpModel, FeatureBounds, list[float]]:
    """Centralized pre-training; fits normalization bounds on this dataset."""
    if dataset.n == 0:
        raise ConfigError("pre-training dataset is empty")
    labeled = binarize_dataset(dataset, cfg.binarize_threshold)
    bounds = FeatureBounds.fit(labeled.features)
    X = bounds.transform(labeled.features)
    model = MlpModel.initialize(cfg.layer_dims, _rng(cfg.seed, INIT_STREAM), cfg.dropout)
    model, losses = train_epochs(
        model, X, labeled.labels,
        epochs=cfg.pretrain.epochs, batch_size=cfg.pretrain.batch_size,
        learning_rate=cfg.pretrain.learning_rate,
        rng=_rng(cfg.seed, PRETRAIN_STREAM),
    )
    return model, bounds, losses


def finetune_federated(model: MlpModel, shards: list[ClientShard],
                       cfg: ExperimentConfig,
                       privacy=_USE_CONFIG_PRIVACY,
                       ) -> tuple[MlpModel, list[RoundRecord]]:
    """Federated fine-tuning rounds starting from a pre-trained model.

    ``privacy`` defaults to the configured mechanism; pass None to bypass
    the privacy module entirely (no clipping, no noise).
    """
    if privacy is _USE_CONFIG_PRIVACY:
        privacy = cfg.privacy
    nonempty = [s for s in shards if s.train.n > 0]
    if cfg.finetune.rounds > 0 and not nonempty:
        raise ConfigError("federated fine-tuning needs at least one non-empty client")
    clients = make_clients(shards, model, cfg.finetune.learning_rate)
    records: list[RoundRecord] = []
    global_model = model
    for round_index in range(1, cfg.finetune.rounds + 1):
        if cfg.reset_adam_each_round:
            for client in clients:
                client.adam = AdamState.initial(model.params.layout,
                                                cfg.finetune.learning_rate)
        global_model, record = run_round(
            global_model, clients, round_index,
            local_epochs=cfg.finetune.local_epochs,
            batch_size=cfg.finetune.batch_size,
            privacy=privacy,
            master_seed=cfg.seed,
            weighted=cfg.weighted_aggregate,
        )
        records.append(record)
    return global_model, records


def centralized_finetune(model: MlpModel, shards: list[ClientShard],
                         cfg: ExperimentConfig) -> MlpModel:
    """Non-federated reference: the same fine-tuning budget spent as plain
    centralized epochs over the union of client training splits."""
    union = train_union(shards)
    epochs = cfg.finetune.rounds * cfg.finetune.local_epochs
    if epochs == 0:
        return model
    model, _ = train_epochs(
        model, union.features, union.labels,
        epochs=epochs, batch_size=cfg.finetune.batch_size,
        learning_rate=cfg.finetune.learning_rate,
        rng=_rng(cfg.seed, CENTRAL_FT_STREAM),
    )
    return model


def train_plain(cfg: ExperimentConfig, shards_raw: list[ClientShard]
                ) -> tuple[MlpModel, FeatureBounds, list[float]]:
    """The no-transfer baseline: random init, centralized training on the
    fine-tune training union, bounds fitted on that union only."""
    union = train_union(shards_raw)
    if union.n == 0:
        raise ConfigError("plain mode has no training data")
    bounds = FeatureBounds.fit(union.features)
    model = MlpModel.initialize(cfg.layer_dims, _rng(cfg.seed, PLAIN_INIT_STREAM),
                                cfg.dropout)
    model, losses = train_epochs(
        model, bounds.transform(union.features), union.labels,
        epochs=cfg.pretrain.epochs, batch_size=cfg.pretrain.batch_size,
        learning_rate=cfg.pretrain.learning_rate,
        rng=_rng(cfg.seed, PLAIN_TRAIN_STREAM),
    )
    return model, bounds, losses


# -- evaluation ----------------------------------------------------------------


def evaluate_model(model: MlpModel, X_test: np.ndarray, y_test: np.ndarray
                   ) -> tuple[dict, RocCurve | None]:
    """Threshold metrics plus the ROC curve (None if only one class)."""
    probs = model.forward(X_test)
    counts = confusion(probs, y_test)
    summary = classification_metrics(counts)
    curve = None
    try:
        curve = roc(probs, y_test)
    except DataError:
        logger.warning("test set has a single class; AUC is undefined")
    report = {
        "n_test": int(counts.total),
        "confusion": {"tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn},
        "accuracy": summary.accuracy,
        "precision": summary.precision,
        "recall": summary.recall,
        "f1": summary.f1,
        "degenerate": list(summary.degenerate),
        "auc": None if curve is None else curve.auc,
    }
    return report, curve


# -- artifacts -----------------------------------------------------------------


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def render_report(rows: list[dict]) -> str:
    """Plain-text table with the four headline columns per mode."""
    header = f"{'Model':<14}{'Accuracy':>10}{'F1 Score':>10}{'Recall':>10}{'Precision':>11}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['mode']:<14}{row['accuracy']:>10.4f}{row['f1']:>10.4f}"
            f"{row['recall']:>10.4f}{row['precision']:>11.4f}"
        )
        if row.get("degenerate"):
            lines.append(f"  note: zero-denominator metrics reported as 0: "
                         f"{', '.join(row['degenerate'])}")
    return "\n".join(lines) + "\n"


@dataclass
class TrainedArtifact:
    """Everything a finished run leaves behind."""

    mode: str
    model: MlpModel
    bounds: FeatureBounds
    config: dict
    round_records: list[RoundRecord]
    metrics: dict
    epoch_losses: list[float]
    roc_curve: RocCurve | None = None

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write_text(out / "config.json",
                           json.dumps(self.config, indent=2, sort_keys=True) + "\n")
        tmp_ckpt = out / "model.ckpt.tmp"
        with open(tmp_ckpt, "wb") as fh:
            save_model(fh, self.model,
                       extra={"bounds_min": self.bounds.mins,
                              "bounds_max": self.bounds.maxs})
        os.replace(tmp_ckpt, out / "model.ckpt")
        log_lines = [json.dumps(r.to_json_dict(), sort_keys=True)
                     for r in self.round_records]
        _atomic_write_text(out / "rounds.log", "\n".join(log_lines) + ("\n" if log_lines else ""))
        _atomic_write_text(out / "metrics.json",
                           json.dumps(self.metrics, indent=2, sort_keys=True) + "\n")
        row = dict(self.metrics)
        row["mode"] = self.mode
        _atomic_write_text(out / "report.txt", render_report([row]))
        if self.roc_curve is not None:
            write_roc_csv(out / "roc.csv", self.roc_curve)


def write_roc_csv(path, curve: RocCurve) -> None:
    lines = ["fpr,tpr"]
    lines += [f"{repr(float(f))},{repr(float(t))}" for f, t in zip(curve.fpr, curve.tpr)]
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def load_artifact(out_dir) -> tuple[MlpModel, FeatureBounds, dict]:
    out = Path(out_dir)
    ckpt = out / "model.ckpt"
    if not ckpt.exists():
        raise DataError(f"no checkpoint at {ckpt}")
    model, extras = load_model(ckpt)
    bounds = FeatureBounds(extras["bounds_min"], extras["bounds_max"])
    config_doc = {}
    cfg_path = out / "config.json"
    if cfg_path.exists():
        config_doc = json.loads(cfg_path.read_text(encoding="utf-8"))
    return model, bounds, config_doc


def load_checkpoint(path) -> tuple[MlpModel, FeatureBounds]:
    """Load a bare model.ckpt file (with its normalization bounds)."""
    model, extras = load_model(path)
    if "bounds_min" not in extras or "bounds_max" not in extras:
        raise DataError(f"checkpoint {path} is missing normalization bounds")
    return model, FeatureBounds(extras["bounds_min"], extras["bounds_max"])


# -- modes ---------------------------------------------------------------------


def run_mode(cfg: ExperimentConfig) -> TrainedArtifact:
    """Run one experiment mode end to end and evaluate it."""
    finetune_ds = load_finetune_dataset(cfg)
    shards_raw = build_raw_shards(cfg, finetune_ds)
    records: list[RoundRecord] = []

    if cfg.mode == "plain":
        model, bounds, losses = train_plain(cfg, shards_raw)
    elif cfg.mode in ("pretrained", "finetuned"):
        pretrain_ds = load_pretrain_dataset(cfg)
        model, bounds, losses = pretrain(cfg, pretrain_ds)
        if cfg.mode == "finetuned":
            shards = normalize_shards(shards_raw, bounds)
            model, records = finetune_federated(model, shards, cfg)
    else:  # pragma: no cover - caught by config validation
        raise ConfigError(f"unknown mode {cfg.mode!r}")

    test = test_union(shards_raw)
    metrics, curve = evaluate_model(model, bounds.transform(test.features), test.labels)
    metrics["mode"] = cfg.mode
    return TrainedArtifact(
        mode=cfg.mode, model=model, bounds=bounds, config=config_to_dict(cfg),
        round_records=records, metrics=metrics, epoch_losses=losses, roc_curve=curve,
    )


def pretrain_only(cfg: ExperimentConfig) -> TrainedArtifact:
    """Pre-train and package the model without touching fine-tune data."""
    pretrain_ds = load_pretrain_dataset(cfg)
    model, bounds, losses = pretrain(cfg, pretrain_ds)
    return TrainedArtifact(
        mode="pretrained", model=model, bounds=bounds, config=config_to_dict(cfg),
        round_records=[], metrics={"mode": "pretrained", "note": "not evaluated"},
        epoch_losses=losses, roc_curve=None,
    )


# -- epsilon sweep ---------------------------------------------------------------


@dataclass(frozen=True)
class SweepEntry:
    setting: str
    metrics: dict
    roc_curve: RocCurve | None


def sweep_setting_name(eps) -> str:
    if eps == "off" or (isinstance(eps, float) and math.isinf(eps)):
        return "dp_off"
    return f"eps_{eps:g}"


def sweep_epsilon(cfg: ExperimentConfig, epsilons: list) -> dict[str, SweepEntry]:
    """Fine-tune once per privacy setting plus the non-federated reference.

    Settings: one federated run per epsilon ("off" means no privacy
    mechanism at all), and "centralized", the same network fine-tuned
    without federation or privacy. Every run starts from the same
    pre-trained model and is evaluated on the same test union.
    """
    if not epsilons:
        raise ConfigError("epsilon sweep needs at least one setting")
    finetune_ds = load_finetune_dataset(cfg)
    shards_raw = build_raw_shards(cfg, finetune_ds)
    pretrain_ds = load_pretrain_dataset(cfg)
    base_model, bounds, _ = pretrain(cfg, pretrain_ds)
    shards = normalize_shards(shards_raw, bounds)
    test = test_union(shards_raw)
    X_test = bounds.transform(test.features)

    results: dict[str, SweepEntry] = {}

    def add(name: str, model: MlpModel) -> None:
        metrics, curve = evaluate_model(model, X_test, test.labels)
        metrics["setting"] = name
        results[name] = SweepEntry(name, metrics, curve)

    for eps in epsilons:
        name = sweep_setting_name(eps)
        if name == "dp_off":
            privacy = None
        else:
            privacy = PrivacyConfig(epsilon=float(eps),
                                    clip_norm=cfg.privacy.clip_norm, enabled=True)
        model, _ = finetune_federated(base_model, shards, cfg, privacy=privacy)
        add(name, model)

    add("centralized", centralized_finetune(base_model, shards, cfg))
    return results
