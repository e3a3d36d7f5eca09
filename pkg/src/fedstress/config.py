"""Experiment configuration: dataclasses, JSON schema, and defaults.

The config file is a versioned JSON document. Privacy epsilon accepts the
literal string "off" (meaning no noise) to avoid float-infinity parsing
ambiguity.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .data import CohortSpec
from .errors import ConfigError
from .privacy import PrivacyConfig

CONFIG_VERSION = 1

MODES = ("plain", "pretrained", "finetuned")

# Default clip norm for experiment privacy configs. Typical per-round
# fine-tuning deltas of the default model have L2 norm around 0.05-0.1, so
# this keeps clipping mild while the calibrated noise stays small relative
# to the trained weights.
DEFAULT_EXPERIMENT_CLIP = 0.05

DEFAULT_PRETRAIN_COHORT = CohortSpec(
    n_users=30,
    samples_per_user=(90, 128),
    positive_rate=(0.45, 0.55),
    user_shift=0.5,
    noise_scale=1.0,
    label_noise=0.0,
    seed=42,
)

DEFAULT_FINETUNE_COHORT = CohortSpec(
    n_users=24,
    samples_per_user=(40, 62),
    positive_rate=(0.25, 0.45),
    user_shift=0.5,
    noise_scale=1.0,
    label_noise=0.10,
    seed=42,
)


@dataclass(frozen=True)
class PhaseConfig:
    """Centralized training phase (pre-training and the plain baseline)."""

    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.001

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")


@dataclass(frozen=True)
class FinetuneConfig:
    """Federated fine-tuning phase: rounds of local epochs."""

    rounds: int = 30
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.001

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")


@dataclass(frozen=True)
class DataConfig:
    """Where the two datasets come from: CSV paths or synthetic cohorts."""

    pretrain_csv: str | None = None
    finetune_csv: str | None = None
    pretrain_cohort: CohortSpec = DEFAULT_PRETRAIN_COHORT
    finetune_cohort: CohortSpec = DEFAULT_FINETUNE_COHORT


@dataclass(frozen=True)
class ExperimentConfig:
    layer_dims: tuple[int, ...] = (12, 128, 32, 1)
    dropout: float = 0.5
    pretrain: PhaseConfig = PhaseConfig()
    finetune: FinetuneConfig = FinetuneConfig()
    privacy: PrivacyConfig = PrivacyConfig(epsilon=1.0, clip_norm=DEFAULT_EXPERIMENT_CLIP)
    seed: int = 42
    mode: str = "finetuned"
    data: DataConfig = DataConfig()
    test_fraction: float = 0.3
    binarize_threshold: int = 2
    weighted_aggregate: bool = False
    reset_adam_each_round: bool = False
    include_br_feature: bool = False

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ConfigError(f"bad layer_dims {self.layer_dims}")


# -- JSON round-trip ---------------------------------------------------------


def _epsilon_to_json(eps: float):
    return "off" if math.isinf(eps) else eps


def _epsilon_from_json(value) -> float:
    if value == "off":
        return math.inf
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ConfigError(f"privacy.epsilon must be a number or 'off', got {value!r}")


def _clip_from_json(value) -> float:
    if value == "off":
        return math.inf
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ConfigError(f"privacy.clip_norm must be a number or 'off', got {value!r}")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = {
        "version": CONFIG_VERSION,
        "layer_dims": list(cfg.layer_dims),
        "dropout": cfg.dropout,
        "pretrain": asdict(cfg.pretrain),
        "finetune": asdict(cfg.finetune),
        "privacy": {
            "enabled": cfg.privacy.enabled,
            "epsilon": _epsilon_to_json(cfg.privacy.epsilon),
            "clip_norm": _epsilon_to_json(cfg.privacy.clip_norm),
        },
        "seed": cfg.seed,
        "mode": cfg.mode,
        "test_fraction": cfg.test_fraction,
        "binarize_threshold": cfg.binarize_threshold,
        "weighted_aggregate": cfg.weighted_aggregate,
        "reset_adam_each_round": cfg.reset_adam_each_round,
        "include_br_feature": cfg.include_br_feature,
        "data": {
            "pretrain_csv": cfg.data.pretrain_csv,
            "finetune_csv": cfg.data.finetune_csv,
            "pretrain_cohort": _cohort_to_dict(cfg.data.pretrain_cohort),
            "finetune_cohort": _cohort_to_dict(cfg.data.finetune_cohort),
        },
    }
    return doc


def _cohort_to_dict(spec: CohortSpec) -> dict:
    doc = asdict(spec)
    doc["samples_per_user"] = list(spec.samples_per_user)
    doc["positive_rate"] = list(spec.positive_rate)
    return doc


def _cohort_from_dict(doc: dict, context: str) -> CohortSpec:
    known = {f for f in CohortSpec.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    kwargs = dict(doc)
    if "samples_per_user" in kwargs:
        kwargs["samples_per_user"] = tuple(kwargs["samples_per_user"])
    if "positive_rate" in kwargs:
        kwargs["positive_rate"] = tuple(kwargs["positive_rate"])
    try:
        return CohortSpec(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    cfg = ExperimentConfig()
    try:
        if "layer_dims" in doc:
            cfg = replace(cfg, layer_dims=tuple(int(d) for d in doc["layer_dims"]))
        if "dropout" in doc:
            cfg = replace(cfg, dropout=float(doc["dropout"]))
        if "pretrain" in doc:
            cfg = replace(cfg, pretrain=PhaseConfig(**doc["pretrain"]))
        if "finetune" in doc:
            cfg = replace(cfg, finetune=FinetuneConfig(**doc["finetune"]))
        if "privacy" in doc:
            p = dict(doc["privacy"])
            privacy = PrivacyConfig(
                epsilon=_epsilon_from_json(p.pop("epsilon", 1.0)),
                clip_norm=_clip_from_json(p.pop("clip_norm", DEFAULT_EXPERIMENT_CLIP)),
                enabled=bool(p.pop("enabled", True)),
            )
            if p:
                raise ConfigError(f"privacy: unknown keys {sorted(p)}")
            cfg = replace(cfg, privacy=privacy)
        for key in ("seed", "binarize_threshold"):
            if key in doc:
                cfg = replace(cfg, **{key: int(doc[key])})
        for key in ("weighted_aggregate", "reset_adam_each_round", "include_br_feature"):
            if key in doc:
                cfg = replace(cfg, **{key: bool(doc[key])})
        if "test_fraction" in doc:
            cfg = replace(cfg, test_fraction=float(doc["test_fraction"]))
        if "mode" in doc:
            cfg = replace(cfg, mode=str(doc["mode"]))
        if "data" in doc:
            d = dict(doc["data"])
            data = DataConfig(
                pretrain_csv=d.pop("pretrain_csv", None),
                finetune_csv=d.pop("finetune_csv", None),
                pretrain_cohort=_cohort_from_dict(
                    d.pop("pretrain_cohort", _cohort_to_dict(DEFAULT_PRETRAIN_COHORT)),
                    "data.pretrain_cohort"),
                finetune_cohort=_cohort_from_dict(
                    d.pop("finetune_cohort", _cohort_to_dict(DEFAULT_FINETUNE_COHORT)),
                    "data.finetune_cohort"),
            )
            if d:
                raise ConfigError(f"data: unknown keys {sorted(d)}")
            cfg = replace(cfg, data=data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    known = {
        "version", "layer_dims", "dropout", "pretrain", "finetune", "privacy",
        "seed", "mode", "data", "test_fraction", "binarize_threshold",
        "weighted_aggregate", "reset_adam_each_round", "include_br_feature",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)
