"""Dataset model, CSV I/O, label binarization, chronological splitting,
per-user partitioning, and a synthetic cohort generator.

The cohort generator stands in for a longitudinal wearable study: each
synthetic user gets their own feature-space offset, class rate, and evenly
spaced timestamps. A "finetune" cohort additionally rotates the
discriminative direction and widens the per-user offsets, so adapting a
model trained on a "pretrain" cohort is genuinely useful.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)

STRESS_SCALE = (0, 4)           # raw momentary-assessment stress levels
BINARIZE_THRESHOLD = 2          # <= threshold -> 0 (unstressed), else 1

# Distribution shift applied by generate_cohort(role="finetune"): the
# class-separating direction is rotated by this angle and per-user offsets
# are widened by this factor.
FINETUNE_ROTATION_RAD = 0.45
FINETUNE_SHIFT_FACTOR = 2.4

_TIMESTAMP_STEP_MS = 3_600_000  # hourly prompts

_ROLE_TAGS = {"pretrain": 0, "finetune": 1}


@dataclass(frozen=True)
class Sample:
    """One labeled observation of one user."""

    user_id: str
    timestamp_ms: int
    features: np.ndarray
    stress_level: int


@dataclass
class Dataset:
    """Columnar collection of samples; rows align across all arrays."""

    user_ids: np.ndarray        # unicode
    timestamps_ms: np.ndarray   # int64
    features: np.ndarray        # (n, d) float64
    stress_levels: np.ndarray   # int64, raw scale
    labels: np.ndarray | None = None  # binarized {0,1}, filled by binarize_dataset

    def __post_init__(self) -> None:
        n = len(self.user_ids)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        for name in ("timestamps_ms", "features", "stress_levels"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError(f"labels has {len(self.labels)} rows, expected {n}")

    @property
    def n(self) -> int:
        return len(self.user_ids)

    @property
    def feature_width(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(
            self.user_ids[idx],
            self.timestamps_ms[idx],
            self.features[idx],
            self.stress_levels[idx],
            None if self.labels is None else self.labels[idx],
        )

    def row(self, i: int) -> Sample:
        return Sample(str(self.user_ids[i]), int(self.timestamps_ms[i]),
                      self.features[i], int(self.stress_levels[i]))


def empty_dataset(feature_width: int) -> Dataset:
    return Dataset(
        np.empty(0, dtype="<U32"),
        np.empty(0, dtype=np.int64),
        np.empty((0, feature_width)),
        np.empty(0, dtype=np.int64),
    )


def concat_datasets(parts: Sequence[Dataset]) -> Dataset:
    if not parts:
        raise ValueError("nothing to concatenate")
    labels = None
    if all(p.labels is not None for p in parts):
        labels = np.concatenate([p.labels for p in parts])
    return Dataset(
        np.concatenate([p.user_ids for p in parts]),
        np.concatenate([p.timestamps_ms for p in parts]),
        np.vstack([p.features for p in parts]),
        np.concatenate([p.stress_levels for p in parts]),
        labels,
    )


# -- labels ---------------------------------------------------------------


def binarize_label(stress_level: int, threshold: int = BINARIZE_THRESHOLD,
                   scale: tuple[int, int] = STRESS_SCALE) -> int:
    """Map a raw stress level to 0 (unstressed) or 1 (stressed).

    Levels at or below the threshold are unstressed; higher levels are
    stressed. Values outside the recorded scale are a data error.
    """
    level = int(stress_level)
    if level < scale[0] or level > scale[1]:
        raise DataError(
            f"stress level {level} outside recorded scale {scale[0]}..{scale[1]}"
        )
    return 0 if level <= threshold else 1


def binarize_dataset(ds: Dataset, threshold: int = BINARIZE_THRESHOLD) -> Dataset:
    """Dataset copy with the labels array filled from stress levels."""
    lo, hi = STRESS_SCALE
    bad = (ds.stress_levels < lo) | (ds.stress_levels > hi)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(
            f"row {i} (user {ds.user_ids[i]}): stress level {ds.stress_levels[i]} "
            f"outside recorded scale {lo}..{hi}"
        )
    labels = (ds.stress_levels > threshold).astype(np.int64)
    return replace(ds, labels=labels)


# -- splitting and partitioning -------------------------------------------


@dataclass
class ClientShard:
    """One user's data, split chronologically into train and test."""

    user_id: str
    train: Dataset
    test: Dataset


def chronological_split(ds: Dataset, test_fraction: float = 0.3
                        ) -> tuple[Dataset, Dataset]:
    """Sort one user's samples by time and reserve the tail for testing.

    The test set holds the last ceil(test_fraction * n) samples, so every
    user with any data has at least one test sample. Timestamp ties keep
    their input order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if ds.n == 0:
        return ds.take(slice(0, 0)), ds.take(slice(0, 0))
    order = np.argsort(ds.timestamps_ms, kind="stable")
    n_test = math.ceil(test_fraction * ds.n)
    return ds.take(order[: ds.n - n_test]), ds.take(order[ds.n - n_test:])


def partition_clients(ds: Dataset, test_fraction: float = 0.3) -> list[ClientShard]:
    """One shard per distinct user, ordered by user id."""
    shards = []
    for uid in sorted(set(ds.user_ids.tolist())):
        user_ds = ds.take(ds.user_ids == uid)
        train, test = chronological_split(user_ds, test_fraction)
        shards.append(ClientShard(uid, train, test))
    return shards


# -- synthetic cohorts ------------------------------------------------------


@dataclass(frozen=True)
class CohortSpec:
    """Knobs for the synthetic cohort generator.

    user_shift controls how far each user's feature distribution sits from
    the population mean; larger values make a single global model fit
    individual users worse. noise_scale is the per-sample spread inside
    the class-separating plane, nuisance_scale (default: same) the spread
    in the remaining feature dimensions, which carry no class signal;
    window-to-window variability of real pulse features is much larger
    than the stress response itself, which is what makes small noisy
    cohorts easy to overfit. drift adds a per-user linear trend over the
    recording, the way baseline physiology moves over months. label_noise
    flips the observed stress label with the given probability while the
    features keep following the true class, imitating unreliable
    self-reports.
    """

    n_users: int = 30
    samples_per_user: tuple[int, int] = (90, 128)
    positive_rate: tuple[float, float] = (0.45, 0.55)
    user_shift: float = 0.5
    noise_scale: float = 1.0
    nuisance_scale: float | None = None
    drift: float = 0.0
    label_noise: float = 0.0
    n_features: int = 12
    class_separation: float = 2.0
    seed: int = 42

    def __post_init__(self) -> None:
        if self.n_users <= 0:
            raise ConfigError(f"n_users must be positive, got {self.n_users}")
        lo, hi = self.samples_per_user
        if lo <= 0 or hi < lo:
            raise ConfigError(f"bad samples_per_user range {self.samples_per_user}")
        rlo, rhi = self.positive_rate
        if not (0.0 < rlo <= rhi < 1.0):
            raise ConfigError(f"positive_rate must lie in (0, 1), got {self.positive_rate}")
        if self.user_shift < 0 or self.noise_scale < 0 or self.drift < 0:
            raise ConfigError("user_shift, noise_scale, and drift must be nonnegative")
        if self.nuisance_scale is not None and self.nuisance_scale < 0:
            raise ConfigError("nuisance_scale must be nonnegative")
        if not 0.0 <= self.label_noise < 1.0:
            raise ConfigError(f"label_noise must be in [0, 1), got {self.label_noise}")
        if self.n_features <= 1:
            raise ConfigError(f"n_features must exceed 1, got {self.n_features}")


def _directions(n_features: int) -> tuple[np.ndarray, np.ndarray]:
    """A fixed unit direction and a fixed orthogonal unit companion."""
    idx = np.arange(1, n_features + 1, dtype=np.float64)
    w = np.sin(idx)
    w /= np.linalg.norm(w)
    v = np.cos(idx)
    v -= (v @ w) * w
    v /= np.linalg.norm(v)
    return w, v


def cohort_direction(n_features: int, role: str) -> np.ndarray:
    """Class-separating direction for a cohort role."""
    w, v = _directions(n_features)
    if role == "pretrain":
        return w
    theta = FINETUNE_ROTATION_RAD
    return math.cos(theta) * w + math.sin(theta) * v


def generate_cohort(spec: CohortSpec, role: str = "pretrain") -> Dataset:
    """Draw a labeled per-user cohort from class-conditional Gaussians.

    Per user: an offset vector (scale ``user_shift``), a positive-class
    rate, and evenly spaced timestamps. Features sit at
    offset +- (class_separation / 2) * direction plus isotropic noise.
    The finetune role rotates the direction and widens the offsets, so a
    pretrain-fitted model transfers imperfectly.
    """
    if role not in _ROLE_TAGS:
        raise ConfigError(f"role must be one of {sorted(_ROLE_TAGS)}, got {role!r}")
    direction = cohort_direction(spec.n_features, role)
    w, v = _directions(spec.n_features)
    shift = spec.user_shift * (FINETUNE_SHIFT_FACTOR if role == "finetune" else 1.0)
    nuisance = spec.noise_scale if spec.nuisance_scale is None else spec.nuisance_scale
    parts = []
    for i in range(spec.n_users):
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, _ROLE_TAGS[role], i])
        )
        uid = f"{role[0]}{i:03d}"
        n = int(rng.integers(spec.samples_per_user[0], spec.samples_per_user[1] + 1))
        rate = rng.uniform(*spec.positive_rate)
        offset = rng.normal(0.0, shift, spec.n_features) if shift > 0 else np.zeros(spec.n_features)
        y_true = (rng.random(n) < rate).astype(np.int64)
        signed = np.where(y_true == 1, 1.0, -1.0)[:, None]
        # Per-sample spread: noise_scale inside the (w, v) signal plane,
        # nuisance_scale in the complement.
        noise = rng.normal(0.0, nuisance, (n, spec.n_features))
        noise -= np.outer(noise @ w, w) + np.outer(noise @ v, v)
        noise += np.outer(rng.normal(0.0, spec.noise_scale, n), w)
        noise += np.outer(rng.normal(0.0, spec.noise_scale, n), v)
        X = offset + signed * (spec.class_separation / 2.0) * direction + noise
        if spec.drift > 0:
            trend = rng.normal(0.0, spec.drift, spec.n_features)
            trend -= (trend @ w) * w + (trend @ v) * v
            progress = np.arange(n) / max(n - 1, 1)
            X = X + progress[:, None] * trend
        y_obs = y_true.copy()
        if spec.label_noise > 0:
            flip = rng.random(n) < spec.label_noise
            y_obs[flip] = 1 - y_obs[flip]
        # Raw stress levels consistent with the observed binary label.
        levels = np.where(
            y_obs == 1,
            rng.integers(BINARIZE_THRESHOLD + 1, STRESS_SCALE[1] + 1, n),
            rng.integers(STRESS_SCALE[0], BINARIZE_THRESHOLD + 1, n),
        ).astype(np.int64)
        parts.append(Dataset(
            np.full(n, uid, dtype="<U32"),
            (np.arange(n, dtype=np.int64) * _TIMESTAMP_STEP_MS),
            X,
            levels,
        ))
    return concat_datasets(parts)


# -- CSV interchange --------------------------------------------------------


def feature_columns(width: int) -> list[str]:
    return [f"f{i + 1}" for i in range(width)]


def write_dataset_csv(ds: Dataset, path) -> None:
    """Write the dataset in the interchange schema.

    Header: user_id,timestamp_ms,f1..fN,stress_level. Floats are written
    with repr so a round-trip is value-exact.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "timestamp_ms", *feature_columns(ds.feature_width),
                         "stress_level"])
        for i in range(ds.n):
            writer.writerow([
                str(ds.user_ids[i]),
                int(ds.timestamps_ms[i]),
                *[repr(float(v)) for v in ds.features[i]],
                int(ds.stress_levels[i]),
            ])


def load_dataset_csv(path) -> Dataset:
    """Read the interchange schema; rows with empty feature cells are
    dropped (with a logged count), malformed rows are data errors."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        expected_prefix = ["user_id", "timestamp_ms"]
        if header[:2] != expected_prefix or header[-1] != "stress_level":
            raise DataError(f"{path}: unexpected header {header}")
        width = len(header) - 3
        if width < 1 or header[2:-1] != feature_columns(width):
            raise DataError(f"{path}: unexpected feature columns {header[2:-1]}")
        users, stamps, feats, levels = [], [], [], []
        dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            cells = row[2:-1]
            if any(c.strip() == "" for c in cells):
                dropped += 1
                continue
            try:
                ts = int(row[1])
                values = [float(c) for c in cells]
                level = int(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            lo, hi = STRESS_SCALE
            if level < lo or level > hi:
                raise DataError(
                    f"{path}:{lineno}: stress level {level} outside recorded scale {lo}..{hi}"
                )
            users.append(row[0])
            stamps.append(ts)
            feats.append(values)
            levels.append(level)
    if dropped:
        logger.warning("%s: dropped %d rows with missing feature cells", path, dropped)
    if not users:
        raise DataError(f"{path}: no usable rows")
    return Dataset(
        np.asarray(users, dtype="<U32"),
        np.asarray(stamps, dtype=np.int64),
        np.asarray(feats, dtype=np.float64),
        np.asarray(levels, dtype=np.int64),
    )
