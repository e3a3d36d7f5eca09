"""Laplace-mechanism privacy for federated model updates.

The client-side pipeline is clip-then-noise: the update delta is L2-clipped
to the sensitivity bound, then independent Laplace(0, clip_norm / epsilon)
noise is added to every coordinate before the update leaves the client.
Noise is sampled by inverse CDF from a uniform on (-0.5, 0.5), so a given
seeded stream always yields the same perturbation.

Per-coordinate Laplace noise under an L2 clip is the pragmatic variant used
here; it is not a formal epsilon-DP guarantee for L2 sensitivity (that
would require L1 accounting), and no composition ledger is kept across
rounds. Epsilon is a per-update knob.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .nn import clip_gradient
from .params import ParameterSet


@dataclass(frozen=True)
class PrivacyConfig:
    """Privacy knobs: budget epsilon, sensitivity bound, and an on/off switch.

    ``epsilon = math.inf`` disables noise and is equivalent to
    ``enabled=False``; the clip is still applied either way (use an
    infinite clip_norm to make the mechanism a bit-exact pass-through).
    """

    epsilon: float = 1.0
    clip_norm: float = 1.0
    enabled: bool = True

    def __post_init__(self) -> None:
        if not self.epsilon > 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if not self.clip_norm > 0.0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.enabled and math.isfinite(self.epsilon) and math.isinf(self.clip_norm):
            raise ConfigError(
                "cannot calibrate noise: clip_norm is infinite while epsilon is finite"
            )

    @property
    def is_off(self) -> bool:
        return not self.enabled or math.isinf(self.epsilon)


def noise_scale(cfg: PrivacyConfig) -> float:
    """Laplace scale b = clip_norm / epsilon; 0 when the mechanism is off."""
    if cfg.is_off:
        return 0.0
    return cfg.clip_norm / cfg.epsilon


def laplace_from_uniform(u, scale: float):
    """Inverse-CDF transform: u in (-0.5, 0.5) -> Laplace(0, scale).

    x = -scale * sign(u) * ln(1 - 2|u|); u = 0 maps to the median 0.
    """
    u = np.asarray(u, dtype=np.float64)
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def sample_laplace(scale: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. draws from Laplace(0, scale)."""
    if not scale > 0.0:
        raise ConfigError(f"Laplace scale must be positive, got {scale}")
    # 53-bit uniform on the open interval (0, 1), shifted to (-0.5, 0.5),
    # so the log never sees an exact zero argument.
    u = rng.integers(1, 1 << 53, size=n) / float(1 << 53) - 0.5
    return laplace_from_uniform(u, scale)


@dataclass(frozen=True)
class NoisedUpdate:
    """A client update ready for aggregation: clipped, noised delta."""

    delta: ParameterSet
    client_id: str
    sample_count: int


def privatize_update(delta: ParameterSet, cfg: PrivacyConfig,
                     rng: np.random.Generator | None = None,
                     client_id: str = "", sample_count: int = 0) -> NoisedUpdate:
    """Clip an update to the sensitivity bound, then add calibrated noise.

    With the mechanism off (disabled or infinite epsilon) the output is
    exactly the clipped input and the rng is never consumed; with an
    infinite clip_norm as well, the input passes through bit-exactly.
    """
    clipped = clip_gradient(delta, cfg.clip_norm)
    if cfg.is_off:
        return NoisedUpdate(clipped, client_id, sample_count)
    if rng is None:
        raise ValueError("privatize_update needs an rng when noise is enabled")
    noise = sample_laplace(noise_scale(cfg), clipped.size, rng)
    return NoisedUpdate(
        ParameterSet._wrap(clipped.layout, clipped.values + noise),
        client_id,
        sample_count,
    )
