import math

import numpy as np
import pytest

from fedstress.errors import ConfigError
from fedstress.nn import clip_gradient
from fedstress.params import ParameterSet, mlp_layout
from fedstress.privacy import (NoisedUpdate, PrivacyConfig, laplace_from_uniform,
                               noise_scale, privatize_update, sample_laplace)

LAYOUT = mlp_layout([9, 1])  # 10 coordinates


def delta_of(values):
    return ParameterSet(LAYOUT, values)


# -- config -------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        PrivacyConfig(epsilon=0.0)
    with pytest.raises(ConfigError):
        PrivacyConfig(epsilon=-1.0)
    with pytest.raises(ConfigError):
        PrivacyConfig(clip_norm=0.0)
    with pytest.raises(ConfigError, match="cannot calibrate"):
        PrivacyConfig(epsilon=1.0, clip_norm=math.inf, enabled=True)
    # Infinite clip is fine once the mechanism is off.
    PrivacyConfig(epsilon=math.inf, clip_norm=math.inf, enabled=True)
    PrivacyConfig(epsilon=1.0, clip_norm=math.inf, enabled=False)


def test_noise_scale_values():
    assert noise_scale(PrivacyConfig(epsilon=1.0, clip_norm=1.0)) == 1.0
    assert noise_scale(PrivacyConfig(epsilon=0.5, clip_norm=2.0)) == 4.0
    assert noise_scale(PrivacyConfig(epsilon=1.0, clip_norm=1.0, enabled=False)) == 0.0
    assert noise_scale(PrivacyConfig(epsilon=math.inf, clip_norm=1.0)) == 0.0


def test_noise_scale_monotonicity():
    base = noise_scale(PrivacyConfig(epsilon=1.0, clip_norm=1.0))
    assert noise_scale(PrivacyConfig(epsilon=2.0, clip_norm=1.0)) < base
    assert noise_scale(PrivacyConfig(epsilon=0.5, clip_norm=1.0)) > base
    assert noise_scale(PrivacyConfig(epsilon=1.0, clip_norm=2.0)) > base
    assert noise_scale(PrivacyConfig(epsilon=1.0, clip_norm=0.5)) < base


# -- sampling -------------------------------------------------------------------


def test_median_uniform_maps_to_zero():
    assert laplace_from_uniform(0.0, 3.0) == 0.0
    assert laplace_from_uniform(np.array([0.0, 0.25]), 1.0)[0] == 0.0


def test_inverse_cdf_symmetry():
    u = np.array([0.25, -0.25])
    x = laplace_from_uniform(u, 2.0)
    assert x[0] == -x[1]
    assert x[0] == pytest.approx(-2.0 * math.log(0.5), rel=1e-12)


def test_sample_rejects_nonpositive_scale():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        sample_laplace(0.0, 10, rng)


def test_sample_moments():
    rng = np.random.default_rng(123)
    n = 200_000
    for b in (0.5, 1.0, 2.0):
        draws = sample_laplace(b, n, rng)
        assert abs(draws.mean()) < 3.0 * math.sqrt(2.0 * b * b / n)
        assert abs(draws.var() - 2.0 * b * b) < 0.05 * 2.0 * b * b


# -- privatize_update ------------------------------------------------------------


def test_disabled_mechanism_returns_clipped_input_exactly():
    delta = delta_of(np.linspace(-2.0, 2.0, 10))
    cfg = PrivacyConfig(epsilon=1.0, clip_norm=0.5, enabled=False)
    out = privatize_update(delta, cfg, rng=None, client_id="u1", sample_count=7)
    expected = clip_gradient(delta, 0.5)
    assert np.array_equal(out.delta.values, expected.values)
    assert out.client_id == "u1" and out.sample_count == 7


def test_disabled_with_infinite_clip_is_bit_exact_passthrough():
    delta = delta_of(np.linspace(-2.0, 2.0, 10))
    cfg = PrivacyConfig(epsilon=math.inf, clip_norm=math.inf, enabled=False)
    out = privatize_update(delta, cfg)
    assert out.delta is delta


def test_noise_variance_matches_scale():
    cfg = PrivacyConfig(epsilon=1.0, clip_norm=1.0)
    rng = np.random.default_rng(7)
    zero = ParameterSet.zeros(LAYOUT)
    coords = np.concatenate([
        privatize_update(zero, cfg, rng).delta.values for _ in range(10_000)
    ])  # 1e5 pooled coordinates of pure Laplace(0, 1)
    assert abs(coords.mean()) < 3.0 * math.sqrt(2.0 / coords.size)
    assert abs(coords.var() - 2.0) < 0.05 * 2.0


def test_huge_epsilon_noise_is_tiny():
    cfg = PrivacyConfig(epsilon=1000.0, clip_norm=1.0)
    rng = np.random.default_rng(8)
    zero = ParameterSet.zeros(LAYOUT)
    coords = np.concatenate([
        privatize_update(zero, cfg, rng).delta.values for _ in range(500)
    ])
    # P(|Lap(0.001)| > 0.05) = exp(-50): effectively impossible.
    assert np.mean(np.abs(coords) <= 0.05) > 0.99


def test_prenoise_clipping_bound_holds():
    rng = np.random.default_rng(9)
    cfg = PrivacyConfig(epsilon=math.inf, clip_norm=0.7)
    for _ in range(500):
        delta = delta_of(rng.normal(scale=rng.uniform(0.01, 5.0), size=10))
        out = privatize_update(delta, cfg, rng)
        assert out.delta.l2_norm() <= 0.7 + 1e-9


def test_noise_requires_rng_when_enabled():
    cfg = PrivacyConfig(epsilon=1.0, clip_norm=1.0)
    with pytest.raises(ValueError, match="rng"):
        privatize_update(ParameterSet.zeros(LAYOUT), cfg, rng=None)


def test_noised_update_keeps_layout():
    cfg = PrivacyConfig(epsilon=1.0, clip_norm=1.0)
    out = privatize_update(ParameterSet.zeros(LAYOUT), cfg, np.random.default_rng(1))
    assert isinstance(out, NoisedUpdate)
    assert out.delta.layout == LAYOUT
