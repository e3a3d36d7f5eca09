"""Dense neural-network engine for small binary classifiers.

Everything is explicit numpy: forward pass, manual backpropagation of the
mean binary cross-entropy, inverted dropout after the first hidden layer,
global-norm gradient clipping, and Adam with bias correction. All math is
float64 so gradient checks against central finite differences stay tight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .params import LayoutEntry, ParameterSet, mlp_layout

# Probabilities are kept strictly inside (0, 1); this constant also clamps
# the loss argument so log() is always finite.
PROB_CLAMP = 1e-12

# Norms within this relative slack of the bound count as already clipped,
# which makes clip_gradient exactly idempotent despite rounding.
_CLIP_SLACK = 1e-12

MODEL_FORMAT_VERSION = 1

# A gradient is just a ParameterSet whose values are dL/dtheta.
Gradient = ParameterSet


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(p, y) -> float:
    """Mean binary cross-entropy -[y*ln(p) + (1-y)*ln(1-p)].

    Accepts scalars or arrays; arrays are averaged. Predictions are
    clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before the logs.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


class MlpModel:
    """Multilayer perceptron with ReLU hidden layers and a sigmoid output.

    The model is immutable: training steps produce a new ParameterSet and
    wrap it in a new MlpModel, so copies can be handed to concurrent
    clients without defensive cloning.

    Args:
        layer_dims: sizes from input to output, e.g. (12, 128, 32, 1).
            The output size must be 1 (binary head).
        params: flat parameters matching ``mlp_layout(layer_dims)``.
        dropout_rate: fraction of first-hidden-layer activations dropped
            in train mode; inverted dropout rescales the survivors.
    """

    __slots__ = ("layer_dims", "params", "dropout_rate", "_mats")

    def __init__(self, layer_dims: Sequence[int], params: ParameterSet,
                 dropout_rate: float = 0.5) -> None:
        dims = tuple(int(d) for d in layer_dims)
        layout = mlp_layout(dims)
        if dims[-1] != 1:
            raise ValueError(f"binary head requires output size 1, got {dims[-1]}")
        if params.layout != layout:
            raise ValueError("parameter layout does not match layer_dims "
                             f"{list(dims)}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {dropout_rate}")
        self.layer_dims = dims
        self.params = params
        self.dropout_rate = float(dropout_rate)
        views = params.unpack()
        self._mats = [(views[2 * i], views[2 * i + 1]) for i in range(len(dims) - 1)]

    @classmethod
    def initialize(cls, layer_dims: Sequence[int], rng: np.random.Generator,
                   dropout_rate: float = 0.5) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        dims = tuple(int(d) for d in layer_dims)
        chunks = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        values = np.concatenate(chunks)
        return cls(dims, ParameterSet(mlp_layout(dims), values), dropout_rate)

    def with_params(self, params: ParameterSet) -> "MlpModel":
        return MlpModel(self.layer_dims, params, self.dropout_rate)

    # -- forward ---------------------------------------------------------

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.layer_dims[0]:
            got = arr.shape[-1] if arr.ndim >= 1 else 0
            raise ValueError(
                f"feature vector has length {got}, model expects {self.layer_dims[0]}"
            )
        return arr, single

    def _run(self, X: np.ndarray, train: bool, rng, with_cache: bool):
        """Shared forward pass; optionally keeps activations for backprop."""
        if train and self.dropout_rate > 0.0 and len(self.layer_dims) > 2 and rng is None:
            raise ValueError("train-mode forward needs an rng to draw dropout masks")
        acts = [X]
        pre_acts = []
        mask = None
        a = X
        n_hidden = len(self._mats) - 1
        for i in range(n_hidden):
            W, b = self._mats[i]
            z = a @ W + b
            a = np.maximum(z, 0.0)
            if i == 0 and train and self.dropout_rate > 0.0:
                keep = 1.0 - self.dropout_rate
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
            if with_cache:
                pre_acts.append(z)
                acts.append(a)
        W, b = self._mats[-1]
        z_out = a @ W + b
        if with_cache:
            return z_out, acts, pre_acts, mask
        return z_out

    def logits(self, x, mode: str = "infer", rng: np.random.Generator | None = None):
        """Pre-sigmoid output; scalar for a single feature vector."""
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        X, single = self._as_batch(x)
        z = self._run(X, mode == "train", rng, with_cache=False)[:, 0]
        return float(z[0]) if single else z

    def forward(self, x, mode: str = "infer", rng: np.random.Generator | None = None):
        """Probability of the positive class, strictly inside (0, 1).

        In train mode, inverted dropout masks the first hidden layer with
        keep-probability 1 - dropout_rate; in infer mode the pass is
        deterministic.
        """
        z = self.logits(x, mode=mode, rng=rng)
        p = np.clip(sigmoid(z), PROB_CLAMP, 1.0 - PROB_CLAMP)
        return float(p) if np.ndim(z) == 0 else p

    # -- backward --------------------------------------------------------

    def backward(self, X, y, rng: np.random.Generator | None = None
                 ) -> tuple[Gradient, float]:
        """Gradient of the mean BCE over a batch, via manual backprop.

        Runs a train-mode forward pass (drawing fresh dropout masks) and
        backpropagates through those same masks.

        Returns:
            (gradient with the model's layout, batch loss)
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"batch must be 2-D (n, features), got shape {X.shape}")
        if X.shape[0] == 0:
            raise ValueError("empty batch")
        if X.shape[1] != self.layer_dims[0]:
            raise ValueError(
                f"feature vector has length {X.shape[1]}, "
                f"model expects {self.layer_dims[0]}"
            )
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} samples but {y.shape[0]} labels")

        n = X.shape[0]
        z_out, acts, pre_acts, mask = self._run(X, train=True, rng=rng, with_cache=True)
        p = sigmoid(z_out)
        loss = bce_loss(p[:, 0], y)

        # d(mean BCE)/d(logit) for a sigmoid head.
        delta = (p - y[:, None]) / n

        n_layers = len(self._mats)
        grads_w = [None] * n_layers
        grads_b = [None] * n_layers
        W_out, _ = self._mats[-1]
        grads_w[-1] = acts[-1].T @ delta
        grads_b[-1] = delta.sum(axis=0)
        da = delta @ W_out.T
        for i in range(n_layers - 2, -1, -1):
            if i == 0 and mask is not None:
                da = da * mask
            dz = da * (pre_acts[i] > 0.0)
            W_i, _ = self._mats[i]
            grads_w[i] = acts[i].T @ dz
            grads_b[i] = dz.sum(axis=0)
            if i > 0:
                da = dz @ W_i.T

        flat = np.concatenate(
            [arr.ravel() for i in range(n_layers) for arr in (grads_w[i], grads_b[i])]
        )
        return ParameterSet._wrap(self.params.layout, flat), loss

    def __repr__(self) -> str:
        dims = "->".join(str(d) for d in self.layer_dims)
        return f"MlpModel({dims}, dropout={self.dropout_rate})"


def clip_gradient(g: Gradient, clip_norm: float) -> Gradient:
    """Scale ``g`` so its global L2 norm is at most ``clip_norm``.

    Inputs already within the bound (up to a tiny relative slack) are
    returned unchanged, which makes the operation exactly idempotent.
    """
    if not clip_norm > 0.0:
        raise ConfigError(f"clip norm must be positive, got {clip_norm}")
    norm = g.l2_norm()
    if norm <= clip_norm * (1.0 + _CLIP_SLACK):
        return g
    return g.scale(clip_norm / norm)


@dataclass(frozen=True)
class AdamState:
    """Adam accumulators; ``t`` counts applied steps."""

    m: ParameterSet
    v: ParameterSet
    t: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def initial(cls, layout: tuple[LayoutEntry, ...],
                learning_rate: float = 0.001) -> "AdamState":
        return cls(m=ParameterSet.zeros(layout), v=ParameterSet.zeros(layout),
                   learning_rate=learning_rate)


def adam_step(params: ParameterSet, grad: Gradient, state: AdamState
              ) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    params._check_same_layout(grad)
    params._check_same_layout(state.m)
    t = state.t + 1
    g = grad.values
    m = state.beta1 * state.m.values + (1.0 - state.beta1) * g
    v = state.beta2 * state.v.values + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_values = params.values - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = replace(state, m=ParameterSet._wrap(params.layout, m),
                        v=ParameterSet._wrap(params.layout, v), t=t)
    return ParameterSet._wrap(params.layout, new_values), new_state


# -- checkpointing --------------------------------------------------------


def save_model(file, model: MlpModel, extra: dict | None = None) -> None:
    """Write a versioned checkpoint; float64 values round-trip bit-exactly.

    ``extra`` arrays (e.g. normalization bounds) are stored alongside the
    model under their own keys.
    """
    layout_doc = json.dumps(
        [[e.layer, e.kind, list(e.shape)] for e in model.params.layout]
    )
    payload = {
        "format_version": np.int64(MODEL_FORMAT_VERSION),
        "layer_dims": np.asarray(model.layer_dims, dtype=np.int64),
        "dropout_rate": np.float64(model.dropout_rate),
        "layout": np.str_(layout_doc),
        "values": model.params.values,
    }
    if extra:
        for key, arr in extra.items():
            if key in payload:
                raise ValueError(f"extra key {key!r} collides with a model field")
            payload[key] = arr
    np.savez(file, **payload)


def load_model(file) -> tuple[MlpModel, dict]:
    """Load a checkpoint written by :func:`save_model`.

    Returns:
        (model, extras) where extras holds any additional stored arrays.
    """
    with np.load(file, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != MODEL_FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint format version {version}")
        dims = tuple(int(d) for d in data["layer_dims"])
        layout_doc = json.loads(str(data["layout"]))
        layout = tuple(
            LayoutEntry(int(layer), str(kind), tuple(int(s) for s in shape))
            for layer, kind, shape in layout_doc
        )
        if layout != mlp_layout(dims):
            raise ConfigError("checkpoint layout does not match its layer_dims")
        params = ParameterSet(layout, data["values"])
        model = MlpModel(dims, params, float(data["dropout_rate"]))
        reserved = {"format_version", "layer_dims", "dropout_rate", "layout", "values"}
        extras = {k: data[k] for k in data.files if k not in reserved}
    return model, extras
