"""Flat model parameters with an explicit tensor layout.

The flat float64 vector is the unit exchanged in federation: clients ship
parameter deltas, the server averages them, and the privacy layer clips
and noises them, all without caring about layer structure. The layout
descriptors are what let the network code view slices of the vector as
weight matrices and bias vectors again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

WEIGHT = "weight"
BIAS = "bias"


@dataclass(frozen=True)
class LayoutEntry:
    """One tensor inside the flat vector: its layer index, kind, and shape."""

    layer: int
    kind: str
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return math.prod(self.shape)


def mlp_layout(layer_dims: Sequence[int]) -> tuple[LayoutEntry, ...]:
    """Weight-then-bias descriptors for each affine layer of a dense MLP."""
    dims = list(layer_dims)
    if len(dims) < 2:
        raise ValueError(f"layer_dims needs at least input and output sizes, got {dims}")
    if any(int(d) != d or d <= 0 for d in dims):
        raise ValueError(f"layer_dims must be positive integers, got {dims}")
    entries = []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        entries.append(LayoutEntry(i, WEIGHT, (int(fan_in), int(fan_out))))
        entries.append(LayoutEntry(i, BIAS, (int(fan_out),)))
    return tuple(entries)


def layout_size(layout: Iterable[LayoutEntry]) -> int:
    return sum(entry.size for entry in layout)


class ParameterSet:
    """Ordered, immutable flat collection of float64 model parameters.

    Elementwise arithmetic is defined only between sets with identical
    layouts; mixing layouts is a caller bug and raises ValueError. The
    value buffer is read-only, so sharing one ParameterSet between the
    server and any number of clients has copy semantics for free.
    """

    __slots__ = ("layout", "values")

    def __init__(self, layout: Iterable[LayoutEntry], values) -> None:
        layout = tuple(layout)
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"values must be a flat 1-D sequence, got shape {arr.shape}")
        expected = layout_size(layout)
        if arr.size != expected:
            raise ValueError(
                f"layout describes {expected} values but {arr.size} were given"
            )
        if arr.flags.writeable:
            arr = arr.copy()
            arr.flags.writeable = False
        self.layout = layout
        self.values = arr

    @classmethod
    def _wrap(cls, layout: tuple[LayoutEntry, ...], arr: np.ndarray) -> "ParameterSet":
        # Internal fast path: `arr` is freshly computed and owned by the caller.
        ps = object.__new__(cls)
        arr.flags.writeable = False
        ps.layout = layout
        ps.values = arr
        return ps

    @classmethod
    def zeros(cls, layout: Iterable[LayoutEntry]) -> "ParameterSet":
        layout = tuple(layout)
        return cls._wrap(layout, np.zeros(layout_size(layout)))

    @property
    def size(self) -> int:
        return self.values.size

    def _check_same_layout(self, other: "ParameterSet") -> None:
        if self.layout is not other.layout and self.layout != other.layout:
            raise ValueError(
                f"parameter layouts do not match: {self.layout} vs {other.layout}"
            )

    def add(self, other: "ParameterSet") -> "ParameterSet":
        self._check_same_layout(other)
        return ParameterSet._wrap(self.layout, self.values + other.values)

    def sub(self, other: "ParameterSet") -> "ParameterSet":
        self._check_same_layout(other)
        return ParameterSet._wrap(self.layout, self.values - other.values)

    def scale(self, factor: float) -> "ParameterSet":
        return ParameterSet._wrap(self.layout, self.values * float(factor))

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def unpack(self) -> list[np.ndarray]:
        """Read-only views of the flat vector, one per layout entry."""
        views = []
        offset = 0
        for entry in self.layout:
            views.append(self.values[offset : offset + entry.size].reshape(entry.shape))
            offset += entry.size
        return views

    def __repr__(self) -> str:
        return f"ParameterSet({len(self.layout)} tensors, {self.size} values)"
