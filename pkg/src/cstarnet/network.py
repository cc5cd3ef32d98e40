"""Feedforward networks whose weights are A-valued.

Layer i is an ``N_{i-1} x N_i`` matrix of functions on Z. Evaluating the
network at an anchor z_i means running the ordinary real network with weights
theta(z_i) on the input samples at z_i; activations act pointwise in z.
Weight matrices act on row vectors (``h @ W``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cstarnet.algebra import AlgebraError, AnchorSet, AVector
from cstarnet.basis import RidgeProjector

ACTIVATIONS = ("identity", "tanh", "relu", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "identity"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def size(self) -> int:
        return self.in_dim * self.out_dim


def activate(name: str, h: np.ndarray) -> np.ndarray:
    if name == "identity":
        return h
    if name == "tanh":
        return np.tanh(h)
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "softmax":
        e = np.exp(h - h.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(name)


def n_params(layers: Sequence[LayerSpec]) -> int:
    if not layers:
        raise ValueError("a network needs at least one layer")
    return sum(s.size for s in layers)


def check_layers(layers: Sequence[LayerSpec]) -> None:
    n_params(layers)
    for a, b in zip(layers[:-1], layers[1:]):
        if a.out_dim != b.in_dim:
            raise ValueError(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")


def unflatten(layers: Sequence[LayerSpec], flat: np.ndarray) -> list[np.ndarray]:
    """Split parameters of shape (N, ...) into matrices of shape (N_{i-1}, N_i, ...)."""
    flat = np.asarray(flat)
    total = n_params(layers)
    if flat.shape[0] != total:
        raise ValueError(f"expected {total} parameters, got {flat.shape[0]}")
    mats, k = [], 0
    for s in layers:
        mats.append(flat[k:k + s.size].reshape((s.in_dim, s.out_dim) + flat.shape[1:]))
        k += s.size
    return mats


def flatten(layers: Sequence[LayerSpec], mats: Sequence[np.ndarray]) -> np.ndarray:
    if len(mats) != len(layers) or not layers:
        raise ValueError("one matrix per layer is required")
    parts = []
    for s, m in zip(layers, mats):
        m = np.asarray(m)
        if m.shape[:2] != (s.in_dim, s.out_dim):
            raise ValueError(f"matrix of shape {m.shape[:2]} does not fit layer {s}")
        parts.append(m.reshape((s.size,) + m.shape[2:]))
    return np.concatenate(parts, axis=0)


class CStarNet:
    """An A-valued network: layer specs plus a flattened A-vector of weights."""

    def __init__(self, layers: Sequence[LayerSpec], weights: AVector):
        layers = list(layers)
        check_layers(layers)
        if len(weights) != n_params(layers):
            raise ValueError(f"expected {n_params(layers)} weights, got {len(weights)}")
        self.layers = layers
        self.weights = weights

    @property
    def anchors(self) -> AnchorSet:
        return self.weights.anchors

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def matrices_at(self, z_index: int) -> list[np.ndarray]:
        return unflatten(self.layers, self.weights.at(z_index))

    def to_dict(self) -> dict:
        return {"layers": [[s.in_dim, s.out_dim, s.activation] for s in self.layers]}


def lift_constant(x, anchors: AnchorSet, projector: RidgeProjector | None = None) -> AVector:
    """The constant functions ``z -> x_k`` as an element of A^{len(x)}."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    samples = np.repeat(x[:, None], anchors.count, axis=1)
    if projector is None:
        return AVector(anchors, samples)
    return AVector(anchors, samples, np.zeros_like(samples), projector, offsets=x)


def _check_input(net: CStarNet, x: AVector):
    if len(x) != net.in_dim:
        raise ValueError(f"input has {len(x)} components, network expects {net.in_dim}")
    if x.anchors.count != net.anchors.count or not np.array_equal(x.anchors.points, net.anchors.points):
        raise AlgebraError("input and weights live on different anchor sets")


def forward_at(net: CStarNet, x: AVector, z_index: int) -> np.ndarray:
    _check_input(net, x)
    if not 0 <= z_index < net.anchors.count:
        raise IndexError(f"anchor index {z_index} out of range")
    h = x.at(z_index)
    for spec, w in zip(net.layers, net.matrices_at(z_index)):
        h = activate(spec.activation, h @ w)
    return h


def forward(net: CStarNet, x: AVector, projector: RidgeProjector | None = None) -> AVector:
    """Evaluate at every anchor; the output is refitted into V when a projector is given."""
    _check_input(net, x)
    out = np.stack([forward_at(net, x, i) for i in range(net.anchors.count)], axis=1)
    if projector is None:
        return AVector(net.anchors, out)
    return projector.project_vector(AVector(net.anchors, out))
