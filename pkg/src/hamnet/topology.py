"""Network architecture: layer stack, inter-layer connections, shape checks.

Connections between consecutive layers hold a single weight tensor; the
bottom-up message applies it and the top-down message applies its transpose
(adjoint), which is what makes the energy function of the assembled network
exist. Convolution is unpadded cross-correlation; average pooling uses
non-overlapping windows (stride equal to the window).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .lagrangians import ChannelLogSumExp, Lagrangian


class ShapeMismatchError(ValueError):
    """An activity/weight tensor does not match the declared layer shapes."""


def feature_map_extent(length: int, window: int, stride: int) -> int:
    """Output extent of an unpadded strided window: floor((L - w)/s) + 1."""
    if window < 1 or length < 1:
        raise ValueError(f"extent needs positive sizes, got L={length}, w={window}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if window > length:
        raise ValueError(f"window {window} exceeds input extent {length}")
    return (length - window) // stride + 1


def _size(shape: tuple) -> int:
    return int(np.prod(shape))


@dataclass(frozen=True)
class LayerSpec:
    """One layer: a name, a flat (n,) or map (h, w, c) shape, its Lagrangian,
    and the kinetic time constant tau (0 allowed only at the top layer)."""

    name: str
    shape: tuple
    lagrangian: Lagrangian
    tau: float = 1.0

    def __post_init__(self):
        shape = self.shape
        if isinstance(shape, int):
            shape = (shape,)
        object.__setattr__(self, "shape", tuple(int(n) for n in shape))

    @property
    def is_map(self) -> bool:
        return len(self.shape) == 3

    @property
    def size(self) -> int:
        return _size(self.shape)

    def check_activity(self, x: np.ndarray) -> None:
        if tuple(np.shape(x)) != self.shape:
            raise ShapeMismatchError(
                f"layer {self.name!r} expects shape {self.shape}, got {tuple(np.shape(x))}"
            )


class Connection:
    """Weights linking a lower layer to the one above it.

    `forward` carries lower activations up, `backward` carries upper
    activations down through the transpose of the same tensor. Both accept
    an optional target shape so map/flat layers can be bridged.
    """

    kind: str = ""

    def forward(self, g_below: np.ndarray, out_shape: tuple | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g_above: np.ndarray, out_shape: tuple | None = None) -> np.ndarray:
        raise NotImplementedError

    def weight_array(self) -> np.ndarray | None:
        """The trainable tensor, or None for weightless connections."""
        return None

    def with_weights(self, w: np.ndarray) -> "Connection":
        raise TypeError(f"{self.kind} connection has no weights")

    def violations(self, below: LayerSpec, above: LayerSpec, label: str) -> list[str]:
        """Shape-chain problems for this connection between two layers."""
        raise NotImplementedError


@dataclass(frozen=True)
class Dense(Connection):
    """Fully-connected weights, shape (size of upper layer, size of lower layer).

    Map-shaped endpoints are bridged by a fixed row-major flatten.
    """

    weights: np.ndarray

    kind = "dense"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeMismatchError(f"dense weights must be a matrix, got shape {w.shape}")
        object.__setattr__(self, "weights", w)

    def forward(self, g_below, out_shape=None):
        g = np.asarray(g_below, dtype=np.float64).ravel()
        if g.size != self.weights.shape[1]:
            raise ShapeMismatchError(
                f"dense forward expects {self.weights.shape[1]} inputs, got {g.size}"
            )
        out = self.weights @ g
        return out.reshape(out_shape) if out_shape is not None else out

    def backward(self, g_above, out_shape=None):
        g = np.asarray(g_above, dtype=np.float64).ravel()
        if g.size != self.weights.shape[0]:
            raise ShapeMismatchError(
                f"dense backward expects {self.weights.shape[0]} inputs, got {g.size}"
            )
        out = self.weights.T @ g
        return out.reshape(out_shape) if out_shape is not None else out

    def weight_array(self):
        return self.weights

    def with_weights(self, w):
        return replace(self, weights=np.asarray(w, dtype=np.float64))

    def violations(self, below, above, label):
        expected = (above.size, below.size)
        if self.weights.shape != expected:
            return [
                f"{label}: dense weights shaped {self.weights.shape}, "
                f"expected {expected} for {below.name!r} -> {above.name!r}"
            ]
        return []


@dataclass(frozen=True)
class Conv(Connection):
    """Strided unpadded cross-correlation with kernel (w, w, c_in, c_out)."""

    kernel: np.ndarray
    stride: int = 1

    kind = "conv"

    def __post_init__(self):
        k = np.asarray(self.kernel, dtype=np.float64)
        if k.ndim != 4 or k.shape[0] != k.shape[1]:
            raise ShapeMismatchError(
                f"conv kernel must be (w, w, c_in, c_out), got shape {k.shape}"
            )
        if self.stride < 1:
            raise ShapeMismatchError(f"conv stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "kernel", k)

    @property
    def window(self) -> int:
        return self.kernel.shape[0]

    def forward(self, g_below, out_shape=None):
        x = np.asarray(g_below, dtype=np.float64)
        w = self.window
        if x.ndim != 3 or x.shape[2] != self.kernel.shape[2]:
            raise ShapeMismatchError(
                f"conv forward expects (h, w, {self.kernel.shape[2]}) input, got {x.shape}"
            )
        if x.shape[0] < w or x.shape[1] < w:
            raise ShapeMismatchError(f"conv input {x.shape[:2]} smaller than window {w}")
        s = self.stride
        patches = sliding_window_view(x, (w, w), axis=(0, 1))[::s, ::s]
        return np.einsum("ijkab,abkd->ijd", patches, self.kernel)

    def backward(self, g_above, out_shape=None):
        g = np.asarray(g_above, dtype=np.float64)
        if g.ndim != 3 or g.shape[2] != self.kernel.shape[3]:
            raise ShapeMismatchError(
                f"conv backward expects (h, w, {self.kernel.shape[3]}) input, got {g.shape}"
            )
        w, s = self.window, self.stride
        ht, wt = g.shape[:2]
        if out_shape is None:
            out_shape = ((ht - 1) * s + w, (wt - 1) * s + w, self.kernel.shape[2])
        out = np.zeros(out_shape, dtype=np.float64)
        for a in range(w):
            for b in range(w):
                contrib = np.einsum("ijd,kd->ijk", g, self.kernel[a, b])
                out[a : a + s * ht : s, b : b + s * wt : s] += contrib
        return out

    def weight_array(self):
        return self.kernel

    def with_weights(self, w):
        return replace(self, kernel=np.asarray(w, dtype=np.float64))

    def violations(self, below, above, label):
        out = []
        if not below.is_map or not above.is_map:
            return [f"{label}: conv requires map-shaped layers on both ends"]
        h, wid, c_in = below.shape
        w = self.window
        if self.kernel.shape[2] != c_in:
            out.append(
                f"{label}: kernel expects {self.kernel.shape[2]} input channels, "
                f"layer {below.name!r} has {c_in}"
            )
        if w > min(h, wid):
            out.append(f"{label}: window {w} exceeds input extent {min(h, wid)}")
            return out
        expected = (
            feature_map_extent(h, w, self.stride),
            feature_map_extent(wid, w, self.stride),
            self.kernel.shape[3],
        )
        if above.shape != expected:
            out.append(
                f"{label}: layer {above.name!r} shaped {above.shape}, expected {expected}"
            )
        return out


@dataclass(frozen=True)
class AvgPool(Connection):
    """Average pooling over non-overlapping window x window tiles.

    Carries no weights; the top-down message is the exact transpose of the
    pooling operator (each pooled value spread uniformly over its window).
    """

    window: int

    kind = "avgpool"

    def __post_init__(self):
        if self.window < 1:
            raise ShapeMismatchError(f"pool window must be >= 1, got {self.window}")

    def forward(self, g_below, out_shape=None):
        x = np.asarray(g_below, dtype=np.float64)
        if x.ndim != 3:
            raise ShapeMismatchError(f"avgpool expects a (h, w, c) input, got {x.shape}")
        p = self.window
        ht = feature_map_extent(x.shape[0], p, p)
        wt = feature_map_extent(x.shape[1], p, p)
        tiles = x[: ht * p, : wt * p].reshape(ht, p, wt, p, x.shape[2])
        return tiles.mean(axis=(1, 3))

    def backward(self, g_above, out_shape=None):
        g = np.asarray(g_above, dtype=np.float64)
        if g.ndim != 3:
            raise ShapeMismatchError(f"avgpool expects a (h, w, c) input, got {g.shape}")
        p = self.window
        ht, wt, c = g.shape
        if out_shape is None:
            out_shape = (ht * p, wt * p, c)
        out = np.zeros(out_shape, dtype=np.float64)
        spread = np.repeat(np.repeat(g, p, axis=0), p, axis=1) / (p * p)
        out[: ht * p, : wt * p] = spread
        return out

    def violations(self, below, above, label):
        if not below.is_map or not above.is_map:
            return [f"{label}: avgpool requires map-shaped layers on both ends"]
        h, w, c = below.shape
        p = self.window
        if p > min(h, w):
            return [f"{label}: window {p} exceeds input extent {min(h, w)}"]
        expected = (feature_map_extent(h, p, p), feature_map_extent(w, p, p), c)
        if above.shape != expected:
            return [
                f"{label}: layer {above.name!r} shaped {above.shape}, expected {expected}"
            ]
        return []


def forward_message(conn: Connection, g_below, out_shape=None) -> np.ndarray:
    """Bottom-up drive produced by a connection from lower-layer activations."""
    return conn.forward(g_below, out_shape)


def backward_message(conn: Connection, g_above, out_shape=None) -> np.ndarray:
    """Top-down drive: the adjoint of `forward_message` with the same tensor."""
    return conn.backward(g_above, out_shape)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack with one connection per adjacent pair.

    Connection i links layer i (below) to layer i+1 (above); skip and
    lateral connections are unrepresentable by construction. Immutable
    after validation, so concurrent reads are safe.
    """

    layers: tuple[LayerSpec, ...]
    connections: tuple[Connection, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "connections", tuple(self.connections))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer_index(self, name: str) -> int:
        for i, lay in enumerate(self.layers):
            if lay.name == name:
                return i
        raise KeyError(name)

    def validate(self) -> list[str]:
        """All invariant violations, empty when the network is well-formed."""
        out: list[str] = []
        if not self.layers:
            return ["network has no layers"]
        seen: set[str] = set()
        for i, lay in enumerate(self.layers):
            if lay.name in seen:
                out.append(f"duplicate layer name {lay.name!r}")
            seen.add(lay.name)
            if len(lay.shape) not in (1, 3):
                out.append(
                    f"layer {lay.name!r}: shape must be flat (n,) or map (h, w, c), "
                    f"got {lay.shape}"
                )
            elif any(n < 1 for n in lay.shape):
                out.append(f"layer {lay.name!r}: all extents must be >= 1, got {lay.shape}")
            if lay.tau < 0:
                out.append(f"layer {lay.name!r}: tau must be >= 0, got {lay.tau}")
            elif lay.tau == 0 and i != self.n_layers - 1:
                out.append(f"layer {lay.name!r}: tau = 0 is allowed only at the top layer")
            if isinstance(lay.lagrangian, ChannelLogSumExp) and not lay.is_map:
                out.append(
                    f"layer {lay.name!r}: channel_logsumexp requires a map shape, "
                    f"got {lay.shape}"
                )
        want = self.n_layers - 1
        for i in range(len(self.connections), want):
            out.append(
                f"missing connection {i + 1}->{i + 2} "
                f"({self.layers[i].name!r} -> {self.layers[i + 1].name!r})"
            )
        for i in range(want, len(self.connections)):
            out.append(f"extra connection {i + 1} beyond the {want} adjacent pairs")
        for i, conn in enumerate(self.connections[:want]):
            label = f"connection {i + 1} ({conn.kind})"
            out.extend(conn.violations(self.layers[i], self.layers[i + 1], label))
        return out

    def require_valid(self) -> "NetworkSpec":
        problems = self.validate()
        if problems:
            raise ShapeMismatchError("; ".join(problems))
        return self

    def forward_message(self, i: int, g_below) -> np.ndarray:
        """Drive from layer i into layer i+1."""
        return self.connections[i].forward(g_below, out_shape=self.layers[i + 1].shape)

    def backward_message(self, i: int, g_above) -> np.ndarray:
        """Drive from layer i+1 down into layer i."""
        return self.connections[i].backward(g_above, out_shape=self.layers[i].shape)

    def with_connection_weights(self, tensors: Sequence[np.ndarray | None]) -> "NetworkSpec":
        """Copy of the spec with connection weights replaced (None = keep)."""
        if len(tensors) != len(self.connections):
            raise ValueError("one tensor (or None) per connection required")
        conns = tuple(
            c if w is None else c.with_weights(w)
            for c, w in zip(self.connections, tensors)
        )
        return replace(self, connections=conns)
