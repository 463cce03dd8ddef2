"""Shared builders for randomized network tests."""

from __future__ import annotations

import numpy as np

from hamnet import (
    AvgPool,
    ChannelLogSumExp,
    Conv,
    Dense,
    LayerSpec,
    LogSumExp,
    NetworkSpec,
    Quadratic,
    additive,
    feature_map_extent,
)


def fd_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a tensor."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_g = grad.reshape(-1)
    for j in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[j] += h
        xm[j] -= h
        flat_g[j] = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2.0 * h)
    return grad


def random_lagrangian(rng: np.random.Generator, map_shaped: bool):
    names = ["quadratic", "logsumexp", "tanh", "relu", "identity"]
    if map_shaped:
        names.append("channel_logsumexp")
    pick = names[rng.integers(len(names))]
    if pick == "quadratic":
        return Quadratic()
    if pick == "logsumexp":
        return LogSumExp(beta=float(rng.uniform(0.5, 3.0)))
    if pick == "channel_logsumexp":
        return ChannelLogSumExp(beta=float(rng.uniform(0.5, 3.0)))
    return additive(pick)


def random_network(
    rng: np.random.Generator,
    n_layers: int | None = None,
    zero_tau_top: bool = False,
    weight_scale: float = 0.5,
    start_with_map: bool | None = None,
) -> NetworkSpec:
    """Random valid stack mixing dense/conv/pool connections and all
    Lagrangian kinds, with weights scaled for convergent relaxation."""
    if n_layers is None:
        n_layers = int(rng.integers(2, 6))
    if start_with_map is None:
        start_with_map = bool(rng.random() < 0.5)
    shapes: list[tuple] = []
    conn_kinds: list[str] = []
    if start_with_map:
        side = int(rng.choice([4, 6, 8]))
        channels = int(rng.integers(1, 3))
        shapes.append((side, side, channels))
        n_map_links = min(int(rng.integers(1, 3)), n_layers - 1)
        for _ in range(n_map_links):
            h = shapes[-1][0]
            if h < 3:
                break
            use_pool = rng.random() < 0.4 and h >= 4
            if use_pool:
                p = 2
                shapes.append((feature_map_extent(h, p, p), feature_map_extent(h, p, p), shapes[-1][2]))
                conn_kinds.append("pool")
            else:
                w = int(rng.choice([2, 3]))
                s = int(rng.choice([1, 2]))
                if w > h:
                    w = h
                ext = feature_map_extent(h, w, s)
                c_out = int(rng.integers(1, 4))
                shapes.append((ext, ext, c_out))
                conn_kinds.append("conv")
    while len(shapes) < n_layers:
        shapes.append((int(rng.integers(3, 11)),))
        if len(shapes) > 1:
            conn_kinds.append("dense")
    layers = []
    for i, shape in enumerate(shapes):
        tau = float(rng.uniform(0.5, 1.5))
        if zero_tau_top and i == len(shapes) - 1:
            tau = 0.0
        layers.append(
            LayerSpec(f"layer{i + 1}", shape, random_lagrangian(rng, len(shape) == 3), tau)
        )
    conns = []
    for i, kind in enumerate(conn_kinds):
        below, above = shapes[i], shapes[i + 1]
        if kind == "pool":
            conns.append(AvgPool(window=2))
        elif kind == "conv":
            w = above_window(below, above)
            fan = w * w * below[2]
            kernel = rng.normal(scale=weight_scale / np.sqrt(fan), size=(w, w, below[2], above[2]))
            conns.append(Conv(kernel=kernel, stride=infer_stride(below[0], w, above[0])))
        else:
            n_below = int(np.prod(below))
            n_above = int(np.prod(above))
            conns.append(
                Dense(weights=rng.normal(scale=weight_scale / np.sqrt(n_below), size=(n_above, n_below)))
            )
    spec = NetworkSpec(tuple(layers), tuple(conns))
    problems = spec.validate()
    assert not problems, problems
    return spec


def above_window(below: tuple, above: tuple) -> int:
    for w in (2, 3, 4, 1):
        for s in (1, 2, 3):
            if w <= below[0] and feature_map_extent(below[0], w, s) == above[0]:
                return w
    raise AssertionError(f"no window reproduces {below} -> {above}")


def infer_stride(length: int, window: int, target: int) -> int:
    for s in (1, 2, 3):
        if feature_map_extent(length, window, s) == target:
            return s
    raise AssertionError("no stride matches")


def random_state(spec: NetworkSpec, rng: np.random.Generator, scale: float = 1.0):
    from hamnet import NetworkState

    return NetworkState([scale * rng.normal(size=lay.shape) for lay in spec.layers])


def connection_operator_norm(conn, below_shape, rng, iters: int = 40) -> float:
    """Largest singular value of the forward message operator, by power
    iteration on backward(forward(.))."""
    v = rng.normal(size=below_shape)
    sigma = 0.0
    for _ in range(iters):
        v = v / max(np.linalg.norm(v), 1e-300)
        u = conn.forward(v)
        w = conn.backward(u, out_shape=below_shape)
        sigma = np.sqrt(max(np.vdot(v, w), 0.0))
        v = w
    return float(sigma)


def contractive_rescale(spec: NetworkSpec, rng, target: float = 0.4) -> NetworkSpec:
    """Scale every weighted connection to operator norm `target`.

    Chains of unbounded piecewise-linear activations (identity/relu) only
    have a bounded energy when the full symmetric weight operator stays
    below norm 1; a per-connection norm of 0.4 keeps the block-tridiagonal
    whole below ~0.8 for any depth, so relaxation has a unique fixed point.
    """
    tensors = []
    for i, conn in enumerate(spec.connections):
        w = conn.weight_array()
        if w is None:
            tensors.append(None)
            continue
        sigma = connection_operator_norm(conn, spec.layers[i].shape, rng)
        tensors.append(w * (target / max(sigma, 1e-12)))
    return spec.with_connection_weights(tensors)


def two_hidden_dense(
    n1: int = 6,
    n2: int = 4,
    n3: int = 3,
    beta2: float = 1.5,
    beta3: float = 2.0,
    taus: tuple = (1.0, 0.1, 0.0),
    seed: int = 0,
    scale: float = 0.4,
) -> NetworkSpec:
    """Three dense layers: quadratic input and two softmax hidden layers."""
    rng = np.random.default_rng(seed)
    layers = (
        LayerSpec("visible", (n1,), Quadratic(), taus[0]),
        LayerSpec("hidden", (n2,), LogSumExp(beta2), taus[1]),
        LayerSpec("top", (n3,), LogSumExp(beta3), taus[2]),
    )
    conns = (
        Dense(weights=rng.normal(scale=scale / np.sqrt(n1), size=(n2, n1))),
        Dense(weights=rng.normal(scale=scale / np.sqrt(n2), size=(n3, n2))),
    )
    spec = NetworkSpec(layers, conns)
    assert not spec.validate()
    return spec
