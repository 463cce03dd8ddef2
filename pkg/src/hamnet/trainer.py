"""Self-supervised denoising training through the unrolled relaxation.

The loss corrupts each pattern, runs a fixed number of Euler steps from the
retrieval initialization, and penalizes the squared distance between the
final input-layer state and the clean pattern. Gradients flow backwards
through the unroll by hand: the transpose of every bottom-up message is the
matching top-down message, and activation Jacobians are the (symmetric)
Lagrangian Hessians, so reverse mode reuses the network's own machinery.

Only the connection weights are trained, and each connection owns a single
tensor, so the forward/feedback symmetry cannot drift during training.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .memory import NoiseModel, PatternSet, corrupt
from .topology import AvgPool, Conv, Dense, NetworkSpec


class TrainingDiverged(RuntimeError):
    """Loss exceeded the divergence bound; carries the history so far."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    """Unroll length, step size, and optimization parameters.

    `gradient_mode` is 'analytic' (reverse-mode through the unroll) or 'fd'
    (central differences with step fd_step, the oracle). With
    `resample_noise`, epoch e corrupts with base seed noise.seed +
    1000003 * e; otherwise the same corruption is reused every epoch.
    """

    unroll_steps: int = 50
    dt: float = 0.05
    learning_rate: float = 0.1
    epochs: int = 100
    batch_size: int = 8
    noise: NoiseModel | None = None
    gradient_mode: str = "analytic"
    fd_step: float = 1e-5
    resample_noise: bool = True
    backtrack: bool = False

    def __post_init__(self):
        if self.unroll_steps < 1:
            raise ValueError("unroll_steps must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.gradient_mode not in ("analytic", "fd"):
            raise ValueError(f"gradient_mode must be 'analytic' or 'fd', got {self.gradient_mode!r}")


def _as_batch(clean_batch) -> np.ndarray:
    if isinstance(clean_batch, PatternSet):
        return clean_batch.patterns
    arr = np.asarray(clean_batch, dtype=np.float64)
    return arr


def _check_kinetic(spec: NetworkSpec) -> None:
    for lay in spec.layers:
        if lay.tau <= 0:
            raise ValueError(
                f"unrolled training needs positive time constants; layer "
                f"{lay.name!r} has tau = {lay.tau}"
            )


def _cues(batch: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    if cfg.noise is None:
        return batch.copy()
    return np.stack(
        [corrupt(p, replace(cfg.noise, seed=cfg.noise.seed + i)) for i, p in enumerate(batch)]
    )


def _unroll(spec: NetworkSpec, cue: np.ndarray, cfg: TrainConfig):
    """Euler-unroll from the retrieval init; returns states and activations
    at every step (needed for the reverse pass)."""
    xs = [np.zeros(lay.shape) for lay in spec.layers]
    xs[0] = cue.reshape(spec.layers[0].shape).astype(np.float64)
    states = [xs]
    acts = []
    for _ in range(cfg.unroll_steps):
        gs = [lay.lagrangian.activations(x) for lay, x in zip(spec.layers, xs)]
        acts.append(gs)
        new = []
        for i, lay in enumerate(spec.layers):
            drive = -xs[i]
            if i > 0:
                drive = drive + spec.forward_message(i - 1, gs[i - 1])
            if i < spec.n_layers - 1:
                drive = drive + spec.backward_message(i, gs[i + 1])
            new.append(xs[i] + (cfg.dt / lay.tau) * drive)
        xs = new
        states.append(xs)
    return states, acts


def _pattern_loss(spec: NetworkSpec, cue: np.ndarray, clean: np.ndarray, cfg: TrainConfig) -> float:
    states, _ = _unroll(spec, cue, cfg)
    final = states[-1][0]
    if not np.all(np.isfinite(final)):
        raise FloatingPointError("non-finite state during unroll")
    diff = final - clean.reshape(final.shape)
    return float(np.mean(diff * diff))


def unroll_loss(spec: NetworkSpec, clean_batch, cfg: TrainConfig) -> float:
    """Mean over the batch of per-pattern denoising MSE after the unroll."""
    spec.require_valid()
    _check_kinetic(spec)
    batch = _as_batch(clean_batch)
    cues = _cues(batch, cfg)
    return float(
        np.mean([_pattern_loss(spec, c, p, cfg) for c, p in zip(cues, batch)])
    )


def _weight_gradient(conn, below: np.ndarray, above: np.ndarray) -> np.ndarray | None:
    """d/dW of <above, forward(W, below)> for this connection's tensor."""
    if isinstance(conn, Dense):
        return np.outer(above.ravel(), below.ravel())
    if isinstance(conn, Conv):
        from numpy.lib.stride_tricks import sliding_window_view

        w, s = conn.window, conn.stride
        patches = sliding_window_view(below, (w, w), axis=(0, 1))[::s, ::s]
        return np.einsum("ijkab,ijd->abkd", patches, above)
    if isinstance(conn, AvgPool):
        return None
    raise TypeError(f"no weight gradient for connection kind {conn.kind!r}")


def _bptt_pattern(spec: NetworkSpec, cue, clean, cfg: TrainConfig):
    """Per-pattern loss and per-connection weight gradients."""
    states, acts = _unroll(spec, cue, cfg)
    final = states[-1][0]
    clean = clean.reshape(final.shape)
    diff = final - clean
    loss = float(np.mean(diff * diff))
    grads = [
        None if c.weight_array() is None else np.zeros_like(c.weight_array())
        for c in spec.connections
    ]
    adj = [np.zeros(lay.shape) for lay in spec.layers]
    adj[0] = (2.0 / final.size) * diff
    for t in range(cfg.unroll_steps - 1, -1, -1):
        xs, gs = states[t], acts[t]
        scale = [cfg.dt / lay.tau for lay in spec.layers]
        ubar = [s * a for s, a in zip(scale, adj)]
        new_adj = [(1.0 - s) * a for s, a in zip(scale, adj)]
        gbar = [np.zeros(lay.shape) for lay in spec.layers]
        for i, conn in enumerate(spec.connections):
            # bottom-up message into layer i+1 and its transpose into layer i
            gbar[i] += conn.backward(ubar[i + 1], out_shape=spec.layers[i].shape)
            gbar[i + 1] += conn.forward(ubar[i], out_shape=spec.layers[i + 1].shape)
            if grads[i] is not None:
                grads[i] += _weight_gradient(conn, gs[i], ubar[i + 1])
                grads[i] += _weight_gradient(conn, ubar[i], gs[i + 1])
        for i, lay in enumerate(spec.layers):
            new_adj[i] = new_adj[i] + lay.lagrangian.hessian_vector_product(xs[i], gbar[i])
        adj = new_adj
    return loss, grads


def _analytic_gradient(spec: NetworkSpec, batch, cues, cfg: TrainConfig):
    grads = None
    losses = []
    for cue, clean in zip(cues, batch):
        loss, g = _bptt_pattern(spec, cue, clean, cfg)
        losses.append(loss)
        if grads is None:
            grads = g
        else:
            grads = [a if b is None else a + b for a, b in zip(grads, g)]
    n = len(batch)
    grads = [None if g is None else g / n for g in grads]
    return float(np.mean(losses)), grads


def _fd_gradient(spec: NetworkSpec, batch, cfg: TrainConfig):
    n_weights = sum(
        c.weight_array().size for c in spec.connections if c.weight_array() is not None
    )
    if n_weights > 10_000:
        warnings.warn(
            f"finite-difference gradient over {n_weights} weights is expensive",
            RuntimeWarning,
            stacklevel=2,
        )
    h = cfg.fd_step
    grads = []
    for i, conn in enumerate(spec.connections):
        w = conn.weight_array()
        if w is None:
            grads.append(None)
            continue
        grad = np.zeros_like(w)
        flat = grad.reshape(-1)
        base = w.copy()
        for j in range(base.size):
            for sign in (+1.0, -1.0):
                pert = base.copy().reshape(-1)
                pert[j] += sign * h
                tensors = [None] * len(spec.connections)
                tensors[i] = pert.reshape(base.shape)
                loss = unroll_loss(spec.with_connection_weights(tensors), batch, cfg)
                flat[j] += sign * loss / (2.0 * h)
        grads.append(grad)
    return grads


def gradient(spec: NetworkSpec, clean_batch, cfg: TrainConfig):
    """Per-connection gradients of `unroll_loss` (None for weightless
    connections), by reverse mode or central differences per the config."""
    spec.require_valid()
    _check_kinetic(spec)
    batch = _as_batch(clean_batch)
    if cfg.gradient_mode == "fd":
        return _fd_gradient(spec, batch, cfg)
    cues = _cues(batch, cfg)
    _, grads = _analytic_gradient(spec, batch, cues, cfg)
    return grads


def train(
    spec: NetworkSpec, corpus: PatternSet | np.ndarray, cfg: TrainConfig
) -> tuple[NetworkSpec, list[float]]:
    """Mini-batch gradient descent on the connection weights.

    Returns the trained network and the loss history: entry 0 is the
    pre-training full-corpus loss, entry e the mean training loss of epoch
    e. Raises TrainingDiverged (history attached) past a loss of 1e6.
    """
    spec.require_valid()
    _check_kinetic(spec)
    patterns = _as_batch(corpus)
    history = [unroll_loss(spec, patterns, _epoch_cfg(cfg, 0))]
    current = spec
    for epoch in range(1, cfg.epochs + 1):
        ecfg = _epoch_cfg(cfg, epoch - 1)
        epoch_losses = []
        for start in range(0, len(patterns), cfg.batch_size):
            batch = patterns[start : start + cfg.batch_size]
            if ecfg.gradient_mode == "fd":
                loss = unroll_loss(current, batch, ecfg)
                grads = _fd_gradient(current, batch, ecfg)
            else:
                cues = _cues(batch, ecfg)
                loss, grads = _analytic_gradient(current, batch, cues, ecfg)
            if not np.isfinite(loss) or loss > 1e6:
                raise TrainingDiverged(
                    f"loss {loss:.3e} exceeded the divergence bound at epoch {epoch}",
                    history,
                )
            epoch_losses.append(loss)
            current = _apply_update(current, batch, grads, loss, ecfg)
        history.append(float(np.mean(epoch_losses)))
    return current, history


def _epoch_cfg(cfg: TrainConfig, epoch: int) -> TrainConfig:
    if cfg.noise is None or not cfg.resample_noise:
        return cfg
    return replace(cfg, noise=replace(cfg.noise, seed=cfg.noise.seed + 1000003 * epoch))


def _apply_update(spec, batch, grads, loss_before, cfg: TrainConfig):
    lr = cfg.learning_rate
    for _ in range(20):
        tensors = [
            None if g is None else c.weight_array() - lr * g
            for c, g in zip(spec.connections, grads)
        ]
        candidate = spec.with_connection_weights(tensors)
        if not cfg.backtrack:
            return candidate
        if unroll_loss(candidate, batch, cfg) <= loss_before:
            return candidate
        lr *= 0.5
    return spec


def save_loss_curve(path, history: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(history):
            fh.write(f"{epoch},{repr(float(loss))}\n")
