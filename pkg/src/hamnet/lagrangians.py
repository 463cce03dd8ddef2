"""Per-layer Lagrangian functions.

Each layer of a hierarchical associative memory is defined by a scalar
Lagrangian L(x) of the layer's activity tensor. The activation (axonal
output) of the layer is the gradient g = dL/dx, and the Hessian of L enters
the energy-descent certificate, so every kind here exposes the value, the
gradient, and Hessian-vector products in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class LagrangianError(ValueError):
    pass


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _logsumexp(z: np.ndarray) -> float:
    """log(sum(exp(z))) over all entries, with max-subtraction."""
    m = float(np.max(z))
    return m + float(np.log(np.sum(np.exp(z - m))))


def _softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z)
    e = np.exp(z - m)
    return e / np.sum(e)


class Lagrangian:
    """Interface shared by all layer Lagrangians.

    All operations are pure functions of their arguments; instances are
    immutable and safe to share across threads.
    """

    kind: str = ""

    def value(self, x) -> float:
        raise NotImplementedError

    def activations(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian_vector_product(self, x, v) -> np.ndarray:
        raise NotImplementedError

    def hessian_quadratic_form(self, x, v) -> float:
        """v' H v with H the Hessian of the Lagrangian at x."""
        v = _as_f64(v)
        return float(np.vdot(v, self.hessian_vector_product(x, v)))

    def params(self) -> dict:
        """Serializable parameters (kind-specific)."""
        return {}


@dataclass(frozen=True)
class Quadratic(Lagrangian):
    """L(x) = sum(x^2)/2, giving the identity activation."""

    kind = "quadratic"

    def value(self, x) -> float:
        x = _as_f64(x)
        return float(0.5 * np.sum(x * x))

    def activations(self, x) -> np.ndarray:
        return _as_f64(x).copy()

    def hessian_vector_product(self, x, v) -> np.ndarray:
        return _as_f64(v).copy()

    def hessian_quadratic_form(self, x, v) -> float:
        v = _as_f64(v)
        return float(np.sum(v * v))


@dataclass(frozen=True)
class LogSumExp(Lagrangian):
    """L(x) = log(sum(exp(beta*x)))/beta over the whole layer.

    The activation is a softmax across every unit of the layer, so the
    layer's outputs form a single competitive group summing to one.
    """

    beta: float

    kind = "logsumexp"

    def __post_init__(self):
        if not self.beta > 0:
            raise LagrangianError(f"logsumexp requires beta > 0, got {self.beta}")

    def value(self, x) -> float:
        x = _as_f64(x)
        return _logsumexp(self.beta * x) / self.beta

    def activations(self, x) -> np.ndarray:
        x = _as_f64(x)
        return _softmax(self.beta * x.ravel()).reshape(x.shape)

    def hessian_vector_product(self, x, v) -> np.ndarray:
        # H = beta * (diag(f) - f f'), f = softmax(beta x)
        f = self.activations(x).ravel()
        v = _as_f64(v).ravel()
        out = self.beta * (f * v - f * np.dot(f, v))
        return out.reshape(np.shape(x))

    def hessian_quadratic_form(self, x, v) -> float:
        f = self.activations(x).ravel()
        v = _as_f64(v).ravel()
        return float(self.beta * (np.dot(f, v * v) - np.dot(f, v) ** 2))

    def params(self) -> dict:
        return {"beta": self.beta}


@dataclass(frozen=True)
class ChannelLogSumExp(Lagrangian):
    """Per-site channel competition for map-shaped (H, W, C) layers.

    L(x) = sum over spatial sites of log(sum_c exp(beta*x))/beta; the
    activation is an independent softmax over channels at every site.
    """

    beta: float

    kind = "channel_logsumexp"

    def __post_init__(self):
        if not self.beta > 0:
            raise LagrangianError(f"channel_logsumexp requires beta > 0, got {self.beta}")

    def _check(self, x: np.ndarray) -> None:
        if x.ndim < 2:
            raise LagrangianError(
                "channel_logsumexp needs a trailing channel axis; "
                f"got a tensor of shape {x.shape}"
            )

    def value(self, x) -> float:
        x = _as_f64(x)
        self._check(x)
        z = self.beta * x
        m = np.max(z, axis=-1, keepdims=True)
        lse = m[..., 0] + np.log(np.sum(np.exp(z - m), axis=-1))
        return float(np.sum(lse) / self.beta)

    def activations(self, x) -> np.ndarray:
        x = _as_f64(x)
        self._check(x)
        z = self.beta * x
        m = np.max(z, axis=-1, keepdims=True)
        e = np.exp(z - m)
        return e / np.sum(e, axis=-1, keepdims=True)

    def hessian_vector_product(self, x, v) -> np.ndarray:
        f = self.activations(x)
        v = _as_f64(v).reshape(f.shape)
        fv = np.sum(f * v, axis=-1, keepdims=True)
        return self.beta * (f * v - f * fv)

    def hessian_quadratic_form(self, x, v) -> float:
        f = self.activations(x)
        v = _as_f64(v).reshape(f.shape)
        fv = np.sum(f * v, axis=-1)
        fvv = np.sum(f * v * v, axis=-1)
        return float(self.beta * np.sum(fvv - fv * fv))

    def params(self) -> dict:
        return {"beta": self.beta}


@dataclass(frozen=True)
class ScalarFunction:
    """Scalar function F with derivatives, applied element-wise."""

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray], np.ndarray]


def _log_cosh(x: np.ndarray) -> np.ndarray:
    # |x| + log1p(exp(-2|x|)) - log 2 avoids overflow of cosh for large |x|
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


# F'' of the half-squared ReLU is the a.e. derivative of max(x, 0): 1 for
# x > 0 and 0 elsewhere, with the subgradient choice 0 at x = 0.
SCALAR_FUNCTIONS: dict[str, ScalarFunction] = {
    "identity": ScalarFunction(
        "identity",
        f=lambda x: 0.5 * x * x,
        df=lambda x: x.copy(),
        d2f=lambda x: np.ones_like(x),
    ),
    "tanh": ScalarFunction(
        "tanh",
        f=_log_cosh,
        df=np.tanh,
        d2f=lambda x: 1.0 / np.cosh(np.minimum(np.abs(x), 350.0)) ** 2,
    ),
    "relu": ScalarFunction(
        "relu",
        f=lambda x: 0.5 * np.maximum(x, 0.0) ** 2,
        df=lambda x: np.maximum(x, 0.0),
        d2f=lambda x: (x > 0).astype(np.float64),
    ),
}


@dataclass(frozen=True)
class ElementwiseAdditive(Lagrangian):
    """L(x) = sum_i F(x_i): the additive limit with neuron-wise activations."""

    fn: ScalarFunction

    kind = "additive"

    def value(self, x) -> float:
        return float(np.sum(self.fn.f(_as_f64(x))))

    def activations(self, x) -> np.ndarray:
        return self.fn.df(_as_f64(x))

    def hessian_vector_product(self, x, v) -> np.ndarray:
        return self.fn.d2f(_as_f64(x)) * _as_f64(v)

    def hessian_quadratic_form(self, x, v) -> float:
        v = _as_f64(v)
        return float(np.sum(self.fn.d2f(_as_f64(x)) * v * v))

    def params(self) -> dict:
        return {"function": self.fn.name}


def additive(name: str) -> ElementwiseAdditive:
    """Look up a named scalar function and wrap it as an additive Lagrangian."""
    try:
        return ElementwiseAdditive(SCALAR_FUNCTIONS[name])
    except KeyError:
        raise LagrangianError(
            f"unknown scalar function {name!r}; known: {sorted(SCALAR_FUNCTIONS)}"
        ) from None


def from_params(kind: str, params: dict) -> Lagrangian:
    """Rebuild a Lagrangian from its (kind, params) description."""
    if kind == "quadratic":
        return Quadratic()
    if kind == "logsumexp":
        return LogSumExp(beta=float(params["beta"]))
    if kind == "channel_logsumexp":
        return ChannelLogSumExp(beta=float(params["beta"]))
    if kind == "additive":
        return additive(str(params["function"]))
    raise LagrangianError(f"unknown lagrangian kind {kind!r}")
