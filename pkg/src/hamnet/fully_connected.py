"""All-to-all recurrent memory with one symmetric weight matrix.

The layered machinery elsewhere in the package is the structured special
case of this network; keeping the direct formulation lets the descent
certificate be tested without any layer bookkeeping. Every neuron may have
its own time constant, and the single Lagrangian over the whole state
vector defines all activations at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lagrangians import Lagrangian


@dataclass
class FullyConnectedNetwork:
    """State dynamics tau_i dx_i/dt = sum_j W_ij g_j - x_i with g = dL/dx.

    W must be symmetric: the shared forward/feedback tensor is what makes
    the energy below a descent function.
    """

    weights: np.ndarray
    lagrangian: Lagrangian
    tau: np.ndarray | float = 1.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weights must be square, got shape {w.shape}")
        if not np.allclose(w, w.T, atol=1e-12 * (1.0 + np.max(np.abs(w)))):
            raise ValueError("weights must be symmetric")
        self.weights = w
        tau = np.asarray(self.tau, dtype=np.float64)
        if tau.ndim == 0:
            tau = np.full(w.shape[0], float(tau))
        if tau.shape != (w.shape[0],):
            raise ValueError(f"tau must be scalar or length {w.shape[0]}")
        if np.any(tau <= 0):
            raise ValueError("all time constants must be positive")
        self.tau = tau

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def velocity(self, x: np.ndarray) -> np.ndarray:
        g = self.lagrangian.activations(x)
        return (self.weights @ g - x) / self.tau

    def energy(self, x: np.ndarray) -> float:
        """<x, g> - L(x) - <g, W g>/2."""
        x = np.asarray(x, dtype=np.float64)
        g = self.lagrangian.activations(x)
        return (
            float(np.vdot(x, g))
            - self.lagrangian.value(x)
            - 0.5 * float(np.vdot(g, self.weights @ g))
        )

    def energy_rate(self, x: np.ndarray) -> float:
        """dE/dt = -sum_ik v_i tau_i H_ik v_k along the dynamics."""
        v = self.velocity(x)
        return -float(np.vdot(self.tau * v, self.lagrangian.hessian_vector_product(x, v)))

    def relax(
        self,
        x0: np.ndarray,
        dt: float | None = None,
        convergence_eps: float = 1e-8,
        max_steps: int = 100_000,
    ) -> tuple[np.ndarray, bool]:
        """Euler-integrate to a fixed point; returns (state, converged)."""
        x = np.asarray(x0, dtype=np.float64).copy()
        if dt is None:
            dt = 0.1 * float(np.min(self.tau))
        for _ in range(max_steps):
            v = self.velocity(x)
            if float(np.max(np.abs(v))) < convergence_eps:
                return x, True
            x = x + dt * v
        return x, False
