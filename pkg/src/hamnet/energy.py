"""Global energy of a layered network and its analytic time derivative.

The energy is the sum of per-layer Legendre transforms of the Lagrangians
minus the interaction terms of adjacent layers. Along the relaxation
dynamics its time derivative is the negative tau-weighted Hessian quadratic
form of the velocities, which is what certifies descent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .topology import NetworkSpec


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-layer Legendre terms, per-connection interaction terms, and their
    total. The total is the exact float sum of the parts."""

    legendre_terms: tuple[float, ...]
    interaction_terms: tuple[float, ...]
    total: float


def global_energy(spec: NetworkSpec, state) -> EnergyBreakdown:
    """E = sum_layers (<x, g> - L) - sum_connections <g_above, W g_below>."""
    xs = state.layers
    for lay, x in zip(spec.layers, xs):
        lay.check_activity(x)
    gs = [lay.lagrangian.activations(x) for lay, x in zip(spec.layers, xs)]
    legendre = tuple(
        float(np.vdot(x, g)) - lay.lagrangian.value(x)
        for lay, x, g in zip(spec.layers, xs, gs)
    )
    interaction = tuple(
        float(np.vdot(gs[i + 1], spec.forward_message(i, gs[i])))
        for i in range(spec.n_layers - 1)
    )
    total = float(sum(legendre) - sum(interaction))
    return EnergyBreakdown(legendre, interaction, total)


def rate_from_velocities(spec: NetworkSpec, xs, vs) -> float:
    """-sum_A tau_A * v_A' H_A v_A over layers with positive tau.

    For a network whose tau = 0 top layer sits at its instantaneous fixed
    point this equals the full dE/dt, because the energy gradient with
    respect to an equilibrated layer vanishes.
    """
    rate = 0.0
    for lay, x, v in zip(spec.layers, xs, vs):
        if lay.tau > 0:
            rate -= lay.tau * lay.lagrangian.hessian_quadratic_form(x, v)
    return rate


def energy_rate(spec: NetworkSpec, state) -> float:
    """Analytic dE/dt along the dynamics; non-positive up to round-off.

    Requires every time constant positive: eliminate a tau = 0 top layer
    with `equilibrate_top_layer` and work with the reduced energy instead.
    """
    for lay in spec.layers:
        if lay.tau == 0:
            raise ValueError(
                f"layer {lay.name!r} has tau = 0; equilibrate the top layer first"
            )
    from .dynamics import velocity

    vs = velocity(spec, state)
    return rate_from_velocities(spec, state.layers, vs)


def reduced_energy_adiabatic(spec: NetworkSpec, state) -> float:
    """Energy after closed-form elimination of a tau = 0 top layer.

    The top layer's Legendre term cancels against its interaction term at
    the equilibrated point, leaving the lower stack's terms minus the top
    Lagrangian evaluated at the slaved activities.
    """
    top = spec.layers[-1]
    if top.tau != 0:
        raise ValueError(f"top layer {top.name!r} must have tau = 0, got {top.tau}")
    xs = state.layers
    gs = [lay.lagrangian.activations(x) for lay, x in zip(spec.layers[:-1], xs[:-1])]
    if spec.n_layers == 1:
        drive = np.zeros(top.shape)
    else:
        drive = spec.forward_message(spec.n_layers - 2, gs[-1])
    resid = float(np.max(np.abs(xs[-1] - drive)))
    if resid > 1e-9 * (1.0 + float(np.max(np.abs(drive)))):
        raise ValueError(
            f"top layer {top.name!r} is not equilibrated (residual {resid:.3e}); "
            "call equilibrate_top_layer first"
        )
    reduced = -top.lagrangian.value(xs[-1])
    for lay, x, g in zip(spec.layers[:-1], xs[:-1], gs):
        reduced += float(np.vdot(x, g)) - lay.lagrangian.value(x)
    for i in range(spec.n_layers - 2):
        reduced -= float(np.vdot(gs[i + 1], spec.forward_message(i, gs[i])))
    return reduced
