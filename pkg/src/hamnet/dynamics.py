"""Continuous-time relaxation of a layered network toward its attractors.

Every layer integrates tau * dx/dt = (top-down drive) + (bottom-up drive) - x
with zero boundary drives at the ends of the stack. A top layer with tau = 0
is slaved: it is eliminated by solving its own fixed-point equation at every
step instead of being integrated.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import energy as _energy
from .topology import NetworkSpec, ShapeMismatchError


class NonFiniteStateError(FloatingPointError):
    """A layer activity became NaN or infinite during integration."""


@dataclass
class NetworkState:
    """Per-layer activity tensors at time t."""

    layers: list[np.ndarray]
    t: float = 0.0

    def copy(self) -> "NetworkState":
        return NetworkState([x.copy() for x in self.layers], self.t)


def zero_state(spec: NetworkSpec) -> NetworkState:
    return NetworkState([np.zeros(lay.shape) for lay in spec.layers])


def check_state(spec: NetworkSpec, state: NetworkState) -> None:
    if len(state.layers) != spec.n_layers:
        raise ShapeMismatchError(
            f"state has {len(state.layers)} layers, network has {spec.n_layers}"
        )
    for lay, x in zip(spec.layers, state.layers):
        lay.check_activity(x)


def _check_finite(spec: NetworkSpec, xs: list[np.ndarray], t: float) -> None:
    for lay, x in zip(spec.layers, xs):
        if not np.all(np.isfinite(x)):
            raise NonFiniteStateError(
                f"non-finite activity in layer {lay.name!r} at t={t:g}"
            )


@dataclass(frozen=True)
class IntegratorConfig:
    """Time-stepping parameters.

    dt = None picks 0.1 times the smallest positive tau. With `adaptive`
    set, a step that raises the energy is retried at half the step size
    (down to dt / 2**10) before being accepted under protest: the Lyapunov
    property doubles as the step-size controller.
    """

    method: str = "euler"
    dt: float | None = None
    adaptive: bool = True
    convergence_eps: float = 1e-8
    max_steps: int = 100_000

    def __post_init__(self):
        if self.method not in ("euler", "rk4"):
            raise ValueError(f"method must be 'euler' or 'rk4', got {self.method!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.convergence_eps > 0:
            raise ValueError(f"convergence_eps must be positive, got {self.convergence_eps}")

    def resolve_dt(self, spec: NetworkSpec) -> float:
        if self.dt is not None:
            return self.dt
        taus = [lay.tau for lay in spec.layers if lay.tau > 0]
        if not taus:
            raise ValueError("network has no positive time constants")
        return 0.1 * min(taus)


@dataclass
class TraceRow:
    t: float
    energy: float
    dE_dt: float
    max_velocity: float
    layer_norms: tuple[float, ...]
    flagged: bool = False
    breakdown: "_energy.EnergyBreakdown | None" = None


@dataclass
class RelaxationTrace:
    """Time series recorded at every accepted state of a relaxation."""

    layer_names: tuple[str, ...]
    rows: list[TraceRow] = field(default_factory=list)

    def header(self, include_breakdown: bool = False) -> list[str]:
        cols = ["t", "energy", "dE_dt", "max_velocity"]
        cols += [f"norm_{name}" for name in self.layer_names]
        if include_breakdown:
            cols += [f"legendre_{name}" for name in self.layer_names]
            cols += [
                f"interaction_{a}_{b}"
                for a, b in zip(self.layer_names[:-1], self.layer_names[1:])
            ]
        return cols

    def to_csv(self, path_or_file, include_breakdown: bool = False) -> None:
        if hasattr(path_or_file, "write"):
            self._write(path_or_file, include_breakdown)
        else:
            with open(path_or_file, "w", newline="") as fh:
                self._write(fh, include_breakdown)

    def _write(self, fh, include_breakdown: bool) -> None:
        fh.write(",".join(self.header(include_breakdown)) + "\n")
        for row in self.rows:
            vals = [row.t, row.energy, row.dE_dt, row.max_velocity, *row.layer_norms]
            if include_breakdown:
                vals += list(row.breakdown.legendre_terms)
                vals += list(row.breakdown.interaction_terms)
            fh.write(",".join(repr(float(v)) for v in vals) + "\n")

    def csv_text(self, include_breakdown: bool = False) -> str:
        buf = io.StringIO()
        self._write(buf, include_breakdown)
        return buf.getvalue()


def _has_slaved_top(spec: NetworkSpec) -> bool:
    return spec.layers[-1].tau == 0


def activations(spec: NetworkSpec, xs: list[np.ndarray]) -> list[np.ndarray]:
    return [lay.lagrangian.activations(x) for lay, x in zip(spec.layers, xs)]


def _drive(spec: NetworkSpec, xs: list[np.ndarray], gs: list[np.ndarray], i: int) -> np.ndarray:
    d = -xs[i]
    if i > 0:
        d = d + spec.forward_message(i - 1, gs[i - 1])
    if i < spec.n_layers - 1:
        d = d + spec.backward_message(i, gs[i + 1])
    return d


def _top_equilibrium(spec: NetworkSpec, gs: list[np.ndarray]) -> np.ndarray:
    if spec.n_layers == 1:
        return np.zeros(spec.layers[0].shape)
    return spec.forward_message(spec.n_layers - 2, gs[-2])


def _settle_top(spec: NetworkSpec, xs: list[np.ndarray]) -> list[np.ndarray]:
    """Replace a tau = 0 top layer by its instantaneous fixed point."""
    if not _has_slaved_top(spec):
        return xs
    out = list(xs)
    if spec.n_layers == 1:
        out[-1] = np.zeros(spec.layers[0].shape)
    else:
        g_below = spec.layers[-2].lagrangian.activations(xs[-2])
        out[-1] = spec.forward_message(spec.n_layers - 2, g_below)
    return out


def _velocities(spec: NetworkSpec, xs: list[np.ndarray]) -> list[np.ndarray]:
    gs = activations(spec, xs)
    out = []
    for i, lay in enumerate(spec.layers):
        if lay.tau == 0:
            if i != spec.n_layers - 1:
                raise ValueError(
                    f"layer {lay.name!r} has tau = 0 but is not the top layer"
                )
            out.append(np.zeros(lay.shape))
        else:
            out.append(_drive(spec, xs, gs, i) / lay.tau)
    return out


def velocity(spec: NetworkSpec, state: NetworkState) -> list[np.ndarray]:
    """Per-layer dx/dt. A slaved (tau = 0) top layer reports zero velocity;
    it is handled by `equilibrate_top_layer` rather than integrated."""
    check_state(spec, state)
    return _velocities(spec, state.layers)


def max_speed(vs: list[np.ndarray]) -> float:
    return max(float(np.max(np.abs(v))) if v.size else 0.0 for v in vs)


def equilibrate_top_layer(spec: NetworkSpec, state: NetworkState) -> NetworkState:
    """Solve the tau = 0 top layer's own fixed-point equation in closed form,
    leaving every other layer untouched."""
    if spec.layers[-1].tau != 0:
        raise ValueError(
            f"top layer {spec.layers[-1].name!r} has tau = {spec.layers[-1].tau}; "
            "equilibration requires tau = 0"
        )
    check_state(spec, state)
    out = state.copy()
    out.layers = _settle_top(spec, out.layers)
    return out


def _advance(
    spec: NetworkSpec,
    xs: list[np.ndarray],
    dt: float,
    method: str,
    k1: list[np.ndarray] | None = None,
) -> list[np.ndarray]:
    if k1 is None:
        k1 = _velocities(spec, xs)
    if method == "euler":
        new = [x + dt * v for x, v in zip(xs, k1)]
        return _settle_top(spec, new)
    # classic RK4; each stage re-settles a slaved top layer before evaluation
    s2 = _settle_top(spec, [x + 0.5 * dt * v for x, v in zip(xs, k1)])
    k2 = _velocities(spec, s2)
    s3 = _settle_top(spec, [x + 0.5 * dt * v for x, v in zip(xs, k2)])
    k3 = _velocities(spec, s3)
    s4 = _settle_top(spec, [x + dt * v for x, v in zip(xs, k3)])
    k4 = _velocities(spec, s4)
    new = [
        x + (dt / 6.0) * (a + 2.0 * b + 2.0 * c + d)
        for x, a, b, c, d in zip(xs, k1, k2, k3, k4)
    ]
    return _settle_top(spec, new)


def _step_adaptive(
    spec: NetworkSpec,
    state: NetworkState,
    cfg: IntegratorConfig,
    e0: float | None = None,
    k1: list[np.ndarray] | None = None,
) -> tuple[NetworkState, bool]:
    """One accepted step; the flag marks an energy increase that survived
    every halving down to dt / 2**10. The current energy and velocities may
    be passed in when the caller already has them."""
    check_state(spec, state)
    _check_finite(spec, state.layers, state.t)
    dt = cfg.resolve_dt(spec)
    if not cfg.adaptive:
        xs = _advance(spec, state.layers, dt, cfg.method, k1)
        return NetworkState(xs, state.t + dt), False
    if e0 is None:
        e0 = _energy.global_energy(spec, state).total
    slack = 1e-12 * (1.0 + abs(e0))
    if k1 is None:
        k1 = _velocities(spec, state.layers)
    xs = _advance(spec, state.layers, dt, cfg.method, k1)
    for _ in range(10):
        e1 = _energy.global_energy(spec, NetworkState(xs)).total
        if e1 <= e0 + slack:
            return NetworkState(xs, state.t + dt), False
        dt *= 0.5
        xs = _advance(spec, state.layers, dt, cfg.method, k1)
    return NetworkState(xs, state.t + dt), True


def step(spec: NetworkSpec, state: NetworkState, cfg: IntegratorConfig) -> NetworkState:
    """Advance one accepted integrator step (see IntegratorConfig)."""
    new, _ = _step_adaptive(spec, state, cfg)
    return new


def _trace_row(
    spec: NetworkSpec,
    state: NetworkState,
    vs: list[np.ndarray],
    flagged: bool = False,
) -> TraceRow:
    bd = _energy.global_energy(spec, state)
    rate = _energy.rate_from_velocities(spec, state.layers, vs)
    norms = tuple(float(np.linalg.norm(x)) for x in state.layers)
    return TraceRow(state.t, bd.total, rate, max_speed(vs), norms, flagged, bd)


def relax(
    spec: NetworkSpec, state: NetworkState, cfg: IntegratorConfig | None = None
) -> tuple[NetworkState, RelaxationTrace, bool]:
    """Integrate until max |dx/dt| < convergence_eps or max_steps is hit.

    Returns the final state, the per-step trace (the initial state is row
    zero), and whether the velocity threshold was reached.
    """
    cfg = cfg or IntegratorConfig()
    check_state(spec, state)
    current = state.copy()
    if _has_slaved_top(spec):
        current.layers = _settle_top(spec, current.layers)
    trace = RelaxationTrace(tuple(lay.name for lay in spec.layers))
    vs = _velocities(spec, current.layers)
    row = _trace_row(spec, current, vs)
    trace.rows.append(row)
    converged = max_speed(vs) < cfg.convergence_eps
    steps = 0
    while not converged and steps < cfg.max_steps:
        current, flagged = _step_adaptive(spec, current, cfg, e0=row.energy, k1=vs)
        steps += 1
        vs = _velocities(spec, current.layers)
        row = _trace_row(spec, current, vs, flagged)
        trace.rows.append(row)
        converged = max_speed(vs) < cfg.convergence_eps
    return current, trace, converged
