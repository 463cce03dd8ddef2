"""Pattern storage, cue corruption, retrieval, and capacity experiments.

Patterns are written directly into the weights of a single-hidden-layer
network: one hidden unit per stored pattern, with a whole-layer softmax
whose sharpness controls how strongly the best-matching memory wins. The
hierarchical demo at the bottom builds a three-layer network whose memories
are composed from a shared dictionary of convolutional patches.

Reproducibility: all randomness uses numpy's default_rng (PCG64). Random
patterns are drawn as rng.integers(0, 2, (k, n)) * 2 - 1 in row-major
order; bit-flip corruption draws rng.random(shape) once and flips entries
where the draw falls below the flip rate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import IntegratorConfig, NetworkState, relax, zero_state
from .energy import global_energy
from .lagrangians import ChannelLogSumExp, LogSumExp, Quadratic
from .topology import Conv, Dense, LayerSpec, NetworkSpec


@dataclass
class PatternSet:
    """K same-shaped pattern tensors with optional labels."""

    patterns: np.ndarray
    labels: list[str] | None = None

    def __post_init__(self):
        self.patterns = np.asarray(self.patterns, dtype=np.float64)
        if self.patterns.ndim < 2:
            self.patterns = self.patterns.reshape(1, -1)
        if len(self.patterns) < 1:
            raise ValueError("a pattern set needs at least one pattern")
        if self.labels is not None and len(self.labels) != len(self.patterns):
            raise ValueError("one label per pattern required")

    def __len__(self) -> int:
        return len(self.patterns)

    @property
    def pattern_shape(self) -> tuple:
        return self.patterns.shape[1:]


@dataclass(frozen=True)
class NoiseModel:
    """Seeded cue corruption: 'bitflip' (rate), 'gaussian' (sigma), or
    'mask' (fraction of entries set to fill)."""

    kind: str
    rate: float = 0.0
    sigma: float = 0.0
    fraction: float = 0.0
    fill: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("bitflip", "gaussian", "mask"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "bitflip" and not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"bitflip rate must be in [0, 1], got {self.rate}")
        if self.kind == "gaussian" and self.sigma < 0:
            raise ValueError(f"gaussian sigma must be >= 0, got {self.sigma}")
        if self.kind == "mask" and not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"mask fraction must be in [0, 1], got {self.fraction}")


def corrupt(pattern: np.ndarray, model: NoiseModel) -> np.ndarray:
    """Apply the noise model; identical (pattern, model) always yields the
    same corrupted tensor."""
    x = np.asarray(pattern, dtype=np.float64).copy()
    rng = np.random.default_rng(model.seed)
    if model.kind == "bitflip":
        if not np.all(np.abs(np.abs(x) - 1.0) < 1e-12):
            raise ValueError("bitflip corruption requires +/-1 data")
        flips = rng.random(x.shape) < model.rate
        x[flips] *= -1.0
    elif model.kind == "gaussian":
        x += model.sigma * rng.standard_normal(x.shape)
    else:
        n_mask = int(round(model.fraction * x.size))
        idx = rng.permutation(x.size)[:n_mask]
        flat = x.reshape(-1)
        flat[idx] = model.fill
    return x


@dataclass
class RecallReport:
    """Outcome of one retrieval: cosine overlap with the reference pattern,
    sign mismatches for +/-1 references (None otherwise), and the energy
    bracket of the trajectory."""

    overlap: float
    bit_error: int | None
    converged: bool
    steps: int
    energy_initial: float
    energy_final: float


def overlap(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, 0.0 when either tensor is all-zero."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _is_sign_pattern(x: np.ndarray) -> bool:
    return bool(np.all(np.abs(np.abs(x) - 1.0) < 1e-12))


def bit_errors(retrieved: np.ndarray, target: np.ndarray) -> int:
    """Sign mismatches against a +/-1 target (zeros count as +1)."""
    signs = np.where(np.asarray(retrieved) >= 0, 1.0, -1.0)
    return int(np.sum(signs != np.asarray(target, dtype=np.float64)))


def random_sign_patterns(k: int, n: int, seed) -> PatternSet:
    """K uniform +/-1 patterns of n entries from default_rng(seed)."""
    rng = np.random.default_rng(seed)
    return PatternSet(rng.integers(0, 2, size=(k, n)).astype(np.float64) * 2.0 - 1.0)


def store_single_hidden(
    patterns: PatternSet | np.ndarray,
    beta: float,
    tau_input: float = 1.0,
    tau_hidden: float = 0.1,
) -> NetworkSpec:
    """Write each pattern into one row of the input->hidden weights.

    The input layer has the patterns' shape and identity activations; the
    hidden layer is one softmax unit per pattern with sharpness beta.
    """
    if not isinstance(patterns, PatternSet):
        patterns = PatternSet(patterns)
    rows = patterns.patterns.reshape(len(patterns), -1)
    if len(rows) > 1:
        uniq = np.unique(rows, axis=0)
        if len(uniq) < len(rows):
            warnings.warn(
                f"{len(rows) - len(uniq)} duplicate pattern(s) stored: the shared "
                "attractor is degenerate",
                RuntimeWarning,
                stacklevel=2,
            )
    layers = (
        LayerSpec("visible", patterns.pattern_shape, Quadratic(), tau=tau_input),
        LayerSpec("memories", (len(rows),), LogSumExp(beta), tau=tau_hidden),
    )
    return NetworkSpec(layers, (Dense(weights=rows.copy()),)).require_valid()


def retrieve(
    spec: NetworkSpec,
    cue: np.ndarray,
    cfg: IntegratorConfig | None = None,
    target: np.ndarray | None = None,
    clamp_input: bool = False,
) -> tuple[np.ndarray, RecallReport]:
    """Relax from (input = cue, hidden layers = 0) and read back the input
    layer at the fixed point.

    The report compares against `target` when given, else against the cue.
    `clamp_input` holds the input layer at the cue during relaxation; it is
    off by default, matching the free-running retrieval protocol.
    """
    cfg = cfg or IntegratorConfig()
    state = zero_state(spec)
    state.layers[0] = np.asarray(cue, dtype=np.float64).reshape(spec.layers[0].shape)
    e0 = global_energy(spec, state).total
    if clamp_input:
        final, trace, converged = _relax_clamped(spec, state, cfg)
    else:
        final, trace, converged = relax(spec, state, cfg)
    retrieved = final.layers[0]
    ref = np.asarray(target if target is not None else cue, dtype=np.float64)
    report = RecallReport(
        overlap=overlap(retrieved, ref),
        bit_error=bit_errors(retrieved, ref) if _is_sign_pattern(ref) else None,
        converged=converged,
        steps=len(trace.rows) - 1,
        energy_initial=e0,
        energy_final=global_energy(spec, final).total,
    )
    return retrieved, report


def _relax_clamped(spec, state, cfg):
    # experimental mode: the input layer is pinned, so only the free layers'
    # velocities enter the convergence test
    from . import dynamics as dyn

    current = state.copy()
    cue = current.layers[0].copy()
    if spec.layers[-1].tau == 0:
        current.layers = dyn._settle_top(spec, current.layers)
    trace = dyn.RelaxationTrace(tuple(lay.name for lay in spec.layers))

    def free_speed(vs):
        return dyn.max_speed(vs[1:]) if len(vs) > 1 else 0.0

    vs = dyn._velocities(spec, current.layers)
    trace.rows.append(dyn._trace_row(spec, current, vs))
    converged = free_speed(vs) < cfg.convergence_eps
    steps = 0
    while not converged and steps < cfg.max_steps:
        current, flagged = dyn._step_adaptive(spec, current, cfg)
        current.layers[0] = cue.copy()
        steps += 1
        vs = dyn._velocities(spec, current.layers)
        trace.rows.append(dyn._trace_row(spec, current, vs, flagged))
        converged = free_speed(vs) < cfg.convergence_eps
    return current, trace, converged


@dataclass
class CapacityCell:
    k: int
    beta: float
    trials: int
    success_rate: float
    mean_steps: float


@dataclass
class CapacityTable:
    rows: list[CapacityCell] = field(default_factory=list)

    HEADER = "K,beta,trials,success_rate,mean_steps"

    def to_csv(self, path_or_file) -> None:
        if hasattr(path_or_file, "write"):
            self._write(path_or_file)
        else:
            with open(path_or_file, "w", newline="") as fh:
                self._write(fh)

    def _write(self, fh) -> None:
        fh.write(self.HEADER + "\n")
        for r in self.rows:
            fh.write(
                f"{r.k},{repr(float(r.beta))},{r.trials},"
                f"{repr(float(r.success_rate))},{repr(float(r.mean_steps))}\n"
            )

    def best_beta(self, k: int) -> float:
        cells = [r for r in self.rows if r.k == k]
        if not cells:
            raise KeyError(f"no sweep column for K={k}")
        return max(cells, key=lambda r: (r.success_rate, r.beta)).beta


def capacity_sweep(
    n_input: int,
    k_list: list[int],
    beta_list: list[float],
    noise: NoiseModel,
    trials: int,
    seed: int = 0,
    tau_hidden: float = 0.1,
    cfg: IntegratorConfig | None = None,
) -> CapacityTable:
    """Recall-success rates over a (K, beta) grid.

    For each K the patterns are drawn once with default_rng((seed, K)) and
    reused across the beta column. Trial t corrupts stored pattern t mod K
    with the noise model reseeded to noise.seed + t, retrieves it, and
    counts success when every sign is recovered. Identical arguments give
    bitwise-identical tables.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = cfg or IntegratorConfig(dt=0.05, convergence_eps=1e-6, max_steps=5000)
    table = CapacityTable()
    for k in k_list:
        patterns = random_sign_patterns(k, n_input, seed=(seed, k))
        for beta in beta_list:
            spec = store_single_hidden(patterns, beta, tau_hidden=tau_hidden)
            successes = 0
            steps = 0
            for t in range(trials):
                target = patterns.patterns[t % k]
                cue = corrupt(target, replace(noise, seed=noise.seed + t))
                _, report = retrieve(spec, cue, cfg, target=target)
                successes += int(report.bit_error == 0)
                steps += report.steps
            table.rows.append(
                CapacityCell(k, beta, trials, successes / trials, steps / trials)
            )
    return table


# hierarchical assembly demo: two 4x4 patch primitives shared between two
# 8x8 composite memories, tiled by a 4x4-stride convolution
_DEMO_WALSH = np.array(
    [[1.0, 1.0, 1.0, 1.0], [1.0, -1.0, 1.0, -1.0]]
)


def _demo_patches() -> np.ndarray:
    row_stripes = np.outer(_DEMO_WALSH[1], _DEMO_WALSH[0])
    col_stripes = np.outer(_DEMO_WALSH[0], _DEMO_WALSH[1])
    return np.stack([row_stripes, col_stripes])


_DEMO_LAYOUTS = ((0, 1, 0, 1), (0, 0, 1, 1))


def build_assembly_demo(
    beta_channels: float = 2.0, beta_memories: float = 4.0
) -> tuple[NetworkSpec, PatternSet]:
    """Hand-built three-layer network whose memories are assembled from
    reusable patch primitives.

    The convolution kernel stores one 4x4 patch per channel; each row of the
    top dense weights is a one-hot arrangement assigning a patch to each of
    the four tile positions. Both composites use patch 0, demonstrating
    primitive reuse. Returns the network and the composite images its
    weights encode.
    """
    patches = _demo_patches()
    n_patches = len(patches)
    kernel = np.transpose(patches, (1, 2, 0)).reshape(4, 4, 1, n_patches)
    sites = (2, 2)
    psi = np.zeros((len(_DEMO_LAYOUTS), sites[0] * sites[1] * n_patches))
    composites = np.zeros((len(_DEMO_LAYOUTS), 8, 8, 1))
    for mem, layout in enumerate(_DEMO_LAYOUTS):
        for site, patch_id in enumerate(layout):
            si, sj = divmod(site, sites[1])
            psi[mem, (si * sites[1] + sj) * n_patches + patch_id] = 1.0
            composites[mem, 4 * si : 4 * si + 4, 4 * sj : 4 * sj + 4, 0] = patches[patch_id]
    layers = (
        LayerSpec("image", (8, 8, 1), Quadratic(), tau=1.0),
        LayerSpec("patches", (2, 2, n_patches), ChannelLogSumExp(beta_channels), tau=0.1),
        LayerSpec("arrangements", (len(_DEMO_LAYOUTS),), LogSumExp(beta_memories), tau=0.0),
    )
    connections = (Conv(kernel=kernel, stride=4), Dense(weights=psi))
    spec = NetworkSpec(layers, connections).require_valid()
    labels = ["-".join(str(p) for p in layout) for layout in _DEMO_LAYOUTS]
    return spec, PatternSet(composites, labels=labels)


# pattern corpora on disk: delimited text (one flattened pattern per row)
# and 8-bit PGM for map-shaped patterns, mapped linearly to [-1, 1]


def save_patterns_csv(path, patterns: PatternSet) -> None:
    rows = patterns.patterns.reshape(len(patterns), -1)
    with open(path, "w", newline="") as fh:
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_patterns_csv(path, shape: tuple | None = None) -> PatternSet:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    arr = np.asarray(rows, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape((len(rows), *shape))
    return PatternSet(arr)


def save_pgm(path, image: np.ndarray) -> None:
    """Write a [-1, 1] image as binary 8-bit PGM."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim != 2:
        raise ValueError(f"PGM needs a single-channel image, got shape {img.shape}")
    levels = np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(levels.tobytes())


def load_pgm(path) -> np.ndarray:
    """Read an 8-bit PGM back to a [-1, 1] (h, w, 1) image."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError("only binary (P5) PGM is supported")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        fields.append(int(data[pos:end]))
        pos = end
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"only 8-bit PGM supported, got maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    img = pixels.reshape(height, width).astype(np.float64) * (2.0 / 255.0) - 1.0
    return img[:, :, np.newaxis]
