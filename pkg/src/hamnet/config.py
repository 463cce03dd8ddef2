"""Experiment configs: flat key-value text with one section per layer,
connection, and experiment block. Unknown sections or keys are rejected so
that a typo cannot silently change an experiment.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lagrangians, serialization
from .dynamics import IntegratorConfig
from .memory import NoiseModel
from .topology import AvgPool, Conv, Dense, LayerSpec, NetworkSpec
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Malformed configuration; the message names the section/key (and the
    line for syntax errors)."""


_LAYER_KEYS = {"name", "shape", "lagrangian", "beta", "function", "tau"}
_CONNECTION_KEYS = {"kind", "init", "scale", "seed", "file", "window", "stride"}
_INTEGRATOR_KEYS = {"method", "dt", "adaptive", "convergence_eps", "max_steps"}
_EXPERIMENT_KEYS = {"kind", "seed"}
_NETWORK_KEYS = {"name"}
_RELAX_KEYS = {"init", "scale"}
_RETRIEVE_KEYS = {
    "patterns", "beta", "tau_input", "tau_hidden", "clamp",
    "noise", "rate", "sigma", "fraction", "fill", "noise_seed",
}
_CAPACITY_KEYS = {
    "n_input", "k_list", "beta_list", "trials", "tau_hidden",
    "noise", "rate", "sigma", "fraction", "fill", "noise_seed",
    "dt", "convergence_eps", "max_steps",
}
_TRAIN_KEYS = {
    "patterns", "unroll_steps", "dt", "learning_rate", "epochs", "batch_size",
    "gradient_mode", "resample_noise", "backtrack",
    "noise", "rate", "sigma", "fraction", "fill", "noise_seed",
}


@dataclass
class ExperimentConfig:
    """Parsed experiment: the network (when the config declares one), the
    integrator, and the per-experiment parameter blocks."""

    kind: str
    seed: int = 0
    name: str = ""
    network: NetworkSpec | None = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    relax_options: dict = field(default_factory=dict)
    retrieve_options: dict = field(default_factory=dict)
    capacity_options: dict = field(default_factory=dict)
    train_options: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)


def _read_sections(text: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",), strict=True
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    return {name: dict(parser[name]) for name in parser.sections()}


def _check_keys(section: str, entries: dict[str, str], allowed: set[str]) -> None:
    for key in entries:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")


def _shape_from_text(section: str, text: str) -> tuple:
    parts = text.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"[{section}] shape: expected N or HxWxC, got {text!r}") from None
    if len(dims) not in (1, 3):
        raise ConfigError(f"[{section}] shape: expected N or HxWxC, got {text!r}")
    return dims


def _get_float(section: str, entries: dict, key: str, default=None) -> float:
    if key not in entries:
        if default is None:
            raise ConfigError(f"[{section}] missing required key {key!r}")
        return default
    try:
        return float(entries[key])
    except ValueError:
        raise ConfigError(f"[{section}] {key}: not a number: {entries[key]!r}") from None


def _get_int(section: str, entries: dict, key: str, default=None) -> int:
    if key not in entries:
        if default is None:
            raise ConfigError(f"[{section}] missing required key {key!r}")
        return default
    try:
        return int(entries[key])
    except ValueError:
        raise ConfigError(f"[{section}] {key}: not an integer: {entries[key]!r}") from None


def _get_bool(section: str, entries: dict, key: str, default: bool) -> bool:
    if key not in entries:
        return default
    val = entries[key].strip().lower()
    if val in ("true", "yes", "1", "on"):
        return True
    if val in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected true/false, got {entries[key]!r}")


def _parse_lagrangian(section: str, entries: dict) -> lagrangians.Lagrangian:
    kind = entries.get("lagrangian")
    if kind is None:
        raise ConfigError(f"[{section}] missing required key 'lagrangian'")
    try:
        if kind == "quadratic":
            return lagrangians.Quadratic()
        if kind == "logsumexp":
            return lagrangians.LogSumExp(beta=_get_float(section, entries, "beta"))
        if kind == "channel_logsumexp":
            return lagrangians.ChannelLogSumExp(beta=_get_float(section, entries, "beta"))
        if kind == "additive":
            fn = entries.get("function")
            if fn is None:
                raise ConfigError(f"[{section}] additive lagrangian needs 'function'")
            return lagrangians.additive(fn)
    except lagrangians.LagrangianError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc
    raise ConfigError(f"[{section}] unknown lagrangian kind {kind!r}")


def _numbered(sections: dict, prefix: str) -> list[tuple[str, dict]]:
    pat = re.compile(rf"^{prefix}\.(\d+)$")
    found = {}
    for name in sections:
        m = pat.match(name)
        if m:
            found[int(m.group(1))] = name
    out = []
    for i in range(1, len(found) + 1):
        if i not in found:
            raise ConfigError(f"section [{prefix}.{i}] is missing ({prefix} sections must be numbered 1..n)")
        out.append((found[i], sections[found[i]]))
    return out


def _build_connection(
    section: str, entries: dict, below: LayerSpec, above: LayerSpec, base_dir: Path, index: int
):
    kind = entries.get("kind")
    if kind is None:
        raise ConfigError(f"[{section}] missing required key 'kind'")
    if kind == "avgpool":
        return AvgPool(window=_get_int(section, entries, "window"))
    if kind == "conv":
        window = _get_int(section, entries, "window")
        stride = _get_int(section, entries, "stride", 1)
        if not below.is_map or not above.is_map:
            raise ConfigError(f"[{section}] conv requires map-shaped layers on both ends")
        shape = (window, window, below.shape[2], above.shape[2])
    elif kind == "dense":
        shape = (above.size, below.size)
    else:
        raise ConfigError(f"[{section}] unknown connection kind {kind!r}")
    init = entries.get("init", "zeros")
    if init == "zeros":
        weights = np.zeros(shape)
    elif init == "gaussian":
        scale = _get_float(section, entries, "scale", 0.1)
        seed = _get_int(section, entries, "seed", 0)
        fan_in = int(np.prod(shape[1:])) if kind == "dense" else shape[0] * shape[1] * shape[2]
        rng = np.random.default_rng(seed)
        weights = rng.normal(scale=scale / np.sqrt(fan_in), size=shape)
    elif init == "file":
        if "file" not in entries:
            raise ConfigError(f"[{section}] init = file needs a 'file' key")
        path = base_dir / entries["file"]
        try:
            stored = serialization.load(path)
        except (OSError, serialization.ContainerError) as exc:
            raise ConfigError(f"[{section}] cannot read weights from {path}: {exc}") from exc
        if index >= len(stored.connections):
            raise ConfigError(f"[{section}] {path} has no connection {index + 1}")
        weights = stored.connections[index].weight_array()
        if weights is None or weights.shape != shape:
            raise ConfigError(
                f"[{section}] connection {index + 1} in {path} does not match shape {shape}"
            )
    else:
        raise ConfigError(f"[{section}] unknown init {init!r}")
    if kind == "conv":
        return Conv(kernel=weights, stride=_get_int(section, entries, "stride", 1))
    return Dense(weights=weights)


def parse_network_sections(text: str, base_dir: Path | None = None) -> NetworkSpec:
    """Build a NetworkSpec from the [layer.N]/[connection.N] sections of a
    config (or of `describe` output)."""
    sections = _read_sections(text)
    return _network_from_sections(sections, base_dir or Path("."))


def _network_from_sections(sections: dict, base_dir: Path) -> NetworkSpec | None:
    layer_sections = _numbered(sections, "layer")
    if not layer_sections:
        return None
    layers = []
    for i, (name, entries) in enumerate(layer_sections, start=1):
        _check_keys(name, entries, _LAYER_KEYS)
        layers.append(
            LayerSpec(
                name=entries.get("name", f"layer{i}"),
                shape=_shape_from_text(name, entries.get("shape", "")),
                lagrangian=_parse_lagrangian(name, entries),
                tau=_get_float(name, entries, "tau", 1.0),
            )
        )
    conn_sections = _numbered(sections, "connection")
    if len(conn_sections) != len(layers) - 1:
        raise ConfigError(
            f"expected {len(layers) - 1} connection sections for {len(layers)} layers, "
            f"found {len(conn_sections)}"
        )
    conns = []
    for i, (name, entries) in enumerate(conn_sections):
        _check_keys(name, entries, _CONNECTION_KEYS)
        conns.append(_build_connection(name, entries, layers[i], layers[i + 1], base_dir, i))
    return NetworkSpec(tuple(layers), tuple(conns))


def _parse_noise(section: str, entries: dict) -> NoiseModel | None:
    kind = entries.get("noise", "none")
    if kind == "none":
        return None
    try:
        return NoiseModel(
            kind=kind,
            rate=_get_float(section, entries, "rate", 0.0),
            sigma=_get_float(section, entries, "sigma", 0.0),
            fraction=_get_float(section, entries, "fraction", 0.0),
            fill=_get_float(section, entries, "fill", 0.0),
            seed=_get_int(section, entries, "noise_seed", 0),
        )
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _parse_integrator(sections: dict) -> IntegratorConfig:
    entries = sections.get("integrator", {})
    _check_keys("integrator", entries, _INTEGRATOR_KEYS)
    try:
        return IntegratorConfig(
            method=entries.get("method", "euler"),
            dt=_get_float("integrator", entries, "dt", -1.0) if "dt" in entries else None,
            adaptive=_get_bool("integrator", entries, "adaptive", True),
            convergence_eps=_get_float("integrator", entries, "convergence_eps", 1e-8),
            max_steps=_get_int("integrator", entries, "max_steps", 100_000),
        )
    except ValueError as exc:
        raise ConfigError(f"[integrator] {exc}") from exc


_KNOWN_SECTIONS = {"network", "integrator", "experiment", "relax", "retrieve", "capacity", "train"}


def loads(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    base_dir = base_dir or Path(".")
    sections = _read_sections(text)
    for name in sections:
        if name in _KNOWN_SECTIONS or re.match(r"^(layer|connection)\.\d+$", name):
            continue
        raise ConfigError(f"unknown section [{name}]")
    exp = sections.get("experiment", {})
    _check_keys("experiment", exp, _EXPERIMENT_KEYS)
    kind = exp.get("kind", "relax")
    if kind not in ("relax", "retrieve", "capacity", "train"):
        raise ConfigError(f"[experiment] unknown kind {kind!r}")
    net_section = sections.get("network", {})
    _check_keys("network", net_section, _NETWORK_KEYS)

    cfg = ExperimentConfig(
        kind=kind,
        seed=_get_int("experiment", exp, "seed", 0),
        name=net_section.get("name", ""),
        network=_network_from_sections(sections, base_dir),
        integrator=_parse_integrator(sections),
        base_dir=base_dir,
    )

    relax_sec = sections.get("relax", {})
    _check_keys("relax", relax_sec, _RELAX_KEYS)
    init = relax_sec.get("init", "gaussian")
    if init not in ("zeros", "gaussian"):
        raise ConfigError(f"[relax] unknown init {init!r}")
    cfg.relax_options = {
        "init": init,
        "scale": _get_float("relax", relax_sec, "scale", 1.0),
    }

    ret = sections.get("retrieve", {})
    _check_keys("retrieve", ret, _RETRIEVE_KEYS)
    cfg.retrieve_options = {
        "patterns": ret.get("patterns"),
        "beta": _get_float("retrieve", ret, "beta", 1.0),
        "tau_input": _get_float("retrieve", ret, "tau_input", 1.0),
        "tau_hidden": _get_float("retrieve", ret, "tau_hidden", 0.1),
        "clamp": _get_bool("retrieve", ret, "clamp", False),
        "noise": _parse_noise("retrieve", ret),
    }

    cap = sections.get("capacity", {})
    _check_keys("capacity", cap, _CAPACITY_KEYS)
    if kind == "capacity":
        if "n_input" not in cap or "k_list" not in cap or "beta_list" not in cap:
            raise ConfigError("[capacity] requires n_input, k_list, and beta_list")
        noise = _parse_noise("capacity", cap)
        if noise is None:
            raise ConfigError("[capacity] requires a noise model")
        try:
            k_list = [int(v) for v in cap["k_list"].split(",")]
            beta_list = [float(v) for v in cap["beta_list"].split(",")]
        except ValueError as exc:
            raise ConfigError(f"[capacity] bad list: {exc}") from exc
        cfg.capacity_options = {
            "n_input": _get_int("capacity", cap, "n_input"),
            "k_list": k_list,
            "beta_list": beta_list,
            "trials": _get_int("capacity", cap, "trials", 20),
            "tau_hidden": _get_float("capacity", cap, "tau_hidden", 0.1),
            "noise": noise,
            "integrator": IntegratorConfig(
                dt=_get_float("capacity", cap, "dt", 0.05),
                convergence_eps=_get_float("capacity", cap, "convergence_eps", 1e-6),
                max_steps=_get_int("capacity", cap, "max_steps", 5000),
            ),
        }

    tr = sections.get("train", {})
    _check_keys("train", tr, _TRAIN_KEYS)
    if kind == "train":
        if "patterns" not in tr:
            raise ConfigError("[train] requires a 'patterns' corpus path")
        try:
            cfg.train_options = {
                "patterns": tr["patterns"],
                "config": TrainConfig(
                    unroll_steps=_get_int("train", tr, "unroll_steps", 50),
                    dt=_get_float("train", tr, "dt", 0.05),
                    learning_rate=_get_float("train", tr, "learning_rate", 0.1),
                    epochs=_get_int("train", tr, "epochs", 100),
                    batch_size=_get_int("train", tr, "batch_size", 8),
                    noise=_parse_noise("train", tr),
                    gradient_mode=tr.get("gradient_mode", "analytic"),
                    resample_noise=_get_bool("train", tr, "resample_noise", True),
                    backtrack=_get_bool("train", tr, "backtrack", False),
                ),
            }
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from exc
    return cfg


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, base_dir=path.parent)
