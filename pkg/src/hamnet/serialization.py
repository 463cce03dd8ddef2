"""Network container format and human-readable structure description.

Binary layout (all integers little-endian):

    bytes 0..7    magic b"HAMNET\\x01\\n"
    bytes 8..15   uint64 header length in bytes
    header        UTF-8 JSON: {"layers": [...], "connections": [...]} where
                  each layer entry carries name/shape/lagrangian/tau and each
                  connection entry its kind plus tensor shape or window/stride
    payload       for every connection that owns weights, in order: the raw
                  row-major float64 bytes of its tensor

Weights survive a save/load round trip bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import lagrangians
from .topology import AvgPool, Connection, Conv, Dense, LayerSpec, NetworkSpec

MAGIC = b"HAMNET\x01\n"


class ContainerError(ValueError):
    pass


def _layer_entry(lay: LayerSpec) -> dict:
    return {
        "name": lay.name,
        "shape": list(lay.shape),
        "lagrangian": {"kind": lay.lagrangian.kind, **lay.lagrangian.params()},
        "tau": lay.tau,
    }


def _connection_entry(conn: Connection) -> dict:
    if isinstance(conn, Dense):
        return {"kind": "dense", "shape": list(conn.weights.shape)}
    if isinstance(conn, Conv):
        return {"kind": "conv", "shape": list(conn.kernel.shape), "stride": conn.stride}
    if isinstance(conn, AvgPool):
        return {"kind": "avgpool", "window": conn.window}
    raise ContainerError(f"cannot serialize connection kind {conn.kind!r}")


def to_bytes(spec: NetworkSpec) -> bytes:
    header = {
        "layers": [_layer_entry(lay) for lay in spec.layers],
        "connections": [_connection_entry(c) for c in spec.connections],
    }
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<Q", len(head)), head]
    for conn in spec.connections:
        w = conn.weight_array()
        if w is not None:
            chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    return b"".join(chunks)


def from_bytes(data: bytes) -> NetworkSpec:
    if data[: len(MAGIC)] != MAGIC:
        raise ContainerError("not a hamnet network container (bad magic)")
    (head_len,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    try:
        header = json.loads(data[start : start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt container header: {exc}") from exc
    layers = tuple(
        LayerSpec(
            name=entry["name"],
            shape=tuple(entry["shape"]),
            lagrangian=lagrangians.from_params(
                entry["lagrangian"]["kind"],
                {k: v for k, v in entry["lagrangian"].items() if k != "kind"},
            ),
            tau=float(entry["tau"]),
        )
        for entry in header["layers"]
    )
    offset = start + head_len
    conns: list[Connection] = []
    for entry in header["connections"]:
        kind = entry["kind"]
        if kind == "avgpool":
            conns.append(AvgPool(window=int(entry["window"])))
            continue
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8
        raw = data[offset : offset + nbytes]
        if len(raw) != nbytes:
            raise ContainerError("container truncated: weight payload incomplete")
        w = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        offset += nbytes
        if kind == "dense":
            conns.append(Dense(weights=w))
        elif kind == "conv":
            conns.append(Conv(kernel=w, stride=int(entry["stride"])))
        else:
            raise ContainerError(f"unknown connection kind {kind!r} in container")
    if offset != len(data):
        raise ContainerError("container has trailing bytes after weight payload")
    return NetworkSpec(layers, tuple(conns))


def save(spec: NetworkSpec, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(spec))


def load(path) -> NetworkSpec:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def _shape_text(shape: tuple) -> str:
    return "x".join(str(n) for n in shape) if len(shape) > 1 else str(shape[0])


def describe(spec: NetworkSpec) -> str:
    """Config-format text describing the structure (weights not included)."""
    lines: list[str] = []
    for i, lay in enumerate(spec.layers, start=1):
        lines.append(f"[layer.{i}]")
        lines.append(f"name = {lay.name}")
        lines.append(f"shape = {_shape_text(lay.shape)}")
        lines.append(f"lagrangian = {lay.lagrangian.kind}")
        for key, val in lay.lagrangian.params().items():
            lines.append(f"{key} = {val}")
        lines.append(f"tau = {lay.tau}")
        lines.append("")
    for i, conn in enumerate(spec.connections, start=1):
        lines.append(f"[connection.{i}]")
        lines.append(f"kind = {conn.kind}")
        if isinstance(conn, Conv):
            lines.append(f"window = {conn.window}")
            lines.append(f"stride = {conn.stride}")
        elif isinstance(conn, AvgPool):
            lines.append(f"window = {conn.window}")
        else:
            lines.append("init = zeros")
        lines.append("")
    return "\n".join(lines)
