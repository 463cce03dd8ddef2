"""Binary container round trips and structure descriptions."""

import numpy as np
import pytest

from hamnet import build_assembly_demo, describe, load, save, store_single_hidden
from hamnet.serialization import ContainerError, from_bytes, to_bytes

from helpers import random_network, two_hidden_dense


def assert_specs_equal(a, b):
    assert len(a.layers) == len(b.layers)
    for la, lb in zip(a.layers, b.layers):
        assert la.name == lb.name and la.shape == lb.shape and la.tau == lb.tau
        assert la.lagrangian == lb.lagrangian
    assert len(a.connections) == len(b.connections)
    for ca, cb in zip(a.connections, b.connections):
        assert ca.kind == cb.kind
        wa, wb = ca.weight_array(), cb.weight_array()
        if wa is None:
            assert wb is None
        else:
            assert wa.shape == wb.shape
            assert np.array_equal(wa, wb)  # bit-exact


class TestContainer:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        specs = [random_network(rng) for _ in range(8)]
        specs.append(two_hidden_dense())
        specs.append(build_assembly_demo()[0])
        specs.append(store_single_hidden(np.eye(3, 7) * 2 - 1, beta=3.5))
        for i, spec in enumerate(specs):
            path = tmp_path / f"net{i}.hamnet"
            save(spec, path)
            loaded = load(path)
            assert_specs_equal(spec, loaded)
            assert to_bytes(loaded) == path.read_bytes()

    def test_weights_with_non_finite_values_survive(self):
        # the container stores raw doubles; exact bytes matter more than
        # semantic checks here
        spec = two_hidden_dense()
        w = spec.connections[0].weights.copy()
        w[0, 0] = np.nextafter(1.0, 2.0)
        spec = spec.with_connection_weights([w, None])
        assert from_bytes(to_bytes(spec)).connections[0].weights[0, 0] == w[0, 0]

    def test_bad_magic_rejected(self):
        with pytest.raises(ContainerError, match="magic"):
            from_bytes(b"NOTANET!" + b"\x00" * 32)

    def test_truncated_payload_rejected(self):
        data = to_bytes(two_hidden_dense())
        with pytest.raises(ContainerError, match="truncated"):
            from_bytes(data[:-8])

    def test_trailing_bytes_rejected(self):
        data = to_bytes(two_hidden_dense())
        with pytest.raises(ContainerError, match="trailing"):
            from_bytes(data + b"\x00")


class TestDescribe:
    def test_structure_text_round_trips_through_config(self):
        from hamnet.config import parse_network_sections

        for spec in (two_hidden_dense(), build_assembly_demo()[0]):
            text = describe(spec)
            rebuilt = parse_network_sections(text)
            assert [lay.name for lay in rebuilt.layers] == [lay.name for lay in spec.layers]
            assert [lay.shape for lay in rebuilt.layers] == [lay.shape for lay in spec.layers]
            assert [lay.tau for lay in rebuilt.layers] == [lay.tau for lay in spec.layers]
            assert [lay.lagrangian for lay in rebuilt.layers] == [
                lay.lagrangian for lay in spec.layers
            ]
            assert [c.kind for c in rebuilt.connections] == [c.kind for c in spec.connections]
