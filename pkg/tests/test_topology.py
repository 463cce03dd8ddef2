"""Shape arithmetic, message operators, adjointness, and validation."""

import numpy as np
import pytest

from hamnet import (
    AvgPool,
    ChannelLogSumExp,
    Conv,
    Dense,
    LayerSpec,
    LogSumExp,
    NetworkSpec,
    Quadratic,
    ShapeMismatchError,
    backward_message,
    build_assembly_demo,
    feature_map_extent,
    forward_message,
    store_single_hidden,
)

from helpers import random_network, two_hidden_dense


def brute_force_extent(length, window, stride):
    return len([i for i in range(0, length - window + 1, stride)])


class TestFeatureMapExtent:
    def test_reference_cases(self):
        assert feature_map_extent(8, 3, 1) == 6
        assert feature_map_extent(28, 4, 2) == 13

    def test_window_equals_image(self):
        for n in (1, 3, 9):
            for s in (1, 2, 5):
                assert feature_map_extent(n, n, s) == 1

    def test_matches_window_enumeration(self):
        for length in range(1, 20):
            for window in range(1, length + 1):
                for stride in range(1, length + 1):
                    assert feature_map_extent(length, window, stride) == brute_force_extent(
                        length, window, stride
                    )

    def test_window_larger_than_image(self):
        with pytest.raises(ValueError):
            feature_map_extent(4, 5, 1)

    def test_bad_stride(self):
        with pytest.raises(ValueError):
            feature_map_extent(4, 2, 0)


class TestMessages:
    def test_dense_forward(self):
        conn = Dense(weights=np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(forward_message(conn, [1.0, 1.0]), [3.0, 7.0])

    def test_dense_backward_row_extraction(self):
        conn = Dense(weights=np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(backward_message(conn, [1.0, 0.0]), [1.0, 2.0])

    def test_conv_all_ones(self):
        conn = Conv(kernel=np.ones((2, 2, 1, 1)), stride=1)
        out = forward_message(conn, np.ones((2, 2, 1)))
        assert out.shape == (1, 1, 1)
        np.testing.assert_allclose(out[0, 0, 0], 4.0)

    def test_conv_transpose_single_site(self):
        conn = Conv(kernel=np.ones((2, 2, 1, 1)), stride=1)
        out = backward_message(conn, np.ones((1, 1, 1)))
        np.testing.assert_array_equal(out, np.ones((2, 2, 1)))

    def test_conv_known_values(self):
        # hand cross-correlation, stride 2, on a 4x4 ramp
        x = np.arange(16.0).reshape(4, 4, 1)
        k = np.zeros((2, 2, 1, 1))
        k[:, :, 0, 0] = [[1.0, 0.0], [0.0, -1.0]]
        out = forward_message(Conv(kernel=k, stride=2), x)
        expected = np.array([[0 - 5, 2 - 7], [8 - 13, 10 - 15]], dtype=float)
        np.testing.assert_array_equal(out[:, :, 0], expected)

    def test_avgpool_constant(self):
        conn = AvgPool(window=2)
        out = forward_message(conn, np.full((2, 2, 3), 1.25))
        np.testing.assert_allclose(out, 1.25)

    def test_avgpool_backward_spread(self):
        conn = AvgPool(window=2)
        out = backward_message(conn, np.full((1, 1, 1), 4.0))
        np.testing.assert_array_equal(out, np.ones((2, 2, 1)))

    def test_dense_bridges_map_to_flat(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(5, 2 * 2 * 3))
        conn = Dense(weights=w)
        g = rng.normal(size=(2, 2, 3))
        np.testing.assert_allclose(forward_message(conn, g), w @ g.ravel())
        back = backward_message(conn, np.ones(5), out_shape=(2, 2, 3))
        assert back.shape == (2, 2, 3)

    def test_shape_errors_are_structured(self):
        conn = Dense(weights=np.ones((2, 3)))
        with pytest.raises(ShapeMismatchError):
            forward_message(conn, np.ones(4))
        with pytest.raises(ShapeMismatchError):
            backward_message(conn, np.ones(3))


class TestAdjointIdentity:
    def pairing(self, conn, below_shape, above_shape, rng):
        u = rng.normal(size=below_shape)
        v = rng.normal(size=above_shape)
        lhs = np.vdot(forward_message(conn, u), v)
        rhs = np.vdot(u, backward_message(conn, v, out_shape=below_shape))
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1e-300)

    def test_dense(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n, m = rng.integers(1, 9, size=2)
            conn = Dense(weights=rng.normal(size=(m, n)))
            self.pairing(conn, (int(n),), (int(m),), rng)

    def test_conv(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            h = int(rng.integers(3, 9))
            w = int(rng.choice([2, 3]))
            s = int(rng.choice([1, 2]))
            ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            ext = feature_map_extent(h, w, s)
            conn = Conv(kernel=rng.normal(size=(w, w, ci, co)), stride=s)
            self.pairing(conn, (h, h, ci), (ext, ext, co), rng)

    def test_avgpool(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            h = int(rng.integers(2, 9))
            p = int(rng.integers(1, h + 1))
            c = int(rng.integers(1, 4))
            ext = feature_map_extent(h, p, p)
            self.pairing(AvgPool(window=p), (h, h, c), (ext, ext, c), rng)


def tiny_conv_net(upper_side=6):
    layers = (
        LayerSpec("img", (8, 8, 1), Quadratic(), 1.0),
        LayerSpec("feat", (upper_side, upper_side, 2), ChannelLogSumExp(1.0), 0.5),
    )
    return NetworkSpec(layers, (Conv(kernel=np.zeros((3, 3, 1, 2)), stride=1),))


class TestValidate:
    def test_dense_chain_ok(self):
        layers = (
            LayerSpec("a", (4,), Quadratic(), 1.0),
            LayerSpec("b", (3,), LogSumExp(1.0), 1.0),
            LayerSpec("c", (2,), LogSumExp(1.0), 1.0),
        )
        conns = (Dense(np.zeros((3, 4))), Dense(np.zeros((2, 3))))
        assert NetworkSpec(layers, conns).validate() == []

    def test_conv_extent_violation_cites_expected(self):
        bad = tiny_conv_net(upper_side=7)
        problems = bad.validate()
        assert len(problems) == 1 and "expected (6, 6, 2)" in problems[0]

    def test_missing_connection(self):
        layers = (
            LayerSpec("a", (4,), Quadratic(), 1.0),
            LayerSpec("b", (3,), Quadratic(), 1.0),
            LayerSpec("c", (2,), Quadratic(), 1.0),
        )
        problems = NetworkSpec(layers, (Dense(np.zeros((3, 4))),)).validate()
        assert any("missing connection 2->3" in p for p in problems)

    def test_reference_architectures_accepted(self):
        single = store_single_hidden(np.eye(3, 8) * 2.0 - 1.0, beta=2.0)
        assert single.validate() == []
        assert two_hidden_dense().validate() == []
        demo, _ = build_assembly_demo()
        assert demo.validate() == []

    def test_single_field_corruptions_rejected(self):
        import dataclasses

        good = two_hidden_dense()
        # wrong dense weight shape
        bad = good.with_connection_weights([np.zeros((5, 6)), None])
        assert bad.validate()
        # tau = 0 below the top
        layers = list(good.layers)
        layers[0] = dataclasses.replace(layers[0], tau=0.0)
        assert NetworkSpec(tuple(layers), good.connections).validate()
        # negative tau
        layers = list(good.layers)
        layers[1] = dataclasses.replace(layers[1], tau=-1.0)
        assert NetworkSpec(tuple(layers), good.connections).validate()
        # channel softmax on a flat layer
        layers = list(good.layers)
        layers[1] = dataclasses.replace(layers[1], lagrangian=ChannelLogSumExp(1.0))
        assert NetworkSpec(tuple(layers), good.connections).validate()

        demo, _ = build_assembly_demo()
        # wrong kernel channel count
        bad_kernel = np.zeros((4, 4, 2, 2))
        conns = (Conv(kernel=bad_kernel, stride=4), demo.connections[1])
        assert NetworkSpec(demo.layers, conns).validate()
        # wrong stride breaks the extent chain
        conns = (Conv(kernel=demo.connections[0].kernel, stride=2), demo.connections[1])
        assert NetworkSpec(demo.layers, conns).validate()
        # conv endpoints must be maps
        layers = list(demo.layers)
        layers[1] = dataclasses.replace(layers[1], shape=(8,), lagrangian=LogSumExp(1.0))
        assert NetworkSpec(tuple(layers), demo.connections).validate()

    def test_empty_or_zero_layers(self):
        assert NetworkSpec(()).validate() == ["network has no layers"]
        lay = LayerSpec("z", (0,), Quadratic(), 1.0)
        assert NetworkSpec((lay,)).validate()

    def test_extra_connection_flagged(self):
        layers = (
            LayerSpec("a", (2,), Quadratic(), 1.0),
            LayerSpec("b", (2,), Quadratic(), 1.0),
        )
        conns = (Dense(np.zeros((2, 2))), Dense(np.zeros((2, 2))))
        problems = NetworkSpec(layers, conns).validate()
        assert any("extra connection" in p for p in problems)

    def test_random_networks_validate(self):
        rng = np.random.default_rng(99)
        for _ in range(30):
            assert random_network(rng).validate() == []
