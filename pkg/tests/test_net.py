import numpy as np
import pytest

from aqr.net import (IDENTITY, TANH, Activation, HookCapture, LayerPolicy, LayerSpec, Network, build_mlp,
                     build_one_hidden_mlp, channel_samples, forward, leaky_relu, select_hooks)


def x_batch(n, d, seed=0):
    return np.random.default_rng(seed).normal(size=(n, d))


class TestActivation:
    def test_leaky_relu_values(self):
        np.testing.assert_array_equal(leaky_relu(0.1)([-2.0, 0.0, 3.0]), [-0.2, 0.0, 3.0])

    def test_inverse(self):
        a = np.linspace(-3, 3, 61)
        for act in (IDENTITY, TANH, leaky_relu(0.1)):
            np.testing.assert_allclose(act.inverse(act(a)), a, atol=1e-12)

    def test_parse(self):
        assert Activation.parse("Leaky-ReLU", 0.2) == leaky_relu(0.2)
        assert Activation.parse("tanh") == TANH

    @pytest.mark.parametrize("slope", [0.0, -0.1])
    def test_slope_must_be_positive(self, slope):
        with pytest.raises(ValueError):
            leaky_relu(slope)

    def test_unknown(self):
        with pytest.raises(ValueError):
            Activation("relu6")


class TestBuild:
    def test_one_by_one_identity_is_affine(self):
        net = build_one_hidden_mlp(1, 1, IDENTITY, rng_seed=4)
        w, b = net.layers[0].weights[0, 0], net.layers[0].bias[0]
        v = net.layers[1].weights[0, 0]
        x = np.linspace(-2, 2, 9)[:, None]
        out, _ = forward(net, x)
        np.testing.assert_allclose(out[:, 0], v * (w * x[:, 0] + b), atol=1e-14)

    def test_capture_width(self):
        net = build_one_hidden_mlp(3, 8, leaky_relu(), rng_seed=0)
        _, caps = forward(net, x_batch(5, 3))
        assert len(caps) == 1 and caps[0].channels == 8 and caps[0].hook_id == "hidden0"

    def test_same_seed_same_weights(self):
        a = build_one_hidden_mlp(3, 8, leaky_relu(), rng_seed=11)
        b = build_one_hidden_mlp(3, 8, leaky_relu(), rng_seed=11)
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.weights, lb.weights) and np.array_equal(la.bias, lb.bias)

    def test_weights_read_only(self):
        net = build_one_hidden_mlp(2, 2, IDENTITY, rng_seed=0)
        with pytest.raises(ValueError):
            net.layers[0].weights[0, 0] = 1.0

    @pytest.mark.parametrize("d,m", [(0, 3), (3, 0)])
    def test_invalid_dims(self, d, m):
        with pytest.raises(ValueError):
            build_one_hidden_mlp(d, m, IDENTITY, rng_seed=0)

    def test_network_validation(self):
        l1 = LayerSpec(np.ones((2, 3)), np.zeros(2), IDENTITY, "h")
        with pytest.raises(ValueError):
            Network((l1,), 3)
        with pytest.raises(ValueError):
            Network((l1, LayerSpec(np.ones((1, 4)), np.zeros(1))), 3)
        with pytest.raises(ValueError):
            Network((l1, LayerSpec(np.ones((2, 2)), np.zeros(2), IDENTITY, "h"),
                     LayerSpec(np.ones((1, 2)), np.zeros(1))), 3)
        with pytest.raises(ValueError):
            LayerSpec(np.ones((2, 3)), np.zeros(3))

    def test_deep_hook_order(self):
        net = build_mlp(2, [4, 5, 3], TANH, rng_seed=1)
        assert net.hook_ids == ("hidden0", "hidden1", "hidden2")
        assert net.layer("hidden1").out_dim == 5
        with pytest.raises(KeyError):
            net.layer("hidden9")


class TestForward:
    def test_identity_interceptors(self):
        net = build_mlp(3, [6, 4], leaky_relu(), rng_seed=2)
        x = x_batch(50, 3)
        plain, _ = forward(net, x)
        same, _ = forward(net, x, {h: (lambda a: a) for h in net.hook_ids})
        assert np.array_equal(plain, same)
        assert np.array_equal(plain, forward(net, x, {})[0])

    def test_zero_interceptor_gives_readout_bias(self):
        net = build_one_hidden_mlp(3, 5, IDENTITY, rng_seed=3)
        out, _ = forward(net, x_batch(20, 3), {"hidden0": np.zeros_like})
        np.testing.assert_array_equal(out, np.full((20, 1), net.layers[-1].bias[0]))

    def test_unknown_hook(self):
        net = build_one_hidden_mlp(3, 5, IDENTITY, rng_seed=3)
        with pytest.raises(KeyError):
            forward(net, x_batch(2, 3), {"nope": lambda a: a})

    def test_shape_checks(self):
        net = build_one_hidden_mlp(3, 5, IDENTITY, rng_seed=3)
        with pytest.raises(ValueError):
            forward(net, x_batch(2, 4))
        with pytest.raises(ValueError):
            forward(net, x_batch(2, 3), {"hidden0": lambda a: a[:1]})

    def test_capture_records_pre_and_replaced(self):
        net = build_one_hidden_mlp(3, 5, IDENTITY, rng_seed=3)
        x = x_batch(7, 3)
        _, caps = forward(net, x, {"hidden0": lambda a: 2 * a})
        np.testing.assert_array_equal(caps[0].intercepted, 2 * caps[0].pre_activations)
        assert not caps[0].pre_activations.flags.writeable

    def test_deterministic(self):
        net = build_mlp(3, [6, 4], TANH, rng_seed=5)
        x = x_batch(30, 3)
        f = {"hidden0": lambda a: a ** 3}
        assert np.array_equal(forward(net, x, f)[0], forward(net, x, f)[0])


class TestChannelSamples:
    def test_single_row(self):
        net = build_one_hidden_mlp(3, 4, IDENTITY, rng_seed=0)
        _, caps = forward(net, x_batch(1, 3))
        assert channel_samples(caps[0], 2).shape == (1,)

    def test_column_extraction(self):
        cap = HookCapture("h", np.array([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(channel_samples(cap, 1), [2.0, 4.0])

    def test_pooling(self):
        net = build_one_hidden_mlp(3, 4, IDENTITY, rng_seed=0)
        caps = [forward(net, x_batch(128, 3, s))[1][0] for s in (1, 2)]
        assert channel_samples(caps, 0).shape == (256,)

    def test_out_of_range(self):
        cap = HookCapture("h", np.zeros((3, 2)))
        with pytest.raises(IndexError):
            channel_samples(cap, 2)
        with pytest.raises(ValueError):
            channel_samples([], 0)


class TestSelectHooks:
    @pytest.mark.parametrize("depth,want", [(1, ("hidden0",)), (4, ("hidden2", "hidden3")),
                                            (5, ("hidden2", "hidden3", "hidden4"))])
    def test_top_half(self, depth, want):
        net = build_mlp(2, [3] * depth, IDENTITY, rng_seed=0)
        assert select_hooks(net, LayerPolicy.TOP_HALF) == want

    def test_all(self):
        net = build_mlp(2, [3] * 3, IDENTITY, rng_seed=0)
        assert select_hooks(net, "all") == net.hook_ids

    def test_parse(self):
        assert LayerPolicy.parse("top_half") is LayerPolicy.TOP_HALF
        with pytest.raises(ValueError):
            LayerPolicy.parse("bottom")
