import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcrl import nn
from qcrl.nn import LayerSpec, MlpParams


def net(layers, theta=None, shared_prefix=0):
    return MlpParams([LayerSpec(*ly) for ly in layers], theta, shared_prefix)


def hand_net():
    p = net([(2, 2, "relu"), (2, 1, "linear")])
    p.weights[0][...] = [[1.0, 2.0], [3.0, -1.0]]
    p.biases[0][...] = [0.5, 0.0]
    p.weights[1][...] = [[1.0], [-2.0]]
    p.biases[1][...] = [0.1]
    return p


class TestLayout:
    def test_views_share_theta(self):
        p = net([(3, 4, "relu"), (4, 2, "tanh")])
        p.weights[1][0, 0] = 5.0
        assert p.theta[p.offsets[1]] == 5.0
        assert p.size == 3 * 4 + 4 + 4 * 2 + 2

    def test_prefix_size(self):
        p = net([(3, 4, "relu"), (4, 4, "relu"), (4, 1, "linear")], shared_prefix=2)
        assert p.prefix_size() == 16 + 20

    def test_width_mismatch(self):
        with pytest.raises(nn.ArchitectureMismatch):
            net([(3, 4, "relu"), (5, 1, "linear")])

    def test_prefix_too_long(self):
        with pytest.raises(ValueError):
            net([(3, 4, "relu")], shared_prefix=2)

    def test_bad_width(self):
        with pytest.raises(ValueError):
            LayerSpec(0, 3)

    def test_theta_shape(self):
        with pytest.raises(nn.ShapeMismatch):
            net([(2, 2, "relu")], theta=np.zeros(5))

    def test_copy_is_deep(self):
        p = hand_net()
        q = p.copy()
        q.theta[0] = 100.0
        assert p.theta[0] == 1.0


class TestInit:
    def test_fan_in_bounds(self):
        p = nn.make_mlp(16, (32,), 4, np.random.default_rng(0))
        assert np.max(np.abs(p.weights[0])) <= 0.25
        assert np.max(np.abs(p.weights[1])) <= 1 / np.sqrt(32)

    def test_final_scale(self):
        p = nn.make_mlp(4, (8,), 1, np.random.default_rng(0), final_scale=1e-3)
        assert np.max(np.abs(p.weights[1])) <= 1e-3 / np.sqrt(8)

    def test_activations(self):
        p = nn.make_mlp(4, (8, 8), 2, np.random.default_rng(0), out_activation="tanh")
        assert [ly.activation for ly in p.layers] == ["relu", "relu", "tanh"]

    def test_deterministic(self):
        a = nn.make_mlp(4, (8, 8), 2, np.random.default_rng(5))
        b = nn.make_mlp(4, (8, 8), 2, np.random.default_rng(5))
        np.testing.assert_array_equal(a.theta, b.theta)


class TestForward:
    def test_identity_linear(self):
        p = net([(3, 3, "linear")])
        p.weights[0][...] = np.eye(3)
        x = np.array([0.3, -2.0, 7.0])
        out, _ = nn.forward(p, x)
        np.testing.assert_array_equal(out, x)

    def test_zero_tanh(self):
        out, _ = nn.forward(net([(3, 2, "tanh")]), np.ones(3))
        np.testing.assert_array_equal(out, [0, 0])

    def test_hand_evaluated(self):
        # relu([1-3+0.5, 2+1]) = [0, 3]; 0*1 + 3*(-2) + 0.1
        out, cache = nn.forward(hand_net(), [1.0, -1.0])
        assert out[0] == pytest.approx(-5.9, abs=1e-12)
        np.testing.assert_allclose(cache.pre[0], [[-1.5, 3.0]])

    def test_batch_matches_rows(self):
        p = nn.make_mlp(3, (5,), 2, np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=(4, 3))
        out, _ = nn.forward(p, x)
        for i in range(4):
            np.testing.assert_allclose(out[i], nn.forward(p, x[i])[0])

    def test_partial_forward(self):
        p = hand_net()
        out, _ = nn.forward(p, [1.0, -1.0], n_layers=1)
        np.testing.assert_allclose(out, [0.0, 3.0])

    def test_shape_mismatch(self):
        with pytest.raises(nn.ShapeMismatch):
            nn.forward(hand_net(), np.ones(3))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3))
    def test_tanh_output_bounded(self, seed, scale):
        rng = np.random.default_rng(seed)
        p = nn.make_mlp(4, (8,), 3, rng, out_activation="tanh")
        out, _ = nn.forward(p, scale * rng.normal(size=4))
        assert np.all(np.abs(out) <= 1.0)


class TestBackward:
    def test_linear_loss_equals_output(self):
        p = net([(3, 1, "linear")])
        x = np.array([1.0, 2.0, -3.0])
        _, cache = nn.forward(p, x)
        g = nn.backward(p, cache, [1.0])
        np.testing.assert_array_equal(g[:3], x)
        assert g[3] == 1.0

    def test_zero_output_gradient(self):
        p = nn.make_mlp(3, (4,), 2, np.random.default_rng(0))
        _, cache = nn.forward(p, np.ones(3))
        np.testing.assert_array_equal(nn.backward(p, cache, np.zeros(2)), np.zeros(p.size))

    def test_shape_mismatch(self):
        p = hand_net()
        _, cache = nn.forward(p, [1.0, -1.0])
        with pytest.raises(nn.ShapeMismatch):
            nn.backward(p, cache, [1.0, 2.0])

    def test_hand_gradient(self):
        p = hand_net()
        _, cache = nn.forward(p, [1.0, -1.0])
        g = nn.backward(p, cache, [1.0])
        # only the second hidden unit is active
        np.testing.assert_allclose(g[p.offsets[1]:], [0.0, 3.0, 1.0])
        np.testing.assert_allclose(g[:4], [0, -2, 0, 2])
        np.testing.assert_allclose(g[4:6], [0, -2])

    def test_random_finite_difference(self):
        rng = np.random.default_rng(7)
        p = nn.make_mlp(4, (6,), 3, rng, hidden_activation="tanh", out_activation="tanh")
        x = rng.normal(size=(2, 4))
        w = rng.normal(size=(2, 3))
        _, cache = nn.forward(p, x)
        g, gx = nn.backprop(p, cache, w)
        ng, ngx = nn.numerical_gradients(p, x, w)
        assert nn.rel_error(g, ng) < 1e-5
        assert nn.rel_error(gx, ngx) < 1e-5

    def test_gradient_check_suite(self):
        res = nn.gradient_check(np.random.default_rng(0), n_checks=50)
        assert res["checks"] == 50
        assert res["passed"], res


class TestInputGradient:
    def test_linear_critic(self):
        p = net([(3, 1, "linear")])
        w = np.array([0.5, -1.5, 2.0])
        p.weights[0][:, 0] = w
        _, cache = nn.forward(p, np.array([9.0, 1.0, 1.0]))
        np.testing.assert_allclose(nn.input_gradient(p, cache, [1.0], start=1), w[1:])
        np.testing.assert_allclose(nn.input_gradient(p, cache, [1.0]), w)

    def test_tanh_saturation(self):
        p = net([(1, 1, "tanh")])
        p.weights[0][...] = 1.0
        _, cache = nn.forward(p, [1e3])
        assert abs(nn.input_gradient(p, cache, [1.0])[0]) <= 1e-6

    def test_critic_action_slice(self):
        rng = np.random.default_rng(3)
        p = nn.make_mlp(5, (7,), 1, rng)
        x = rng.normal(size=5)
        _, cache = nn.forward(p, x)
        ga = nn.input_gradient(p, cache, [1.0], start=3)
        _, ngx = nn.numerical_gradients(p, x, np.ones(1))
        assert nn.rel_error(ga, ngx[3:]) < 1e-5


class TestAdam:
    def test_first_step(self):
        p = net([(1, 1, "linear")], theta=np.zeros(2))
        st_ = nn.AdamState.for_params(p, lr=1e-3)
        nn.adam_step(p, np.array([1.0, 0.0]), st_)
        assert p.theta[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
        assert p.theta[1] == 0.0
        assert st_.t == 1

    def test_zero_gradient(self):
        p = nn.make_mlp(2, (3,), 1, np.random.default_rng(0))
        before = p.theta.copy()
        st_ = nn.AdamState.for_params(p, lr=0.1)
        for _ in range(20):
            nn.adam_step(p, np.zeros(p.size), st_)
        np.testing.assert_array_equal(p.theta, before)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(11)
            p = nn.make_mlp(3, (4,), 1, rng)
            st_ = nn.AdamState.for_params(p, lr=0.01)
            for _ in range(30):
                x = rng.normal(size=(8, 3))
                out, cache = nn.forward(p, x)
                nn.adam_step(p, nn.backward(p, cache, 2 * (out - 1) / 8), st_)
            return p.theta

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch(self):
        p = hand_net()
        with pytest.raises(nn.ShapeMismatch):
            nn.adam_step(p, np.zeros(3), nn.AdamState.for_params(p, lr=0.1))

    def test_regression_converges(self):
        rng = np.random.default_rng(0)
        p = nn.make_mlp(2, (16,), 1, rng)
        st_ = nn.AdamState.for_params(p, lr=1e-2)
        x = rng.uniform(-1, 1, size=(64, 2))
        y = (x[:, :1] - 0.5 * x[:, 1:])
        for _ in range(1500):
            out, cache = nn.forward(p, x)
            nn.adam_step(p, nn.backward(p, cache, 2 * (out - y) / len(x)), st_)
        out, _ = nn.forward(p, x)
        assert np.mean((out - y) ** 2) < 1e-3


class TestSoftUpdate:
    def test_tau_one(self):
        a, b = hand_net(), net([(2, 2, "relu"), (2, 1, "linear")])
        nn.soft_update(b, a, 1.0)
        np.testing.assert_array_equal(b.theta, a.theta)

    def test_tau_zero(self):
        a, b = hand_net(), nn.make_mlp(2, (2,), 1, np.random.default_rng(0))
        before = b.theta.copy()
        nn.soft_update(b, a, 0.0)
        np.testing.assert_array_equal(b.theta, before)

    def test_scalar(self):
        online = net([(1, 1, "linear")], theta=np.array([1.0, 1.0]))
        target = net([(1, 1, "linear")])
        nn.soft_update(target, online, 0.005)
        assert target.theta[0] == pytest.approx(0.005, abs=1e-15)

    def test_architecture_mismatch(self):
        with pytest.raises(nn.ArchitectureMismatch):
            nn.soft_update(hand_net(), net([(2, 3, "relu"), (3, 1, "linear")]), 0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 0.5), st.integers(1, 200), st.integers(0, 2**32 - 1))
    def test_geometric_contraction(self, tau, n, seed):
        rng = np.random.default_rng(seed)
        online = nn.make_mlp(3, (4,), 2, rng)
        target = nn.make_mlp(3, (4,), 2, rng)
        gap0 = target.theta - online.theta
        for _ in range(n):
            nn.soft_update(target, online, tau)
        np.testing.assert_allclose(target.theta - online.theta, (1 - tau) ** n * gap0, atol=1e-12)


class TestSharedMerge:
    def setup_method(self):
        self.p = net([(1, 1, "relu"), (1, 1, "linear")], shared_prefix=1)

    def test_zero_weight(self):
        main = np.array([1.0, 2.0, 3.0, 4.0])
        merged = nn.shared_gradient_merge(self.p, main, np.array([5.0, 6.0]), aux_weight=0.0)
        np.testing.assert_array_equal(merged, main)

    def test_zero_main(self):
        merged = nn.shared_gradient_merge(self.p, np.zeros(4), np.array([0.7, -0.2]))
        np.testing.assert_array_equal(merged, [0.7, -0.2, 0, 0])

    def test_additive(self):
        merged = nn.shared_gradient_merge(self.p, np.array([2.0, 0, 0, 0]), np.array([3.0, 0.0]))
        assert merged[0] == 5.0

    def test_full_length_aux_uses_prefix_only(self):
        merged = nn.shared_gradient_merge(self.p, np.zeros(4), np.ones(4))
        np.testing.assert_array_equal(merged, [1, 1, 0, 0])

    def test_mask(self):
        p = MlpParams(self.p.layers, shared_prefix=1, share_mask=[1.0, 0.0])
        merged = nn.shared_gradient_merge(p, np.zeros(4), np.array([3.0, 3.0]))
        np.testing.assert_array_equal(merged, [3, 0, 0, 0])

    def test_mismatch(self):
        with pytest.raises(nn.ArchitectureMismatch):
            nn.shared_gradient_merge(self.p, np.zeros(4), np.ones(3))
        with pytest.raises(nn.ArchitectureMismatch):
            nn.shared_gradient_merge(self.p, np.zeros(5), np.ones(2))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = nn.make_mlp(3, (4, 4), 2, np.random.default_rng(0), out_activation="tanh", shared_prefix=2)
        st_ = nn.AdamState.for_params(p, lr=3e-4)
        _, cache = nn.forward(p, np.ones(3))
        nn.adam_step(p, nn.backward(p, cache, np.ones(2)), st_)
        path = nn.save_params(tmp_path / "p.npz", p, st_)
        q, st2 = nn.load_params(path)
        np.testing.assert_array_equal(q.theta, p.theta)
        assert q.layers == p.layers and q.shared_prefix == 2
        np.testing.assert_array_equal(st2.m, st_.m)
        np.testing.assert_array_equal(st2.v, st_.v)
        assert st2.t == 1 and st2.lr == 3e-4
