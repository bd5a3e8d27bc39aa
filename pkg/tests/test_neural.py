import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from armtune import neural as nn
from armtune.errors import NumericError, UsageError
from gradcheck import max_relative_error, numeric_gradient

small = st.floats(-3, 3, allow_nan=False)


def vec(n):
    return arrays(np.float64, n, elements=small)


class TestTensorOps:
    def test_mean_gradient_uniform(self):
        w = nn.parameter(np.arange(6.0).reshape(2, 3))
        nn.backprop(nn.mean(w))
        np.testing.assert_allclose(w.grad, np.full((2, 3), 1 / 6))

    def test_clip_gradient_zero_outside(self):
        w = nn.parameter(np.array([0.5, 1.5, 1.0]))
        nn.backprop(nn.sum_(nn.clip(w, 0.8, 1.2)))
        np.testing.assert_array_equal(w.grad, [0.0, 0.0, 1.0])

    def test_minimum_routes_gradient_to_smaller(self):
        a, b = nn.parameter(np.array([1.0, 5.0, 2.0])), nn.parameter(np.array([3.0, 4.0, 2.0]))
        nn.backprop(nn.sum_(nn.minimum(a, b)))
        np.testing.assert_array_equal(a.grad, [1, 0, 1])
        np.testing.assert_array_equal(b.grad, [0, 1, 0])

    def test_relu_subgradient_zero_at_kink(self):
        x = nn.parameter(np.array([-1.0, 0.0, 2.0]))
        nn.backprop(nn.sum_(nn.relu(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_minimum_tie_goes_to_first(self):
        a, b = nn.parameter(np.array([1.0])), nn.parameter(np.array([1.0]))
        nn.backprop(nn.sum_(nn.minimum(a, b)))
        assert (a.grad[0], b.grad[0]) == (1.0, 0.0)

    def test_clip_boundary_counts_as_inside(self):
        w = nn.parameter(np.array([0.8, 1.2]))
        nn.backprop(nn.sum_(nn.clip(w, 0.8, 1.2)))
        np.testing.assert_array_equal(w.grad, [1.0, 1.0])

    @given(arrays(np.float64, 4, elements=st.floats(-30, 30)))
    def test_sech2_matches_tanh_identity(self, x):
        np.testing.assert_allclose(nn.sech2(nn.Tensor(x)).value, 1 - np.tanh(x) ** 2, atol=1e-15)
        leaf = nn.parameter(x.copy())
        nn.backprop(nn.sum_(nn.sech2(leaf)))
        np.testing.assert_allclose(leaf.grad, -2 * np.tanh(x) * (1 - np.tanh(x) ** 2), atol=1e-15)

    def test_sech2_accurate_when_saturated(self):
        # 1 - tanh(20)**2 rounds to 0 in double precision, sech^2 does not
        assert nn.sech2(nn.Tensor(np.array([20.0]))).value[0] == pytest.approx(4 * np.exp(-40), rel=1e-12)

    def test_shared_node_accumulates(self):
        x = nn.parameter(np.array([2.0]))
        y = x * x + x  # dy/dx = 2x + 1
        nn.backprop(nn.sum_(y))
        assert x.grad[0] == 5.0

    def test_broadcast_add_unbroadcasts(self):
        b = nn.parameter(np.zeros(3))
        nn.backprop(nn.sum_(np.ones((4, 3)) + b))
        np.testing.assert_array_equal(b.grad, [4, 4, 4])

    def test_ndarray_on_left(self):
        b = nn.parameter(np.ones(2))
        nn.backprop(nn.sum_(np.array([3.0, 1.0]) - b))
        np.testing.assert_array_equal(b.grad, [-1, -1])

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(UsageError):
            nn.backprop(nn.parameter(np.ones(3)))

    def test_deep_chain_no_recursion_limit(self):
        x = nn.parameter(np.array([1.0]))
        h = x
        for _ in range(5000):
            h = h + 0.0
        nn.backprop(nn.sum_(h))
        assert x.grad[0] == 1.0

    @given(vec(5))
    def test_elementwise_ops_match_finite_differences(self, x):
        x = x.copy()

        def f():
            t = nn.Tensor(x)
            return float(nn.sum_(nn.tanh(t) * nn.exp(0.3 * t) + nn.square(t) + nn.log(nn.exp(t) + 1.0)).value)

        leaf = nn.parameter(x)
        loss = nn.sum_(nn.tanh(leaf) * nn.exp(0.3 * leaf) + nn.square(leaf) + nn.log(nn.exp(leaf) + 1.0))
        nn.backprop(loss)
        assert max_relative_error(leaf.grad, numeric_gradient(f, x)) <= 1e-6


class TestMlp:
    def test_zero_params_zero_output(self):
        spec = nn.MlpSpec(4, (8,), 3)
        out = nn.mlp_forward(nn.MlpParams.zeros(spec), spec, np.ones(4))
        np.testing.assert_array_equal(out, np.zeros(3))

    def test_identity_layer_gives_tanh(self):
        spec = nn.MlpSpec(3, (3,), 3)
        params = nn.MlpParams.zeros(spec)
        (w1, _), (w2, _) = params.layers()
        w1[...] = np.eye(3)
        w2[...] = np.eye(3)
        x = np.array([0.2, -1.0, 3.0])
        np.testing.assert_allclose(nn.mlp_forward(params, spec, x), np.tanh(x))

    def test_pure(self, rng):
        spec = nn.MlpSpec(13, (16, 16), 7)
        params = nn.init_mlp(spec, rng)
        x = rng.standard_normal(13)
        assert np.array_equal(nn.mlp_forward(params, spec, x), nn.mlp_forward(params, spec, x))

    def test_module_matches_plain_forward(self, rng):
        spec = nn.MlpSpec(5, (6, 4), 2, "relu")
        params = nn.init_mlp(spec, rng)
        x = rng.standard_normal((3, 5))
        np.testing.assert_allclose(nn.Module(params, spec)(x).value, nn.mlp_forward(params, spec, x), atol=1e-14)

    def test_wrong_input_width(self, rng):
        spec = nn.MlpSpec(5, (6,), 2)
        with pytest.raises(UsageError):
            nn.mlp_forward(nn.init_mlp(spec, rng), spec, np.ones(4))

    def test_orthogonal_columns(self, rng):
        w = nn.orthogonal(rng, (64, 16), gain=2.0)
        np.testing.assert_allclose(w.T @ w, 4.0 * np.eye(16), atol=1e-12)

    @pytest.mark.parametrize("activation", ["tanh", "relu"])
    def test_sum_of_outputs_gradient(self, activation):
        gen = np.random.default_rng(0 if activation == "tanh" else 1)
        spec = nn.MlpSpec(13, (64, 64), 7, activation)
        params = nn.init_mlp(spec, gen, head_gain=1.0)
        params.flat += 0.05 * gen.standard_normal(params.flat.size)
        x = gen.standard_normal((4, 13))
        mod = nn.Module(params, spec)
        nn.backprop(nn.sum_(mod(x)))
        numeric = numeric_gradient(lambda: float(nn.mlp_forward(params, spec, x).sum()), params.flat)
        assert max_relative_error(mod.grad(), numeric) <= 1e-4

    @given(st.lists(st.integers(1, 9), min_size=1, max_size=3), st.integers(1, 9), st.integers(1, 9))
    def test_layout_covers_flat_exactly(self, hidden, n_in, n_out):
        spec = nn.MlpSpec(n_in, tuple(hidden), n_out)
        params = nn.MlpParams.zeros(spec)
        covered = np.zeros(params.flat.size, dtype=int)
        for w_off, w_shape, b_off, b_shape in params.layout:
            covered[w_off : w_off + w_shape[0] * w_shape[1]] += 1
            covered[b_off : b_off + b_shape[0]] += 1
        assert np.all(covered == 1)


class TestAdam:
    def test_first_step_hand_value(self):
        flat = np.zeros(1)
        nn.adam_step(flat, np.ones(1), nn.AdamState.like(flat), 0.1)
        # m_hat = 1, v_hat = 1 -> -0.1 / (1 + 1e-8)
        assert abs(flat[0] - (-0.1 / (1 + 1e-8))) <= 1e-15

    def test_zero_gradient(self):
        flat = np.array([1.0, -2.0])
        state = nn.AdamState(np.array([0.5, 0.5]), np.array([0.25, 0.25]), step_count=3)
        before = flat.copy()
        nn.adam_step(flat, np.zeros(2), state, 0.01)
        assert state.step_count == 4
        np.testing.assert_allclose(state.first_moment, 0.45)
        np.testing.assert_allclose(state.second_moment, 0.25 * 0.999)
        assert np.all(np.abs(flat - before) > 0)  # moments still move the params
        flat2 = np.array([1.0, -2.0])
        fresh = nn.AdamState.like(flat2)
        nn.adam_step(flat2, np.zeros(2), fresh, 0.01)
        np.testing.assert_array_equal(flat2, [1.0, -2.0])

    def test_deterministic(self, rng):
        g = rng.standard_normal(5)
        a, b = np.ones(5), np.ones(5)
        nn.adam_step(a, g, nn.AdamState.like(a), 0.01)
        nn.adam_step(b, g, nn.AdamState.like(b), 0.01)
        assert np.array_equal(a, b)

    def test_nan_gradient_names_index(self):
        flat = np.zeros(4)
        with pytest.raises(NumericError, match="index 2"):
            nn.adam_step(flat, np.array([0, 0, np.nan, 0]), nn.AdamState.like(flat), 0.1)

    @given(vec(6), st.floats(1e-5, 1e-1))
    def test_step_bounded_by_learning_rate(self, g, lr):
        flat = np.zeros(6)
        nn.adam_step(flat, g, nn.AdamState.like(flat), lr)
        assert np.all(np.abs(flat) <= lr * (1 + 1e-9))


class TestClipGradNorm:
    def test_scales_jointly(self):
        g = [np.array([3.0]), np.array([4.0])]
        assert nn.clip_grad_norm(g, 1.0) == 5.0
        assert abs(math.hypot(g[0][0], g[1][0]) - 1.0) < 1e-6

    @given(vec(4), st.floats(0.1, 10))
    def test_never_exceeds(self, x, max_norm):
        g = [x.copy()]
        nn.clip_grad_norm(g, max_norm)
        assert np.linalg.norm(g[0]) <= max_norm + 1e-9


class TestGaussians:
    def test_standard_normal_mode(self):
        assert abs(nn.diag_gaussian_log_prob([0.0], [0.0], [0.0]) - (-0.9189385332046727)) < 1e-12

    @given(vec(4), vec(4))
    def test_at_mean(self, mean, log_std):
        expected = -log_std.sum() - 2 * math.log(2 * math.pi)
        assert abs(nn.diag_gaussian_log_prob(mean, log_std, mean) - expected) <= 1e-10

    def test_matches_density_formula(self, rng):
        for _ in range(50):
            m, s, a = rng.standard_normal(3), rng.uniform(-1, 1, 3), rng.standard_normal(3)
            sig = np.exp(s)
            dens = np.prod(np.exp(-0.5 * ((a - m) / sig) ** 2) / (sig * math.sqrt(2 * math.pi)))
            assert abs(nn.diag_gaussian_log_prob(m, s, a) - math.log(dens)) <= 1e-12

    def test_squashed_vanishing_noise(self):
        mean = np.array([0.3, -0.7])
        acts = [nn.squashed_sample_and_log_prob(mean, np.full(2, -20.0), np.random.default_rng(s))[0] for s in range(5)]
        for a in acts:
            np.testing.assert_allclose(a, np.tanh(mean), atol=1e-8)

    def test_squashed_density_integrates_to_one(self):
        # 1-D: integrate exp(log_prob(a)) over a in (-1, 1) via the change of variables
        mean, log_std = np.array([0.4]), np.array([-0.5])
        u = np.linspace(-8, 8, 200_001)
        pre = mean[0] + np.exp(log_std[0]) * u
        a = np.tanh(pre)
        logp = np.array([nn.squashed_sample_and_log_prob(mean, log_std, noise=np.array([z]))[1] for z in u[::100]])
        dens = np.exp(logp)
        total = np.trapezoid(dens, a[::100])
        assert abs(total - 1.0) < 2e-3

    def test_graph_version_agrees(self, rng):
        mean, log_std, z = rng.standard_normal((4, 3)), rng.uniform(-2, 1, (4, 3)), rng.standard_normal((4, 3))
        a, lp = nn.squashed_sample_and_log_prob(mean, log_std, noise=z)
        at, lpt = nn.squashed_sample_and_log_prob_t(nn.Tensor(mean), nn.Tensor(log_std), z)
        np.testing.assert_allclose(at.value, a, atol=1e-14)
        np.testing.assert_allclose(lpt.value, lp, atol=1e-12)
