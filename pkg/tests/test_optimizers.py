"""Loss, penalty, and update-rule contracts, including the frozen Adam trace."""

import math

import numpy as np
import pytest

from hydrolstm.errors import DataError
from hydrolstm.network import init_params, network_backward, network_forward
from hydrolstm.optimizers import (
    AdamState,
    adam_step,
    clip_gradients,
    l2_penalty,
    mse_loss,
    sgd_weight_decay_step,
)


class ScalarParams:
    """Minimal .arrays() carrier for exercising optimizers on one scalar."""

    def __init__(self, w):
        self.w = np.array([float(w)])

    def arrays(self):
        yield "w", self.w


class TestMseLoss:
    def test_perfect_fit(self):
        assert mse_loss([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_simple_average(self):
        assert mse_loss([1.0, 1.0], [0.0, 2.0]) == 1.0

    def test_hand_sum(self):
        # (0.25 + 0.25 + 1.0) / 3
        assert mse_loss([0.5, 1.5, 3.0], [0.0, 1.0, 2.0]) == pytest.approx(0.5, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            mse_loss([1.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(DataError):
            mse_loss([], [])


class TestL2Penalty:
    def test_zero_lambda(self):
        assert l2_penalty([np.array([3.0, 4.0])], 0.0) == 0.0

    def test_single_parameter_paper_coefficient(self):
        # lam/2 * w^2 with w=2, lam=1e-6
        assert l2_penalty([np.array([2.0])], 1e-6) == pytest.approx(2e-6, abs=1e-20)

    def test_three_parameters(self):
        assert l2_penalty([np.array([1.0, 2.0, 2.0])], 1.0) == pytest.approx(4.5, abs=1e-15)

    def test_network_params_object(self):
        net = init_params(3, d=2, p=3)
        total = sum(float(a.ravel() @ a.ravel()) for _, a in net.arrays())
        assert l2_penalty(net, 2.0) == pytest.approx(total, rel=1e-15)

    def test_permutation_invariance_and_quadratic_scaling(self):
        rng = np.random.default_rng(8)
        w = rng.standard_normal(40)
        base = l2_penalty([w], 0.7)
        assert l2_penalty([rng.permutation(w)], 0.7) == pytest.approx(base, rel=1e-12)
        assert l2_penalty([2.0 * w], 0.7) == pytest.approx(4.0 * base, rel=1e-12)

    def test_negative_lambda_rejected(self):
        with pytest.raises(DataError):
            l2_penalty([np.ones(2)], -1.0)


# Three-step Adam hand trace, derived scalar-by-scalar from the update
# equations before the implementation existed (alpha=0.1, beta1=0.9,
# beta2=0.999, eps=1e-8, w0=1, gradients 1.0, -0.5, 0.25):
#   t=1: m=0.1    v=0.001          mhat=1.0  vhat=1.0  w=0.900000001
#   t=2: m=0.04   v=0.00124975               ...       w=0.8733662973709032
#   t=3: m=0.061  v=0.00131100025            ...       w=0.8393233830648466
ADAM_TRACE_GRADS = [1.0, -0.5, 0.25]
ADAM_TRACE_EXPECTED = [0.900000001, 0.8733662973709032, 0.8393233830648466]


def rederive_adam_trace():
    """Scalar re-derivation with explicit arithmetic, independent of adam_step."""
    alpha, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    w, m, v = 1.0, 0.0, 0.0
    out = []
    for t, g in enumerate(ADAM_TRACE_GRADS, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w = w - alpha * mhat / (math.sqrt(vhat) + eps)
        out.append(w)
    return out


class TestAdam:
    def test_trace_rederivation_matches_frozen_values(self):
        for got, want in zip(rederive_adam_trace(), ADAM_TRACE_EXPECTED):
            assert got == pytest.approx(want, abs=1e-15)

    def test_three_step_hand_trace(self):
        params = ScalarParams(1.0)
        state = AdamState(alpha=0.1)
        for g, want in zip(ADAM_TRACE_GRADS, ADAM_TRACE_EXPECTED):
            grads = ScalarParams(g)
            adam_step(state, params, grads)
            assert params.w[0] == pytest.approx(want, abs=1e-12)
        assert state.t == 3

    def test_first_step_magnitude(self):
        # bias correction makes step one equal alpha*g/(|g| + eps') regardless of g scale
        for g in (1.0, 1e-3, 50.0):
            params = ScalarParams(1.0)
            adam_step(AdamState(alpha=0.1), params, ScalarParams(g))
            assert params.w[0] == pytest.approx(1.0 - 0.1 * np.sign(g), abs=1e-5)

    def test_zero_gradient_is_noop(self):
        rng = np.random.default_rng(0)
        net = init_params(5, d=2, p=3)
        before = {name: a.copy() for name, a in net.arrays()}
        state = AdamState()
        zero = init_params(5, d=2, p=3)
        for _, a in zero.arrays():
            a[...] = 0.0
        for _ in range(7):
            adam_step(state, net, zero)
        for name, a in net.arrays():
            np.testing.assert_array_equal(a, before[name])

    def test_identical_runs_identical_trajectories(self):
        def run():
            rng = np.random.default_rng(11)
            params = ScalarParams(0.3)
            state = AdamState(alpha=0.01)
            for _ in range(50):
                adam_step(state, params, ScalarParams(rng.standard_normal()))
            return params.w[0]

        assert run() == run()

    def test_shape_mismatch(self):
        state = AdamState()

        class Two:
            def arrays(self):
                yield "w", np.ones(2)

        with pytest.raises(DataError):
            adam_step(state, ScalarParams(1.0), Two())


class TestSgdWeightDecay:
    def test_lambda_zero_is_plain_sgd(self):
        params = ScalarParams(2.0)
        sgd_weight_decay_step(params, ScalarParams(0.5), alpha=0.1, lam=0.0)
        assert params.w[0] == pytest.approx(2.0 - 0.1 * 0.5, abs=1e-15)

    def test_pure_decay(self):
        # w=1, g=0, lam=0.1 -> w decays by (1 - lam)
        params = ScalarParams(1.0)
        sgd_weight_decay_step(params, ScalarParams(0.0), alpha=0.1, lam=0.1)
        assert params.w[0] == pytest.approx(0.9, abs=1e-15)

    def test_equivalence_with_l2_folded_gradient(self):
        # plain SGD on g + lam'*w equals weight-decay SGD with lam = alpha*lam'
        alpha, lam_prime = 0.05, 0.3
        w0, g = 1.7, -0.4
        a = ScalarParams(w0)
        sgd_weight_decay_step(a, ScalarParams(g + lam_prime * w0), alpha=alpha, lam=0.0)
        b = ScalarParams(w0)
        sgd_weight_decay_step(b, ScalarParams(g), alpha=alpha, lam=alpha * lam_prime)
        assert a.w[0] == pytest.approx(b.w[0], abs=1e-15)

    def test_bad_hyperparameters(self):
        with pytest.raises(DataError):
            sgd_weight_decay_step(ScalarParams(1.0), ScalarParams(0.0), alpha=0.0, lam=0.0)
        with pytest.raises(DataError):
            sgd_weight_decay_step(ScalarParams(1.0), ScalarParams(0.0), alpha=0.1, lam=1.0)


class TestClip:
    def test_noop_below_threshold(self):
        params = ScalarParams(3.0)
        _, norm = clip_gradients(params, 100.0)
        assert norm == 3.0 and params.w[0] == 3.0

    def test_rescales_to_max_norm(self):
        params = ScalarParams(-8.0)
        clip_gradients(params, 2.0)
        assert params.w[0] == pytest.approx(-2.0, abs=1e-15)


def test_training_smoke_loss_decreases():
    """Fitting a 1-gage sine-burst toy sequence: loss drops over 50 iterations."""
    rng = np.random.default_rng(1)
    T = 200
    x = np.zeros((T, 1))
    x[40:72, 0] = np.sin(np.linspace(0, np.pi, 32))
    y = np.convolve(x[:, 0], np.exp(-np.arange(30) / 8.0))[:T] * 0.4
    net = init_params(2, d=1, p=6)
    state = AdamState(alpha=1e-3)
    losses = []
    for _ in range(50):
        yhat, caches = network_forward(net, x)
        losses.append(mse_loss(yhat, y))
        grads = network_backward(net, x, y, caches, 0.0)
        adam_step(state, net, grads)
    assert losses[-1] < losses[0]
    assert np.mean(losses[-5:]) < np.mean(losses[:5])
