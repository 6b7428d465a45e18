"""Optimizer tests: scalar Adam reference, loss closed forms, gradient checker."""

import numpy as np
import pytest

from raylight.optim import (
    AdamHyper,
    GradCheckReport,
    NonFiniteGradient,
    ParamGroup,
    adam_step,
    grad_check,
    mse_loss,
)


def reference_adam(theta, grads_seq, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar-loop transcription of bias-corrected Adam."""
    theta = list(map(float, theta))
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    for t, g in enumerate(grads_seq, start=1):
        for j in range(len(theta)):
            m[j] = beta1 * m[j] + (1 - beta1) * g[j]
            v[j] = beta2 * v[j] + (1 - beta2) * g[j] ** 2
            mh = m[j] / (1 - beta1**t)
            vh = v[j] / (1 - beta2**t)
            theta[j] -= lr * mh / (vh**0.5 + eps)
    return np.array(theta)


class TestAdamHyper:
    def test_validation(self):
        with pytest.raises(ValueError):
            AdamHyper(lr=0.0)
        with pytest.raises(ValueError):
            AdamHyper(lr=1e-3, beta1=1.0)
        with pytest.raises(ValueError):
            AdamHyper(lr=1e-3, eps=0.0)


class TestParamGroup:
    def test_state_allocated_zeroed(self):
        g = ParamGroup("w", np.ones(5), AdamHyper(lr=1e-2))
        assert g.t == 0
        for arr in (g.grads, g.m, g.v):
            assert arr.shape == (5,)
            assert np.all(arr == 0)

    def test_rejects_non_flat(self):
        with pytest.raises(ValueError):
            ParamGroup("w", np.ones((2, 2)), AdamHyper(lr=1e-2))

    def test_zero_grads(self):
        g = ParamGroup("w", np.ones(3), AdamHyper(lr=1e-2))
        g.grads[:] = 7.0
        g.zero_grads()
        assert np.all(g.grads == 0)


class TestAdamStep:
    def test_matches_scalar_reference(self, rng):
        theta0 = rng.normal(size=6)
        grads_seq = [rng.normal(size=6) for _ in range(25)]
        group = ParamGroup("w", theta0.copy(), AdamHyper(lr=3e-2))
        for g in grads_seq:
            group.grads[:] = g
            adam_step(group)
        want = reference_adam(theta0, grads_seq, lr=3e-2)
        np.testing.assert_allclose(group.values, want, rtol=1e-12, atol=1e-12)
        assert group.t == 25

    def test_first_step_size_is_lr(self):
        # bias correction makes step 1 move by exactly lr * sign(g)
        group = ParamGroup("w", np.zeros(3), AdamHyper(lr=0.1, eps=1e-12))
        group.grads[:] = np.array([4.0, -0.5, 1e3])
        adam_step(group)
        np.testing.assert_allclose(group.values, [-0.1, 0.1, -0.1], rtol=1e-8)

    def test_lr_override(self):
        a = ParamGroup("w", np.zeros(2), AdamHyper(lr=1.0))
        a.grads[:] = 1.0
        adam_step(a, lr=0.25)
        b = ParamGroup("w", np.zeros(2), AdamHyper(lr=0.25))
        b.grads[:] = 1.0
        adam_step(b)
        assert np.array_equal(a.values, b.values)

    def test_grads_cleared_after_step(self):
        g = ParamGroup("w", np.zeros(2), AdamHyper(lr=1e-2))
        g.grads[:] = 1.0
        adam_step(g)
        assert np.all(g.grads == 0)

    def test_nonfinite_gradient_aborts_untouched(self):
        g = ParamGroup("w", np.ones(4), AdamHyper(lr=1e-2))
        g.grads[:] = [1.0, np.nan, 2.0, np.inf]
        before = (g.values.copy(), g.m.copy(), g.v.copy(), g.t)
        with pytest.raises(NonFiniteGradient) as exc:
            adam_step(g)
        assert "index 1" in str(exc.value)
        assert np.array_equal(g.values, before[0])
        assert np.array_equal(g.m, before[1])
        assert np.array_equal(g.v, before[2])
        assert g.t == before[3]

    def test_float32_values_stay_float32(self):
        g = ParamGroup("w", np.zeros(3, dtype=np.float32), AdamHyper(lr=1e-2))
        g.grads = g.grads.astype(np.float32)
        g.grads[:] = 1.0
        adam_step(g)
        assert g.values.dtype == np.float32


class TestMseLoss:
    def test_closed_form(self):
        pred = np.array([[1.0, 2.0], [3.0, 4.0]])
        target = np.zeros((2, 2))
        loss, grad = mse_loss(pred, target)
        assert loss == pytest.approx((1 + 4 + 9 + 16) / 4)
        np.testing.assert_allclose(grad, 2.0 / 4 * pred)

    def test_zero_at_match(self, rng):
        x = rng.normal(size=(5, 3))
        loss, grad = mse_loss(x, x.copy())
        assert loss == 0.0
        assert np.all(grad == 0)

    def test_grad_is_derivative(self, rng):
        pred = rng.normal(size=7)
        target = rng.normal(size=7)
        _, grad = mse_loss(pred, target)
        h = 1e-6
        for j in range(7):
            p = pred.copy()
            p[j] += h
            up, _ = mse_loss(p, target)
            p[j] -= 2 * h
            dn, _ = mse_loss(p, target)
            assert np.isclose(grad[j], (up - dn) / (2 * h), rtol=1e-6, atol=1e-10)

    def test_validation(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError):
            mse_loss(np.zeros(0), np.zeros(0))

    def test_loss_float64_even_for_float32_inputs(self, rng):
        x = rng.normal(size=4).astype(np.float32)
        loss, grad = mse_loss(x, np.zeros(4, dtype=np.float32))
        assert isinstance(loss, float)
        assert grad.dtype == np.float32


class TestGradCheck:
    def test_quadratic_passes(self):
        A = np.diag([1.0, 2.0, 3.0])

        def closure(v, want_grad):
            loss = 0.5 * float(v @ A @ v)
            return loss, (A @ v if want_grad else None)

        report = grad_check(closure, np.array([1.0, -2.0, 0.5]), [0, 1, 2])
        assert isinstance(report, GradCheckReport)
        assert report.max_rel_err < 1e-8

    def test_detects_wrong_gradient(self):
        def closure(v, want_grad):
            return float(v @ v), (3.0 * v if want_grad else None)  # truth is 2v

        report = grad_check(closure, np.array([1.0, 2.0]), [0, 1])
        assert report.max_rel_err > 0.2
        assert "rel err" in str(report)

    def test_values_restored(self):
        v = np.array([1.0, 2.0, 3.0])

        def closure(x, want_grad):
            return float(x @ x), (2 * x if want_grad else None)

        grad_check(closure, v, [1])
        np.testing.assert_array_equal(v, [1.0, 2.0, 3.0])

    def test_empty_indices_rejected(self):
        with pytest.raises(ValueError):
            grad_check(lambda v, w: (0.0, np.zeros(1)), np.zeros(1), [])
