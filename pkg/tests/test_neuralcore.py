import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from madrs_speech.neuralcore import (
    Conv1d,
    Dense,
    Dropout,
    GlobalAvgPool1d,
    OptimizerConfig,
    ParamTensor,
    ShapeError,
    SiLU,
    StaleStepError,
    adam_step,
    adam_step_all,
    dropout,
    grad_check,
    load_checkpoint,
    mse_grad,
    mse_loss,
    nll_loss,
    save_checkpoint,
    softmax2,
    softmax_nll_grad,
)


def rng64(seed=0):
    return np.random.default_rng(seed)


def central_diff(loss_fn, flat_values, i, h=1e-5):
    orig = flat_values[i]
    flat_values[i] = orig + h
    lp = loss_fn()
    flat_values[i] = orig - h
    lm = loss_fn()
    flat_values[i] = orig
    return (lp - lm) / (2 * h)


class TestDense:
    def test_identity(self):
        layer = Dense("d", 3, 3, rng64(), dtype=np.float64)
        layer.weight.value[...] = np.eye(3)
        layer.bias.value[...] = 0
        x = rng64(1).standard_normal((4, 3))
        np.testing.assert_array_equal(layer.forward(x), x)

    def test_zero_weights_bias_rows(self):
        layer = Dense("d", 3, 2, rng64(), dtype=np.float64)
        layer.weight.value[...] = 0
        layer.bias.value[...] = (1.5, -2.0)
        y = layer.forward(np.ones((5, 3)))
        np.testing.assert_array_equal(y, np.tile([1.5, -2.0], (5, 1)))

    def test_gradients_match_inline_finite_differences(self):
        layer = Dense("d", 4, 3, rng64(2), dtype=np.float64)
        x = rng64(3).standard_normal((3, 4))
        proj = rng64(4).standard_normal((3, 3))

        def loss_fn():
            return float((layer.forward(x) * proj).sum())

        loss_fn()
        layer.weight.zero_grad()
        layer.bias.zero_grad()
        layer.forward(x)
        layer.backward(proj)
        flat_w = layer.weight.value.reshape(-1)
        flat_gw = layer.weight.grad.reshape(-1)
        for i in range(flat_w.size):
            numeric = central_diff(loss_fn, flat_w, i)
            assert abs(flat_gw[i] - numeric) / max(abs(numeric), 1e-8) < 1e-6

    def test_input_gradient(self):
        layer = Dense("d", 4, 3, rng64(2), dtype=np.float64)
        x = rng64(3).standard_normal((2, 4))
        proj = rng64(4).standard_normal((2, 3))
        layer.forward(x)
        gx = layer.backward(proj)
        np.testing.assert_allclose(gx, proj @ layer.weight.value.T)

    def test_shape_mismatch(self):
        layer = Dense("d", 4, 3, rng64())
        with pytest.raises(ShapeError):
            layer.forward(np.ones((2, 5), dtype=np.float32))


class TestConv1d:
    def test_unit_kernel_channel_sum(self):
        layer = Conv1d("c", 3, 1, 1, rng64(), dtype=np.float64)
        layer.weight.value[...] = 1.0
        layer.bias.value[...] = 0.0
        x = rng64(1).standard_normal((2, 3, 10))
        y = layer.forward(x)
        np.testing.assert_allclose(y[:, 0, :], x.sum(axis=1))

    def test_output_length(self):
        layer = Conv1d("c", 2, 4, 3, rng64(), dtype=np.float64)
        y = layer.forward(np.zeros((1, 2, 10)))
        assert y.shape == (1, 4, 8)

    def test_time_shorter_than_kernel(self):
        layer = Conv1d("c", 2, 4, 5, rng64())
        with pytest.raises(ShapeError, match="kernel"):
            layer.forward(np.zeros((1, 2, 4), dtype=np.float32))

    def test_gradcheck(self):
        layer = Conv1d("c", 3, 4, 3, rng64(5), dtype=np.float64)
        x = rng64(6).standard_normal((2, 3, 8))
        proj = rng64(7).standard_normal((2, 4, 6))

        def loss_fn():
            return float((layer.forward(x) * proj).sum())

        layer.weight.zero_grad()
        layer.bias.zero_grad()
        layer.forward(x)
        layer.backward(proj)
        res = grad_check(loss_fn, layer.params(), tolerance=1e-6)
        assert res.passed, res

    def test_input_gradient_via_finite_differences(self):
        layer = Conv1d("c", 2, 3, 3, rng64(8), dtype=np.float64)
        x = rng64(9).standard_normal((1, 2, 7))
        proj = rng64(10).standard_normal((1, 3, 5))
        layer.forward(x)
        gx = layer.backward(proj)
        flat = x.reshape(-1)
        for i in range(flat.size):
            numeric = central_diff(
                lambda: float((layer.forward(x) * proj).sum()), flat, i
            )
            assert abs(gx.reshape(-1)[i] - numeric) < 1e-7


class TestSiLU:
    def test_zero(self):
        act = SiLU()
        assert act.forward(np.array([0.0]))[0] == 0.0

    def test_value_at_one(self):
        act = SiLU()
        assert act.forward(np.array([1.0]))[0] == pytest.approx(0.731059, abs=1e-6)

    def test_derivative_at_zero(self):
        act = SiLU()
        act.forward(np.array([0.0]))
        assert act.backward(np.array([1.0]))[0] == pytest.approx(0.5, abs=1e-12)

    def test_gradcheck(self):
        act = SiLU()
        x = rng64(11).standard_normal(20)
        proj = rng64(12).standard_normal(20)
        act.forward(x)
        g = act.backward(proj)
        flat = x.reshape(-1)
        for i in range(0, flat.size, 3):
            numeric = central_diff(lambda: float((act.forward(x) * proj).sum()), flat, i)
            assert abs(g[i] - numeric) < 1e-8


class TestSoftmaxNll:
    def test_equal_logits_ln2(self):
        probs = softmax2(np.zeros((4, 2)))
        np.testing.assert_allclose(probs, 0.5)
        loss = nll_loss(probs, np.array([0, 1, 0, 1]))
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_certain_prediction_zero_loss(self):
        probs = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert nll_loss(probs, np.array([1, 0])) == 0.0

    def test_combined_gradient_matches_finite_differences(self):
        logits = rng64(13).standard_normal((5, 2))
        targets = np.array([0, 1, 1, 0, 1])
        grad = softmax_nll_grad(softmax2(logits), targets)
        flat = logits.reshape(-1)
        for i in range(flat.size):
            numeric = central_diff(
                lambda: nll_loss(softmax2(logits), targets), flat, i
            )
            assert abs(grad.reshape(-1)[i] - numeric) < 1e-9

    def test_rows_sum_to_one(self):
        logits = rng64(14).standard_normal((30, 2)) * 50
        probs = softmax2(logits)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_bad_target(self):
        with pytest.raises(ValueError, match="targets"):
            nll_loss(np.full((1, 2), 0.5), np.array([2]))

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 10)), elements=st.floats(-30, 30)))
    def test_nll_non_negative(self, logit_col):
        logits = np.stack([logit_col, -logit_col], axis=1)
        probs = softmax2(logits)
        targets = (logit_col > 0).astype(int)
        assert nll_loss(probs, targets) >= 0.0


class TestMse:
    def test_equal_is_zero(self):
        assert mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_hand_value(self):
        assert mse_loss(np.array([0.5]), np.array([0.25])) == pytest.approx(0.0625, abs=0)

    def test_gradient(self):
        pred = rng64(15).standard_normal(6)
        target = rng64(16).standard_normal(6)
        grad = mse_grad(pred, target)
        flat = pred.reshape(-1)
        for i in range(flat.size):
            numeric = central_diff(lambda: mse_loss(pred, target), flat, i)
            assert abs(grad[i] - numeric) < 1e-9

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros(3), np.zeros(4))


class TestDropout:
    def test_rate_zero_identity(self):
        x = rng64(17).standard_normal(100)
        np.testing.assert_array_equal(dropout(x, 0.0, training=True, seed=1), x)

    def test_inference_identity(self):
        x = rng64(18).standard_normal(100)
        np.testing.assert_array_equal(dropout(x, 0.7, training=False, seed=1), x)

    def test_empirical_rate(self):
        x = np.ones(100_000)
        y = dropout(x, 0.3, training=True, seed=2)
        assert abs((y == 0).mean() - 0.3) < 0.02
        survivors = y[y != 0]
        np.testing.assert_allclose(survivors, 1.0 / 0.7)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            Dropout(1.0)

    def test_backward_uses_mask(self):
        layer = Dropout(0.5, np.random.default_rng(3))
        x = np.ones((4, 4))
        y = layer.forward(x, training=True)
        g = layer.backward(np.ones_like(x))
        np.testing.assert_array_equal((y != 0), (g != 0))


class TestAdam:
    def _param(self, value):
        return ParamTensor("p", np.asarray(value, dtype=np.float64))

    def test_zero_grad_no_decay_unchanged(self):
        p = self._param([1.0, -2.0])
        cfg = OptimizerConfig(weight_decay=0.0)
        adam_step(p, cfg, 1)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_first_step_is_lr_signed(self):
        p = self._param([0.0])
        p.grad[...] = 0.5
        cfg = OptimizerConfig(learning_rate=1e-3, weight_decay=0.0)
        adam_step(p, cfg, 1)
        assert p.value[0] == pytest.approx(-1e-3, rel=1e-6)

    def test_deterministic_trajectories(self):
        grads = rng64(19).standard_normal((20, 3))
        outs = []
        for _ in range(2):
            p = self._param(np.ones(3))
            cfg = OptimizerConfig()
            for step, g in enumerate(grads, start=1):
                p.grad[...] = g
                adam_step(p, cfg, step)
            outs.append(p.value.copy())
        np.testing.assert_array_equal(outs[0], outs[1])

    def test_stale_step_error(self):
        p = self._param([1.0])
        cfg = OptimizerConfig()
        adam_step(p, cfg, 1)
        with pytest.raises(StaleStepError):
            adam_step(p, cfg, 3)
        with pytest.raises(StaleStepError):
            adam_step(p, cfg, 1)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OptimizerConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            OptimizerConfig(beta1=1.0)
        with pytest.raises(ValueError):
            OptimizerConfig(beta2=0.0)


class TestGradCheckHarness:
    def _stack_loss(self):
        dense = Dense("d", 5, 4, rng64(20), dtype=np.float64)
        act = SiLU()
        head = Dense("h", 4, 2, rng64(21), dtype=np.float64)
        x = rng64(22).standard_normal((6, 5))
        targets = np.array([0, 1, 1, 0, 1, 0])

        def loss_fn():
            return nll_loss(softmax2(head.forward(act.forward(dense.forward(x)))), targets)

        params = dense.params() + head.params()
        for p in params:
            p.zero_grad()
        probs = softmax2(head.forward(act.forward(dense.forward(x))))
        dlogits = softmax_nll_grad(probs, targets)
        dense.backward(act.backward(head.backward(dlogits)))
        return loss_fn, params

    def test_dense_silu_nll_stack(self):
        loss_fn, params = self._stack_loss()
        res = grad_check(loss_fn, params, tolerance=1e-5)
        assert res.passed, res

    def test_corrupted_backward_flagged(self):
        loss_fn, params = self._stack_loss()
        params[0].grad *= 1.01
        res = grad_check(loss_fn, params, tolerance=1e-5)
        assert not res.passed
        assert res.worst_param == params[0].name

    def test_conv_pool_stack(self):
        conv = Conv1d("c", 2, 3, 3, rng64(23), dtype=np.float64)
        act = SiLU()
        pool = GlobalAvgPool1d()
        head = Dense("h", 3, 2, rng64(24), dtype=np.float64)
        x = rng64(25).standard_normal((3, 2, 9))
        targets = np.array([1, 0, 1])

        def forward():
            return softmax2(head.forward(pool.forward(act.forward(conv.forward(x)))))

        def loss_fn():
            return nll_loss(forward(), targets)

        params = conv.params() + head.params()
        for p in params:
            p.zero_grad()
        probs = forward()
        g = head.backward(softmax_nll_grad(probs, targets))
        conv.backward(act.backward(pool.backward(g)))
        res = grad_check(loss_fn, params, tolerance=1e-5)
        assert res.passed, res


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = rng64(26)
        params = [
            ParamTensor("trunk.weight", rng.standard_normal((4, 3)).astype(np.float32)),
            ParamTensor("trunk.bias", rng.standard_normal(3).astype(np.float32)),
        ]
        cfg = OptimizerConfig(learning_rate=2e-3, beta2=0.98)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, cfg)
        tensors, loaded_cfg = load_checkpoint(path)
        assert set(tensors) == {"trunk.weight", "trunk.bias"}
        np.testing.assert_array_equal(tensors["trunk.weight"], params[0].value)
        np.testing.assert_array_equal(tensors["trunk.bias"], params[1].value)
        assert loaded_cfg == cfg
