import numpy as np
import pytest

from s2pnet import nn


def _rng(seed=0):
    return np.random.default_rng(seed)


# -- kaiming_init ------------------------------------------------------------

def test_kaiming_variance():
    draws = nn.kaiming_init((1000, 1000), fan_in=64, rng=_rng(1), dtype=np.float64)
    assert draws.var() == pytest.approx(2.0 / 64, rel=0.02)
    assert abs(draws.mean()) < 0.001


def test_kaiming_deterministic_per_seed():
    a = nn.kaiming_init((8, 8), fan_in=8, rng=_rng(3))
    b = nn.kaiming_init((8, 8), fan_in=8, rng=_rng(3))
    assert np.array_equal(a, b)


def test_kaiming_rejects_bad_fan_in():
    with pytest.raises(ValueError):
        nn.kaiming_init((4,), fan_in=0, rng=_rng())


def test_linear_bias_starts_at_zero():
    layer = nn.Linear(4, 3, _rng())
    assert np.array_equal(layer.params["bias"], np.zeros(3, dtype=np.float32))


# -- layer forward semantics ---------------------------------------------------

def test_linear_identity_weights():
    layer = nn.Linear(3, 3, _rng(), dtype=np.float64)
    layer.params["weight"] = np.eye(3)
    layer.params["bias"] = np.zeros(3)
    x = np.arange(6, dtype=np.float64).reshape(2, 3)
    assert np.array_equal(layer.forward(x), x)


def test_linear_scalar_case():
    layer = nn.Linear(1, 1, _rng(), dtype=np.float64)
    layer.params["weight"] = np.array([[2.0]])
    layer.params["bias"] = np.array([1.0])
    assert layer.forward(np.array([[3.0]]))[0, 0] == 7.0


def test_linear_zero_input_broadcasts_bias():
    layer = nn.Linear(2, 3, _rng(), dtype=np.float64)
    layer.params["bias"] = np.array([1.0, 2.0, 3.0])
    out = layer.forward(np.zeros((4, 2)))
    assert np.array_equal(out, np.tile([1.0, 2.0, 3.0], (4, 1)))


def test_linear_rejects_bad_shape():
    layer = nn.Linear(3, 2, _rng())
    with pytest.raises(ValueError):
        layer.forward(np.zeros((2, 5), dtype=np.float32))


def test_conv_delta_kernel_is_identity():
    layer = nn.Conv3x3(1, 1, _rng(), dtype=np.float64)
    layer.params["weight"] = np.zeros((1, 1, 3, 3))
    layer.params["weight"][0, 0, 1, 1] = 1.0
    layer.params["bias"] = np.zeros(1)
    x = _rng(4).random((2, 1, 6, 6))
    assert np.allclose(layer.forward(x), x)


def test_conv_ones_kernel_padding_arithmetic():
    layer = nn.Conv3x3(1, 1, _rng(), dtype=np.float64)
    layer.params["weight"] = np.ones((1, 1, 3, 3))
    layer.params["bias"] = np.zeros(1)
    out = layer.forward(np.full((1, 1, 5, 5), 2.0))[0, 0]
    assert out[2, 2] == pytest.approx(18.0)  # interior: 9 taps
    assert out[0, 0] == pytest.approx(8.0)   # corner: 4 taps
    assert out[0, 2] == pytest.approx(12.0)  # edge: 6 taps


def _conv_naive(x, weight, bias):
    b, c_in, h, w = x.shape
    c_out = weight.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((b, c_out, h, w))
    for bi in range(b):
        for co in range(c_out):
            for i in range(h):
                for j in range(w):
                    for ci in range(c_in):
                        for di in range(3):
                            for dj in range(3):
                                out[bi, co, i, j] += xp[bi, ci, i + di, j + dj] * weight[co, ci, di, dj]
            out[bi, co] += bias[co]
    return out


def test_conv_matches_naive_reference():
    rng = _rng(5)
    layer = nn.Conv3x3(2, 3, rng, dtype=np.float64)
    x = rng.random((2, 2, 4, 4))
    ref = _conv_naive(x, layer.params["weight"], layer.params["bias"])
    assert np.allclose(layer.forward(x), ref, atol=1e-12)


def test_batchnorm_normalizes_in_train_mode():
    layer = nn.BatchNorm(3, dtype=np.float64)
    x = _rng(6).random((32, 3)) * 5 + 2
    out = layer.forward(x)
    assert np.allclose(out.mean(axis=0), 0.0, atol=1e-6)
    assert np.allclose(out.var(axis=0), 1.0, atol=1e-4)


def test_batchnorm_zero_variance_outputs_beta():
    layer = nn.BatchNorm(2, dtype=np.float64)
    layer.params["beta"] = np.array([1.5, -0.5])
    out = layer.forward(np.full((8, 2), 3.0))
    assert np.allclose(out, np.tile([1.5, -0.5], (8, 1)))


def test_batchnorm_eval_is_batch_independent_affine():
    layer = nn.BatchNorm(2, dtype=np.float64)
    layer.forward(_rng(7).random((16, 2)))  # populate running stats
    layer.training = False
    x = _rng(8).random((4, 2))
    solo = np.concatenate([layer.forward(x[i : i + 1]) for i in range(4)])
    assert np.allclose(layer.forward(x), solo)


def test_batchnorm_rejects_batch_of_one_in_train():
    layer = nn.BatchNorm(2)
    with pytest.raises(ValueError):
        layer.forward(np.zeros((1, 2), dtype=np.float32))


def test_batchnorm_running_stats_update_only_in_train():
    layer = nn.BatchNorm(2, dtype=np.float64)
    layer.training = False
    before = layer.buffers["running_mean"].copy()
    layer.forward(_rng(9).random((4, 2)))
    assert np.array_equal(layer.buffers["running_mean"], before)


def test_relu_values():
    layer = nn.ReLU()
    out = layer.forward(np.array([-1.0, 0.0, 2.0]))
    assert np.array_equal(out, [0.0, 0.0, 2.0])


def test_dropout_eval_mode_is_identity():
    layer = nn.Dropout(0.5)
    layer.training = False
    x = _rng(10).random((3, 4))
    assert layer.forward(x) is x


def test_dropout_train_mode_scales_survivors():
    layer = nn.Dropout(0.5)
    layer.rng = _rng(11)
    x = np.ones((100, 100))
    out = layer.forward(x)
    survivors = out[out > 0]
    assert np.allclose(survivors, 2.0)  # 1 / (1 - 0.5)
    assert out.mean() == pytest.approx(1.0, rel=0.05)


def test_dropout_rejects_bad_rate():
    with pytest.raises(ValueError):
        nn.Dropout(1.0)


def test_maxpool_block_max():
    layer = nn.MaxPool2x2()
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    assert layer.forward(x)[0, 0, 0, 0] == 4.0


def test_maxpool_rejects_odd_dims():
    with pytest.raises(ValueError):
        nn.MaxPool2x2().forward(np.zeros((1, 1, 3, 4)))


def test_maxpool_backward_conserves_gradient_mass():
    layer = nn.MaxPool2x2()
    x = _rng(12).random((2, 3, 8, 8))  # distinct values: unique argmaxes
    out = layer.forward(x)
    g = _rng(13).random(out.shape)
    gin = layer.backward(g)
    assert gin.sum() == pytest.approx(g.sum())


def test_backward_without_forward_raises():
    for layer in (nn.Linear(2, 2, _rng()), nn.Conv3x3(1, 1, _rng()), nn.BatchNorm(2),
                  nn.ReLU(), nn.MaxPool2x2(), nn.Flatten()):
        with pytest.raises(RuntimeError):
            layer.backward(np.zeros((2, 2)))


# -- losses ---------------------------------------------------------------------

def test_ce_uniform_logits():
    loss, _ = nn.softmax_ce_loss(np.zeros((3, 4)), np.array([0, 1, 2]))
    assert loss == pytest.approx(np.log(4.0))


def test_ce_saturated_correct_logit():
    logits = np.zeros((1, 4))
    logits[0, 2] = 1000.0
    loss, _ = nn.softmax_ce_loss(logits, np.array([2]))
    assert loss < 1e-6


def test_ce_gradient_matches_finite_differences():
    rng = _rng(14)
    logits = rng.standard_normal((4, 5))
    labels = np.array([0, 2, 4, 1])
    _, grad = nn.softmax_ce_loss(logits, labels)
    h = 1e-6
    for i in range(4):
        for j in range(5):
            lp = logits.copy(); lp[i, j] += h
            lm = logits.copy(); lm[i, j] -= h
            num = (nn.softmax_ce_loss(lp, labels)[0] - nn.softmax_ce_loss(lm, labels)[0]) / (2 * h)
            assert grad[i, j] == pytest.approx(num, rel=1e-6, abs=1e-10)


def test_ce_rejects_out_of_range_label():
    with pytest.raises(ValueError):
        nn.softmax_ce_loss(np.zeros((1, 3)), np.array([3]))


def test_focal_perfect_prediction_zero_loss():
    logits = np.zeros((1, 4))
    logits[0, 1] = 1000.0
    loss, _ = nn.focal_loss(logits, np.array([1]))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_focal_gamma_zero_equals_ce():
    rng = _rng(15)
    logits = rng.standard_normal((6, 4))
    labels = rng.integers(0, 4, 6)
    l_f, g_f = nn.focal_loss(logits, labels, gamma=0.0)
    l_c, g_c = nn.softmax_ce_loss(logits, labels)
    assert l_f == pytest.approx(l_c, abs=1e-9)
    assert np.allclose(g_f, g_c, atol=1e-9)


def test_focal_half_confidence_closed_form():
    # p_t = 0.5 on a 2-class problem: loss = (1 - 0.5)^2 * ln 2 = 0.25 ln 2.
    logits = np.zeros((1, 2))
    loss, _ = nn.focal_loss(logits, np.array([0]), gamma=2.0)
    assert loss == pytest.approx(0.25 * np.log(2.0), abs=1e-12)


def test_focal_gradient_matches_finite_differences():
    rng = _rng(16)
    logits = rng.standard_normal((4, 4))
    labels = np.array([3, 0, 1, 2])
    _, grad = nn.focal_loss(logits, labels, gamma=2.0)
    h = 1e-6
    for i in range(4):
        for j in range(4):
            lp = logits.copy(); lp[i, j] += h
            lm = logits.copy(); lm[i, j] -= h
            num = (nn.focal_loss(lp, labels)[0] - nn.focal_loss(lm, labels)[0]) / (2 * h)
            assert grad[i, j] == pytest.approx(num, rel=1e-5, abs=1e-10)


def test_losses_finite_for_extreme_logits():
    logits = np.array([[1e4, -1e4, 0.0, 500.0]])
    for fn in (nn.softmax_ce_loss, nn.focal_loss):
        loss, grad = fn(logits, np.array([1]))
        assert np.isfinite(loss) and np.all(np.isfinite(grad))


# -- per-layer gradient checks -----------------------------------------------------

def _layer_grad_check(layer, x, labels=None):
    """Finite-difference check of a single layer through a CE head."""
    n_out = int(np.prod(layer.forward(x).shape[1:]))
    head = nn.Linear(n_out, 3, _rng(99), dtype=np.float64)
    labels = np.zeros(x.shape[0], dtype=np.int64) if labels is None else labels

    def forward_fn():
        out = layer.forward(x)
        logits = head.forward(out.reshape(x.shape[0], -1))
        loss, grad = nn.softmax_ce_loss(logits, labels)
        layer.backward(head.backward(grad).reshape(out.shape))
        grads = {f"l.{k}": v for k, v in layer.grads.items()}
        grads.update({f"h.{k}": v for k, v in head.grads.items()})
        return loss, grads

    params = {f"l.{k}": v for k, v in layer.params.items()}
    params.update({f"h.{k}": v for k, v in head.params.items()})
    return nn.grad_check(forward_fn, params)


@pytest.mark.parametrize("layer_fn,shape", [
    (lambda: nn.Linear(5, 4, _rng(20), dtype=np.float64), (4, 5)),
    (lambda: nn.Conv3x3(2, 3, _rng(21), dtype=np.float64), (2, 2, 4, 4)),
    (lambda: nn.BatchNorm(5, dtype=np.float64), (4, 5)),
    (lambda: nn.BatchNorm(2, spatial=True, dtype=np.float64), (3, 2, 4, 4)),
])
def test_layer_gradients_match_finite_differences(layer_fn, shape):
    layer = layer_fn()
    x = _rng(22).standard_normal(shape)
    assert _layer_grad_check(layer, x) <= 1e-4


def test_relu_backward_zeroes_negative_inputs():
    layer = nn.ReLU()
    x = np.array([[-2.0, 3.0, -0.5, 1.0]])
    layer.forward(x)
    gin = layer.backward(np.ones_like(x))
    assert np.array_equal(gin, [[0.0, 1.0, 0.0, 1.0]])


def test_maxpool_gradient_routing():
    layer = nn.MaxPool2x2()
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    layer.forward(x)
    gin = layer.backward(np.array([[[[5.0]]]]))
    expected = np.zeros((1, 1, 2, 2))
    expected[0, 0, 1, 1] = 5.0
    assert np.array_equal(gin, expected)


# -- AdamW ------------------------------------------------------------------------

def test_adamw_zero_grad_pure_decay():
    p = np.array([2.0])
    opt = nn.AdamW({"p": p}, lr=1e-3, weight_decay=1e-3)
    opt.step({"p": np.array([0.0])})
    assert p[0] == 2.0 * (1.0 - 1e-6)


def test_adamw_first_step_closed_form():
    g = 0.37
    p = np.array([1.0])
    opt = nn.AdamW({"p": p}, lr=1e-3, weight_decay=0.0)
    opt.step({"p": np.array([g])})
    # After bias correction m_hat = g, v_hat = g^2, so the step is
    # -lr * g / (|g| + eps).
    expected = 1.0 - 1e-3 * g / (abs(g) + 1e-8)
    assert p[0] == pytest.approx(expected, abs=1e-15)


def test_adamw_differs_from_adam_with_l2():
    g, theta, lr, wd = 0.5, 2.0, 1e-3, 0.1
    p1 = np.array([theta])
    nn.AdamW({"p": p1}, lr=lr, weight_decay=wd).step({"p": np.array([g])})
    # Adam with L2 folded into the gradient instead.
    p2 = np.array([theta])
    g2 = g + wd * theta
    nn.AdamW({"p": p2}, lr=lr, weight_decay=0.0).step({"p": np.array([g2])})
    assert p1[0] != p2[0]


def test_adamw_wd_zero_is_plain_adam():
    rng = _rng(23)
    p1 = rng.random(5)
    p2 = p1.copy()
    o1 = nn.AdamW({"p": p1}, weight_decay=0.0)
    o2 = nn.AdamW({"p": p2}, weight_decay=0.0)
    for _ in range(10):
        g = rng.standard_normal(5)
        o1.step({"p": g})
        o2.step({"p": g.copy()})
    assert np.array_equal(p1, p2)


def test_adamw_step_function_wrapper():
    p = {"w": np.array([1.0])}
    state = nn.AdamW(p, lr=1e-3, weight_decay=0.0)
    out = nn.adamw_step(p, {"w": np.array([1.0])}, state)
    assert out is p and p["w"][0] < 1.0


# -- cosine schedule -----------------------------------------------------------------

def test_cosine_lr_closed_form_values():
    assert nn.cosine_wr_lr(0) == pytest.approx(1e-3)
    assert nn.cosine_wr_lr(10) == pytest.approx(5e-4)
    assert nn.cosine_wr_lr(20) == pytest.approx(1e-3)   # first restart
    assert nn.cosine_wr_lr(60) == pytest.approx(1e-3)   # second restart
    assert nn.cosine_wr_lr(140) == pytest.approx(1e-3)  # third restart
    assert nn.cosine_wr_lr(40) == pytest.approx(5e-4)   # half of 40-epoch period


def test_cosine_lr_bounds_and_monotone_within_period():
    lrs = [nn.cosine_wr_lr(e) for e in range(20)]
    assert all(0.0 <= lr <= 1e-3 for lr in lrs)
    assert all(a > b for a, b in zip(lrs, lrs[1:]))


def test_cosine_lr_rejects_negative_epoch():
    with pytest.raises(ValueError):
        nn.cosine_wr_lr(-1)


# -- grad_check harness -----------------------------------------------------------------

def test_grad_check_accepts_correct_gradient():
    p = {"w": np.array([1.0, -2.0])}

    def forward_fn():
        loss = float((p["w"] ** 2).sum())
        return loss, {"w": 2.0 * p["w"]}

    assert nn.grad_check(forward_fn, p) <= 1e-9


def test_grad_check_flags_wrong_gradient():
    p = {"w": np.array([1.0])}

    def forward_fn():
        return float((p["w"] ** 2).sum()), {"w": 3.0 * p["w"]}

    assert nn.grad_check(forward_fn, p) > 0.1
