"""Autodiff engine, FFT pair, Adam, and finite-difference checker."""

import numpy as np
import pytest

from tsduet.errors import DimensionError
from tsduet.numerics import (
    AdamState,
    DropoutRng,
    Tape,
    Tensor,
    adam_step,
    backward,
    concat,
    constant,
    cross_entropy,
    dropout,
    finite_difference_check,
    forward_op,
    gelu,
    irfft,
    irfft_real,
    layer_norm,
    matmul,
    max_abs,
    mse,
    parameter,
    powc,
    reshape,
    rfft,
    rfft_real,
    softmax,
    split,
    swap_last,
    tmean,
    transpose,
    tsum,
)

from helpers import central_diff, matmul_triple_loop, naive_dft


# ------------------------------------------------------------------- forward


def test_softmax_uniform_on_equal_logits():
    y = softmax(constant([0.0, 0.0, 0.0]), axis=0)
    np.testing.assert_allclose(y.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(1)
    y = softmax(constant(rng.normal(size=(7, 11)) * 30), axis=1)
    np.testing.assert_allclose(y.data.sum(axis=1), np.ones(7), atol=1e-12)


def test_softmax_empty_axis_rejected():
    with pytest.raises(ValueError):
        softmax(constant(np.zeros((3, 0))), axis=1)


def test_mse_identity_is_zero():
    x = constant(np.random.default_rng(2).normal(size=(4, 5)))
    assert mse(x, x).item() == 0.0


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(3, 4))
    got = matmul(constant(a), constant(b)).data
    want = matmul_triple_loop(a, b)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as e:
        matmul(constant(np.zeros((2, 3))), constant(np.zeros((4, 5))))
    assert "(2, 3)" in str(e.value) and "(4, 5)" in str(e.value)


def test_cross_entropy_of_identical_distributions_is_entropy():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(9, 3))
    p = np.exp(logits) / np.exp(logits).sum(axis=0)
    ce = cross_entropy(constant(p), constant(p), axis=0).item()
    entropy = float(np.mean(-(p * np.log(p)).sum(axis=0)))
    assert abs(ce - entropy) < 1e-10


def test_forward_op_dispatch():
    out = forward_op("add", constant([1.0]), constant([2.0]))
    assert out.data[0] == 3.0
    with pytest.raises(ValueError):
        forward_op("no-such-kind", constant([1.0]))


def test_finite_ops_on_finite_input():
    rng = np.random.default_rng(5)
    x = constant(rng.normal(size=(6, 8)) * 5)
    for out in [
        gelu(x),
        softmax(x, axis=1),
        layer_norm(x, constant(np.ones(8)), constant(np.zeros(8))),
        powc(clipped := forward_op("clip_min", x, 1e-8), 0.5),
        max_abs(x, axis=1),
    ]:
        assert np.isfinite(out.data).all()
    assert np.isfinite(clipped.data).all()


# ----------------------------------------------------------------------- FFT


def test_rfft_pure_cosine_peaks_at_bin():
    S = 64
    t = np.arange(S)
    x = np.cos(2 * np.pi * 3 * t / S)
    re, im = rfft_real(x)
    assert np.argmax(np.abs(re)) == 3
    assert abs(im[3]) < 1e-10
    assert abs(re[3] - S / 2) < 1e-10


def test_rfft_zero_signal():
    re, im = rfft_real(np.zeros(32))
    assert np.all(re == 0) and np.all(im == 0)


def test_rfft_matches_naive_dft_oracle():
    rng = np.random.default_rng(6)
    x = rng.normal(size=16)
    re, im = rfft_real(x)
    ore, oim = naive_dft(x)
    np.testing.assert_allclose(re, ore, atol=1e-10)
    np.testing.assert_allclose(im, oim, atol=1e-10)


def test_rfft_odd_length_rejected():
    with pytest.raises(DimensionError):
        rfft_real(np.zeros(15))


def test_rfft_non_power_of_two_even_length():
    rng = np.random.default_rng(7)
    x = rng.normal(size=24)
    re, im = rfft_real(x)
    ore, oim = naive_dft(x)
    np.testing.assert_allclose(re, ore, atol=1e-9)
    np.testing.assert_allclose(im, oim, atol=1e-9)


@pytest.mark.parametrize("S", [16, 64, 512])
def test_fft_roundtrip(S):
    rng = np.random.default_rng(S)
    x = rng.normal(size=(3, S))
    re, im = rfft_real(x)
    back = irfft_real(re, im, S)
    assert np.max(np.abs(back - x)) < 1e-10


def test_irfft_zero_spectrum():
    out = irfft_real(np.zeros(9), np.zeros(9), 16)
    assert np.all(out == 0)


def test_irfft_length_mismatch_rejected():
    with pytest.raises(DimensionError):
        irfft_real(np.zeros(8), np.zeros(8), 16)


def test_rfft_linearity():
    rng = np.random.default_rng(8)
    x, y = rng.normal(size=64), rng.normal(size=64)
    a, b = 2.7, -1.3
    re1, im1 = rfft_real(a * x + b * y)
    rex, imx = rfft_real(x)
    rey, imy = rfft_real(y)
    np.testing.assert_allclose(re1, a * rex + b * rey, atol=1e-10)
    np.testing.assert_allclose(im1, a * imx + b * imy, atol=1e-10)


def test_irfft_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    S = 16
    re0 = rng.normal(size=S // 2 + 1)
    im0 = rng.normal(size=S // 2 + 1)
    target = rng.normal(size=S)

    re_p = parameter(re0)
    im_p = parameter(im0)
    with Tape() as tape:
        loss = mse(irfft(re_p, im_p, S), constant(target))
    grads = backward(tape, loss, params=[re_p, im_p])

    def loss_re(re_arr):
        return float(np.mean((irfft_real(re_arr, im0, S) - target) ** 2))

    def loss_im(im_arr):
        return float(np.mean((irfft_real(re0, im_arr, S) - target) ** 2))

    fd_re = central_diff(loss_re, re0)
    fd_im = central_diff(loss_im, im0)
    # DC/Nyquist imaginary parts do not affect the output; their grads are 0
    np.testing.assert_allclose(grads.get(re_p), fd_re, rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(grads.get(im_p), fd_im, rtol=1e-5, atol=1e-7)


def test_rfft_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    S = 16
    x0 = rng.normal(size=S)
    wre = rng.normal(size=S // 2 + 1)
    wim = rng.normal(size=S // 2 + 1)

    x = parameter(x0)
    with Tape() as tape:
        re, im = rfft(x)
        loss = tsum(re * constant(wre)) + tsum(im * constant(wim))
    grads = backward(tape, loss, params=[x])

    def f(arr):
        r, i = rfft_real(arr)
        return float((r * wre).sum() + (i * wim).sum())

    np.testing.assert_allclose(grads.get(x), central_diff(f, x0), rtol=1e-6, atol=1e-8)


# ------------------------------------------------------------------ backward


def test_backward_linear_sum_gradient_exact():
    rng = np.random.default_rng(11)
    w = parameter(rng.normal(size=(4, 5)))
    x = constant(rng.normal(size=(4, 5)))
    with Tape() as tape:
        loss = tsum(w * x)
    grads = backward(tape, loss, params=[w])
    np.testing.assert_array_equal(grads.get(w), x.data)


def test_backward_single_layer_closed_form():
    rng = np.random.default_rng(12)
    W0 = rng.normal(size=(3, 4))
    xv = rng.normal(size=(4, 1))
    yv = rng.normal(size=(3, 1))
    W = parameter(W0)
    with Tape() as tape:
        loss = mse(matmul(W, constant(xv)), constant(yv))
    grads = backward(tape, loss, params=[W])
    resid = W0 @ xv - yv
    closed = 2.0 * resid @ xv.T / resid.size
    np.testing.assert_allclose(grads.get(W), closed, atol=1e-12)


def test_backward_two_layer_matches_finite_differences():
    rng = np.random.default_rng(13)
    w1 = parameter(rng.normal(size=(6, 4)) * 0.5)
    w2 = parameter(rng.normal(size=(4, 2)) * 0.5)
    x = constant(rng.normal(size=(5, 6)))
    y = constant(rng.normal(size=(5, 2)))

    def closure():
        h = gelu(matmul(x, w1))
        return mse(matmul(h, w2), y)

    report = finite_difference_check(
        closure, {"w1": w1, "w2": w2}, h=1e-4, tol=1e-4, samples_per_param=None
    )
    assert report.max_rel_error < 1e-4, str(report)


def test_backward_unreached_leaf_gets_zero_gradient():
    used = parameter(np.ones(3))
    unused = parameter(np.ones(2))
    with Tape() as tape:
        loss = tsum(used * constant([1.0, 2.0, 3.0]))
    grads = backward(tape, loss, params=[used, unused])
    np.testing.assert_array_equal(grads.get(unused), np.zeros(2))


def test_backward_rejects_non_scalar_loss():
    w = parameter(np.ones(3))
    with Tape() as tape:
        out = w * constant([1.0, 2.0, 3.0])
    with pytest.raises(DimensionError):
        backward(tape, out)


def test_shared_subexpression_accumulates():
    x = parameter(np.array(2.0))
    with Tape() as tape:
        y = x * x + x  # dy/dx = 2x + 1
    grads = backward(tape, y, params=[x])
    assert grads.get(x) == pytest.approx(5.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_composite_ops_gradcheck(seed):
    """Random composition touching most op kinds against finite differences."""
    rng = np.random.default_rng(seed)
    a = parameter(rng.normal(size=(3, 4, 6)))
    g = parameter(np.abs(rng.normal(size=6)) + 0.5)
    b = parameter(rng.normal(size=6))
    w = parameter(rng.normal(size=(6, 6)) * 0.3)
    target = constant(rng.normal(size=(3, 4, 6)))

    def closure():
        h = layer_norm(a, g, b)
        h = matmul(h, w)
        h = gelu(h)
        sm = softmax(h, axis=-1)
        top, bottom = split(sm, [2, 2], axis=1)
        joined = concat([top, bottom], axis=1)
        sq = powc(forward_op("clip_min", joined, 1e-6), 0.5)
        m = max_abs(h, axis=-1)
        t = swap_last(reshape(transpose(sq, (2, 0, 1)), (6, 12))) @ w
        return mse(h, target) + tmean(m) + tsum(t) * constant(0.01)

    report = finite_difference_check(
        closure,
        {"a": a, "g": g, "b": b, "w": w},
        h=1e-4,
        tol=1e-4,
        samples_per_param=12,
        rng=np.random.default_rng(100 + seed),
    )
    assert report.max_rel_error < 1e-4, str(report)


def test_dropout_deterministic_per_counter_and_disabled_off_training():
    x = constant(np.ones((4, 4)))
    r1 = DropoutRng(7)
    r2 = DropoutRng(7)
    a = dropout(x, 0.5, r1)
    b = dropout(x, 0.5, r2)
    np.testing.assert_array_equal(a.data, b.data)
    c = dropout(x, 0.5, r1)
    assert not np.array_equal(a.data, c.data)  # counter advanced
    assert dropout(x, 0.5, None) is x


# ---------------------------------------------------------------------- adam


def test_adam_zero_gradient_keeps_parameters():
    p = parameter(np.array([1.0, -2.0]))
    state = AdamState(lr=0.1)
    adam_step({"p": p}, {"p": np.zeros(2)}, state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_matches_hand_evaluation():
    # g=1, lr=0.1, step 1: m_hat = g, v_hat = g^2 -> update = lr*g/(|g|+eps)
    p = parameter(np.array(0.0))
    state = AdamState(lr=0.1)
    adam_step({"p": p}, {"p": np.array(1.0)}, state)
    expected = -0.1 * 1.0 / (1.0 + state.eps)
    assert p.data == pytest.approx(expected, abs=1e-12)
    assert abs(p.data + 0.1) < 1e-8


def test_adam_converges_on_quadratic():
    p = parameter(np.array(0.0))
    state = AdamState(lr=0.05)
    for _ in range(500):
        grad = 2.0 * (p.data - 3.0)
        adam_step({"p": p}, {"p": grad}, state)
    assert abs(float(p.data) - 3.0) < 1e-2


def test_adam_missing_gradient_key_rejected():
    p = parameter(np.zeros(2))
    with pytest.raises(ValueError):
        adam_step({"p": p}, {}, AdamState())


# ----------------------------------------------------------------- gradcheck


def test_gradcheck_linear_model_near_exact():
    rng = np.random.default_rng(20)
    w = parameter(rng.normal(size=(5,)))
    x = constant(rng.normal(size=(5,)))

    def closure():
        return tsum(w * x)

    report = finite_difference_check(closure, {"w": w}, samples_per_param=None)
    assert report.max_rel_error < 1e-8


def test_gradcheck_flags_corrupted_gradient():
    # a doubled analytic gradient must show up as rel err ~= 1.0
    rng = np.random.default_rng(21)
    w = parameter(rng.normal(size=(4,)))
    x = constant(rng.normal(size=(4,)) + 2.0)
    with Tape() as tape:
        loss = tsum(w * x)
    grads = backward(tape, loss, params=[w])
    doubled = 2.0 * grads.get(w)
    fd = central_diff(lambda arr: float(np.sum(arr * x.data)), w.data.copy())
    rel = np.abs(doubled - fd) / np.maximum(np.abs(fd), 1e-4)
    assert np.all(rel > 0.9) and np.all(rel < 1.1)


def test_gradcheck_detects_nondeterministic_closure():
    w = parameter(np.ones(2))
    state = {"n": 0}

    def closure():
        state["n"] += 1
        return tsum(w * constant(float(state["n"])))

    with pytest.raises(RuntimeError):
        finite_difference_check(closure, {"w": w})
