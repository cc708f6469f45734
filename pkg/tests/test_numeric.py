from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from wsnad.numeric import (
    DTYPE,
    NonFiniteError,
    RngStream,
    adamw,
    backward,
    conv1d_dilated,
    cosine_similarity,
    ensure_finite,
    grad_check,
    linear_recurrence,
    softmax_lastdim,
)


def test_default_dtype_is_float64():
    assert torch.get_default_dtype() == DTYPE == torch.float64


@pytest.mark.parametrize(
    "x, kernel, dilation, expected",
    [
        ([1, 2, 3, 4], [1, 1], 2, [1, 2, 4, 6]),
        ([5, 7, 9], [1], 3, [5, 7, 9]),
        ([1, 2, 3], [0, 1], 1, [0, 1, 2]),
    ],
)
def test_conv1d_dilated_hand_values(x, kernel, dilation, expected):
    out = conv1d_dilated(x, kernel, dilation)
    assert out.tolist() == expected


def test_conv1d_dilated_rejects_bad_dilation():
    with pytest.raises(ValueError):
        conv1d_dilated([1.0, 2.0], [1.0], 0)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.integers(1, 3), st.integers(1, 3))
@settings(max_examples=50, deadline=None)
def test_conv1d_matches_direct_sum(xs, k, d):
    gen = np.random.default_rng(len(xs) * 10 + k)
    kernel = gen.standard_normal(k)
    out = conv1d_dilated(xs, kernel, d).numpy()
    ref = [sum(kernel[q] * xs[t - q * d] for q in range(k) if t - q * d >= 0) for t in range(len(xs))]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_softmax_values():
    assert softmax_lastdim(torch.tensor([0.0, 0.0])).tolist() == [0.5, 0.5]
    out = softmax_lastdim(torch.tensor([math.log(2.0), 0.0]))
    np.testing.assert_allclose(out.numpy(), [2 / 3, 1 / 3], atol=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-1e3, 1e3))
@settings(max_examples=50, deadline=None)
def test_softmax_shift_invariance(xs, c):
    x = torch.tensor(xs)
    np.testing.assert_allclose(softmax_lastdim(x + c).numpy(), softmax_lastdim(x).numpy(), atol=1e-12)


def test_softmax_large_inputs_stay_finite():
    out = softmax_lastdim(torch.tensor([1000.0, 999.0, -1000.0]))
    assert torch.isfinite(out).all()
    assert abs(float(out.sum()) - 1.0) < 1e-15


def test_autograd_examples():
    p = torch.tensor(3.0, requires_grad=True)
    backward(p * p)
    assert float(p.grad) == 6.0
    q = torch.randn(5, requires_grad=True)
    backward(softmax_lastdim(q).sum())
    assert float(q.grad.abs().max()) < 1e-15


def test_backward_rejects_nonscalar_and_nonfinite():
    p = torch.ones(2, requires_grad=True)
    with pytest.raises(ValueError):
        backward(p * 2)
    with pytest.raises(NonFiniteError):
        backward((p * float("nan")).sum())
    with pytest.raises(NonFiniteError):
        ensure_finite(torch.tensor([1.0, float("inf")]))


def test_linear_recurrence_matches_loop_and_gradcheck():
    gen = np.random.default_rng(0)
    a = torch.from_numpy(gen.uniform(0.1, 0.9, (2, 7, 3, 4))).requires_grad_(True)
    u = torch.from_numpy(gen.standard_normal((2, 7, 3, 4))).requires_grad_(True)
    h = linear_recurrence(a, u)
    state = torch.zeros(2, 3, 4)
    for t in range(7):
        state = a[:, t] * state + u[:, t]
        torch.testing.assert_close(h[:, t], state, rtol=0, atol=1e-14)
    w = torch.from_numpy(gen.standard_normal((2, 7, 3, 4)))
    assert torch.autograd.gradcheck(lambda a_, u_: (linear_recurrence(a_, u_) * w).sum(), (a, u))


def test_cosine_similarity_degenerate_rows():
    cos, deg = cosine_similarity(torch.tensor([[1.0, 0.0], [0.0, 0.0]]), torch.tensor([[2.0, 0.0], [1.0, 1.0]]))
    assert cos.tolist() == [1.0, 0.0]
    assert deg.tolist() == [False, True]


def test_grad_check_examples():
    x = torch.tensor([1.0], requires_grad=True)
    rep = grad_check(lambda: (x**2).sum(), [x], h=1e-5)
    assert rep.max_rel_error < 1e-9 and rep.passed
    rep = grad_check(lambda: torch.tensor(4.0) + 0 * x.sum(), [x])
    assert rep.max_rel_error == 0.0


def test_grad_check_detects_wrong_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x**2

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return g * 3 * x  # should be 2x

    x = torch.tensor([0.7, -1.3], requires_grad=True)
    rep = grad_check(lambda: Wrong.apply(x).sum(), {"x": x})
    assert not rep.passed
    assert rep.per_param["x"] > 0.1


def test_grad_check_refines_kink_coordinates():
    # the stencil at h straddles the ReLU kink at 0; at h/10 it does not
    x = torch.tensor([4e-6], requires_grad=True)
    rep = grad_check(lambda: torch.relu(x).sum(), {"x": x}, h=1e-5)
    assert rep.passed
    assert len(rep.refined) == 1 and rep.refined[0].startswith("x")


def test_adamw_examples():
    p = torch.nn.Parameter(torch.tensor([1.0, -2.0]))
    opt = adamw([p], lr=0.1, weight_decay=0.0)
    p.grad = torch.zeros(2)
    opt.step()
    assert p.detach().tolist() == [1.0, -2.0]
    q = torch.nn.Parameter(torch.tensor([1.0, -2.0]))
    opt = adamw([q], lr=0.1, weight_decay=0.0)
    q.grad = torch.tensor([0.5, -3.0])
    opt.step()
    np.testing.assert_allclose(q.detach().numpy(), [1.0 - 0.1, -2.0 + 0.1], atol=1e-6)


def test_adamw_skips_frozen_parameters():
    a = torch.nn.Parameter(torch.tensor([1.0]))
    b = torch.nn.Parameter(torch.tensor([2.0]), requires_grad=False)
    before = b.detach().clone()
    opt = adamw([a, b], lr=0.1)
    a.grad = torch.tensor([1.0])
    opt.step()
    assert torch.equal(b.detach(), before)
    with pytest.raises(ValueError):
        adamw([b])


def test_rng_stream_paths_are_independent_and_reproducible():
    a = RngStream(5, ("x",)).normal((4,))
    b = RngStream(5, ("x",)).normal((4,))
    c = RngStream(5, ("y",)).normal((4,))
    d = RngStream(6, ("x",)).normal((4,))
    assert torch.equal(a, b)
    assert not torch.equal(a, c) and not torch.equal(a, d)
    s = RngStream(1)
    state = s.state
    first = s.uniform(0, 1, (3,))
    s.state = state
    assert torch.equal(first, s.uniform(0, 1, (3,)))
