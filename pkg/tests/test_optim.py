import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agconv.autograd import Parameter
from agconv.exceptions import ContractError
from agconv.optim import SGD, clip_grad_norm, cosine_lr, sgd_momentum_step


def test_first_step_is_plain_sgd():
    p = Parameter([0.0])
    p.grad = np.array([1.0])
    sgd_momentum_step(p, lr=0.1, mu=0.9)
    assert p.momentum.tolist() == [1.0]
    assert p.data.tolist() == [-0.1]


def test_zero_gradient_leaves_parameter():
    p = Parameter([2.5])
    sgd_momentum_step(p, 0.1, 0.9)
    assert p.data.tolist() == [2.5]


def test_second_step_accumulates():
    p = Parameter([0.0])
    p.grad = np.array([1.0])
    sgd_momentum_step(p, 0.1, 0.9)
    before = p.data.copy()
    p.grad = np.array([1.0])
    sgd_momentum_step(p, 0.1, 0.9)
    assert p.momentum[0] == pytest.approx(1.9, abs=1e-15)
    assert (p.data - before)[0] == pytest.approx(-0.19, abs=1e-15)


def test_step_zeroes_gradient():
    p = Parameter([1.0, 2.0])
    p.grad = np.array([3.0, 4.0])
    SGD([p]).step(0.01)
    assert p.grad.tolist() == [0.0, 0.0]


def test_cosine_endpoints_and_midpoint():
    assert abs(cosine_lr(0, 100) - 0.1) <= 1e-12
    assert abs(cosine_lr(100, 100) - 0.001) <= 1e-12
    assert cosine_lr(50, 100) == pytest.approx(0.0505, abs=1e-15)


@given(st.integers(1, 500))
def test_cosine_monotone(total):
    lrs = [cosine_lr(t, total) for t in range(total + 1)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


@pytest.mark.parametrize("t, total", [(-1, 10), (11, 10), (0, 0)])
def test_cosine_bad_arguments(t, total):
    with pytest.raises(ContractError):
        cosine_lr(t, total)


def test_clip_grad_norm():
    a, b = Parameter([0.0, 0.0]), Parameter([0.0])
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    total = math.sqrt((a.grad**2).sum() + (b.grad**2).sum())
    assert total == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(a.grad, [0.6, 0.0])


def test_clip_disabled_and_below_threshold():
    a = Parameter([0.0])
    a.grad = np.array([10.0])
    clip_grad_norm([a], 0.0)
    assert a.grad.tolist() == [10.0]
    clip_grad_norm([a], 100.0)
    assert a.grad.tolist() == [10.0]
