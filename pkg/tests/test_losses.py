import math

import numpy as np
import pytest

from tribegraph import autodiff as ad
from tribegraph.autodiff import Tensor
from tribegraph.exceptions import BadConfig, BadProbability, BatchTooSmall, EmptyMask, ShapeMismatch
from tribegraph.losses import LossConfig, batched_infonce, bce_loss, contrastive_batches, infonce_loss, total_loss
from helpers import check_op_grad

R = np.random.default_rng(11)


def infonce_loop(q, k, tau):
    n = len(q)
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    kn = k / np.linalg.norm(k, axis=1, keepdims=True)
    total = 0.0
    for i in range(n):
        denom = sum(math.exp(float(qn[i] @ kn[j]) / tau) for j in range(n))
        total -= math.log(math.exp(float(qn[i] @ kn[i]) / tau) / denom)
    return total / n


@pytest.mark.parametrize("n", [2, 8, 64])
def test_infonce_matches_double_loop(n):
    q, k = R.standard_normal((n, 5)), R.standard_normal((n, 5))
    assert abs(infonce_loss(Tensor(q), Tensor(k), 0.2).item() - infonce_loop(q, k, 0.2)) <= 1e-10


@pytest.mark.parametrize("n", [2, 8, 64])
def test_infonce_uniform_similarity_is_log_n(n):
    q = np.ones((n, 3))
    assert abs(infonce_loss(Tensor(q), Tensor(q), 0.5).item() - math.log(n)) <= 1e-9


def test_infonce_perfect_alignment_is_small():
    q = np.eye(4) * 3
    assert infonce_loss(Tensor(q), Tensor(q), 0.05).item() < 1e-6


def test_infonce_scale_invariant():
    q, k = R.standard_normal((6, 4)), R.standard_normal((6, 4))
    a = infonce_loss(Tensor(q), Tensor(k)).item()
    b = infonce_loss(Tensor(q * 7.5), Tensor(k * 7.5)).item()
    assert abs(a - b) <= 1e-12


def test_infonce_errors_and_gradient():
    with pytest.raises(BatchTooSmall):
        infonce_loss(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))))
    with pytest.raises(ShapeMismatch):
        infonce_loss(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))))
    q, k = R.standard_normal((5, 3)), R.standard_normal((5, 3))
    assert check_op_grad(lambda a, b: infonce_loss(a, b, 0.3), [q, k]) <= 1e-6


def test_bce_matches_elementwise_oracle():
    p = R.uniform(0.01, 0.99, (30, 1))
    y = R.integers(0, 2, 30)
    mask = R.random(30) < 0.6
    oracle = -np.mean([y[i] * math.log(p[i, 0]) + (1 - y[i]) * math.log(1 - p[i, 0])
                       for i in range(30) if mask[i]])
    assert abs(bce_loss(Tensor(p), y, mask).item() - oracle) <= 1e-12
    assert check_op_grad(lambda t: bce_loss(t, y, mask), [p]) <= 1e-6


def test_bce_clamps_extremes():
    out = bce_loss(Tensor([[0.0], [1.0]]), [1, 0], [True, True]).item()
    assert abs(out - (-math.log(1e-12))) < 1e-6


def test_bce_errors():
    p = Tensor(np.full((3, 1), 0.5))
    with pytest.raises(EmptyMask):
        bce_loss(p, [0, 1, 0], [False] * 3)
    with pytest.raises(BadProbability):
        bce_loss(Tensor([[1.5]]), [1], [True])


def test_total_loss():
    b, c = Tensor([[0.7]]), Tensor([[2.0]])
    assert total_loss(b, c, 0.1).item() == pytest.approx(0.9)
    assert total_loss(b, c, 0.0) is b
    assert total_loss(b, None, 0.5) is b


def test_loss_config_validation():
    with pytest.raises(BadConfig):
        LossConfig(tau=0)
    with pytest.raises(BadConfig):
        LossConfig(alpha=-1)


def test_contrastive_batches_cover_and_fold_tail():
    batches = contrastive_batches(9, 4, np.random.default_rng(0))
    assert [len(b) for b in batches] == [4, 5]
    assert sorted(np.concatenate(batches).tolist()) == list(range(9))
    with pytest.raises(BatchTooSmall):
        contrastive_batches(1, 4, np.random.default_rng(0))


def test_batched_infonce_is_batch_mean():
    q, k = R.standard_normal((10, 3)), R.standard_normal((10, 3))
    batches = contrastive_batches(10, 4, np.random.default_rng(2))
    expect = np.mean([infonce_loop(q[b], k[b], 0.2) for b in batches])
    assert abs(batched_infonce(Tensor(q), Tensor(k), batches, 0.2).item() - expect) <= 1e-12
