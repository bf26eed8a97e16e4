import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import FD_TOL, rel_err
from semedge.errors import ConfigError, DataError, NumericError
from semedge.loss import (
    LossValue, binary_edge_loss, compute_beta, edge_any, multilabel_loss, per_class_losses,
    reweighted_softmax_loss, softmax_edge_probs,
)


def naive_multilabel(a, y, beta):
    """Direct transcription with explicit logs; fine for moderate activations."""
    s = 1.0 / (1.0 + np.exp(-a))
    return float((-beta * y * np.log(s) - (1 - beta) * (1 - y) * np.log(1 - s)).sum())


def naive_softmax(a, lab, beta):
    total = 0.0
    for y in range(lab.shape[0]):
        for x in range(lab.shape[1]):
            col = a[:, y, x]
            p = np.exp(col) / np.exp(col).sum()
            w = beta if lab[y, x] > 0 else 1 - beta
            total -= w * math.log(p[lab[y, x]])
    return total


def fd_grad(f, a, n, rng, eps=1e-3):
    """Relative errors at n sampled entries of the central difference of f."""
    flat = list(np.ndindex(a.shape))
    out = []
    for i in rng.choice(len(flat), size=min(n, len(flat)), replace=False):
        idx = flat[i]
        a2 = a.copy()
        a2[idx] += eps
        fp = f(a2)
        a2[idx] -= 2 * eps
        out.append((idx, (fp - f(a2)) / (2 * eps)))
    return out


# ------------------------------------------------------------------------ beta


def test_beta_examples():
    gt = np.zeros((2, 2, 2))
    gt[:, 0, 0] = 1
    assert compute_beta(gt).beta == 0.75
    assert compute_beta(np.zeros((3, 4, 4))).beta == 1.0
    assert compute_beta(np.ones((3, 4, 4))).beta == 0.0
    with pytest.raises(ConfigError):
        compute_beta(np.zeros((0, 2, 2)))


@given(arrays(np.uint8, (3, 4, 5), elements=st.integers(0, 1)), st.permutations(range(3)))
def test_beta_class_permutation_invariant(gt, perm):
    assert compute_beta(gt).beta == compute_beta(gt[list(perm)]).beta


# ------------------------------------------------------------ multi-label loss


def test_worked_example_half_probability():
    lv, _ = multilabel_loss(np.zeros((1, 1, 1)), np.ones((1, 1, 1)), beta=0.75)
    assert abs(lv.scalar - 0.519860) < 1e-6
    assert abs(lv.scalar + 0.75 * math.log(0.5)) < 1e-15


def test_worked_example_perfect_prediction():
    values = [multilabel_loss(np.full((1, 1, 1), a), np.ones((1, 1, 1)), beta=0.75)[0].scalar
              for a in (10.0, 40.0, 800.0)]
    assert values[0] > values[1] > values[2] >= 0
    assert values[2] < 1e-6


def test_matches_naive_formula():
    rng = np.random.default_rng(0)
    a = rng.normal(scale=3, size=(3, 5, 5))
    y = (rng.random((3, 5, 5)) < 0.3).astype(float)
    b = compute_beta(y).beta
    lv, _ = multilabel_loss(a, y)
    assert abs(lv.scalar - naive_multilabel(a, y, b)) < 1e-10


def test_extreme_activations_finite():
    a = np.array([[[-1e4, 1e4], [0.0, -50.0]]])
    y = np.array([[[1, 0], [1, 0]]])
    lv, g = multilabel_loss(a, y, beta=0.5)
    assert math.isfinite(lv.scalar) and np.all(np.isfinite(g))
    assert abs(lv.scalar - 1e4 - 0.5 * math.log(2) - 0.5 * math.log1p(math.exp(-50))) < 1e-9


def test_non_finite_activation():
    with pytest.raises(NumericError):
        multilabel_loss(np.array([[[np.nan]]]), np.ones((1, 1, 1)))


def test_shape_mismatch():
    with pytest.raises(ConfigError):
        multilabel_loss(np.zeros((2, 3, 3)), np.zeros((2, 3, 4)))


def test_multilabel_fd_gradient():
    rng = np.random.default_rng(1)
    a = rng.normal(scale=2, size=(2, 4, 4))
    y = (rng.random((2, 4, 4)) < 0.4).astype(float)
    b = compute_beta(y).beta
    _, g = multilabel_loss(a, y, b)
    checks = fd_grad(lambda z: multilabel_loss(z, y, b)[0].scalar, a, 32, rng)
    assert max(rel_err(g[idx], num) for idx, num in checks) < FD_TOL


@given(seed=st.integers(0, 2**32 - 1))
def test_closed_form_gradient(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(scale=4, size=(3, 3, 3))
    y = (rng.random((3, 3, 3)) < 0.5).astype(float)
    b = float(rng.random())
    _, g = multilabel_loss(a, y, b)
    s = 1 / (1 + np.exp(-a))
    expected = np.where(y == 1, b * (s - 1), (1 - b) * s)
    np.testing.assert_allclose(g, expected, rtol=1e-12, atol=1e-15)


@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 5))
def test_separable_over_classes(seed, k):
    rng = np.random.default_rng(seed)
    a = rng.normal(scale=3, size=(k, 4, 3))
    y = (rng.random((k, 4, 3)) < 0.3).astype(float)
    beta = compute_beta(y)
    total = multilabel_loss(a, y, beta)[0].scalar
    parts = per_class_losses(a, y, beta).sum()
    assert abs(total - parts) <= 1e-9 * max(1.0, abs(total))


@given(seed=st.integers(0, 2**32 - 1))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(scale=10, size=(1, 3, 4, 4))
    y = (rng.random((3, 4, 4)) < 0.5).astype(np.uint8)
    assert multilabel_loss(a, y[None])[0].scalar >= 0
    assert binary_edge_loss(a[:, :1], edge_any(y)[None])[0].scalar >= 0
    lab = rng.integers(0, 3, size=(4, 4))
    assert reweighted_softmax_loss(a, lab)[0].scalar >= 0


def test_loss_value_breakdown_sums():
    lv = LossValue.single("side5", 2.0) + LossValue.single("fused", 3.5)
    assert lv.scalar == sum(lv.breakdown.values()) == 5.5


# --------------------------------------------------------------- softmax loss


def test_softmax_uniform_is_ln2():
    a = np.zeros((2, 1, 2))
    lab = np.array([[1, 0]])
    lv, _ = reweighted_softmax_loss(a, lab)
    assert abs(lv.scalar - math.log(2)) < 1e-6
    for beta in (0.1, 0.75):
        assert abs(reweighted_softmax_loss(a, lab, beta)[0].scalar - math.log(2)) < 1e-12


def test_softmax_confident_correct_is_zero():
    lab = np.array([[0, 1, 2]])
    a = np.full((3, 1, 3), -50.0)
    a[lab[0], 0, np.arange(3)] = 50.0
    assert reweighted_softmax_loss(a, lab)[0].scalar < 1e-30


def test_softmax_weighting_direction():
    # edge pixels carry beta, non-edge pixels 1 - beta
    a = np.zeros((2, 1, 4))
    lab = np.array([[1, 0, 0, 0]])
    lv, _ = reweighted_softmax_loss(a, lab)
    beta = 0.75
    assert abs(lv.scalar - (beta + 3 * (1 - beta)) * math.log(2)) < 1e-12


def test_softmax_matches_naive():
    rng = np.random.default_rng(2)
    a = rng.normal(scale=2, size=(4, 3, 3))
    lab = rng.integers(0, 4, size=(3, 3))
    lv, _ = reweighted_softmax_loss(a, lab, 0.8)
    assert abs(lv.scalar - naive_softmax(a, lab, 0.8)) < 1e-10


def test_softmax_fd_gradient():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(3, 3, 3))
    lab = rng.integers(0, 3, size=(3, 3))
    _, g = reweighted_softmax_loss(a, lab)
    checks = fd_grad(lambda z: reweighted_softmax_loss(z, lab)[0].scalar, a, 27, rng)
    assert max(rel_err(g[idx], num) for idx, num in checks) < FD_TOL


def test_softmax_label_out_of_range():
    with pytest.raises(DataError):
        reweighted_softmax_loss(np.zeros((2, 2, 2)), np.array([[0, 2], [1, 0]]))


def test_softmax_edge_probs():
    a = np.zeros((1, 3, 2, 2))
    p = softmax_edge_probs(a)
    assert p.shape == (1, 2, 2, 2)
    np.testing.assert_allclose(p, 1 / 3)


# ---------------------------------------------------------------- binary edge


def test_binary_all_background_is_zero():
    lv, g = binary_edge_loss(np.zeros((1, 1, 3, 3)), np.zeros((3, 3)))
    assert lv.scalar == 0.0 and not g.any()


def test_binary_single_edge_pixel():
    gt = np.zeros((1, 2, 2))
    gt[0, 0, 0] = 1
    lv, _ = binary_edge_loss(np.array([[[0.0, -800], [-800, -800]]]), gt, beta=0.75)
    assert abs(lv.scalar - 0.519860) < 1e-6


def test_or_collapse():
    gt = np.zeros((4, 3, 3), np.uint8)
    gt[0, 1, 1] = 1
    gt[2, 1, 1] = 1
    gt[3, 0, 2] = 1
    anym = edge_any(gt)
    assert anym.shape == (1, 3, 3)
    assert anym[0, 1, 1] == 1 and anym[0, 0, 2] == 1 and anym.sum() == 2


def test_binary_beta_from_or_map():
    gt = np.zeros((3, 2, 2), np.uint8)
    gt[:, 0, 0] = 1
    a = np.zeros((1, 2, 2))
    lv, _ = binary_edge_loss(a, edge_any(gt))
    # beta is the non-edge fraction of the collapsed map: 3/4
    assert abs(lv.scalar - (0.75 + 3 * 0.25) * math.log(2)) < 1e-12
