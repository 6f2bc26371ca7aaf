import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ktuplet.errors import DimensionError
from ktuplet.losses import (
    EmbeddedTuplet,
    k_tuplet_grad,
    k_tuplet_loss,
    mse_similarity_loss,
    semi_hard_filter,
    semi_hard_grad,
    semi_hard_loss,
    tuplet_batch_loss,
)
from ktuplet.numeric import squared_euclidean

from conftest import rel_error


def unit(rng, *shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def random_tuplet(rng, k=5, d=6):
    return EmbeddedTuplet(unit(rng, d), unit(rng, d), unit(rng, k, d))


def term_oracle(t, margin):
    d_ap = squared_euclidean(t.f_a, t.f_p)
    return [max(0.0, d_ap - squared_euclidean(t.f_a, fn) + margin) for fn in t.f_n]


def hinge_args(t, margin):
    d_ap = squared_euclidean(t.f_a, t.f_p)
    return [d_ap - squared_euclidean(t.f_a, fn) + margin for fn in t.f_n]


def away_from_kinks(t, margin, gap=1e-3):
    return all(abs(a) > gap for a in hinge_args(t, margin))


def fd_tuplet_grad(loss, t, margin, h=1e-5):
    vecs = [t.f_a.copy(), t.f_p.copy(), t.f_n.copy()]
    grads = [np.zeros_like(v) for v in vecs]
    for v, g in zip(vecs, grads):
        flat, gflat = v.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss(EmbeddedTuplet(*vecs), margin)
            flat[i] = orig - h
            down = loss(EmbeddedTuplet(*vecs), margin)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
    return grads


def test_zero_when_all_hinges_inactive():
    f = np.array([1.0, 0.0])
    t = EmbeddedTuplet(f, f, [[0.0, 1.0], [-1.0, 0.0]])
    assert k_tuplet_loss(t, 0.5) == 0.0


def test_hand_arithmetic_single_negative():
    t = EmbeddedTuplet([1.0, 0.0], [0.0, 1.0], [[1.0, 0.0]])
    assert k_tuplet_loss(t, 0.5) == 2.5


def test_matches_per_term_oracle(rng):
    for _ in range(200):
        t = random_tuplet(rng, k=5)
        expected = np.mean(term_oracle(t, 0.5))
        assert abs(k_tuplet_loss(t, 0.5) - expected) < 1e-12


def test_loss_nonnegative_and_zero_iff_inactive(rng):
    for _ in range(300):
        t = random_tuplet(rng, k=int(rng.integers(1, 7)))
        margin = float(rng.uniform(0.01, 2.0))
        loss = k_tuplet_loss(t, margin)
        assert loss >= 0
        assert (loss == 0) == all(a <= 0 for a in hinge_args(t, margin))


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        EmbeddedTuplet([1.0, 0.0], [1.0, 0.0, 0.0], [[1.0, 0.0]])
    with pytest.raises(DimensionError):
        EmbeddedTuplet([1.0, 0.0], [1.0, 0.0], [[1.0, 0.0, 2.0]])


def test_grad_zero_when_inactive():
    f = np.array([1.0, 0.0])
    t = EmbeddedTuplet(f, f, [[-1.0, 0.0]])
    for g in k_tuplet_grad(t, 0.5):
        assert not np.any(g)


def test_grad_single_active_closed_form(rng):
    t = EmbeddedTuplet([1.0, 0.0], [0.0, 1.0], [[0.8, 0.6]])
    g_a, g_p, g_n = k_tuplet_grad(t, 0.5)
    np.testing.assert_array_equal(g_a, 2 * (t.f_n[0] - t.f_p))
    np.testing.assert_array_equal(g_p, -2 * (t.f_a - t.f_p))
    np.testing.assert_array_equal(g_n[0], 2 * (t.f_a - t.f_n[0]))


def test_grad_matches_finite_differences(rng):
    checked = 0
    while checked < 50:
        t = random_tuplet(rng, k=int(rng.integers(1, 7)), d=5)
        margin = float(rng.uniform(0.1, 1.5))
        if not away_from_kinks(t, margin):
            continue
        analytic = k_tuplet_grad(t, margin)
        numeric = fd_tuplet_grad(k_tuplet_loss, t, margin)
        for a, n in zip(analytic, numeric):
            assert rel_error(a, n) < 1e-6
        checked += 1


def test_semi_hard_grad_matches_finite_differences(rng):
    checked = 0
    while checked < 30:
        t = random_tuplet(rng, k=5, d=5)
        margin = 0.8
        if not away_from_kinks(t, margin) or not semi_hard_filter(t, margin):
            continue
        analytic = semi_hard_grad(t, margin)
        numeric = fd_tuplet_grad(semi_hard_loss, t, margin)
        for a, n in zip(analytic, numeric):
            assert rel_error(a, n) < 1e-6
        checked += 1


def test_permutation_invariance(rng):
    for _ in range(50):
        t = random_tuplet(rng, k=6)
        perm = rng.permutation(6)
        s = EmbeddedTuplet(t.f_a, t.f_p, t.f_n[perm])
        assert k_tuplet_loss(t, 0.5) == k_tuplet_loss(s, 0.5)
        gt, gs = k_tuplet_grad(t, 0.5), k_tuplet_grad(s, 0.5)
        np.testing.assert_array_equal(gt[2][perm], gs[2])
        np.testing.assert_allclose(gt[0], gs[0], atol=1e-15)


def test_filter_all_violating():
    f = np.array([1.0, 0.0])
    t = EmbeddedTuplet(f, [0.0, 1.0], [[1.0, 0.0], [0.9, np.sqrt(0.19)]])
    assert semi_hard_filter(t, 0.5) == [0, 1]


def test_filter_all_satisfied_gives_zero():
    f = np.array([1.0, 0.0])
    t = EmbeddedTuplet(f, f, [[-1.0, 0.0], [0.0, 1.0]])
    assert semi_hard_filter(t, 0.5) == []
    assert semi_hard_loss(t, 0.5) == 0.0
    for g in semi_hard_grad(t, 0.5):
        assert not np.any(g)


def test_filter_matches_enumeration(rng):
    for _ in range(100):
        t = random_tuplet(rng, k=10)
        args = hinge_args(t, 0.5)
        assert semi_hard_filter(t, 0.5) == [i for i in range(10) if args[i] > 0]
        gaps = [squared_euclidean(t.f_a, fn) - squared_euclidean(t.f_a, t.f_p) for fn in t.f_n]
        assert semi_hard_filter(t, 0.5, verbatim=True) == [i for i in range(10) if gaps[i] >= 0.5]


def test_semi_hard_equals_k_tuplet_when_all_active():
    f = np.array([1.0, 0.0])
    t = EmbeddedTuplet(f, [0.0, 1.0], [[1.0, 0.0], [0.6, 0.8], [0.8, 0.6]])
    assert len(semi_hard_filter(t, 0.5)) == 3
    assert semi_hard_loss(t, 0.5) == k_tuplet_loss(t, 0.5)


def test_semi_hard_mixed_terms(rng):
    seen = 0
    while seen < 100:
        t = random_tuplet(rng, k=6)
        terms = term_oracle(t, 0.5)
        positive = [x for x in terms if x > 0]
        if not positive or len(positive) == len(terms):
            continue
        assert abs(semi_hard_loss(t, 0.5) - sum(positive) / len(positive)) < 1e-12
        seen += 1


def test_verbatim_loss_is_always_zero(rng):
    for _ in range(100):
        t = random_tuplet(rng, k=5)
        assert semi_hard_loss(t, 0.5, verbatim=True) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.booleans(), st.booleans())
def test_batch_path_agrees_with_scalar(seed, k, semi, verbatim):
    r = np.random.default_rng(seed)
    B, d = 7, 4
    f_a, f_p, f_n = unit(r, B, d), unit(r, B, d), unit(r, B, k, d)
    res = tuplet_batch_loss(f_a, f_p, f_n, 0.5, semi_hard=semi, verbatim=verbatim)
    losses, ga, gp, gn = [], [], [], []
    for b in range(B):
        t = EmbeddedTuplet(f_a[b], f_p[b], f_n[b])
        if semi:
            losses.append(semi_hard_loss(t, 0.5, verbatim))
            g = semi_hard_grad(t, 0.5, verbatim)
        else:
            losses.append(k_tuplet_loss(t, 0.5))
            g = k_tuplet_grad(t, 0.5)
        ga.append(g[0] / B), gp.append(g[1] / B), gn.append(g[2] / B)
    np.testing.assert_allclose(res.per_tuplet, losses, atol=1e-12)
    assert abs(res.loss - np.mean(losses)) < 1e-12
    np.testing.assert_allclose(res.grad_a, ga, atol=1e-12)
    np.testing.assert_allclose(res.grad_p, gp, atol=1e-12)
    np.testing.assert_allclose(res.grad_n, gn, atol=1e-12)


def test_mse_similarity_loss(rng):
    s = np.array([0.2, 0.7, 1.0])
    loss, grad = mse_similarity_loss(s, s)
    assert loss == 0.0 and not np.any(grad)
    loss, _ = mse_similarity_loss([0.0, 1.0, 0.0], [1.0, 0.0, 1.0])
    assert loss == 1.0
    for _ in range(50):
        n = int(rng.integers(1, 30))
        scores, targets = rng.uniform(0, 1, n), rng.integers(0, 2, n).astype(float)
        loss, grad = mse_similarity_loss(scores, targets)
        assert abs(loss - sum((a - b) ** 2 for a, b in zip(scores, targets)) / n) < 1e-12
        np.testing.assert_allclose(grad, 2 * (scores - targets) / n, atol=1e-15)
    with pytest.raises(DimensionError):
        mse_similarity_loss([0.1, 0.2], [1.0])
