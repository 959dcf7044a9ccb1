import math

import numpy as np
import pytest

from dualmetric.gradcheck import entry_errors, numeric_grad
from dualmetric.numerics import Rng
from dualmetric.proxy import ProxySet, init_proxies, proxy_loss_labeled, proxy_loss_unlabeled
from dualmetric.scorer import PseudoLabel


def brute_loss(x, c, proxies, form="as_written"):
    """Direct transcription with math.exp, no stabilisation."""
    num = math.exp(-math.dist(x, proxies[c]))
    den = sum(math.exp(-math.dist(x, p)) for k, p in enumerate(proxies)
              if form == "softmax_all" or k != c)
    return -math.log(num / den)


def test_equidistant_two_classes_is_zero():
    P = ProxySet([[1.0, 0.0], [-1.0, 0.0]])
    loss, _ = proxy_loss_labeled([0.0, 0.0], 0, P)
    assert loss == 0.0


def test_three_four_five_example():
    P = ProxySet([[0.0, 0.0], [3.0, 4.0]])
    loss, _ = proxy_loss_labeled([0.0, 0.0], 0, P)
    assert loss == -5.0


def test_all_equal_distances_general_C():
    C = 5
    ang = 2 * np.pi * np.arange(C) / C
    P = ProxySet(np.stack([np.cos(ang), np.sin(ang)], axis=1))
    loss, _ = proxy_loss_labeled([0.0, 0.0], 2, P)
    assert loss == pytest.approx(-math.log(1 / (C - 1)), abs=1e-12)


@pytest.mark.parametrize("form", ["as_written", "softmax_all"])
def test_matches_brute_force(rng, form):
    for _ in range(100):
        P = ProxySet(rng.normal(size=(4, 3)))
        x = rng.normal(size=3)
        c = int(rng.integers(0, 4))
        loss, _ = proxy_loss_labeled(x, c, P, form)
        assert loss == pytest.approx(brute_loss(x, c, P.proxies, form), abs=1e-12)


def test_softmax_all_is_non_negative(rng):
    for _ in range(100):
        P = ProxySet(rng.normal(size=(3, 2)) * 5)
        assert proxy_loss_labeled(rng.normal(size=2) * 5, 1, P, "softmax_all")[0] >= 0


def test_batch_mean(rng):
    P = ProxySet(rng.normal(size=(4, 3)))
    X = rng.normal(size=(6, 3))
    y = rng.integers(0, 4, size=6)
    loss, _ = proxy_loss_labeled(X, y, P)
    assert loss == pytest.approx(np.mean([brute_loss(x, c, P.proxies) for x, c in zip(X, y)]),
                                 abs=1e-12)


def test_needs_two_classes():
    with pytest.raises(ValueError):
        proxy_loss_labeled([0.0], 0, ProxySet([[1.0]]))


@pytest.mark.parametrize("form", ["as_written", "softmax_all"])
@pytest.mark.parametrize("seed", range(5))
def test_labeled_gradients_match_fd(form, seed):
    rng = np.random.default_rng(seed)
    P = ProxySet(rng.normal(size=(4, 3)))
    x = rng.normal(size=(2, 3))
    y = rng.integers(0, 4, size=2)

    def loss():
        return proxy_loss_labeled(x, y, ProxySet(P.proxies), form)[0]

    _, gx = proxy_loss_labeled(x, y, P, form)
    assert entry_errors(gx, numeric_grad(loss, x)).max() <= 1e-4
    assert entry_errors(P.grad.copy(), numeric_grad(loss, P.proxies)).max() <= 1e-4


def test_unlabeled_same_value_no_proxy_grad(rng):
    P = ProxySet(rng.normal(size=(4, 3)))
    P.grad[:] = rng.normal(size=(4, 3))
    before = P.grad.copy()
    x = rng.normal(size=3)
    lu, gu = proxy_loss_unlabeled(x, PseudoLabel(1, 0.8), P)
    assert P.grad.tobytes() == before.tobytes()
    ll, gl = proxy_loss_labeled(x, 1, ProxySet(P.proxies))
    assert lu == ll
    np.testing.assert_array_equal(gu, gl)


def test_unlabeled_gradient_matches_fd(rng):
    P = ProxySet(rng.normal(size=(3, 4)))
    x = rng.normal(size=(3, 4))
    ids = np.array([0, 2, 2])
    _, gx = proxy_loss_unlabeled(x, ids, P)
    fd = numeric_grad(lambda: proxy_loss_unlabeled(x, ids, P)[0], x)
    assert entry_errors(gx, fd).max() <= 1e-4


def test_unlabeled_rejects_absent_label():
    P = ProxySet(np.eye(3))
    with pytest.raises(ValueError):
        proxy_loss_unlabeled(np.zeros(3), PseudoLabel(None, 0.3), P)
    with pytest.raises(ValueError):
        proxy_loss_unlabeled(np.zeros((2, 3)), np.array([0, -1]), P)


def test_translation_invariance(rng):
    for _ in range(50):
        P = rng.normal(size=(4, 3))
        x = rng.normal(size=3)
        shift = rng.normal(size=3) * 10
        a = proxy_loss_labeled(x, 2, ProxySet(P))[0]
        b = proxy_loss_labeled(x + shift, 2, ProxySet(P + shift))[0]
        assert abs(a - b) <= 1e-10


def test_monotone_toward_target(rng):
    for _ in range(200):
        P = rng.normal(size=(3, 2)) * 3
        x0 = rng.normal(size=2) * 3
        c = 0
        prev = None
        for s in np.linspace(0, 1, 11):
            x = x0 + s * (P[c] - x0)
            loss = proxy_loss_labeled(x, c, ProxySet(P))[0]
            d_others = [np.linalg.norm(x - P[k]) for k in (1, 2)]
            if prev is not None and all(d >= p for d, p in zip(d_others, prev[1])):
                assert loss <= prev[0] + 1e-12
            prev = (loss, d_others)


def test_init_proxies():
    a, b = init_proxies(Rng(4), 4, 8), init_proxies(Rng(4), 4, 8)
    assert a.proxies.shape == (4, 8)
    assert a.proxies.tobytes() == b.proxies.tobytes()
    assert np.isfinite(a.proxies).all()
    assert np.abs(a.proxies).max() < 1.0
    with pytest.raises(ValueError):
        init_proxies(Rng(0), 1, 3)
