import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from openset_ssl.errors import ValidationError
from openset_ssl.mixmatch import (
    MixMatchConfig,
    build_classifier,
    guess_label,
    labeled_loss,
    mixup,
    objective_grad,
    predict,
    predict_proba,
    sharpen,
    train_semisl,
    unlabeled_loss,
)
from openset_ssl.sampler import UniformSampler
from openset_ssl.store import SyntheticSpec, generate_synthetic_openset


def test_sharpen_identity_at_t1(rng):
    p = rng.dirichlet(np.ones(5), 4)
    assert np.allclose(sharpen(p, 1.0), p, atol=1e-15)


def test_sharpen_example():
    assert np.allclose(sharpen([0.6, 0.4], 0.5), [0.36 / 0.52, 0.16 / 0.52], atol=1e-15)
    assert np.allclose(sharpen([0.6, 0.4], 0.5), [0.69231, 0.30769], atol=5e-6)


def test_sharpen_small_t_is_one_hot():
    assert np.array_equal(sharpen([0.2, 0.5, 0.3], 1e-6), [0.0, 1.0, 0.0])


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 5.0))
def test_sharpen_is_distribution(seed, T):
    p = np.random.default_rng(seed).dirichlet(np.ones(4))
    q = sharpen(p, T)
    assert q.sum() == pytest.approx(1.0) and np.argmax(q) == np.argmax(p)


class Stub:
    """Returns canned predictions in order, ignoring its input."""

    def __init__(self, *preds):
        self.preds = [np.atleast_2d(p) for p in preds]
        self.calls = 0

    def __call__(self, x):
        out = self.preds[self.calls % len(self.preds)]
        self.calls += 1
        return out


def test_guess_label_stubbed():
    assert np.allclose(guess_label(Stub([1.0, 0.0], [0.0, 1.0]), [[0.0]], 2, 1.0, 0.1, np.random.default_rng(0)), [0.5, 0.5])
    q = guess_label(Stub([0.8, 0.2], [0.6, 0.4]), [[0.0]], 2, 0.5, 0.1, np.random.default_rng(0))
    assert np.allclose(q, [[0.49 / 0.58, 0.09 / 0.58]], atol=1e-14)
    assert np.allclose(q, [[0.84483, 0.15517]], atol=5e-6)


def test_guess_label_zero_sigma(rng):
    model = build_classifier(3, 4, MixMatchConfig(), rng)
    x = rng.standard_normal((5, 3))
    q = guess_label(lambda a: predict_proba(model, a), x, 3, 0.5, 0.0, rng)
    assert np.allclose(q, sharpen(predict_proba(model, x), 0.5), atol=1e-15)


def test_mixup_examples():
    x1, t1, x2, t2 = np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, 1.0])
    xm, tm, lam = mixup(x1, t1, x2, t2, 0.75, None, lam=1.0)
    assert np.array_equal(xm, x1) and np.array_equal(tm, t1) and lam == 1.0
    xm, tm, _ = mixup(x1, t1, x2, t2, 0.75, None, lam=0.5)
    assert np.array_equal(xm, [0.5, 0.5]) and np.array_equal(tm, [0.5, 0.5])
    xm, tm, lam = mixup(x1, t1, x2, t2, 0.75, None, lam=0.3)
    assert lam == pytest.approx(0.7) and np.allclose(xm, [0.7, 0.3]) and np.allclose(tm, [0.7, 0.3])


def test_mixup_dominated_by_first(rng):
    x1, x2 = rng.standard_normal((100, 3)), rng.standard_normal((100, 3))
    t = np.eye(3)[rng.integers(3, size=100)]
    xm, tm, lam = mixup(x1, t, x2, t[::-1], 0.75, rng)
    assert lam.shape == (100,) and np.all(lam >= 0.5) and np.all(lam <= 1)
    assert np.allclose(tm.sum(1), 1)
    assert np.allclose(xm, lam[:, None] * x1 + (1 - lam[:, None]) * x2)


def test_labeled_loss_examples():
    assert labeled_loss([1, 0], [1, 0]) == pytest.approx(0.0, abs=1e-12)
    assert labeled_loss([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert labeled_loss([0.5, 0.5], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert np.isfinite(labeled_loss([0, 1], [1, 0]))


def test_unlabeled_loss_examples():
    assert unlabeled_loss([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert unlabeled_loss([1, 0], [0, 1]) == pytest.approx(1.0, abs=1e-15)
    assert unlabeled_loss([0.5, 0.5], [1, 0]) == pytest.approx(0.25, abs=1e-15)


def _fd(f, params, h=1e-5):
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = f()
            p[idx] = old - h
            fm = f()
            p[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("seed", range(5))
def test_objective_gradient(seed):
    rng = np.random.default_rng(seed)
    C = 3
    model = build_classifier(6, C, MixMatchConfig(hidden=(5,)), rng)
    x_l, x_u = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    t_l = rng.dirichlet(np.ones(C), 4)
    q_u = rng.dirichlet(np.ones(C), 4)
    lam = rng.uniform(0, 100)
    _, _, _, grads = objective_grad(model, x_l, t_l, x_u, q_u, lam)

    def f():
        return objective_grad(model, x_l, t_l, x_u, q_u, lam)[0]

    for g, n in zip(grads, _fd(f, model.params)):
        assert np.max(np.abs(g - n) / np.maximum(np.maximum(np.abs(g), np.abs(n)), 1e-7)) < 1e-4


def test_objective_parts_add_up(rng):
    model = build_classifier(2, 2, MixMatchConfig(), rng)
    x = rng.standard_normal((3, 2))
    t = np.eye(2)[[0, 1, 1]]
    loss, ll, lu, _ = objective_grad(model, x, t, x, t, 7.0)
    p = predict_proba(model, x)
    assert ll == pytest.approx(labeled_loss(t, p)) and lu == pytest.approx(unlabeled_loss(t, p))
    assert loss == pytest.approx(ll + 7.0 * lu)


@pytest.fixture(scope="module")
def two_class():
    s = generate_synthetic_openset(
        SyntheticSpec(C=2, n_labeled=20, n_unlabeled_inlier=200, n_ood=0, n_val=50, n_test=400, class_separation=6.0)
    )
    return s.subset("labeled"), s.subset("unlabeled"), s.subset("validation"), s.subset("test")


def test_supervised_limit(two_class):
    lab, unl, val, test = two_class
    cfg = MixMatchConfig(lambda_u=0.0, epochs=2, steps_per_epoch=100, learning_rate=3e-3, select_best_val=False)
    res = train_semisl(lab, unl, UniformSampler(unl.ids), cfg)
    assert len(res.trace) == 200
    assert np.mean(predict(res.classifier, test.vectors) == test.labels) > 0.95


def test_epochs_zero_returns_initial(two_class):
    lab, unl, val, _ = two_class
    cfg = MixMatchConfig(epochs=0, seed=4)
    res = train_semisl(lab, unl, UniformSampler(unl.ids), cfg, validation=val)
    init = build_classifier(lab.dim, 2, cfg, np.random.default_rng(4))
    assert res.trace == []
    assert all(np.array_equal(a, b) for a, b in zip(res.classifier.params, init.params))


def test_training_deterministic_and_traced(two_class):
    lab, unl, val, _ = two_class
    cfg = MixMatchConfig(epochs=1, steps_per_epoch=20, seed=9)
    scores = {i: float(k) for k, i in enumerate(unl.ids)}
    a = train_semisl(lab, unl, UniformSampler(unl.ids), cfg, validation=val, ood_scores=scores)
    b = train_semisl(lab, unl, UniformSampler(unl.ids), cfg, validation=val, ood_scores=scores)
    assert a.trace == b.trace
    assert all(np.array_equal(x, y) for x, y in zip(a.classifier.params, b.classifier.params))
    assert a.trace[0].lambda_u == 0.0 and a.trace[10].lambda_u == pytest.approx(75.0 * 10 / 500)
    assert all(0 <= r.mean_ood_drawn < len(unl) and 0 <= r.acc_val <= 1 for r in a.trace)


def test_best_validation_checkpoint(two_class):
    lab, unl, val, _ = two_class
    cfg = MixMatchConfig(epochs=1, steps_per_epoch=30, seed=1)
    res = train_semisl(lab, unl, UniformSampler(unl.ids), cfg, validation=val)
    best = max(r.acc_val for r in res.trace)
    assert np.mean(predict(res.classifier, val.vectors) == val.labels) == best


def test_config_validation():
    for kw in (dict(k_augment=0), dict(temperature=0), dict(ema_decay=1.0), dict(sampler_mode="greedy")):
        with pytest.raises(ValidationError):
            MixMatchConfig(**kw).validate()
    with pytest.raises(ValidationError):
        sharpen([0.5, 0.5], 0)
