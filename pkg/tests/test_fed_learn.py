import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fedsandbox.data import balanced_split, encode, shard
from fedsandbox.errors import NumericError
from fedsandbox.fed_learn import (
    Model,
    TrainConfig,
    TrainReport,
    clip_rows,
    dp_sgd_step,
    evaluate,
    export_model,
    grad_logloss,
    node_noise,
    per_example_grads,
    secure_round,
    train,
    train_nonprivate,
)
from fedsandbox.federation import Scenario
from fedsandbox.secure_agg import codec_for

from oracles import finite_difference_grad

# heart, balanced_split seed 0, rng seed 0: first run pinned (24/34 and 23/34 test rows)
HEART_BASELINE_CLIPPED = 24 / 34
HEART_BASELINE_PLAIN = 23 / 34


@pytest.fixture(scope="module")
def heart_split(heart):
    return balanced_split(heart[0], 0)


def test_grad_at_zero_model():
    x = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(grad_logloss(Model.zeros(3), x, 1.0), -0.5 * np.append(x, 1.0))


def test_grad_label_identity():
    rng = np.random.default_rng(0)
    m, x = Model(rng.normal(size=4), 0.3), rng.normal(size=4)
    p = m.predict_proba(x[None])[0]
    total = grad_logloss(m, x, 0.0) + grad_logloss(m, x, 1.0)
    np.testing.assert_allclose(total, (2 * p - 1) * np.append(x, 1.0), rtol=1e-12)
    zero = Model.zeros(4)
    assert np.all(grad_logloss(zero, x, 0.0) + grad_logloss(zero, x, 1.0) == 0)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = int(rng.integers(1, 20))
        theta = rng.normal(0, 1, d + 1)
        x, y = rng.normal(0, 1, d), float(rng.integers(0, 2))
        g = grad_logloss(Model.from_params(theta), x, y)
        fd = finite_difference_grad(theta, x, y)
        assert np.max(np.abs(g - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


def test_grad_rejects_bad_input():
    with pytest.raises(NumericError):
        grad_logloss(Model.zeros(2), np.array([np.nan, 1.0]), 1.0)
    with pytest.raises(ValueError):
        grad_logloss(Model.zeros(2), np.ones(3), 1.0)


def test_per_example_matches_single():
    rng = np.random.default_rng(2)
    m = Model(rng.normal(size=5), -0.2)
    X, y = rng.normal(size=(7, 5)), rng.integers(0, 2, 7).astype(float)
    G = per_example_grads(m, X, y)
    for i in range(7):
        np.testing.assert_allclose(G[i], grad_logloss(m, X[i], y[i]), rtol=1e-12)


@settings(max_examples=100)
@given(G=arrays(float, (6, 4), elements=st.floats(-1e6, 1e6)), c=st.floats(1e-3, 1e3))
def test_clip_norm_invariant(G, c):
    norms = np.linalg.norm(clip_rows(G, c), axis=1)
    assert np.all(norms <= c + 1e-12 * max(1.0, c))


def test_clip_identity_below_bound():
    G = np.array([[0.3, 0.4], [0.0, 0.1]])
    assert np.array_equal(clip_rows(G, 1.0), G)


def test_dp_step_without_noise_is_sgd():
    rng = np.random.default_rng(3)
    m = Model(rng.normal(size=3), 0.1)
    X, y = rng.normal(size=(10, 3)), rng.integers(0, 2, 10).astype(float)
    cfg = TrainConfig(clip_norm=math.inf, max_batch=10, lr=0.5)
    out = dp_sgd_step(m, (X, y), cfg, 0.0, rng)
    manual = m.params - 0.5 * sum(grad_logloss(m, X[i], y[i]) for i in range(10)) / 10
    np.testing.assert_allclose(out.params, manual, rtol=1e-12)


def test_dp_step_reproducible():
    X, y = np.ones((4, 2)), np.array([0.0, 1.0, 1.0, 0.0])
    cfg = TrainConfig()
    a = dp_sgd_step(Model.zeros(2), (X, y), cfg, 1.3, np.random.default_rng(9))
    b = dp_sgd_step(Model.zeros(2), (X, y), cfg, 1.3, np.random.default_rng(9))
    assert np.array_equal(a.params, b.params)


def test_dp_step_empty_batch_is_noise_only():
    cfg = TrainConfig(lr=1.0, max_batch=1, clip_norm=2.0)
    out = dp_sgd_step(Model.zeros(2), (np.empty((0, 2)), np.empty(0)), cfg, 1.0, np.random.default_rng(5))
    expected = -np.random.default_rng(5).normal(0.0, 2.0, 3)
    np.testing.assert_allclose(out.params, expected, rtol=1e-12)


@pytest.mark.parametrize("k", [2, 8, 64])
def test_secure_noise_budget(k):
    sigma, clip, d = 1.7, 0.8, 10_000
    rng = np.random.default_rng(k)
    noise = node_noise(rng, np.full(k, sigma / math.sqrt(k)), clip, d)
    codec = codec_for(k, 10 * sigma * clip + 1)
    total = secure_round(noise, codec, step=0, secret=b"budget", use_masks=True)
    assert np.var(total) == pytest.approx((sigma * clip) ** 2, rel=0.03)
    assert np.max(np.abs(total - noise.sum(axis=0))) <= k * 2**-16


def test_masks_do_not_change_training(heart_split):
    shards = shard(heart_split.train, 4, 0)
    cfg = TrainConfig(scenario=Scenario.SECURE, k=4, epochs=3)
    a, _ = train(shards, cfg, np.random.default_rng(4))
    from dataclasses import replace

    b, _ = train(shards, replace(cfg, mask_rounds=False), np.random.default_rng(4))
    assert np.array_equal(a.params, b.params)


@pytest.mark.parametrize("k", [2, 4, 16])
def test_secure_achieved_eps_equals_central(heart_split, k):
    _, central = train(heart_split, TrainConfig(epochs=2), np.random.default_rng(0))
    _, secure = train(shard(heart_split.train, k, 0), TrainConfig(epochs=2, scenario="secure", k=k),
                      np.random.default_rng(0))
    assert secure == pytest.approx(central, abs=1e-3)


def test_local_larger_k_not_better(heart_split):
    test = encode(heart_split.test)[:2]

    def mean_acc(k):
        data = shard(heart_split.train, k, 0)
        cfg = TrainConfig(target_eps=1.0, scenario=Scenario.LOCAL, k=k)
        return np.mean([evaluate(train(data, cfg, np.random.default_rng(s))[0], test) for s in range(50)])

    assert mean_acc(16) <= mean_acc(4)


def test_huge_eps_matches_baseline(heart_split):
    test = encode(heart_split.test)[:2]
    accs = [evaluate(train(heart_split, TrainConfig(target_eps=1e6), np.random.default_rng(s))[0], test)
            for s in range(20)]
    base = evaluate(train_nonprivate(heart_split, TrainConfig(), np.random.default_rng(0)), test)
    se = np.std(accs, ddof=1) / math.sqrt(len(accs))
    assert abs(np.mean(accs) - base) <= 2 * se + 1 / 34


def test_baseline_pinned(heart_split):
    cfg = TrainConfig()
    assert evaluate(train_nonprivate(heart_split, cfg, np.random.default_rng(0)), heart_split.test) == HEART_BASELINE_CLIPPED
    plain = train_nonprivate(heart_split, cfg, np.random.default_rng(0), keep_clipping=False)
    assert evaluate(plain, heart_split.test) == HEART_BASELINE_PLAIN


def test_small_shard_warning(heart_split):
    rep = TrainReport(0, 0, 0, 0)
    train(shard(heart_split.train, 64, 0), TrainConfig(epochs=1, scenario="local", k=64, max_batch=32),
          np.random.default_rng(0), rep)
    assert rep.warnings and "nodes expect < 1 row" in rep.warnings[0]


def test_evaluate_constant_model_on_balanced(heart_split):
    X, y, _ = encode(heart_split.test)
    assert evaluate(Model(np.zeros(X.shape[1]), 1.0), (X, y)) == 0.5


def test_evaluate_perfect_separator():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    assert evaluate(Model(np.array([5.0]), 0.0), (X, np.array([0.0, 0.0, 1.0, 1.0]))) == 1.0


def test_train_config_steps():
    cfg = TrainConfig(epochs=20)
    assert cfg.steps(48842) == 20 * 202
    assert cfg.sampling_rate(100) == 1.0


def test_export_model(tmp_path):
    path = tmp_path / "m.txt"
    export_model(Model(np.array([0.5, -1.0]), 0.25), ["a", "b=x"], path)
    assert path.read_text().splitlines() == ["a 0.5", "b=x -1.0", "(bias) 0.25"]
