import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from i2iunlearn.evalsuite import (
    FeatureStats,
    UnfitProbeError,
    cosine,
    evaluate_model,
    frechet_distance,
    inception_score,
    output_distance_trace,
    semantic_similarity,
    sqrtm_psd,
    train_probe,
)
from i2iunlearn.gradcore import ContractError


def _stats(mu, sigma):
    return FeatureStats(np.asarray(mu, float), np.asarray(sigma, float), 100)


def test_fd_examples():
    a = _stats(np.zeros(3), np.eye(3))
    assert frechet_distance(a, a) == pytest.approx(0.0, abs=1e-12)
    assert frechet_distance(_stats([0.0], [[1.0]]), _stats([1.0], [[1.0]])) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ContractError):
        frechet_distance(a, _stats(np.zeros(2), np.eye(2)))


def test_fd_diagonal_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = int(rng.integers(1, 17))
        ma, mb = rng.normal(size=d), rng.normal(size=d)
        va, vb = rng.uniform(0.01, 4, d), rng.uniform(0.01, 4, d)
        oracle = float(np.sum((ma - mb) ** 2) + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2))
        got = frechet_distance(_stats(ma, np.diag(va)), _stats(mb, np.diag(vb)))
        assert abs(got - oracle) < 1e-8


def _random_psd(seed, d=5, n=40):
    x = np.random.default_rng(seed).normal(size=(n, d))
    return FeatureStats.from_features(x)


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_fd_symmetric_and_nonnegative(s1, s2):
    a, b = _random_psd(s1), _random_psd(s2)
    ab, ba = frechet_distance(a, b), frechet_distance(b, a)
    assert ab >= 0 and abs(ab - ba) < 1e-9


def test_feature_stats_psd():
    s = _random_psd(3)
    assert np.array_equal(s.sigma, s.sigma.T)
    assert np.linalg.eigvalsh(s.sigma).min() > -1e-8


def test_sqrtm_psd_clamps_negative():
    m = np.diag([4.0, -1e-12, 9.0])
    assert np.allclose(sqrtm_psd(m), np.diag([2.0, 0.0, 3.0]))
    r = sqrtm_psd(_random_psd(1).sigma)
    assert np.allclose(r @ r, _random_psd(1).sigma)


def test_inception_score_examples():
    assert inception_score(np.full((5, 4), 0.25)) == 1.0
    assert inception_score(np.eye(4)) == 4.0
    p = np.array([[0.9, 0.1], [0.1, 0.9]])
    # marginal is [0.5, 0.5]; both rows share one KL term by symmetry
    kl = 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
    assert inception_score(p) == pytest.approx(math.exp(kl), rel=1e-12)
    with pytest.raises(ContractError):
        inception_score(np.array([[0.5, 0.6]]))


@given(arrays(np.float64, (6, 3), elements=st.floats(0.0, 1.0)))
def test_inception_score_bounds(raw):
    raw = raw + 1e-3
    p = raw / raw.sum(axis=1, keepdims=True)
    s = inception_score(p)
    assert 1.0 - 1e-9 <= s <= 3.0 + 1e-9


def test_cosine_examples():
    u = np.array([1.0, -2.0, 0.5])
    assert cosine(u, u) == pytest.approx(1.0)
    assert cosine(u, -u) == pytest.approx(-1.0)
    assert cosine(u, np.zeros(3)) == 0.0


# -- probe-dependent ---------------------------------------------------------------


def test_probe_fit_and_frozen(desk):
    probe = desk.probe
    assert probe.accuracy >= 0.95
    x = desk.forget_test[:3]
    before = {k: v.data.copy() for k, v in probe.params.items()}
    f = probe.features(x)
    assert f.shape == (3, 16)
    assert probe.probs(x).sum(axis=1) == pytest.approx(np.ones(3))
    assert all(np.array_equal(before[k], v.data) for k, v in probe.params.items())


def test_probe_deterministic_and_unfit():
    from i2iunlearn.dataforge import generate_shapes

    c = generate_shapes(0, 20)
    a = train_probe(c.images, c.labels, seed=1, epochs=3, min_accuracy=0.0)
    b = train_probe(c.images, c.labels, seed=1, epochs=3, min_accuracy=0.0)
    assert a.params.equal(b.params)
    with pytest.raises(UnfitProbeError):
        train_probe(c.images, c.labels, seed=1, epochs=0)
    with pytest.raises(ContractError):
        train_probe(c.images[:5], np.zeros(5, dtype=int), seed=1)


def test_semantic_similarity(desk):
    x = desk.forget_test[0]
    assert semantic_similarity(x, x, desk.probe) == pytest.approx(1.0)
    y = desk.retain_test[0]
    assert -1.0 <= semantic_similarity(y, x, desk.probe) <= 1.0


def test_trace_rows(desk):
    ref = desk.model("original")
    batch = desk.forget_task.masked[:8]
    rows = output_distance_trace([("ascent", 0, ref), ("ascent", 1, desk.model("attack"))], ref, batch)
    assert len(rows) == 2
    assert rows[0].euclidean == 0.0 and rows[0].cosine == pytest.approx(0.0, abs=1e-12)
    assert rows[1].euclidean > 0
    with pytest.raises(ContractError):
        output_distance_trace([], ref, batch[:0])


def test_evaluate_reference_against_itself(desk):
    ref = desk.model("retrain")
    rep = evaluate_model(ref, ref, desk.forget_test, desk.retain_test, desk.probe, desk.mask)
    assert rep.forget.fd == pytest.approx(0.0, abs=1e-9) and rep.retain.fd == pytest.approx(0.0, abs=1e-9)
    for part in (rep.forget, rep.retain):
        assert 1.0 <= part.inception <= desk.probe.n_classes
    again = evaluate_model(ref, ref, desk.forget_test, desk.retain_test, desk.probe, desk.mask)
    assert again.rows() == rep.rows()
