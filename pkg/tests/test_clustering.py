import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpexplore.clustering import (ConsistencyError, EmptyInputError, MixtureModel,
                                  allocate_component, binary_coherence,
                                  closed_form_single_component, cluster_coherence, distortion,
                                  fit_dpgmm, fit_kmeans, max_components, model_from_text,
                                  model_to_text, nearest_centroid, prioritize, responsibility,
                                  warm_start_usable)
from fpexplore.clustering.dpgmm import with_weights
from fpexplore.worldgen import Pose


CENTERS = np.array([[2.0, 3.0], [6.2426, 7.2426]])  # 6 apart, 12 sigma at sigma 0.5


def _blobs(seed, n=50, sigma=0.5, centers=CENTERS):
    rng = np.random.default_rng(seed)
    return tuple(rng.normal(c, sigma, size=(n, 2)) for c in centers)


def _random_model(rng, K, d=2):
    w = rng.random(K) + 0.05
    return MixtureModel(w / w.sum(), rng.normal(0, 5, size=(K, d)),
                        rng.uniform(0.2, 4.0, size=(K, d)))


def _density(x, mu, var):
    # plain linear-space diagonal Gaussian
    return float(np.prod(np.exp(-0.5 * (x - mu) ** 2 / var) / np.sqrt(2 * math.pi * var)))


def test_single_point():
    model, resp = fit_dpgmm([[3.0, -1.0]])
    assert model.K == 1 and np.allclose(model.weights, [1.0])
    assert np.allclose(model.means, [[3.0, -1.0]])
    assert np.allclose(resp, [[1.0]])


def test_max_components():
    assert [max_components(n) for n in (0, 1, 2, 3, 10, 11)] == [1, 1, 1, 1, 5, 5]


def test_two_blobs_give_two_active_components():
    for seed in range(5):
        a, b = _blobs(seed)
        model, resp = fit_dpgmm(np.vstack([a, b]), seed=seed)
        assert model.K == 50
        assert model.n_active == 2
        means = model.means[model.active]
        tol = 3 * 0.5 / math.sqrt(50)
        for center in CENTERS:
            err = np.abs(means - center).max(axis=1).min()
            assert err < tol
        assert np.allclose(resp.sum(axis=1), 1.0, atol=1e-9)
        assert np.isclose(model.weights.sum(), 1.0, atol=1e-9)
        assert (model.variances >= 1e-4).all()


def test_component_means_follow_normal_gamma_shrinkage():
    # hard assignments: mean = (beta0 * data_mean + n * blob_mean) / (beta0 + n), beta0 = 1
    a, b = _blobs(0, centers=np.array([[0.0, 0.0], [40.0, 10.0]]))
    pts = np.vstack([a, b])
    model, resp = fit_dpgmm(pts, tol=1e-12, max_iter=500)
    assert ((resp < 1e-9) | (resp > 1 - 1e-9)).all()
    got = model.means[model.active]
    for blob in (a, b):
        want = (pts.mean(axis=0) + len(blob) * blob.mean(axis=0)) / (1 + len(blob))
        assert np.abs(got - want).max(axis=1).min() < 1e-9


def test_elbo_non_decreasing():
    rng = np.random.default_rng(3)
    for trial in range(8):
        k = int(rng.integers(1, 5))
        centers = rng.uniform(-30, 30, size=(k, 2))
        pts = np.vstack([rng.normal(c, rng.uniform(0.2, 3), size=(int(rng.integers(3, 40)), 2))
                         for c in centers]) + rng.uniform(-500, 500, size=2)
        model, _ = fit_dpgmm(pts, seed=trial, tol=0.0, max_iter=60)
        diffs = np.diff(model.elbo_trace)
        assert (diffs >= -1e-8).all(), diffs.min()


def test_single_component_matches_closed_form():
    rng = np.random.default_rng(4)
    for n in (2, 5, 12):
        pts = rng.normal([1.0, -2.0], [0.7, 1.9], size=(n, 2))
        model, _ = fit_dpgmm(pts, truncation=1, tol=0.0, max_iter=5)
        exact = closed_form_single_component(pts)
        assert np.allclose(model.means[0], exact["mean"], atol=1e-12)
        assert np.allclose(model.variances[0], exact["rate"] / exact["shape"], rtol=1e-12)
        # the factorization is exact for one component, so the bound is the evidence
        assert model.elbo_trace[-1] == pytest.approx(exact["log_evidence"], abs=1e-9)


def test_warm_start_reaches_the_same_fixed_point():
    a, b = _blobs(7)
    pts = np.vstack([a, b])
    cold, _ = fit_dpgmm(pts, seed=1, tol=1e-12, max_iter=500)
    assert warm_start_usable(cold, len(pts))
    warm, _ = fit_dpgmm(pts, warm_start=cold, seed=99, tol=1e-12, max_iter=500)
    assert warm.n_iter <= cold.n_iter
    assert np.allclose(warm.means[warm.active], cold.means[cold.active], atol=1e-6)


def test_warm_start_policy():
    a, _ = _blobs(0, n=20)
    model, _ = fit_dpgmm(a)
    assert warm_start_usable(model, 29)
    assert not warm_start_usable(model, 30)
    assert not warm_start_usable(None, 20)


def test_fit_is_deterministic():
    a, b = _blobs(2)
    pts = np.vstack([a, b])
    m1, r1 = fit_dpgmm(pts, seed=5)
    m2, r2 = fit_dpgmm(pts, seed=5)
    assert np.array_equal(m1.means, m2.means) and np.array_equal(r1, r2)


def test_fit_input_errors():
    with pytest.raises(EmptyInputError):
        fit_dpgmm(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        fit_dpgmm([[0.0, math.nan]])


def test_responsibility_examples():
    model = MixtureModel(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [4.0, 0.0]]),
                         np.ones((2, 2)))
    assert np.allclose(responsibility(model, [2.0, 3.0]), [0.5, 0.5])
    far = MixtureModel(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [40.0, 0.0]]), np.ones((2, 2)))
    assert responsibility(far, [0.0, 0.0])[0] > 0.999


def test_responsibility_matches_density_ratio_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        model = _random_model(rng, int(rng.integers(1, 7)))
        x = rng.normal(0, 4, size=2)
        dens = np.array([w * _density(x, m, v) for w, m, v in
                         zip(model.weights, model.means, model.variances)])
        got = responsibility(model, x)
        assert np.allclose(got, dens / dens.sum(), rtol=0, atol=1e-12)
        assert abs(got.sum() - 1.0) <= 1e-9


def test_allocate_component_examples():
    one = MixtureModel(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
    assert allocate_component(one, Pose(5.0, 5.0)) == 0
    two = MixtureModel(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [6.0, 0.0]]), np.ones((2, 2)))
    assert allocate_component(two, Pose(6.0, 0.0)) == 1
    assert allocate_component(two, Pose(3.0, 0.0)) == 0  # exact tie goes to the lower index


def test_allocate_component_brute_force_and_rescale():
    rng = np.random.default_rng(6)
    for _ in range(100):
        model = _random_model(rng, 5)
        x = rng.normal(0, 6, size=2)
        scores = [w * _density(x, m, v) for w, m, v in
                  zip(model.weights, model.means, model.variances)]
        want = max(range(5), key=lambda k: (scores[k], -k))
        assert allocate_component(model, x) == want
        scaled = with_weights(model, model.weights * rng.uniform(0.01, 100))
        assert allocate_component(scaled, x) == want


def test_coherence_examples():
    model = MixtureModel(np.array([1.0]), np.array([[1.0, 1.0]]), np.ones((1, 2)))
    ring = [[2.0, 1.0], [0.0, 1.0], [1.0, 2.0], [1.0, 0.0]]
    assert np.allclose(cluster_coherence(model, 0, ring), 0.25)
    assert np.allclose(cluster_coherence(model, 0, [[7.0, -3.0]]), [1.0])
    with pytest.raises(ConsistencyError):
        cluster_coherence(model, 0, np.zeros((0, 2)))


def test_coherence_matches_density_then_normalize_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        model = _random_model(rng, 3)
        k = int(rng.integers(3))
        pts = rng.normal(model.means[k], 2.0, size=(10, 2))
        dens = np.array([_density(p, model.means[k], model.variances[k]) for p in pts])
        got = cluster_coherence(model, k, pts)
        assert np.allclose(got, dens / dens.sum(), rtol=0, atol=1e-12)
        assert abs(got.sum() - 1.0) <= 1e-9


def test_coherence_strictly_positive_far_away():
    model = MixtureModel(np.array([1.0]), np.zeros((1, 2)), np.full((1, 2), 1e-4))
    p = cluster_coherence(model, 0, [[0.0, 0.0], [50.0, 50.0]])
    assert (p > 0).all() and abs(p.sum() - 1.0) <= 1e-9


def test_prioritize_examples():
    entries = prioritize([0.75, 0.25], [0.2, 0.8])
    assert [e.viewpoint_id for e in entries] == [1, 0]
    assert entries[0].joint == pytest.approx(0.20) and entries[1].joint == pytest.approx(0.15)
    gains = [0.1, 0.4, 0.2, 0.3]
    uniform = prioritize(gains, [0.25] * 4)
    assert [e.viewpoint_id for e in uniform] == [1, 3, 2, 0]
    (single,) = prioritize([1.0], [1.0])
    assert single.joint == 1.0
    ties = prioritize([0.5, 0.5], [0.5, 0.5])
    assert [e.viewpoint_id for e in ties] == [0, 1]
    keyed = prioritize({4: 0.5, 9: 0.5}, {9: 0.9, 4: 0.1})
    assert keyed[0].viewpoint_id == 9
    with pytest.raises(ConsistencyError):
        prioritize([0.5, 0.5], [1.0])
    with pytest.raises(ConsistencyError):
        prioritize({1: 1.0}, {2: 1.0})


def test_dpgmm_joint_positive_kmeans_zero_outside():
    a, b = _blobs(1)
    pts = np.vstack([a, b])
    gains = np.full(len(pts), 1.0 / len(pts))
    model, _ = fit_dpgmm(pts)
    k = allocate_component(model, Pose(0.0, 0.0))
    joint = np.array([e.joint for e in prioritize(gains, cluster_coherence(model, k, pts))])
    assert (joint > 0).all()
    cents, labels = fit_kmeans(pts, 2, seed=0)
    c = nearest_centroid(cents, [0.0, 0.0])
    coh = binary_coherence(labels, c)
    entries = prioritize(gains, coh)
    outside = [e.joint for e in entries if labels[e.viewpoint_id] != c]
    assert outside and all(j == 0.0 for j in outside)


def test_kmeans_examples():
    rng = np.random.default_rng(8)
    pts = rng.normal(0, 3, size=(9, 2))
    cents, labels = fit_kmeans(pts, 9, seed=0)
    assert distortion(pts, cents, labels) == 0.0
    a, b = _blobs(3)
    pts = np.vstack([a, b])
    cents, labels = fit_kmeans(pts, 2, seed=4)
    oracle = np.array([int(np.linalg.norm(p - b.mean(0)) < np.linalg.norm(p - a.mean(0)))
                       for p in pts])
    assert np.array_equal(labels, oracle) or np.array_equal(labels, 1 - oracle)
    again, labels2 = fit_kmeans(pts, 2, seed=4)
    assert np.array_equal(cents, again) and np.array_equal(labels, labels2)
    with pytest.raises(ValueError):
        fit_kmeans(pts[:3], 4)
    with pytest.raises(ValueError):
        fit_kmeans(pts, 0)


def test_model_text_round_trip():
    a, b = _blobs(4)
    model, _ = fit_dpgmm(np.vstack([a, b]))
    back = model_from_text(model_to_text(model))
    assert np.array_equal(back.weights, model.weights)
    assert np.array_equal(back.means, model.means)
    assert np.array_equal(back.variances, model.variances)
    with pytest.raises(ValueError):
        model_from_text("1 2 3\n")


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 2**32 - 1))
def test_fit_invariants_property(n, seed):
    pts = np.random.default_rng(seed).normal(0, 5, size=(n, 2))
    model, resp = fit_dpgmm(pts, seed=seed)
    assert model.K <= max(1, n // 2)
    assert abs(model.weights.sum() - 1.0) <= 1e-9
    assert np.allclose(resp.sum(axis=1), 1.0, atol=1e-9)
    assert ((resp >= 0) & (resp <= 1)).all()
    assert (model.variances >= 1e-4).all()
    assert (np.diff(model.elbo_trace) >= -1e-8).all()
