import numpy as np
import pytest
from hypothesis import given, strategies as st

from odamot.core import BBox, Detection
from odamot.errors import AllZeroWeights, EmptyBox
from odamot.linmodel import LinearModel
from odamot.providers import FlowField
from odamot.smc import (NoiseSchedule, ParticleSet, effective_sample_size, estimate, filter_step,
                        init_particles, likelihood, noise_sigma, propagate, resample, reweight,
                        systematic_indices, velocity)


def _set(boxes, weights=None):
    boxes = np.asarray(boxes, dtype=float)
    w = np.full(len(boxes), 1.0 / len(boxes)) if weights is None else weights
    return ParticleSet(boxes, w)


def test_init_examples():
    det = Detection(BBox(10, 20, 100, 50), 0.9)
    one = init_particles(det, 0.05, 1, 0)
    assert one.n == 1 and one.weights[0] == 1.0
    exact = init_particles(det, 0.0, 7, 0)
    assert np.all(exact.boxes == det.box.to_array())
    many = init_particles(det, 0.05, 10000, 1)
    assert 4.5 <= many.boxes[:, 0].std() <= 5.5
    np.testing.assert_allclose(many.weights, 1e-4)


def test_noise_schedule():
    for k in range(10):
        assert noise_sigma(0.05, k) == pytest.approx(0.05 / (1 + k))
        assert NoiseSchedule(0.05, k).sigma == noise_sigma(0.05, k)
    with pytest.raises(ValueError):
        NoiseSchedule(0.05, -1)


def test_velocity_examples():
    assert velocity(FlowField.constant(20, 10, 3, -2), BBox(2, 2, 5, 5)) == (3.0, -2.0)
    v = np.zeros((1, 3, 2), dtype=np.float32)
    v[0, :, 0] = [1, 2, 100]
    assert velocity(FlowField(v), BBox(0, 0, 3, 1))[0] == 2.0
    with pytest.raises(EmptyBox):
        velocity(FlowField.constant(20, 10), BBox(50, 50, 5, 5))


def test_propagate_examples():
    ps = init_particles(BBox(0, 0, 40, 20), 0.1, 50, 2)
    same = propagate(ps, (0, 0), 0.0, 3)
    np.testing.assert_array_equal(same.boxes, ps.boxes)
    moved = propagate(ps, (5, 0), 0.0, 3)
    np.testing.assert_array_equal(moved.boxes[:, 0], ps.boxes[:, 0] + 5)
    np.testing.assert_array_equal(moved.boxes[:, 1:], ps.boxes[:, 1:])
    np.testing.assert_array_equal(moved.weights, ps.weights)


def test_propagate_mean_shift():
    box = BBox(100, 100, 80, 40)
    ps = init_particles(box, 0.0, 10000, 0)
    sigma = 0.05
    out = propagate(ps, (3.0, -1.5), sigma, 4)
    tol = 3 * sigma * 80 / np.sqrt(10000)
    assert abs(out.boxes[:, 0].mean() - 103.0) < tol
    assert abs(out.boxes[:, 1].mean() - 98.5) < 3 * sigma * 40 / np.sqrt(10000)


def test_likelihood_examples():
    zero = LinearModel.zeros(3)
    assert likelihood(BBox(0, 0, 1, 1), zero, zero, lambda b: np.ones(3)) == 0.25
    t = LinearModel([0.0, 0.0, np.log(9.0)])
    c = LinearModel([0.0, 0.0, np.log(4.0)])
    assert likelihood(BBox(0, 0, 1, 1), t, c, lambda b: np.ones(2)) == pytest.approx(0.72)
    m = LinearModel([0.3, -0.2, 0.1])
    phi = np.array([1.0, 2.0])
    assert likelihood(BBox(0, 0, 1, 1), m, m, lambda b: phi) == pytest.approx(float(m.prob(phi)) ** 2)


def test_reweight_examples():
    ps = _set([[0, 0, 1, 1], [1, 0, 1, 1], [2, 0, 1, 1]])
    np.testing.assert_allclose(reweight(ps, [0.3, 0.3, 0.3]).weights, ps.weights)
    np.testing.assert_array_equal(reweight(ps, [0, 1, 0]).weights, [0, 1, 0])
    two = _set([[0, 0, 1, 1], [1, 0, 1, 1]])
    np.testing.assert_allclose(reweight(two, [0.2, 0.6]).weights, [0.25, 0.75])
    with pytest.raises(AllZeroWeights):
        reweight(two, [0, 0])


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=60).filter(lambda x: sum(x) > 0))
def test_reweight_normalizes(lik):
    ps = _set(np.zeros((len(lik), 4)) + [0, 0, 1, 1])
    assert abs(reweight(ps, lik).weights.sum() - 1) <= 1e-9


def test_systematic_multiplicity_example():
    for u in np.linspace(0, 0.999, 25):
        idx = systematic_indices(np.array([0.75, 0.25]), 4, u)
        assert np.bincount(idx, minlength=2).tolist() == [3, 1]


def test_resample_examples():
    ps = _set([[0, 0, 1, 1], [5, 0, 1, 1], [9, 0, 1, 1]], np.array([0.0, 1.0, 0.0]))
    r = resample(ps, 0)
    assert np.all(r.boxes[:, 0] == 5) and np.allclose(r.weights, 1 / 3)
    uni = _set(np.c_[np.arange(10.0), np.zeros(10), np.ones(10), np.ones(10)])
    r = resample(uni, 1)
    assert sorted(r.boxes[:, 0]) == list(range(10))
    assert effective_sample_size(r) == pytest.approx(10)


def test_resample_preserves_estimate():
    rng = np.random.default_rng(0)
    boxes = np.c_[rng.uniform(0, 100, (50, 2)), rng.uniform(10, 30, (50, 2))]
    ps = ParticleSet(boxes, rng.dirichlet(np.ones(50)))
    ref = estimate(ps).to_array()
    draws = np.array([estimate(resample(ps, s)).to_array() for s in range(200)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(200)
    assert np.all(np.abs(draws.mean(axis=0) - ref) < 3 * se + 1e-12)


def test_estimate_examples():
    ps = _set([[0, 0, 10, 10], [10, 0, 10, 10]])
    assert estimate(ps) == BBox(5, 0, 10, 10)
    ps = _set([[0, 0, 10, 10], [10, 0, 10, 10]], np.array([0.0, 1.0]))
    assert estimate(ps) == BBox(10, 0, 10, 10)
    ps = _set([[0, 0, 10, 10], [8, 0, 10, 10]], np.array([0.25, 0.75]))
    assert estimate(ps).x == 6.0


@given(st.integers(0, 2**32 - 1))
def test_estimate_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    boxes = np.c_[rng.uniform(0, 100, (n, 2)), rng.uniform(1, 30, (n, 2))]
    w = rng.dirichlet(np.ones(n))
    p = rng.permutation(n)
    np.testing.assert_allclose(estimate(ParticleSet(boxes, w)).to_array(),
                               estimate(ParticleSet(boxes[p], w[p])).to_array(), atol=1e-9)


def test_ess_examples():
    assert effective_sample_size(_set(np.zeros((8, 4)) + [0, 0, 1, 1])) == pytest.approx(8)
    assert effective_sample_size(_set(np.zeros((3, 4)) + [0, 0, 1, 1], np.array([0, 1.0, 0]))) == 1
    ps = _set(np.zeros((3, 4)) + [0, 0, 1, 1], np.array([0.5, 0.25, 0.25]))
    assert effective_sample_size(ps) == pytest.approx(1 / 0.375)


def _center_error(box, truth):
    return np.hypot(box.x + box.w / 2 - truth.x - truth.w / 2, box.y + box.h / 2 - truth.y - truth.h / 2)


@pytest.mark.parametrize("seed", range(5))
def test_stationary_target_converges(seed):
    truth = BBox(200, 100, 80, 40)
    rng = np.random.default_rng(seed)
    start = BBox(truth.x + rng.uniform(-6, 6), truth.y + rng.uniform(-4, 4), truth.w, truth.h)
    ps = init_particles(start, 0.05, 100, rng)
    c = np.array([truth.x + truth.w / 2, truth.y + truth.h / 2])

    def lik(boxes):
        centers = boxes[:, :2] + boxes[:, 2:] / 2
        return np.exp(-np.sum((centers - c) ** 2, axis=1) / (2 * 1.5 ** 2))

    errors = []
    for k in range(10):
        ps, est, _ = filter_step(ps, (0.0, 0.0), noise_sigma(0.05, k), lik, rng)
        assert abs(ps.weights.sum() - 1) <= 1e-9
        errors.append(_center_error(est, truth))
    assert min(errors) < 2.0 and errors[-1] < 2.0
