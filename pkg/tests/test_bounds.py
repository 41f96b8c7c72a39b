import math

import numpy as np
import pytest

import frozen as F
import oracles as O
from ccbox.bounds import (
    BoundingBox,
    RiskAllocation,
    analytic_box_probability,
    binomial_margin,
    certify_random_cases,
    ellipsoid_gradient,
    ellipsoid_margin,
    inflate_box,
    mc_collision_probability,
    uniform_risk_allocation,
)
from ccbox.errors import DomainError, InvariantError
from ccbox.gaussian import GaussianBelief


def test_box_invariants():
    with pytest.raises(InvariantError):
        BoundingBox([1.0, 0.0, 1.0])
    with pytest.raises(InvariantError):
        BoundingBox([1.0, -1.0, 1.0])
    with pytest.raises(DomainError):
        BoundingBox([1.0, 1.0])
    assert BoundingBox([1.0, 0.5, np.inf]).semi_sizes[2] == np.inf


@pytest.mark.parametrize("alpha,n,no", [(0.01, 20, 2), (0.01, 40, 1)])
def test_uniform_allocation_reference_cases(alpha, n, no):
    r = uniform_risk_allocation(alpha, n, no)
    assert r.per_step.shape == (n, no)
    assert np.allclose(r.per_step, 2.5e-4, rtol=0, atol=1e-18)
    assert abs(r.per_step.sum() - alpha) <= 1e-12


def test_uniform_allocation_degenerate_and_errors():
    r = uniform_risk_allocation(0.5, 1, 1)
    assert r.per_step[0, 0] == 0.5 and r.per_step.sum() == 0.5
    for args in [(0.01, 0, 1), (0.01, 1, 0), (0.0, 1, 1), (1.0, 1, 1)]:
        with pytest.raises(DomainError):
            uniform_risk_allocation(*args)


def test_risk_allocation_invariants():
    with pytest.raises(InvariantError):
        RiskAllocation(0.01, [[0.006, 0.006]])
    with pytest.raises(InvariantError):
        RiskAllocation(0.01, [[-0.001]])


def test_inflate_box_examples():
    box = BoundingBox([1.0, 2.0, 0.5])
    assert np.array_equal(inflate_box(box, 0.01, [0, 0, 0], [0, 0, 0]).semi_sizes, box.semi_sizes)
    assert np.array_equal(inflate_box(box, 0.5, [1, 2, 3], [1, 1, 1]).semi_sizes, box.semi_sizes)
    d = inflate_box(BoundingBox([1, 1, 1]), 0.01, [0.02] * 3, [0.02] * 3).semi_sizes
    assert np.allclose(d, 1.4653, atol=1e-3)
    assert np.allclose(d, F.INFLATED_UNIT, rtol=1e-13)


def test_inflate_box_errors():
    with pytest.raises(InvariantError):
        inflate_box(BoundingBox([1, 1, 1]), 0.01, [-0.1, 0, 0], [0, 0, 0])
    with pytest.raises(DomainError):
        inflate_box(BoundingBox([1, 1, 1]), 0.0, [0, 0, 0], [0, 0, 0])


def test_ellipsoid_margin_examples():
    d = np.array([1.5, 0.7, 2.0])
    assert ellipsoid_margin(d, d) == pytest.approx(0.0, abs=1e-15)
    assert ellipsoid_margin(np.zeros(3), d) == -3.0
    assert ellipsoid_margin([math.sqrt(3) * d[0], 0, 0], d) == pytest.approx(0.0, abs=1e-14)


def test_ellipsoid_margin_planar_axis():
    # an infinite semi-size drops that axis; the remaining ellipse passes through the corners
    d = np.array([1.0, 0.5, np.inf])
    assert ellipsoid_margin([1.0, 0.5, 123.0], d) == pytest.approx(0.0, abs=1e-15)
    assert ellipsoid_margin([0.0, 0.0, 0.0], d) == -2.0


def test_ellipsoid_gradient_examples():
    assert np.array_equal(ellipsoid_gradient(np.zeros(3), [1.0, 2.0, 3.0]), np.zeros(3))
    assert np.allclose(ellipsoid_gradient([2.0, 0, 0], [2.0, 1.0, 1.0]), [1.0, 0.0, 0.0])


def test_ellipsoid_gradient_matches_fd():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d = rng.uniform(0.2, 3.0, 3)
        r = rng.normal(size=3) * 2
        num = O.central_difference(lambda x: ellipsoid_margin(x, d), r)[0]
        assert np.allclose(ellipsoid_gradient(r, d), num, rtol=1e-7, atol=1e-9)


def test_mc_probability_examples():
    box = BoundingBox([1, 1, 1])
    far = GaussianBelief([100.0, 100.0, 100.0], 0.1 * np.eye(3))
    assert mc_collision_probability(far, box, 10_000, 1) == 0.0
    inside = GaussianBelief.point([0.2, -0.3, 0.5])
    assert mc_collision_probability(inside, box, 10_000, 1) == 1.0


def test_mc_matches_diagonal_closed_form():
    box = BoundingBox([1.0, 0.6, 1.4])
    mu, sig = np.array([0.3, -0.2, 0.9]), np.array([0.8, 0.5, 1.1])
    exact = O.box_probability_exact(mu, sig, box.semi_sizes)
    n = 200_000
    est = mc_collision_probability(GaussianBelief(mu, np.diag(sig**2)), box, n, 11)
    assert abs(est - exact) <= 3 * math.sqrt(exact * (1 - exact) / n)
    assert analytic_box_probability(mu, sig**2, box) == pytest.approx(exact, rel=1e-12)


def test_mc_is_deterministic_and_split_invariant():
    from concurrent.futures import ThreadPoolExecutor

    b = GaussianBelief([0.5, 0.0, 0.0], np.diag([1.0, 0.5, 0.2]))
    box = BoundingBox([1, 1, 1])
    a = mc_collision_probability(b, box, 50_000, 5)
    assert a == mc_collision_probability(b, box, 50_000, 5)
    with ThreadPoolExecutor(3) as ex:
        assert a == mc_collision_probability(b, box, 50_000, 5, executor=ex)
    assert a != mc_collision_probability(b, box, 50_000, 6)


def test_mc_degenerate_covariance():
    cov = np.zeros((3, 3))
    cov[0, 0] = 1.0
    p = mc_collision_probability(GaussianBelief([0.0, 0.0, 0.0], cov), BoundingBox([1, 1, 1]), 100_000, 2)
    assert abs(p - O.box_probability_exact([0], [1], [1])) < 0.005


def test_mc_errors():
    with pytest.raises(DomainError):
        mc_collision_probability(GaussianBelief.point([0, 0]), BoundingBox([1, 1, 1]), 10_000, 0)
    with pytest.raises(DomainError):
        mc_collision_probability(GaussianBelief.point([0, 0, 0]), BoundingBox([1, 1, 1]), 999, 0)


def test_analytic_box_probability_examples():
    box = BoundingBox([1, 1, 1])
    assert analytic_box_probability([2.0, 0, 0], [0, 0, 0], box) == 0.0
    assert analytic_box_probability([0, 0, 0], [1, 1, 1], BoundingBox([1e9] * 3)) == 1.0
    val = analytic_box_probability([0, 0, 0], [1, 1, 1], box)
    assert val == pytest.approx(0.3182, abs=1e-3)
    assert val == pytest.approx(F.BOX_PROB_UNIT, rel=1e-12)


def test_certification_small_run_and_negative_control():
    cases = certify_random_cases(10, 10_000, 4)
    assert all(c.passed for c in cases)
    assert [c.index for c in cases] == list(range(10))
    bad = certify_random_cases(10, 10_000, 4, inflation_sign=-1.0)
    assert not any(c.passed for c in bad)
    with pytest.raises(DomainError):
        certify_random_cases(1, 5_000, 0)


def test_alpha_half_boundary_case_is_safe():
    cases = certify_random_cases(20, 100_000, 7, alpha_override=0.5)
    assert all(c.probability <= 0.5 + binomial_margin(0.5, 100_000) for c in cases)
