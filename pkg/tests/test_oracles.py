"""The frozen literals are reproduced by the independent oracles."""

import pytest

import frozen as F
import oracles as O


def test_normal_values():
    assert O.normal_cdf_quad(3.0) == pytest.approx(F.CDF_3, rel=1e-14)
    assert O.normal_cdf_quad(-8.0) == pytest.approx(F.CDF_MINUS_8, rel=1e-12)
    assert O.normal_lower_tail_series(8.0) == pytest.approx(F.CDF_MINUS_8, rel=1e-9)
    assert O.normal_quantile_bisect(0.99) == pytest.approx(F.QUANTILE_099, rel=1e-14)
    assert O.normal_quantile_bisect(0.99865) == pytest.approx(F.QUANTILE_099865, rel=1e-14)
    assert O.normal_quantile_bisect(1 - 0.00135) - 3.0 == pytest.approx(F.LINEAR_CC_00135, rel=1e-9)


def test_box_and_inflation_values():
    assert O.box_probability_exact([0, 0, 0], [1, 1, 1], [1, 1, 1]) == pytest.approx(F.BOX_PROB_UNIT, rel=1e-14)
    assert O.inflated_semi([1, 1, 1], 0.01, [0.04] * 3) == pytest.approx([F.INFLATED_UNIT] * 3, rel=1e-14)
    assert O.inflated_semi([1.0, 0.5], 0.01 / 40, [0.4, 0.1]) == pytest.approx(list(F.BENCH_INFLATED), rel=1e-14)
    assert O.benchmark_step_margin() == pytest.approx(F.BENCH_STEP_MARGIN, rel=1e-13)


def test_dynamics_values():
    assert O.lag_exact(0.0, 1.0, 1.0, 1.0, 0.1) == pytest.approx(F.LAG_STEP, rel=1e-15)
    assert O.cv_position_variance(10, 0.2, 0.01, 0.25, 0.0, 0.0012) == pytest.approx(F.CV_VAR_10_STEPS, rel=1e-13)
    assert O.cv_position_variance(5, 0.2, 0.01, 0.25, 1e-4, 0.0012) == pytest.approx(F.CV_VAR_5_STEPS_PNOISE,
                                                                                       rel=1e-13)


def test_pedestrian_values():
    assert O.relaxation_arrival_time(14.0, 1.0, 0.5, 0.3) == pytest.approx(F.PED_ARRIVAL_14M, rel=1e-12)
    assert O.repulsion_magnitude(2.0, 0.8, 0.6, 0.6 + 5 * 0.8) / 2.0 == pytest.approx(F.REPULSION_5B_FRACTION,
                                                                                       rel=1e-12)
