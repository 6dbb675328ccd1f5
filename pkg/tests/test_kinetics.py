import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialpk.kinetics import (
    AifParams,
    ExtTofts,
    OneComp,
    TwoComp,
    aif_value,
    conv_exp,
    conv_exp_quadrature,
    model_ctc,
    params_from_array,
    time_grid,
)

AIF = AifParams()
TIMES = 0.15 * np.arange(1, 41)


def test_aif_at_onset():
    assert aif_value(AIF, 0.0) == pytest.approx(0.877, abs=1e-15)


def test_aif_zero_before_onset():
    assert aif_value(AIF, -1.0) == 0.0
    late = AifParams(t0=2.0)
    assert np.all(aif_value(late, np.array([0.0, 1.0, 1.999])) == 0.0)


def test_aif_direct_formula():
    expected = 0.1 * (3.99 * math.exp(-0.144 * 10) + 4.78 * math.exp(-0.0111 * 10))
    assert aif_value(AIF, 10.0) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("field", ["dose", "a1", "a2", "m1", "m2"])
def test_aif_rejects_nonpositive(field):
    with pytest.raises(ValueError):
        AifParams(**{field: 0.0})
    with pytest.raises(ValueError):
        AifParams(t0=-0.1)


def test_conv_zero_at_onset_and_without_transfer():
    assert conv_exp(AIF, 0.7, 2.0, 0.0) == 0.0
    assert np.all(conv_exp(AIF, 0.0, 1.3, TIMES) == 0.0)


def test_conv_reference_point():
    value = conv_exp(AIF, 0.7, 2.0, 1.0)
    assert value == pytest.approx(0.2535, abs=5e-5)
    assert abs(value - conv_exp_quadrature(AIF, 0.7, 2.0, 1.0)) < 1e-8


@pytest.mark.parametrize("m", [0.144, 0.0111])
def test_conv_at_singular_rate(m):
    # limit of the closed form when k_ep equals one AIF rate
    u, k = 3.0, 0.8
    terms = []
    for a, ml in ((3.99, 0.144), (4.78, 0.0111)):
        if ml == m:
            terms.append(a * u * math.exp(-m * u))
        else:
            terms.append(a * (math.exp(-ml * u) - math.exp(-m * u)) / (m - ml))
    expected = 0.1 * k * sum(terms)
    value = conv_exp(AIF, k, m, u)
    assert math.isfinite(value)
    assert value == pytest.approx(expected, rel=1e-12)
    assert abs(value - conv_exp_quadrature(AIF, k, m, u)) < 1e-8


@pytest.mark.parametrize("k_ep", [-0.1, math.nan, math.inf])
def test_conv_rejects_bad_rate(k_ep):
    with pytest.raises(ValueError):
        conv_exp(AIF, 0.5, k_ep, 1.0)


def test_quadrature_trivial_cases():
    assert conv_exp_quadrature(AIF, 0.5, 1.0, 0.0) == 0.0
    assert conv_exp_quadrature(AIF, 0.0, 1.0, 3.0) == 0.0
    with pytest.raises(ValueError):
        conv_exp_quadrature(AIF, 0.5, 1.0, 3.0, tol=0.0)


def test_quadrature_reports_nonconvergence():
    with pytest.raises(RuntimeError):
        conv_exp_quadrature(AIF, 5.0, 50.0, 10.0, tol=1e-15, limit=1)


def test_quadrature_self_consistency():
    rng = np.random.default_rng(11)
    tol = 1e-10
    for _ in range(100):
        k_ep, k_trans, t = rng.uniform(0.01, 50), rng.uniform(0, 5), rng.uniform(0, 10)
        assert abs(conv_exp(AIF, k_trans, k_ep, t) - conv_exp_quadrature(AIF, k_trans, k_ep, t, tol)) < 10 * tol + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 50), st.floats(0, 5), st.floats(0, 10))
def test_conv_matches_quadrature(k_ep, k_trans, t):
    value = conv_exp(AIF, k_trans, k_ep, t)
    assert value >= 0
    assert abs(value - conv_exp_quadrature(AIF, k_trans, k_ep, t)) < 1e-8


@pytest.mark.parametrize("m", [0.144, 0.0111])
@pytest.mark.parametrize("t", [0.5, 3.0, 10.0])
def test_conv_continuous_at_singular_rates(m, t):
    eps = 1e-9
    assert abs(conv_exp(AIF, 1.0, m + eps, t) - conv_exp(AIF, 1.0, m - eps, t)) < 1e-6


def test_twocomp_empty_second_compartment():
    two = TwoComp(math.log(0.3), math.log(3.0), math.log(0.2), -math.inf)
    one = OneComp(math.log(0.3), math.log(0.2))
    assert np.array_equal(model_ctc(two, AIF, TIMES), model_ctc(one, AIF, TIMES))


def test_twocomp_equal_rates_collapse():
    two = TwoComp(math.log(1.1), math.log(1.1), math.log(0.4), math.log(0.3))
    one = OneComp(math.log(1.1), math.log(0.7))
    np.testing.assert_allclose(model_ctc(two, AIF, TIMES), model_ctc(one, AIF, TIMES), rtol=1e-12)


def test_redundant_twocomp_looks_like_onecomp():
    two = TwoComp(math.log(2.07), math.log(2.07), math.log(0.55), math.log(0.15))
    one = OneComp(math.log(2.07), math.log(0.7))
    np.testing.assert_allclose(model_ctc(two, AIF, TIMES), model_ctc(one, AIF, TIMES), rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_twocomp_swap_symmetry(v):
    a = TwoComp(*v)
    b = TwoComp(v[1], v[0], v[3], v[2])
    assert np.array_equal(model_ctc(a, AIF, TIMES), model_ctc(b, AIF, TIMES))
    assert np.array_equal(model_ctc(a.ordered(), AIF, TIMES), model_ctc(a, AIF, TIMES))


def test_exttofts_adds_plasma_term():
    p = ExtTofts(math.log(0.9), math.log(0.3), -2.0)
    expected = p.vp * aif_value(AIF, TIMES) + conv_exp(AIF, 0.3, 0.9, TIMES)
    np.testing.assert_allclose(model_ctc(p, AIF, TIMES), expected, rtol=1e-14)


@pytest.mark.parametrize("params", [
    OneComp(0.2, -0.5),
    TwoComp(-1.0, 1.0, -0.5, 0.3),
    ExtTofts(0.1, -0.2, -1.0),
])
def test_curves_vanish_before_onset(params):
    aif = AifParams(t0=1.2)
    t = np.linspace(0.0, 1.2, 13)
    curve = model_ctc(params, aif, t)
    assert np.all(curve[:-1] == 0.0)
    # at the onset itself only the plasma term (v_p * C_p(t0)) may be nonzero
    expected_at_onset = params.vp * 0.877 if isinstance(params, ExtTofts) else 0.0
    assert curve[-1] == pytest.approx(expected_at_onset, rel=1e-14, abs=0.0)


def test_volumes_and_round_trip():
    p = TwoComp(math.log(0.2), math.log(4.0), math.log(0.1), math.log(2.0))
    vol = p.volumes()
    assert vol.v_t1 == pytest.approx(0.5) and vol.v_t2 == pytest.approx(0.5)
    assert params_from_array("2comp", p.as_array()) == p
    with pytest.raises(ValueError):
        params_from_array("3comp", [0, 0])


@pytest.mark.parametrize("bad", [[1.0], [0.0, 0.0], [0.2, 0.1], [-0.1, 0.5], [0.0, math.nan]])
def test_time_grid_validation(bad):
    with pytest.raises(ValueError):
        time_grid(bad)
