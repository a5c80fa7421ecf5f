import math

import numpy as np
import pytest

from chaostemp.fields import FieldSpec
from chaostemp.functional import (
    UncoupledError,
    coupled_functional,
    delta_uv,
    general_coupled_measure,
    mean_overlap,
    measure_from_params,
    minimize_parisi,
    parisi_functional,
    strict_gap_scan,
)
from chaostemp.measure import MeasureError, ParisiMeasure, coupling_lambda, mix
from chaostemp.mixture import MixtureSpec

SK = MixtureSpec({2: 1.0})
HALF_SK = MixtureSpec({2: math.sqrt(0.5)})  # xi(x) = x^2 / 2
LOG2 = math.log(2.0)
# equal scaled measures below 0.5 for beta1 = 1, beta2 = 1.2: 1 * 0.6 = 1.2 * 0.5
MU1 = ParisiMeasure((0.2, 0.5), (0.0, 0.6, 1.0))
MU2 = ParisiMeasure((0.2, 0.5), (0.0, 0.5, 1.0))


def test_mu_one_value_and_annealed_bound():
    val = parisi_functional(SK, ParisiMeasure.constant(1.0), 1.0)
    assert val.without_log2 == pytest.approx(0.5, abs=1e-6)
    assert val.with_log2 == pytest.approx(LOG2 + 0.5, abs=1e-6)
    assert val.total == pytest.approx(val.phi0_expect - val.correction_integral)


def test_small_beta_limit():
    val = parisi_functional(SK, ParisiMeasure((0.4,), (0.2, 1.0)), 1e-4)
    assert abs(val.without_log2) < 1e-7
    assert parisi_functional(SK, ParisiMeasure.constant(1.0), 1e-4, log2=True).total == pytest.approx(LOG2, abs=1e-7)


def test_rs_value_in_the_unit_variance_convention():
    # with xi = x^2 the high-temperature value is log 2 + beta^2 xi(1) / 2
    res = minimize_parisi(SK, 0.5, k=1)
    assert abs(res.q_star) < 1e-3
    assert res.value.with_log2 == pytest.approx(LOG2 + 0.125, abs=1e-4)


def test_rs_value_in_the_half_variance_convention():
    # xi = x^2 / 2 reproduces log 2 + beta^2 / 4 = 0.755647
    res = minimize_parisi(HALF_SK, 0.5, k=1)
    assert abs(res.q_star) < 1e-3
    assert res.value.with_log2 == pytest.approx(0.755647, abs=1e-4)


def test_k0_and_k1_agree_in_rs_region():
    a = minimize_parisi(SK, 0.5, k=0)
    b = minimize_parisi(SK, 0.5, k=1)
    assert a.value.total == pytest.approx(b.value.total, abs=1e-4)


def test_rsb_below_rs_at_low_temperature():
    rs = minimize_parisi(SK, 1.5, k=0)
    rsb = minimize_parisi(SK, 1.5, k=1)
    assert rsb.q_star > 0.2
    assert rsb.value.total < rs.value.total


def test_measure_from_params_orders_and_projects():
    mu = measure_from_params(np.array([0.7, 0.2, 0.3]), 1)
    assert mu.breakpoints == (0.2, 0.7)
    assert mu.values == pytest.approx((0.0, 0.3, 1.0))
    assert mean_overlap(ParisiMeasure.dirac(0.4)) == pytest.approx(0.4)


def test_delta_examples():
    for u in (0.0, 0.3, 0.8):
        assert delta_uv(SK, 1.0, 1.3, u, u) == pytest.approx(0.0, abs=1e-15)
    assert delta_uv(SK, 1.0, 1.0, 0.3, 0.5) == pytest.approx(0.04)
    assert coupling_lambda(1.0, 3.0) == 0.25


def test_reduced_form_matches_general_form():
    cv = coupled_functional(SK, MU1, MU2, 1.0, 1.2, 0.35, 0.35, FieldSpec.fixed(0.1))
    assert cv.reduced_total == pytest.approx(cv.total, abs=1e-10)


def test_canonical_measure_requires_v_below_q0():
    with pytest.raises(MeasureError):
        coupled_functional(SK, MU1, MU2, 1.0, 1.2, 0.6, 0.6)
    mu = general_coupled_measure(MU1, MU2, 1.0, 1.2, 0.6)
    cv = coupled_functional(SK, MU1, MU2, 1.0, 1.2, 0.6, 0.6, mu=mu)
    assert cv.reduced_total is None and math.isfinite(cv.total)


def test_convexity_probe():
    a = ParisiMeasure((0.3,), (0.2, 1.0))
    b = ParisiMeasure((0.1, 0.6), (0.0, 0.5, 1.0))
    pa, pb = (parisi_functional(SK, m, 1.3).total for m in (a, b))
    for w in (0.25, 0.5, 0.75):
        pm = parisi_functional(SK, mix(a, b, w), 1.3).total
        assert pm <= w * pa + (1 - w) * pb + 1e-8


def test_strict_gap_scan_positive_on_constructed_case():
    rep = strict_gap_scan(SK, MU1, MU2, 1.0, 1.2, epsilon=0.05, n_v=6, n_u=3)
    assert rep.q0 == pytest.approx(0.5)
    assert rep.min_gap > 0 and all(g > 0 for g in rep.gaps)
    assert rep.delta_at_delta <= rep.min_gap / 2


def test_strict_gap_scan_guards():
    rep = strict_gap_scan(SK, MU1, MU1, 1.2, 1.2)
    assert "excluded" in rep.note
    d = ParisiMeasure.dirac(0.3)
    with pytest.raises(UncoupledError):
        strict_gap_scan(SK, d, d, 1.0, 1.3)
