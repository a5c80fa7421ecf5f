import itertools
import math

import numpy as np
import pytest

from chaostemp.diagnostics import (
    block_seeds,
    clustering_violation,
    estimate_chi,
    gg_residual,
    gg_terms,
    gram_violation,
    invariance_phi,
    overlap_statistics,
    overlap_threshold_report,
    sign_test_decrease,
)
from chaostemp.fields import FieldSpec
from chaostemp.gibbs import DisorderRealization, configurations, draws, exact_ensemble, mc_ensemble

from conftest import SK


def classical_gg_residual(weights, n, p, phi):
    """Brute-force single-system residual over explicit replica tuples.

    E<Phi R_{1,n+1}^p> - (1/n) E<Phi> E<R_12^p> - (1/n) sum_{l=2..n} E<Phi R_{1l}^p>,
    with Phi a function of (sigma^1, ..., sigma^n).
    """
    lhs, rhs_local, phis, bases = [], [], [], []
    for w, S in weights:
        N = S.shape[1]
        R = S @ S.T / N
        M = len(w)
        acc_lhs = acc_rhs = acc_phi = 0.0
        for tup in itertools.product(range(M), repeat=n + 1):
            wt = np.prod(w[list(tup)])
            if wt == 0.0:
                continue
            f = phi(R, tup)
            acc_lhs += wt * f * R[tup[0], tup[n]] ** p
            acc_rhs += wt * f * sum(R[tup[0], tup[l]] ** p for l in range(1, n)) / n
            acc_phi += wt * f
        lhs.append(acc_lhs)
        rhs_local.append(acc_rhs)
        phis.append(acc_phi)
        bases.append(float(w @ (R ** p) @ w))
    return np.mean(lhs) - np.mean(rhs_local) - np.mean(phis) * np.mean(bases) / n


@pytest.mark.parametrize("phi_name, phi", [
    ("one", lambda R, t: 1.0),
    ("ss", lambda R, t: R[t[0], t[1]] ** 2),
])
def test_kappa_one_matches_independent_single_system(phi_name, phi):
    reals = draws(SK, 3, [0, 1, 2])
    ens = [exact_ensemble(r, 1.1, 1.1) for r in reals]
    S = configurations(3).astype(float)
    oracle = classical_gg_residual([(e.weights(0), S) for e in ens], 2, 2, phi)
    res = gg_residual(ens, n=2, p=2, which=1, phi=phi_name)
    assert res.kappa == 1.0
    assert res.residual == pytest.approx(oracle, abs=1e-10)
    if phi_name == "one":
        # anchored at rho^1; only Phi = 1 maps onto the same single-system identity
        res2 = gg_residual(ens, n=2, p=2, which=2, phi=phi_name)
        assert res2.residual == pytest.approx(oracle, abs=1e-10)


def test_gg_mirror_identity_swaps_systems():
    real = DisorderRealization.sample(SK, 5, 3, FieldSpec.fixed(0.2, 0.2))
    a = gg_terms(exact_ensemble(real, 1.0, 1.3), which=2, phi="sr")
    b = gg_terms(exact_ensemble(real, 1.3, 1.0), which=1, phi="sr")
    assert a.lhs == pytest.approx(b.lhs, abs=1e-12)
    assert a.rhs_local == pytest.approx(b.rhs_local, abs=1e-12)


def test_gg_refuses_mc_and_bad_arguments():
    real = DisorderRealization.sample(SK, 4, 0)
    with pytest.raises(ValueError):
        gg_residual(mc_ensemble(real, 1.0, 1.3, sweeps=50, ladder=1), n=2)
    ens = exact_ensemble(real, 1.0, 1.3)
    with pytest.raises(ValueError):
        gg_terms(ens, n=5)
    with pytest.raises(ValueError):
        gg_terms(ens, n=1, phi="ss")


def test_overlap_statistics_invariants():
    ens = [exact_ensemble(r, 1.0, 1.3) for r in draws(SK, 6, [0, 1, 2, 3])]
    st = overlap_statistics(ens)
    assert np.all(np.abs(st.levels) <= 1)
    for k, h in st.histograms.items():
        assert h.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(h >= 0)
    assert st.draws == 4
    assert st.to_dict()["n"] == 6


def test_gram_matrix_psd_for_mc_tuples():
    real = DisorderRealization.sample(SK, 8, 1)
    assert gram_violation(mc_ensemble(real, 1.0, 1.3, sweeps=500, ladder=2, seed=0)) >= -1e-8


def test_chi_zero_field_and_equal_system_control():
    ens = [exact_ensemble(r, 1.0, 1.3) for r in draws(SK, 6, range(8))]
    chi, var = estimate_chi(overlap_statistics(ens))
    assert abs(chi) < 1e-12 and var > 0
    fields = FieldSpec.fixed(0.5, 0.5)
    ens = [exact_ensemble(r, 1.2, 1.2) for r in draws(SK, 6, range(4), fields)]
    st = overlap_statistics(ens)
    assert st.chi == pytest.approx(st.moments["ss"][0], abs=1e-12)


def test_invariance_t_zero_and_empty_event():
    ens = [exact_ensemble(r, 1.0, 1.3) for r in draws(SK, 6, [0, 1, 2])]
    st = overlap_statistics(ens)
    q = 0.5
    curve = invariance_phi(ens, q, [-1.0, 0.0, 0.5, 2.0])
    direct = float(np.mean([e.overlap_distribution("sr")[1][np.abs(st.levels) >= q - 1e-12].sum() for e in ens]))
    assert curve.phi[1] == pytest.approx(direct, abs=1e-12)
    for obs in ("sr", "one"):
        empty = invariance_phi(ens, 1.01, np.linspace(-3, 3, 7), observable=obs)
        assert empty.drift == 0.0
    assert invariance_phi(ens, 0.3, [0.0], observable="one").phi[0] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        invariance_phi(ens, 0.5, [31.0])


def test_clustering_trivial_cases():
    ens = exact_ensemble(DisorderRealization.sample(SK, 6, 0), 1.5, 1.5)
    assert clustering_violation(ens, 0.0) == 0.0
    assert clustering_violation(ens, 1.2) == 0.0
    r = clustering_violation(ens, 0.5, samples=400)
    assert 0.0 <= r <= 1.0
    assert clustering_violation(ens, 0.5, samples=400, seed=3) == clustering_violation(ens, 0.5, samples=400, seed=3)


def test_threshold_report_zero_field():
    by_n = {n: overlap_statistics([exact_ensemble(r, 1.2, 1.5) for r in draws(SK, n, range(4))]) for n in (6, 8)}
    rep = overlap_threshold_report(by_n, 0.0, 0.0, 0.0)
    assert rep["thresholds"]["geometric"] == 0.0
    assert len(rep["rows"]) == 6
    row = rep["rows"][0]
    assert row["above_max"] == pytest.approx(by_n[6].tail_mass("sr", 0.05))


def test_sign_test():
    small = np.arange(32, dtype=float) + 1
    res = sign_test_decrease(small, small - 0.5)
    assert res.successes == 32 and res.passed and res.p_value == pytest.approx(0.5**32)
    tie = sign_test_decrease([1.0, 2.0], [1.0, 2.0])
    assert tie.successes == 0 and not tie.passed
    with pytest.raises(ValueError):
        sign_test_decrease([1.0], [1.0, 2.0])


def test_block_seeds_disjoint():
    a, b = block_seeds(0, 16), block_seeds(1, 16)
    assert len(set(a) | set(b)) == 32
    assert block_seeds(3, 4) == block_seeds(3, 4)
