import math

import numpy as np
import pytest

from chaostemp.fields import FieldSpec
from chaostemp.gibbs import (
    BudgetError,
    DisorderRealization,
    configurations,
    constrained_curve,
    constrained_free_energy,
    draws,
    exact_ensemble,
    geometric_ladder,
    mc_ensemble,
    metropolis_accept_probability,
    overlap_levels,
    system_energies,
)
from chaostemp.mixture import MixtureSpec

from conftest import SK, zero_disorder

MIXED = MixtureSpec({2: 1.0, 4: 0.5})


@pytest.mark.parametrize("spec", [SK, MIXED, MixtureSpec({4: 1.0})])
def test_reduced_form_matches_direct_sums(spec):
    real = DisorderRealization.sample(spec, 5, seed=7, fields=FieldSpec("gaussian", (0.2, -0.1), ((1, 0.5), (0.5, 1))))
    S = configurations(5)
    direct = np.array([real.hamiltonian(s) for s in S])
    np.testing.assert_allclose(real.reduced.energies(S), direct, atol=1e-12)
    E = system_energies(real, S)
    np.testing.assert_allclose(E[1], direct + S @ real.h[:, 1], atol=1e-12)


def test_reduced_form_structure():
    red = DisorderRealization.sample(MIXED, 5, seed=1).reduced
    np.testing.assert_array_equal(np.diag(red.Q), 0.0)
    np.testing.assert_allclose(red.Q, red.Q.T)
    T = red.T
    np.testing.assert_allclose(T, T.transpose(1, 0, 2, 3))
    np.testing.assert_allclose(T, T.transpose(0, 2, 1, 3))
    for i in range(5):
        assert np.all(T[i, i] == 0)


@pytest.mark.parametrize("spec", [SK, MIXED])
def test_local_fields_give_flip_energy(spec):
    real = DisorderRealization.sample(spec, 6, seed=2)
    rng = np.random.default_rng(0)
    for _ in range(5):
        s = rng.choice([-1.0, 1.0], size=6)
        L = real.reduced.local_fields(s[None])[0] + real.h[:, 0]
        for i in range(6):
            t = s.copy()
            t[i] = -t[i]
            dH = real.hamiltonian(t, 0) - real.hamiltonian(s, 0)
            assert dH == pytest.approx(-2 * s[i] * L[i], abs=1e-12)


def test_hamiltonian_trivial_cases():
    real = zero_disorder(4)
    assert real.hamiltonian(np.ones(4)) == 0.0
    one = DisorderRealization.sample(SK, 1, seed=3)
    g = one.couplings[2][0, 0]
    assert one.hamiltonian([1]) == pytest.approx(g) == one.hamiltonian([-1])
    with pytest.raises(ValueError):
        real.hamiltonian([1, 0, 1, 1])


def test_covariance_is_n_xi_of_overlap():
    n = 4
    s1 = np.array([1.0, 1, 1, 1])
    s2 = np.array([1.0, 1, 1, -1])  # overlap 1/2
    for spec in (SK, MIXED):
        prods = np.array([
            (lambda r: r.hamiltonian(s1) * r.hamiltonian(s2))(DisorderRealization.sample(spec, n, seed))
            for seed in range(1000)
        ]) / n
        assert abs(prods.mean() - spec.xi(0.5)) < 3 * prods.std(ddof=1) / math.sqrt(len(prods))


def test_disorder_is_reproducible(tmp_path):
    a = DisorderRealization.sample(MIXED, 6, seed=11, fields=FieldSpec("gaussian", (0, 0), ((1, 0), (0, 1))))
    b = DisorderRealization.sample(MIXED, 6, seed=11, fields=FieldSpec("gaussian", (0, 0), ((1, 0), (0, 1))))
    for p in a.couplings:
        np.testing.assert_array_equal(a.couplings[p], b.couplings[p])
    np.testing.assert_array_equal(a.h, b.h)
    path = a.save(tmp_path)
    assert b.matches_file(path)
    c = DisorderRealization.sample(MIXED, 6, seed=12)
    assert not c.matches_file(path)


def test_budget_errors():
    with pytest.raises(BudgetError):
        DisorderRealization.sample(MixtureSpec({6: 1.0}), 4, 0)
    with pytest.raises(BudgetError):
        DisorderRealization.sample(MIXED, 30, 0)
    with pytest.raises(BudgetError):
        configurations(15)
    with pytest.raises(BudgetError):
        constrained_free_energy(DisorderRealization.sample(SK, 13, 0), 1.0, 1.0, 1.0)


def test_zero_couplings_free_energy_is_log2():
    ens = exact_ensemble(zero_disorder(5), 1.0, 1.7)
    np.testing.assert_allclose(ens.free_energy, math.log(2), atol=1e-14)
    for j in (0, 1):
        assert ens.weights(j).sum() == pytest.approx(1.0, abs=1e-12)


def test_single_spin_cross_overlap():
    h1, h2, b1, b2 = 0.3, -0.7, 1.0, 1.6
    ens = exact_ensemble(zero_disorder(1, h=[[h1, h2]]), b1, b2)
    lv, m = ens.overlap_distribution("sr")
    assert m @ lv == pytest.approx(math.tanh(b1 * h1) * math.tanh(b2 * h2), abs=1e-14)


def test_two_spin_uniform_overlap_distribution():
    ens = exact_ensemble(zero_disorder(2), 1.0, 1.3)
    lv, m = ens.overlap_distribution("ss")
    np.testing.assert_allclose(lv, [1.0, 0.0, -1.0])
    np.testing.assert_allclose(m, [0.25, 0.5, 0.25], atol=1e-15)


def test_log_z_matches_naive_sum():
    for seed in range(3):
        real = DisorderRealization.sample(MIXED, 10, seed, FieldSpec.fixed(0.2, -0.1))
        ens = exact_ensemble(real, 0.8, 1.2)
        E = system_energies(real)
        naive = np.log(np.array([np.exp(0.8 * E[0]).sum(), np.exp(1.2 * E[1]).sum()]))
        np.testing.assert_allclose(ens.log_z, naive, rtol=1e-10)


def test_affine_shift():
    real = DisorderRealization.sample(SK, 8, 4)
    c = 0.37
    a, b = exact_ensemble(real, 1.0, 1.3), exact_ensemble(real.shifted(c), 1.0, 1.3)
    np.testing.assert_allclose(b.free_energy - a.free_energy, np.array([1.0, 1.3]) * c / 8, atol=1e-13)


def test_constrained_free_energy_zero_couplings():
    real = zero_disorder(2)
    assert constrained_free_energy(real, 1.0, 1.0, 1.0).value == pytest.approx(math.log(2))
    assert constrained_free_energy(real, 1.0, 1.0, -1.0).value == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        constrained_free_energy(real, 1.0, 1.0, 0.5)


def test_gauge_symmetry():
    reals = draws(SK, 6, [0, 1], FieldSpec("gaussian", (0.3, 0.2), ((0.5, 0.1), (0.1, 0.5))))
    flipped = [r.with_fields(r.h * np.array([1.0, -1.0])) for r in reals]
    a, b = constrained_curve(reals, 1.0, 1.4), constrained_curve(flipped, 1.0, 1.4)
    lv = overlap_levels(6)
    for d in range(7):
        assert a[float(lv[d])].value == pytest.approx(b[float(lv[6 - d])].value, abs=1e-12)


def test_constrained_curve_log_sum_exp_identity():
    # summing the classes recovers log Z1 + log Z2
    real = DisorderRealization.sample(SK, 6, 9)
    curve = constrained_curve([real], 1.0, 1.3)
    ens = exact_ensemble(real, 1.0, 1.3)
    total = np.logaddexp.reduce([6 * est.value for est in curve.values()])
    assert total == pytest.approx(ens.log_z.sum(), abs=1e-10)


def test_metropolis_rule_and_ladder():
    assert metropolis_accept_probability(1.0, 0.5) == 1.0
    assert metropolis_accept_probability(2.0, -0.5) == pytest.approx(math.exp(-1.0))
    lad = geometric_ladder(1.2, 6)
    assert lad[0] == pytest.approx(0.3) and lad[-1] == pytest.approx(1.2)
    assert np.all(np.diff(lad) > 0)


def test_mc_high_temperature_is_uniform():
    real = DisorderRealization.sample(SK, 8, 5)
    ens = mc_ensemble(real, 1e-6, 1e-6, sweeps=4000, ladder=1, seed=1)
    mom = ens.overlap_moments()
    for kind in ("ss", "rr", "sr"):
        assert abs(mom[kind]["m1"]) < 3 * mom[kind]["se1"] + 1e-3
        assert abs(mom[kind]["m2"] - 1 / 8) < 3 * mom[kind]["se2"] + 1e-3
    mag = ens.snapshots.mean(axis=(1, 2, 3))
    assert np.all(np.abs(mag) < 0.05)


def test_mc_matches_exact_moments():
    real = DisorderRealization.sample(SK, 8, 6)
    exact = exact_ensemble(real, 1.0, 1.3).overlap_moments()
    mc = mc_ensemble(real, 1.0, 1.3, sweeps=20_000, ladder=4, seed=2).overlap_moments()
    for kind in ("ss", "rr", "sr"):
        for m, se in (("m1", "se1"), ("m2", "se2")):
            assert abs(mc[kind][m] - exact[kind][m]) <= 3 * mc[kind][se] + 1e-3


def test_mc_is_reproducible_and_warns_on_bad_ladder():
    real = DisorderRealization.sample(SK, 6, 7)
    a = mc_ensemble(real, 1.0, 1.3, sweeps=500, ladder=3, seed=9)
    b = mc_ensemble(real, 1.0, 1.3, sweeps=500, ladder=3, seed=9)
    np.testing.assert_array_equal(a.snapshots, b.snapshots)
    with pytest.warns(RuntimeWarning):
        mc_ensemble(real, 3.0, 3.0, sweeps=300, ladder=(np.array([0.01, 3.0]), np.array([0.01, 3.0])), seed=1)
