import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from chaostemp.functional import delta_uv
from chaostemp.gibbs import DisorderRealization, class_matrix, configurations
from chaostemp.measure import ParisiMeasure, decoupling_point
from chaostemp.mixture import MixtureSpec

gammas = st.floats(0.05, 1.5)
specs = st.builds(lambda a, b: MixtureSpec({2: a, 4: b}), gammas, st.floats(0.0, 1.0))


@st.composite
def measures(draw, max_steps=3):
    k = draw(st.integers(0, max_steps))
    bps = sorted(set(draw(st.lists(st.floats(0.01, 0.99), min_size=k, max_size=k))))
    vals = sorted(draw(st.lists(st.floats(0.0, 1.0), min_size=len(bps), max_size=len(bps))))
    return ParisiMeasure(tuple(bps), tuple(vals) + (1.0,))


@given(specs, st.floats(0.0, 1.0))
def test_theta_nonnegative(spec, q):
    assert spec.theta(q) >= -1e-15
    assert spec.theta1(q) >= 0.0


@given(specs, st.floats(0.0, 1.0))
def test_delta_vanishes_on_diagonal(spec, u):
    assert abs(delta_uv(spec, 1.0, 1.7, u, u)) < 1e-12


@given(specs, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_delta_nonnegative(spec, u, v):
    # xi(u) - u xi'(v) + theta(v) >= 0 by convexity of xi
    assert delta_uv(spec, 1.0, 1.3, u, v) >= -1e-12


@given(measures(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_cdf_monotone(mu, a, b):
    lo, hi = sorted((a, b))
    assert mu.cdf(lo) <= mu.cdf(hi)


@given(measures())
def test_pairs_round_trip(mu):
    assert ParisiMeasure.from_pairs(mu.to_pairs()) == mu


@given(measures(), measures(), st.floats(0.2, 3.0), st.floats(0.2, 3.0))
def test_decoupling_point_symmetric(mu1, mu2, b1, b2):
    assert decoupling_point(mu1, mu2, b1, b2) == decoupling_point(mu2, mu1, b2, b1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5), st.booleans())
def test_reduced_form_equals_direct_hamiltonian(seed, n, quartic):
    spec = MixtureSpec({2: 1.0, 4: 0.7}) if quartic else MixtureSpec({2: 1.0})
    real = DisorderRealization.sample(spec, n, seed)
    S = configurations(n)
    direct = np.array([real.hamiltonian(s) for s in S])
    np.testing.assert_allclose(real.reduced.energies(S), direct, atol=1e-11)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 1000))
def test_class_matrix_rows_sum_to_total(n, seed):
    w = np.random.default_rng(seed).random(2**n)
    C = class_matrix(w, n)
    np.testing.assert_allclose(C.sum(axis=1), w.sum())
    np.testing.assert_allclose(C[:, 0], w)
