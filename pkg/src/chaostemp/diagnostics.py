"""Finite-N diagnostics for the two-temperature overlap structure.

Everything here folds over immutable ``GibbsEnsemble`` objects.  Exact-mode
quantities are evaluated by exact Gibbs summation: every average needed below
involves at most two overlaps sharing a replica, so it reduces to "star sums"
K[s, d] = G(t : dist(s, t) = d) around the shared configuration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import binomtest

from .gibbs import OVERLAP_TYPES, GibbsEnsemble, overlap_levels

T_GUARD = 30.0
PHI_FAMILY = ("one", "ss", "sr")


# ---------------------------------------------------------------------------
# overlap statistics


@dataclass
class OverlapStatistics:
    """Overlap histograms and moments pooled over disorder draws.

    ``per_draw[kind]`` has one row per draw with the raw moments of orders
    1..4; ``chi`` is the pooled mean of the cross overlap and ``var`` the
    pooled E<(R_sr - chi)^2>.
    """

    n: int
    levels: np.ndarray
    histograms: dict
    moments: dict
    per_draw: dict
    draws: int
    samples: int
    chi: float
    var: float
    chi_se: float
    modes: tuple = ()

    def to_dict(self) -> dict:
        return dict(
            n=self.n,
            draws=self.draws,
            samples=self.samples,
            chi=self.chi,
            chi_se=self.chi_se,
            var=self.var,
            moments={k: list(map(float, v)) for k, v in self.moments.items()},
            histograms={k: list(map(float, v)) for k, v in self.histograms.items()},
            levels=list(map(float, self.levels)),
        )

    def tail_mass(self, kind: str, threshold: float, strict: bool = True) -> float:
        """P(|R| > threshold) (or >= when strict=False), pooled over draws."""
        a = np.abs(self.levels)
        mask = a > threshold + 1e-12 if strict else a >= threshold - 1e-12
        return float(self.histograms[kind][mask].sum())


def overlap_statistics(ensembles: Sequence[GibbsEnsemble]) -> OverlapStatistics:
    if not ensembles:
        raise ValueError("need at least one ensemble")
    n = ensembles[0].n
    if any(e.n != n for e in ensembles):
        raise ValueError("all ensembles must share N")
    levels = overlap_levels(n)
    hists = {k: [] for k in OVERLAP_TYPES}
    samples = 0
    for e in ensembles:
        for k in OVERLAP_TYPES:
            _, m = e.overlap_distribution(k)
            hists[k].append(m)
        if e.mode == "mc":
            samples += e.snapshots.shape[2]
    per_draw = {k: np.array([[h @ levels**r for r in range(1, 5)] for h in hists[k]]) for k in OVERLAP_TYPES}
    pooled = {k: np.mean(hists[k], axis=0) for k in OVERLAP_TYPES}
    moments = {k: per_draw[k].mean(axis=0) for k in OVERLAP_TYPES}
    chi = float(moments["sr"][0])
    var = float(moments["sr"][1] - chi**2)
    d = len(ensembles)
    chi_se = float(per_draw["sr"][:, 0].std(ddof=1) / math.sqrt(d)) if d > 1 else math.inf
    return OverlapStatistics(n, levels, pooled, moments, per_draw, d, samples, chi, var, chi_se,
                             tuple(sorted({e.mode for e in ensembles})))


def estimate_chi(stats: OverlapStatistics) -> tuple[float, float]:
    """(chi_hat, E<(R_sr - chi_hat)^2>)."""
    return stats.chi, stats.var


def gram_violation(ensemble: GibbsEnsemble, max_tuples: int = 2000) -> float:
    """Most negative eigenvalue of the overlap Gram matrix of recorded replica tuples.

    Each tuple is (sigma^1, sigma^2, rho^1, rho^2) at one measurement sweep.
    Returns 0 for exact-mode ensembles, whose weights carry no tuples.
    """
    if ensemble.mode != "mc":
        return 0.0
    S = ensemble.snapshots.astype(float)
    T = S.shape[2]
    idx = np.linspace(0, T - 1, min(T, max_tuples)).astype(int)
    X = np.concatenate([S[0][:, idx], S[1][:, idx]], axis=0).transpose(1, 0, 2)  # (t, 4, N)
    gram = np.einsum("tan,tbn->tab", X, X) / ensemble.n
    return float(min(0.0, np.linalg.eigvalsh(gram).min()))


# ---------------------------------------------------------------------------
# Ghirlanda-Guerra residuals


def _star(ens: GibbsEnsemble, toward: int, values: np.ndarray) -> np.ndarray:
    """s -> sum_t G_toward(t) values[dist(s, t)] for every configuration s."""
    return ens.classes["ss" if toward == 0 else "rr"] @ values


def _weights(ens: GibbsEnsemble, j: int) -> np.ndarray:
    return ens.weights(j)


@dataclass(frozen=True)
class _Pair:
    a: tuple  # (system, index)
    b: tuple
    fn: Callable


def _pair_average(ens: GibbsEnsemble, p1: _Pair | None, p2: _Pair | None) -> float:
    """Gibbs average of fn1(R_p1) * fn2(R_p2) for two replica pairs."""
    lv = overlap_levels(ens.n)
    pairs = [p for p in (p1, p2) if p is not None]
    if not pairs:
        return 1.0
    if len(pairs) == 2:
        (x, y), (u, v) = (pairs[0].a, pairs[0].b), (pairs[1].a, pairs[1].b)
        if {x, y} == {u, v}:
            combined = _Pair(x, y, lambda r, f=pairs[0].fn, g=pairs[1].fn: f(r) * g(r))
            return _pair_average(ens, combined, None)
        shared = {x, y} & {u, v}
        if not shared:
            return _pair_average(ens, pairs[0], None) * _pair_average(ens, pairs[1], None)
        c = shared.pop()
        o1 = y if x == c else x
        o2 = v if u == c else u
        s1 = _star(ens, o1[0], pairs[0].fn(lv))
        s2 = _star(ens, o2[0], pairs[1].fn(lv))
        return float(_weights(ens, c[0]) @ (s1 * s2))
    pr = pairs[0]
    return float(_weights(ens, pr.a[0]) @ _star(ens, pr.b[0], pr.fn(lv)))


def _phi_pair(phi: str, n: int) -> _Pair | None:
    sq = lambda r: r**2  # noqa: E731
    if phi == "one":
        return None
    if phi == "ss":
        if n < 2:
            raise ValueError("Phi = (s1.s2)^2 needs n >= 2")
        return _Pair((0, 1), (0, 2), sq)
    if phi == "sr":
        return _Pair((0, 1), (1, 1), sq)
    raise ValueError(f"Phi must be one of {PHI_FAMILY}")


@dataclass
class GGTerms:
    """Per-draw Gibbs averages entering one approximate identity."""

    lhs: float
    rhs_local: float
    phi: float
    base: float


@dataclass
class GGResult:
    residual: float
    lhs: float
    rhs: float
    draws: int
    kappa: float
    which: int
    n: int
    p: int
    phi: str

    @property
    def abs_residual(self) -> float:
        return abs(self.residual)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def gg_terms(ens: GibbsEnsemble, n: int = 2, p: int = 2, which: int = 1, phi: str = "ss") -> GGTerms:
    """Gibbs averages of one draw for the identity anchored at sigma^1 (which=1) or rho^1 (which=2).

    which=1:  <Phi (R(s1,s_{n+1})^p + R(s1,r_{n+1})^p / kappa)>
              ~ (1/n) sum_{l<=n} <Phi R(s1,r_l)^p> / kappa
                + (1/n) E<Phi> E<R(s1,s2)^p> + (1/n) sum_{2<=l<=n} <Phi R(s1,s_l)^p>
    which=2 is the mirror image with kappa replaced by 1/kappa.
    """
    if ens.mode != "exact":
        raise ValueError("GG residuals need an exact-mode ensemble")
    if not 1 <= n <= 4:
        raise ValueError("n must lie in 1..4")
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    kappa = ens.beta1 / ens.beta2
    own, other = (0, 1) if which == 1 else (1, 0)
    c_other = 1.0 / kappa if which == 1 else kappa
    anchor = (own, 1)
    power = lambda r: r**p  # noqa: E731
    Phi = _phi_pair(phi, n)

    def avg(b):
        return _pair_average(ens, Phi, _Pair(anchor, b, power))

    lhs = avg((own, n + 1)) + c_other * avg((other, n + 1))
    rhs = c_other * sum(avg((other, l)) for l in range(1, n + 1)) / n
    rhs += sum(avg((own, l)) for l in range(2, n + 1)) / n
    phi_mean = _pair_average(ens, Phi, None)
    base = _pair_average(ens, _Pair(anchor, (own, 2), power), None)
    return GGTerms(lhs, rhs, phi_mean, base)


def gg_residual(
    ensembles: Sequence[GibbsEnsemble] | GibbsEnsemble,
    n: int = 2,
    p: int = 2,
    which: int = 1,
    phi: str = "ss",
) -> GGResult:
    """LHS - RHS of the finite-N identity with the disorder average over ``ensembles``."""
    ensembles = [ensembles] if isinstance(ensembles, GibbsEnsemble) else list(ensembles)
    if any(e.mode != "exact" for e in ensembles):
        raise ValueError("GG residuals need exact-mode ensembles")
    terms = [gg_terms(e, n, p, which, phi) for e in ensembles]
    lhs = float(np.mean([t.lhs for t in terms]))
    rhs = float(np.mean([t.rhs_local for t in terms]))
    rhs += float(np.mean([t.phi for t in terms]) * np.mean([t.base for t in terms])) / n
    e0 = ensembles[0]
    return GGResult(lhs - rhs, lhs, rhs, len(terms), e0.beta1 / e0.beta2, which, n, p, phi)


# ---------------------------------------------------------------------------
# invariance diagnostic


@dataclass
class InvarianceCurve:
    t: np.ndarray
    phi: np.ndarray
    drift: float
    a: float
    q_threshold: float

    def to_dict(self) -> dict:
        return dict(t=list(map(float, self.t)), phi=list(map(float, self.phi)), drift=self.drift,
                    a=self.a, q_threshold=self.q_threshold)


def invariance_phi(
    ensembles: Sequence[GibbsEnsemble] | GibbsEnsemble,
    q_threshold: float,
    t_grid: Sequence[float],
    observable: str = "sr",
) -> InvarianceCurve:
    """phi(t) for n = 1, f_1 = 1{|x| >= q}, all g zero.

    The observable Phi is 1{|s1.r1| >= q} (``"sr"``) or 1 (``"one"``).  With
    W1 = G1(|s.s1| >= q), W2 = G2(|r.s1| >= q) and a = E<f_1(s1.s2)>,

        phi(t) = E sum_s1 G1(s1) <Phi e^{t(a + f_1(r1.s1)/kappa)}>_r1
                 / ((W1 e^t + 1 - W1)(W2 e^{t/kappa} + 1 - W2)).
    """
    ensembles = [ensembles] if isinstance(ensembles, GibbsEnsemble) else list(ensembles)
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.abs(t) > T_GUARD):
        raise ValueError(f"|t| must not exceed {T_GUARD}")
    if observable not in ("sr", "one"):
        raise ValueError("observable must be 'sr' or 'one'")
    if any(e.mode != "exact" for e in ensembles):
        raise ValueError("invariance_phi needs exact-mode ensembles")
    ind = (np.abs(overlap_levels(ensembles[0].n)) >= q_threshold - 1e-12).astype(float)
    stars = []
    for e in ensembles:
        w1 = e.weights(0)
        W1, W2 = _star(e, 0, ind), _star(e, 1, ind)
        stars.append((w1, W1, W2, e.beta1 / e.beta2))
    a = float(np.mean([w1 @ W1 for w1, W1, _, _ in stars]))
    phi = np.zeros_like(t)
    for w1, W1, W2, kappa in stars:
        for i, ti in enumerate(t):
            den = (W1 * math.exp(ti) + 1.0 - W1) * (W2 * math.exp(ti / kappa) + 1.0 - W2)
            num = W2 * math.exp(ti * (a + 1.0 / kappa))
            if observable == "one":
                num = num + (1.0 - W2) * math.exp(ti * a)
            phi[i] += float(w1 @ (num / den))
    phi /= len(stars)
    i0 = int(np.argmin(np.abs(t)))
    ref = phi[i0] if t[i0] == 0 else _phi_at_zero(stars, observable)
    return InvarianceCurve(t, phi, float(np.max(np.abs(phi - ref))), a, q_threshold)


def _phi_at_zero(stars, observable) -> float:
    if observable == "one":
        return 1.0
    return float(np.mean([w1 @ W2 for w1, _, W2, _ in stars]))


# ---------------------------------------------------------------------------
# clustering and thresholds


COMPOSITIONS = ((0, 0, 0), (0, 0, 1), (0, 1, 1), (1, 1, 1))


def _sample_replicas(ens: GibbsEnsemble, j: int, count: int, rng: np.random.Generator) -> np.ndarray:
    n = ens.n
    if ens.mode == "exact":
        idx = rng.choice(2**n, size=count, p=ens.weights(j) / ens.weights(j).sum())
        return (1 - 2 * ((idx[:, None] >> np.arange(n)) & 1)).astype(float)
    pool = ens.snapshots[j].reshape(-1, n)
    return pool[rng.integers(0, len(pool), size=count)].astype(float)


def clustering_violation(
    ensembles: Sequence[GibbsEnsemble] | GibbsEnsemble,
    q: float,
    samples: int = 4000,
    seed: int = 0,
) -> float:
    """Empirical P(|t1.t2| >= q, |t1.t3| >= q, |t2.t3| < q) over stratified replica triples.

    Each of the compositions (sss, ssr, srr, rrr) receives an equal quota of
    ``samples`` triples per ensemble.
    """
    ensembles = [ensembles] if isinstance(ensembles, GibbsEnsemble) else list(ensembles)
    if q > 1.0 or q <= 0.0:
        return 0.0
    rng = np.random.default_rng(seed)
    quota = max(1, samples // len(COMPOSITIONS))
    hits = total = 0
    for e in ensembles:
        for comp in COMPOSITIONS:
            t = [_sample_replicas(e, j, quota, rng) for j in comp]
            r12 = np.abs(np.einsum("an,an->a", t[0], t[1])) / e.n
            r13 = np.abs(np.einsum("an,an->a", t[0], t[2])) / e.n
            r23 = np.abs(np.einsum("an,an->a", t[1], t[2])) / e.n
            hits += int(np.count_nonzero((r12 >= q - 1e-12) & (r13 >= q - 1e-12) & (r23 < q - 1e-12)))
            total += quota
    return hits / total


def overlap_threshold_report(
    stats: OverlapStatistics | Mapping[int, OverlapStatistics],
    c1: float,
    c2: float,
    q0: float,
    epsilons: Sequence[float] = (0.05, 0.1, 0.2),
) -> dict:
    """Cross-overlap tail masses above max(c2, q0) + eps and sqrt(c1 c2) + eps, per N."""
    by_n = {stats.n: stats} if isinstance(stats, OverlapStatistics) else dict(stats)
    a, b = max(c2, q0), math.sqrt(max(c1, 0.0) * max(c2, 0.0))
    rows = []
    for n in sorted(by_n):
        st = by_n[n]
        for eps in epsilons:
            rows.append(dict(
                n=n, eps=eps,
                above_max=st.tail_mass("sr", a + eps, strict=True),
                above_geo=st.tail_mass("sr", b + eps, strict=False),
            ))
    trend = {}
    ns = sorted(by_n)
    for eps in epsilons:
        series = [r["above_geo"] for r in rows if r["eps"] == eps]
        trend[eps] = bool(len(series) > 1 and all(x >= y for x, y in zip(series, series[1:])))
    return dict(thresholds=dict(max_c2_q0=a, geometric=b, c1=c1, c2=c2, q0=q0), rows=rows,
                nonincreasing=trend, ns=ns)


# ---------------------------------------------------------------------------
# trend tests


@dataclass
class SignTest:
    pairs: int
    successes: int
    p_value: float
    alpha: float
    passed: bool
    small: list = field(default_factory=list)
    large: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(pairs=self.pairs, successes=self.successes, p_value=self.p_value,
                    alpha=self.alpha, passed=self.passed)


def sign_test_decrease(small_n: Sequence[float], large_n: Sequence[float], alpha: float = 0.05) -> SignTest:
    """One-sided paired sign test that the statistic decreases from the small-N to the large-N run.

    Ties count as failures.
    """
    a, b = np.asarray(small_n, float), np.asarray(large_n, float)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("need equally many paired values")
    k = int(np.count_nonzero(b < a))
    p = float(binomtest(k, len(a), 0.5, alternative="greater").pvalue)
    return SignTest(len(a), k, p, alpha, p < alpha, list(map(float, a)), list(map(float, b)))


def block_seeds(seed: int, block: int) -> list[int]:
    """Disorder seeds for the block belonging to one trend seed."""
    return [seed * 100_003 + b for b in range(block)]
