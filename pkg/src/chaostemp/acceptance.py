"""Acceptance suite: ten end-to-end checks with fixed tolerances and time budgets.

Each ``criterion_k`` returns a :class:`CriterionResult`; ``run`` executes a
selection of them.  The same functions back ``tests/test_acceptance.py`` and
the ``verify`` subcommand.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .diagnostics import block_seeds, gg_residual, overlap_statistics, sign_test_decrease
from .fields import FieldSpec
from .functional import (
    coupled_functional,
    general_coupled_measure,
    minimize_parisi,
    strict_gap_scan,
)
from .gibbs import constrained_curve, draws, exact_ensemble, mc_ensemble
from .measure import ParisiMeasure
from .mixture import MixtureSpec
from .pde import PdeGrid, psi_distinctness, solve_phi
from .stochastic import ControlProcess, SdeConfig, ito_check, sine_perturbation, variational_value

SK = MixtureSpec({2: 1.0})


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    seconds: float
    budget: float | None
    details: dict = field(default_factory=dict)
    summary: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        budget = f"/{self.budget:.0f}s" if self.budget else ""
        return f"criterion {self.number:2d} [{status}] {self.title} ({self.seconds:.1f}s{budget}) {self.summary}"

    def to_dict(self) -> dict:
        return dict(number=self.number, title=self.title, passed=self.passed, seconds=self.seconds,
                    budget=self.budget, summary=self.summary, details=_jsonable(self.details))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _timed(number: int, title: str, budget: float | None, body: Callable[[], tuple[bool, dict, str]]):
    t0 = time.perf_counter()
    ok, details, summary = body()
    dt = time.perf_counter() - t0
    within = budget is None or dt < budget
    if not within:
        summary += f" (over time budget: {dt:.1f}s >= {budget}s)"
    return CriterionResult(number, title, bool(ok and within), dt, budget, details, summary)


@lru_cache(maxsize=None)
def fitted_measure(key: str, beta: float, k: int = 1) -> ParisiMeasure:
    """Cached k-step minimizer for a mixture given by its text key."""
    spec = MixtureSpec(dict((int(p), float(g)) for p, g in (t.split(":") for t in key.split(";"))))
    return minimize_parisi(spec, beta, k=k).measure


# ---------------------------------------------------------------------------


def criterion_1() -> CriterionResult:
    def body():
        sol1 = solve_phi(SK, ParisiMeasure.constant(1.0), 1.0)
        sol0 = solve_phi(SK, ParisiMeasure.constant(0.0), 1.0)
        z, w = np.polynomial.hermite_e.hermegauss(61)
        quad = float((w / w.sum()) @ np.log(np.cosh(z * math.sqrt(2.0))))
        e1, e0 = abs(sol1.phi0 - 1.0), abs(sol0.phi0 - quad)
        ok = e1 <= 1e-6 and e0 <= 1e-6
        return ok, dict(phi0_mu1=sol1.phi0, phi0_mu0=sol0.phi0, quadrature=quad, err_mu1=e1, err_mu0=e0), \
            f"|Phi-1|={e1:.1e}, |Phi-quad|={e0:.1e}"

    return _timed(1, "Cole-Hopf closed forms", 5.0, body)


def criterion_2() -> CriterionResult:
    target = 0.755647

    def body():
        res = minimize_parisi(SK, 0.5, k=1)
        value = res.value.with_log2
        ok = abs(res.q_star) < 1e-3 and abs(value - target) <= 1e-4
        return ok, dict(q_star=res.q_star, value_with_log2=value, target=target, measure=res.measure.to_pairs(),
                        evaluations=res.evaluations), \
            f"q*={res.q_star:.2e}, value={value:.6f} vs {target}"

    return _timed(2, "Parisi-value oracle", 120.0, body)


ITO_MEASURE = ParisiMeasure((0.5,), (0.4, 1.0))


def criterion_3(paths: int = 100_000) -> CriterionResult:
    def body():
        beta = 1.3
        sol = solve_phi(SK, ITO_MEASURE, beta, extra_q=tuple(np.round(np.arange(0.0, 1.0, 0.01), 10)))
        rows = []
        for q in (0.0, 0.2, 0.4, 0.6, 0.8):
            for x in (-1.0, -0.5, 0.0, 0.5, 1.0):
                r = ito_check(SK, ITO_MEASURE, beta, 0.0, q, x, sol, SdeConfig(paths=paths, seed=17))
                rows.append(r.to_dict())
        z = np.abs([r["z_score"] for r in rows])
        frac = float(np.mean(z <= 3.0))
        ok = frac >= 0.95 and z.max() <= 5.0
        return ok, dict(probes=rows, fraction_within_3=frac, max_abs_z=float(z.max())), \
            f"{frac:.0%} of probes |z|<=3, max |z|={z.max():.2f}"

    return _timed(3, "SDE/Ito agreement", 300.0, body)


def criterion_4(paths: int = 100_000, perturbations: int = 20) -> CriterionResult:
    def body():
        beta, s, t, x = 1.3, 0.0, 0.5, 0.3
        qs = tuple(np.round(np.arange(0.0, 0.5, 0.01), 10)) + (0.5,)
        f = solve_phi(SK, ITO_MEASURE, beta, extra_q=qs)
        fsx = float(f.phi_interp(s, np.array([x]))[0])
        cfg = SdeConfig(paths=paths, seed=11)
        bound = 2.0 * beta
        best = variational_value(SK, f, ControlProcess(bound=bound), s, t, x, cfg)
        z_star = (best.value - fsx) / best.stderr
        rng = np.random.default_rng(5)
        rows = []
        for _ in range(perturbations):
            amp = float(rng.uniform(0.1, 0.5) * rng.choice([-1.0, 1.0]))
            freq, phase = int(rng.integers(1, 4)), float(rng.uniform(0.0, 2 * math.pi))
            ctrl = ControlProcess(bound=bound, offset=sine_perturbation(amp, s, t, freq, phase))
            e = variational_value(SK, f, ctrl, s, t, x, cfg)
            rows.append(dict(amplitude=amp, freq=freq, phase=phase, value=e.value, stderr=e.stderr,
                             exceeds=e.value > fsx + 3 * e.stderr))
        ok = abs(z_star) <= 3.0 and not any(r["exceeds"] for r in rows)
        worst = max((r["value"] - fsx) / r["stderr"] for r in rows)
        return ok, dict(f_sx=fsx, optimal=best.to_dict(), z_optimal=z_star, perturbed=rows), \
            f"z(u*)={z_star:.2f}, worst perturbed z={worst:.2f}"

    return _timed(4, "Variational representation", 300.0, body)


def criterion_5() -> CriterionResult:
    def body():
        m1, m2 = fitted_measure(SK.key(), 1.0), fitted_measure(SK.key(), 2.0)
        grid = PdeGrid.default(SK, 3.0)
        out = []
        for g in (grid, grid.refined(2)):
            out.append(psi_distinctness(solve_phi(SK, m1, 1.0, grid=g), solve_phi(SK, m2, 2.0, grid=g)))
        a, b = out[0].sup, out[1].sup
        ok = a > 1e-3 and b > 1e-3 and abs(b / a - 1.0) <= 0.10
        return ok, dict(sup=a, sup_refined=b, x_at=out[0].x_at, sup_far=out[0].sup_far,
                        sup_near=out[0].sup_near), f"sup={a:.4f}, refined={b:.4f}"

    return _timed(5, "Psi-distinctness", 60.0, body)


GAP_SPEC = MixtureSpec({2: 1.0, 4: 1.0})
GAP_MU1 = ParisiMeasure((0.1, 0.5, 0.8), (0.0, 0.6, 0.8, 1.0))
GAP_MU2 = ParisiMeasure((0.1, 0.5, 0.8), (0.0, 0.5, 0.9, 1.0))


def criterion_6() -> CriterionResult:
    def body():
        rep = strict_gap_scan(GAP_SPEC, GAP_MU1, GAP_MU2, 1.0, 1.2, epsilon=0.05)
        ok = len(rep.gaps) > 0 and min(rep.gaps) > 0.0
        return ok, rep.to_dict(), f"c={rep.c}, q0={rep.q0}, min delta'={rep.min_gap:.3e} over {len(rep.gaps)} v"

    return _timed(6, "Strict gap", 600.0, body)


MC_SPEC = MixtureSpec({2: 1.0, 4: 0.5})
MC_FIELDS = FieldSpec("gaussian", (0.3, 0.3), ((0.25, 0.2), (0.2, 0.25)))


def criterion_7(sweeps: int = 40_000) -> CriterionResult:
    def body():
        real = draws(MC_SPEC, 10, [3], MC_FIELDS)[0]
        ex = exact_ensemble(real, 1.0, 1.3).overlap_moments()
        mc = mc_ensemble(real, 1.0, 1.3, sweeps=sweeps, ladder=6, seed=1).overlap_moments()
        zs = {}
        for kind in ex:
            for m in ("1", "2"):
                zs[f"{kind}_m{m}"] = (mc[kind]["m" + m] - ex[kind]["m" + m]) / mc[kind]["se" + m]
        worst = max(abs(v) for v in zs.values())
        return worst <= 3.0, dict(exact=ex, mc=mc, z=zs), f"max |z|={worst:.2f} over 6 moments"

    return _timed(7, "Exact-vs-MC Gibbs", 300.0, body)


def criterion_8(seeds: int = 32, block: int = 8) -> CriterionResult:
    def body():
        res = {}
        for n in (6, 12):
            res[n] = [
                abs(gg_residual([exact_ensemble(r, 1.0, 1.3) for r in draws(SK, n, block_seeds(s, block))],
                                n=2, p=2, which=1, phi="ss").residual)
                for s in range(seeds)
            ]
        st = sign_test_decrease(res[6], res[12])
        m6, m12 = float(np.mean(res[6])), float(np.mean(res[12]))
        ok = st.passed and m12 < m6
        return ok, dict(mean_abs_6=m6, mean_abs_12=m12, sign_test=st.to_dict(), per_seed=res), \
            f"mean|res| {m6:.4f} -> {m12:.4f}, {st.successes}/{st.pairs} decreases, p={st.p_value:.1e}"

    return _timed(8, "GG residual trend", 900.0, body)


def criterion_9(seeds: int = 32, block: int = 16) -> CriterionResult:
    def body():
        beta1, beta2 = 1.0, 1.3
        stats = {n: [] for n in (8, 12)}
        for n in stats:
            for s in range(seeds):
                ens = [exact_ensemble(r, beta1, beta2) for r in draws(SK, n, block_seeds(s, block))]
                stats[n].append(overlap_statistics(ens))
        chis = np.concatenate([st.per_draw["sr"][:, 0] for st in stats[12]])
        chi = float(chis.mean())
        chi_se = float(chis.std(ddof=1) / math.sqrt(len(chis)))
        chi_ok = abs(chi) <= 3 * chi_se + 1e-12
        trend = sign_test_decrease([st.var for st in stats[8]], [st.var for st in stats[12]])
        mu2 = fitted_measure(SK.key(), beta2)
        limit_q2 = _second_moment(mu2)
        within = float(np.mean([st.moments["rr"][1] for st in stats[12]]))
        contrast_ok = within >= 0.5 * limit_q2 and within > 0.1
        ok = chi_ok and trend.passed and contrast_ok
        return ok, dict(chi=chi, chi_se=chi_se, sign_test=trend.to_dict(),
                        cross_var_8=float(np.mean([st.var for st in stats[8]])),
                        cross_var_12=float(np.mean([st.var for st in stats[12]])),
                        within_rr_12=within, parisi_limit_rr=limit_q2), \
            (f"chi={chi:.1e}+-{chi_se:.1e}, cross var {trend.successes}/{trend.pairs} decreases "
             f"(p={trend.p_value:.1e}), within-system E<R^2>={within:.3f} vs limit {limit_q2:.3f}")

    return _timed(9, "Chaos trend", None, body)


def _second_moment(mu: ParisiMeasure) -> float:
    """int q^2 dmu(q) for a step CDF: atoms at 0, at the breakpoints and at 1."""
    total, prev = 0.0, mu.values[0]
    for q, m in zip(mu.breakpoints, mu.values[1:]):
        total += (m - prev) * q * q
        prev = m
    return float(total + (1.0 - prev))


def criterion_10(draws_per_n: int = 32) -> CriterionResult:
    def body():
        b1, b2 = 1.0, 1.3
        mu1, mu2 = fitted_measure(SK.key(), b1), fitted_measure(SK.key(), b2)
        cache = {}

        def bound(u):
            if u not in cache:
                mu = general_coupled_measure(mu1, mu2, b1, b2, u)
                cache[u] = coupled_functional(SK, mu1, mu2, b1, b2, u, u, mu=mu).with_log2
            return cache[u]

        table, slack, band = {}, {}, {}
        for n in (6, 8, 10):
            curve = constrained_curve(draws(SK, n, range(draws_per_n)), b1, b2)
            rows = [dict(u=u, F=e.value, se=e.stderr, P=bound(u), excess=e.value - bound(u))
                    for u, e in sorted(curve.items()) if u >= -1e-12]
            table[n] = rows
            slack[n] = float(np.mean([-r["excess"] for r in rows]))
            band[n] = float(max(0.0, max(r["excess"] for r in rows)) + 3 * max(r["se"] for r in rows))
        within = all(r["excess"] <= 3 * r["se"] for r in table[8])
        shrinks = slack[10] < slack[6] and band[10] < band[6]
        return within and shrinks, dict(table=table, slack=slack, band=band), \
            (f"N=8 max excess={max(r['excess'] for r in table[8]):.3f} (band {band[8]:.3f}), "
             f"slack {slack[6]:.3f} -> {slack[8]:.3f} -> {slack[10]:.3f}")

    return _timed(10, "Talagrand bound direction", 1200.0, body)


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
}


def run(only=None, log: Callable[[str], None] | None = print) -> list[CriterionResult]:
    results = []
    for k in sorted(only or CRITERIA):
        r = CRITERIA[k]()
        if log:
            log(r.line())
        results.append(r)
    return results
