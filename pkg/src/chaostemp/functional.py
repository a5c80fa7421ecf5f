"""Parisi functional, its minimization over k-step measures, and the coupled bound."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .fields import FieldSpec
from .measure import (
    MeasureError,
    ParisiMeasure,
    check_matching,
    coupled_measure,
    coupling_lambda,
    decoupling_point,
    support_inf,
)
from .mixture import MixtureSpec
from .pde import PdeGrid, expected_phi0, solve_phi, solve_phi_coupled

LOG2 = math.log(2.0)


@dataclass
class FunctionalValue:
    phi0_expect: float
    correction_integral: float
    total: float
    log2_included: bool = False

    @property
    def with_log2(self) -> float:
        return self.total if self.log2_included else self.total + LOG2

    @property
    def without_log2(self) -> float:
        return self.total - LOG2 if self.log2_included else self.total

    def to_dict(self) -> dict:
        return {
            "phi0_expect": self.phi0_expect,
            "correction_integral": self.correction_integral,
            "total": self.total,
            "log2_included": self.log2_included,
            "with_log2": self.with_log2,
            "without_log2": self.without_log2,
        }


def correction(spec: MixtureSpec, measure: ParisiMeasure, beta: float, lo: float = 0.0, hi: float = 1.0) -> float:
    """(beta^2 / 2) int_lo^hi mu(q) theta'(q) dq, exact per step."""
    return 0.5 * beta * beta * measure.theta_integral(spec, lo, hi)


def parisi_functional(
    spec: MixtureSpec,
    measure: ParisiMeasure,
    beta: float,
    fields: FieldSpec | None = None,
    grid: PdeGrid | None = None,
    log2: bool = False,
    j: int = 0,
) -> FunctionalValue:
    """E Phi(0,0) - (beta^2/2) int mu theta'; ``j`` picks the field coordinate."""
    if not measure.is_probability:
        raise MeasureError("the Parisi functional needs a probability measure")
    fields = fields or FieldSpec.fixed(0.0)
    e_phi = expected_phi0(spec, measure, beta, fields, j, grid).value
    corr = correction(spec, measure, beta)
    total = e_phi - corr + (LOG2 if log2 else 0.0)
    return FunctionalValue(e_phi, corr, total, log2)


# --------------------------------------------------------------------------------
# minimization over k-step measures


def measure_from_params(z: np.ndarray, k: int) -> ParisiMeasure:
    """Project raw parameters onto ordered (q_0 <= ... <= q_k, m_1 <= ... <= m_k).

    Atom l sits at q_l with mass m_{l+1} - m_l (m_0 = 0, m_{k+1} = 1).
    """
    z = np.asarray(z, dtype=float)
    qs = np.sort(np.clip(z[: k + 1], 0.0, 1.0))
    ms = np.concatenate([[0.0], np.sort(np.clip(z[k + 1 :], 0.0, 1.0)), [1.0]])
    atoms = [(ms[l + 1] - ms[l], qs[l]) for l in range(k + 1) if ms[l + 1] - ms[l] > 0.0]
    return ParisiMeasure.from_atoms(atoms)


def mean_overlap(measure: ParisiMeasure) -> float:
    """int q dmu(q) = int_0^1 (1 - mu(q)) dq for a probability measure."""
    return float(sum((1.0 - m) * (b - a) for a, b, m in measure.intervals()))


@dataclass
class OptimizerResult:
    measure: ParisiMeasure
    value: FunctionalValue
    q_star: float
    support_inf: float
    evaluations: int
    converged: bool
    gradient_norm: float
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "measure": self.measure.to_pairs(),
            "value": self.value.to_dict(),
            "q_star": self.q_star,
            "support_inf": self.support_inf,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "trace": self.trace,
        }


def minimize_parisi(
    spec: MixtureSpec,
    beta: float,
    fields: FieldSpec | None = None,
    k: int = 1,
    grid: PdeGrid | None = None,
    starts: int = 8,
    budget: int = 10_000,
    seed: int = 0,
    search_dx: float = 0.02,
    j: int = 0,
) -> OptimizerResult:
    """Minimize the Parisi functional over measures with k + 1 atoms.

    Nelder-Mead from ``starts`` random starts on a coarse search grid, then
    coordinate descent on the best point, then a final evaluation on ``grid``.
    """
    fields = fields or FieldSpec.fixed(0.0)
    if k < 0:
        raise ValueError("k must be >= 0")
    if grid is None:
        grid = PdeGrid.default(spec, beta)
    search_grid = PdeGrid(grid.x_min, grid.x_max, max(search_dx, grid.dx))
    n_par = 2 * k + 1
    evals = 0
    cache: dict = {}

    def objective(z):
        nonlocal evals
        mu = measure_from_params(z, k)
        key = (mu.breakpoints, mu.values)
        if key not in cache:
            evals += 1
            cache[key] = parisi_functional(spec, mu, beta, fields, search_grid, j=j).total
        return cache[key]

    rng = np.random.default_rng(seed)
    inits = [np.concatenate([np.linspace(0.1, 0.6, k + 1), np.linspace(0.3, 0.7, k)])]
    while len(inits) < starts:
        inits.append(np.concatenate([np.sort(rng.uniform(0, 1, k + 1)), np.sort(rng.uniform(0, 1, k))]))
    per_start = max(50, (budget // 2) // max(starts, 1))
    trace = []
    best_z, best_f = None, math.inf
    for z0 in inits:
        if evals >= budget:
            break
        res = minimize(
            objective,
            z0,
            method="Nelder-Mead",
            options={"maxfev": per_start, "xatol": 1e-7, "fatol": 1e-13, "initial_simplex": _simplex(z0)},
        )
        z = np.concatenate([np.sort(np.clip(res.x[: k + 1], 0, 1)), np.sort(np.clip(res.x[k + 1 :], 0, 1))])
        f = objective(z)
        trace.append({"start": z0.tolist(), "end": z.tolist(), "value": f})
        if f < best_f:
            best_z, best_f = z, f
    best_z, best_f, converged = _coordinate_descent(objective, best_z, best_f, lambda: evals < budget)
    mu = measure_from_params(best_z, k)
    value = parisi_functional(spec, mu, beta, fields, grid, j=j)
    grad = _fd_gradient(objective, best_z)
    return OptimizerResult(
        measure=mu,
        value=value,
        q_star=mean_overlap(mu),
        support_inf=support_inf(mu),
        evaluations=evals,
        converged=converged and evals < budget,
        gradient_norm=float(np.linalg.norm(grad)),
        trace=trace,
    )


def _simplex(z0):
    n = len(z0)
    pts = [z0]
    for i in range(n):
        e = z0.copy()
        e[i] = e[i] + 0.15 if e[i] < 0.8 else e[i] - 0.15
        pts.append(e)
    return np.array(pts)


def _coordinate_descent(f, z, fz, budget_left, step=0.05, tol=1e-7):
    z = z.copy()
    while step > tol:
        improved = False
        for i in range(len(z)):
            for sgn in (1.0, -1.0):
                if not budget_left():
                    return z, fz, False
                trial = z.copy()
                trial[i] = min(max(trial[i] + sgn * step, 0.0), 1.0)
                ft = f(trial)
                if ft < fz - 1e-15:
                    z, fz, improved = trial, ft, True
                    break
        if not improved:
            step /= 2.0
    return z, fz, True


def _fd_gradient(f, z, h=1e-5):
    g = np.zeros_like(z)
    for i in range(len(z)):
        lo, hi = z.copy(), z.copy()
        lo[i] = max(z[i] - h, 0.0)
        hi[i] = min(z[i] + h, 1.0)
        if hi[i] > lo[i]:
            g[i] = (f(hi) - f(lo)) / (hi[i] - lo[i])
    return g


# --------------------------------------------------------------------------------
# coupled functional


def delta_uv(spec: MixtureSpec, beta1: float, beta2: float, u: float, v: float) -> float:
    """beta1 beta2 (xi(u) - u xi'(v) + theta(v)); zero at u = v."""
    return beta1 * beta2 * (spec.xi(u) - u * spec.xi1(v) + spec.theta(v))


@dataclass
class CoupledValue:
    phi_v_expect: float
    corrections: tuple  # (coupled part on [0,v], system 1 on [v,1], system 2 on [v,1])
    delta_uv: float
    total: float
    reduced_total: float | None
    phi_sum_expect: float
    mu: ParisiMeasure
    u: float
    v: float

    @property
    def with_log2(self) -> float:
        """Bound on F_N(u) for +-1 spins: one log 2 per system."""
        return self.total + 2.0 * LOG2

    def to_dict(self) -> dict:
        return {
            "u": self.u,
            "v": self.v,
            "phi_v_expect": self.phi_v_expect,
            "phi_sum_expect": self.phi_sum_expect,
            "corrections": list(self.corrections),
            "delta_uv": self.delta_uv,
            "total": self.total,
            "reduced_total": self.reduced_total,
            "with_log2": self.with_log2,
            "mu": self.mu.to_pairs(),
        }


def coupled_functional(
    spec: MixtureSpec,
    mu1: ParisiMeasure,
    mu2: ParisiMeasure,
    beta1: float,
    beta2: float,
    u: float,
    v: float,
    fields: FieldSpec | None = None,
    grid: PdeGrid | None = None,
    mu: ParisiMeasure | None = None,
) -> CoupledValue:
    """Talagrand's coupled bound P(v, mu).

    With ``mu=None`` the canonical lam*mu1 = (1-lam)*mu2 on [0, v] is used,
    which needs v below the decoupling point; the reduced form is then also
    returned. Any other ``mu`` must satisfy mu(v) <= min(mu1(v), mu2(v)).
    """
    fields = fields or FieldSpec.fixed(0.0)
    lam = coupling_lambda(beta1, beta2)
    canonical = mu is None
    if canonical:
        q0 = decoupling_point(mu1, mu2, beta1, beta2)
        if v >= q0 and not (v == 0.0 and q0 == 0.0):
            raise MeasureError(f"v={v} must lie below the decoupling point q0={q0}")
        mu = coupled_measure(mu1, mu2, lam, v)
    else:
        check_matching(mu, mu1, mu2, v)
    cs = solve_phi_coupled(spec, mu, beta1, beta2, v, mu1, mu2, fields, grid)
    c0 = 0.5 * (beta1 + beta2) ** 2 * mu.theta_integral(spec, 0.0, v)
    c1 = correction(spec, mu1, beta1, v, 1.0)
    c2 = correction(spec, mu2, beta2, v, 1.0)
    d = delta_uv(spec, beta1, beta2, u, v)
    total = cs.value - c0 - c1 - c2 + d
    reduced = None
    if canonical:
        reduced = cs.value - correction(spec, mu1, beta1) - correction(spec, mu2, beta2) + d
    return CoupledValue(cs.value, (c0, c1, c2), d, total, reduced, cs.phi_sum0, mu, u, v)


def general_coupled_measure(mu1: ParisiMeasure, mu2: ParisiMeasure, beta1: float, beta2: float, v: float) -> ParisiMeasure:
    """min(lam mu1, (1-lam) mu2) on [0, v]: admissible for every v."""
    lam = coupling_lambda(beta1, beta2)
    bps = sorted(q for q in {*mu1.breakpoints, *mu2.breakpoints} if q <= v)
    vals = [min(lam * mu1.cdf(q), (1 - lam) * mu2.cdf(q)) for q in [0.0] + bps]
    return ParisiMeasure(tuple(bps), tuple(vals))


# --------------------------------------------------------------------------------
# strict gap


class UncoupledError(ValueError):
    pass


@dataclass
class GapReport:
    c: float
    q0: float
    epsilon: float
    v_grid: list
    gaps: list
    min_gap: float
    delta: float | None
    delta_at_delta: float | None
    bound_rows: list
    note: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def strict_gap_scan(
    spec: MixtureSpec,
    mu1: ParisiMeasure,
    mu2: ParisiMeasure,
    beta1: float,
    beta2: float,
    fields: FieldSpec | None = None,
    grid: PdeGrid | None = None,
    epsilon: float = 0.05,
    n_v: int = 32,
    n_u: int = 8,
) -> GapReport:
    """delta'(v) = E Phi_1(0,0) + E Phi_2(0,0) - E Phi_v(0,0) over v in [c+eps, q0).

    Also checks the bound F_N(u) <= P_1 + P_2 - delta' + Delta for u up to
    q0 + delta with the v-selection rule v = u below q0, v = q0 - delta above.
    """
    fields = fields or FieldSpec.fixed(0.0)
    c1, c2 = support_inf(mu1), support_inf(mu2)
    q0 = decoupling_point(mu1, mu2, beta1, beta2)
    if beta1 == beta2:
        return GapReport(c1, q0, epsilon, [], [], 0.0, None, None, [],
                         note="kappa = 1 excluded: the chaos statement assumes beta1 != beta2")
    if not q0 > max(c1, c2):
        raise UncoupledError(
            f"uncoupled inputs (q0={q0} <= c2={max(c1, c2)}); use the overlap-threshold diagnostics instead"
        )
    c = max(c1, c2)
    lo = c + epsilon
    if lo >= q0:
        raise ValueError("empty scan window: c + epsilon >= q0")
    if grid is None:
        grid = PdeGrid.default(spec, beta1 + beta2)
    v_grid = list(lo + (q0 - lo) * np.arange(n_v) / n_v)
    lam = coupling_lambda(beta1, beta2)
    h1s, h2s, _ = fields.joint_nodes()
    # one pair of single-system solves per field node, with slices at all v
    bnds = [
        (
            solve_phi(spec, mu1, beta1, float(a), grid, extra_q=v_grid),
            solve_phi(spec, mu2, beta2, float(b), grid, extra_q=v_grid),
        )
        for a, b in zip(h1s, h2s)
    ]
    gaps = []
    for v in v_grid:
        mu = coupled_measure(mu1, mu2, lam, v)
        cs = solve_phi_coupled(spec, mu, beta1, beta2, v, mu1, mu2, fields, grid, boundaries=bnds)
        gaps.append(cs.phi_sum0 - cs.value)
    min_gap = float(min(gaps))
    # pick delta with Delta(q0 - delta, q0 + delta) <= delta'/2
    delta, dval = min(0.05, q0 - lo, 1.0 - q0), None
    while delta > 1e-8:
        dval = delta_uv(spec, beta1, beta2, q0 + delta, q0 - delta)
        if dval <= min_gap / 2:
            break
        delta /= 2.0
    p1 = parisi_functional(spec, mu1, beta1, fields, grid, j=0).total
    p2 = parisi_functional(spec, mu2, beta2, fields, grid, j=1).total
    rows = []
    for u in np.linspace(lo, q0 + delta, n_u):
        v = u if u < q0 - delta else q0 - delta
        v = max(v, lo)
        cv = coupled_functional(spec, mu1, mu2, beta1, beta2, float(u), float(v), fields, grid)
        rows.append({"u": float(u), "v": float(v), "bound": cv.total, "p1_plus_p2": p1 + p2,
                     "margin": p1 + p2 - cv.total})
    return GapReport(c, q0, epsilon, [float(v) for v in v_grid], [float(g) for g in gaps], min_gap,
                     float(delta), dval, rows)
