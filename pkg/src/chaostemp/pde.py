"""Backward solver for the Parisi PDE with step-function measures.

On every interval where the CDF equals a constant m, exp(m * Phi) solves a
heat equation with diffusion xi''(q), so one interval is propagated exactly
by a Gaussian convolution of variance xi'(b) - xi'(a).  For m = 0 Phi itself
is convolved.  The only numerical errors are spatial quadrature and the
truncation of the x-domain, which is handled by a linear tail with the known
asymptotic slope.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import FieldSpec
from .measure import ParisiMeasure
from .mixture import MixtureSpec

TAIL_MASS = 1e-10
_Z_TAIL = 6.4  # standard normal two-sided tail mass at 6.4 sd is ~1.6e-10
_KERNEL_SD = 10.0
_SPECTRAL_RATIO = 1.5  # kernel sd / dx above which plain point sampling is exact enough


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class PdeGrid:
    x_min: float
    x_max: float
    dx: float = 0.005
    substeps: int = 1

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise GridError("x_max must exceed x_min")
        if self.dx <= 0:
            raise GridError("dx must be positive")
        if not self.x_min <= 0.0 <= self.x_max:
            raise GridError("grid must contain x = 0")
        if self.substeps < 1:
            raise GridError("substeps must be >= 1")

    @classmethod
    def default(cls, spec: MixtureSpec, beta_total: float, dx: float = 0.005, substeps: int = 1) -> "PdeGrid":
        var = spec.xi1(1.0)
        # the drift of the tilted kernel grows like beta * xi'(1): cover it as well
        half = max(8.0 + 3.0 * beta_total * math.sqrt(var), beta_total * var + _Z_TAIL * math.sqrt(var) + 1.0)
        return cls(-half, half, dx, substeps)

    def refined(self, factor: int = 2) -> "PdeGrid":
        return PdeGrid(self.x_min, self.x_max, self.dx / factor, self.substeps)

    @property
    def x(self) -> np.ndarray:
        lo = math.ceil(self.x_min / self.dx - 1e-9)
        hi = math.floor(self.x_max / self.dx + 1e-9)
        return self.dx * np.arange(lo, hi + 1, dtype=float)

    @property
    def zero_index(self) -> int:
        return -math.ceil(self.x_min / self.dx - 1e-9)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "dx": self.dx, "substeps": self.substeps}


@dataclass
class PdeSolution:
    """Slices of Phi and dPhi/dx on a common x-grid, keyed by ascending q."""

    qs: np.ndarray
    phi: np.ndarray  # shape (len(qs), len(x))
    dphi: np.ndarray
    x: np.ndarray
    grid: PdeGrid
    measure: ParisiMeasure
    beta: float  # asymptotic slope of Phi in x (beta, or beta1 + beta2)
    h: float | tuple = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def phi0(self) -> float:
        """Phi at (q_start, 0)."""
        return float(self.phi[0, self.grid.zero_index])

    @property
    def q_start(self) -> float:
        return float(self.qs[0])

    @property
    def q_end(self) -> float:
        return float(self.qs[-1])

    def slice_index(self, q: float) -> int:
        k = int(np.argmin(np.abs(self.qs - q)))
        if abs(self.qs[k] - q) > 1e-12:
            raise KeyError(f"no stored slice at q={q}")
        return k

    def phi_at(self, q: float, x=None):
        row = self.phi[self.slice_index(q)]
        return row if x is None else self._interp(row, x)

    def dphi_at(self, q: float, x=None):
        row = self.dphi[self.slice_index(q)]
        return row if x is None else self._interp(row, x)

    def _interp(self, row, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.x[0] - 1e-12) or np.any(x > self.x[-1] + 1e-12):
            raise GridError("x outside grid")
        out = np.interp(x, self.x, row)
        return out if out.ndim else float(out)

    def dphi_interp(self, q: float, x: np.ndarray) -> np.ndarray:
        """dPhi/dx at arbitrary (q, x): linear in x, linear in q between slices.

        Outside the grid the derivative is continued by its constant edge value,
        which matches the linear tail used by the solver.
        """
        k = int(np.searchsorted(self.qs, q, side="right")) - 1
        k = min(max(k, 0), len(self.qs) - 2) if len(self.qs) > 1 else 0
        lo = np.interp(x, self.x, self.dphi[k])
        if len(self.qs) == 1:
            return lo
        a, b = self.qs[k], self.qs[k + 1]
        t = min(max((q - a) / (b - a), 0.0), 1.0)
        if t == 0.0:
            return lo
        hi = np.interp(x, self.x, self.dphi[k + 1])
        return (1.0 - t) * lo + t * hi

    def phi_interp(self, q: float, x: np.ndarray) -> np.ndarray:
        """Phi at a stored slice q, linear in x, with the linear tail outside the grid."""
        row = self.phi[self.slice_index(q)]
        x = np.asarray(x, dtype=float)
        out = np.interp(x, self.x, row)
        lo, hi = x < self.x[0], x > self.x[-1]
        out = np.where(lo, row[0] - self.beta * (x - self.x[0]), out)
        out = np.where(hi, row[-1] + self.beta * (x - self.x[-1]), out)
        return out


def boundary_logch(beta: float, h: float) -> Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]:
    """Phi(1, x) = log ch(beta (h + x)) and its x-derivative, stable for large |x|."""

    def f(x):
        y = beta * (h + np.asarray(x, dtype=float))
        a = np.abs(y)
        return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0), beta * np.tanh(y)

    return f


_D2 = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])
_D4 = np.array([-1 / 6, 2.0, -13 / 2, 28 / 3, -13 / 2, 2.0, -1 / 6])
_D6 = np.array([1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0])


def _kernel(s: float, dx: float, half_width: int) -> np.ndarray:
    """Convolution weights for a centered Gaussian of sd s on a grid of step dx."""
    if s >= _SPECTRAL_RATIO * dx:
        k = dx * np.arange(-half_width, half_width + 1)
        return dx * np.exp(-0.5 * (k / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    # narrow kernel: truncated heat series sum_n (s^2/2)^n D^(2n) / n!
    r = (s / dx) ** 2
    taps = r / 2 * _D2 + r**2 / 8 * _D4 + r**3 / 48 * _D6
    taps[3] += 1.0
    w = np.zeros(2 * half_width + 1)
    w[half_width - 3 : half_width + 4] = taps
    return w


def propagate_interval(
    phi: np.ndarray,
    dphi: np.ndarray,
    x: np.ndarray,
    dx: float,
    var: float,
    m: float,
    slope: float,
    tail: Callable | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One backward step over an interval with constant CDF value m.

    ``var`` is xi'(b) - xi'(a). ``tail`` optionally gives exact values of the
    terminal function outside the grid; otherwise Phi is continued linearly
    with slope -slope on the left and +slope on the right.
    """
    if var <= 0.0:
        return phi.copy(), dphi.copy()
    s = math.sqrt(var)
    reach = m * slope * var + _KERNEL_SD * s
    pad = int(math.ceil(reach / dx)) + 4
    left = x[0] - dx * np.arange(pad, 0, -1)
    right = x[-1] + dx * np.arange(1, pad + 1)
    if tail is not None:
        pl, dl = tail(left)
        pr, dr = tail(right)
    else:
        pl = phi[0] - slope * (left - x[0])
        pr = phi[-1] + slope * (right - x[-1])
        dl = np.full(pad, -slope)
        dr = np.full(pad, slope)
    pe = np.concatenate([pl, phi, pr])
    de = np.concatenate([dl, dphi, dr])
    w = _kernel(s, dx, pad)
    if m <= 0.0:
        return np.convolve(pe, w, "valid"), np.convolve(de, w, "valid")
    # positive terms only, so the direct sum is accurate relative to each output
    ref = m * pe.max()
    if ref - m * pe.min() > 650.0:
        return _propagate_chunked(pe, de, w, m, len(phi), pad)
    a = np.exp(m * pe - ref)
    den = np.convolve(a, w, "valid")
    num = np.convolve(a * de, w, "valid")
    return (ref + np.log(den)) / m, num / den


def _propagate_chunked(pe, de, w, m, n, pad, chunk=512):
    phi_out = np.empty(n)
    dphi_out = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        seg = slice(start, stop + 2 * pad)
        p, d = pe[seg], de[seg]
        ref = m * p.max()
        a = np.exp(m * p - ref)
        den = np.convolve(a, w, "valid")
        phi_out[start:stop] = (ref + np.log(den)) / m
        dphi_out[start:stop] = np.convolve(a * d, w, "valid") / den
    return phi_out, dphi_out


def _check_width(grid: PdeGrid, var_total: float, m_max: float, slope: float) -> None:
    if var_total <= 0.0:
        return
    s = math.sqrt(var_total)
    need = m_max * slope * var_total + _Z_TAIL * s
    if min(-grid.x_min, grid.x_max) < need:
        raise GridError(
            f"grid too narrow: kernel mass beyond +-{min(-grid.x_min, grid.x_max):.3g} exceeds "
            f"{TAIL_MASS:g}; need half-width >= {need:.3g}"
        )


def _slice_points(measure: ParisiMeasure, q_start: float, q_end: float, extra: Sequence[float], substeps: int):
    pts = {q_start, q_end}
    pts.update(q for q in measure.breakpoints if q_start < q < q_end)
    pts.update(q for q in extra if q_start < q < q_end)
    pts = sorted(pts)
    if substeps > 1:
        fine = []
        for a, b in zip(pts, pts[1:]):
            fine.extend(a + (b - a) * np.arange(substeps) / substeps)
        fine.append(pts[-1])
        pts = fine
    return np.array(pts, dtype=float)


def solve_from_boundary(
    spec: MixtureSpec,
    measure: ParisiMeasure,
    grid: PdeGrid,
    q_end: float,
    boundary: Callable | tuple[np.ndarray, np.ndarray],
    slope: float,
    q_start: float = 0.0,
    extra_q: Sequence[float] = (),
    h=0.0,
) -> PdeSolution:
    """Integrate backward from q_end to q_start.

    ``boundary`` is either a callable giving exact (Phi, dPhi) at any x, or
    a pair of arrays sampled on ``grid.x``.
    """
    x = grid.x
    if callable(boundary):
        phi, dphi = boundary(x)
        tail = boundary
    else:
        phi, dphi = (np.array(b, dtype=float) for b in boundary)
        if phi.shape != x.shape:
            raise GridError("boundary slices do not match the grid")
        tail = None
    qs = _slice_points(measure, q_start, q_end, extra_q, grid.substeps)
    m_max = max((m for a, b, m in measure.intervals(q_start, q_end)), default=0.0)
    _check_width(grid, spec.xi1(q_end) - spec.xi1(q_start), m_max, slope)
    phis = [phi]
    dphis = [dphi]
    for a, b in zip(qs[-2::-1], qs[:0:-1]):
        m = measure.cdf(a)
        phi, dphi = propagate_interval(phi, dphi, x, grid.dx, spec.xi1(b) - spec.xi1(a), m, slope, tail)
        tail = None
        phis.append(phi)
        dphis.append(dphi)
    return PdeSolution(
        qs=qs,
        phi=np.array(phis[::-1]),
        dphi=np.array(dphis[::-1]),
        x=x,
        grid=grid,
        measure=measure,
        beta=slope,
        h=h,
    )


def solve_phi(
    spec: MixtureSpec,
    measure: ParisiMeasure,
    beta: float,
    h: float = 0.0,
    grid: PdeGrid | None = None,
    extra_q: Sequence[float] = (),
) -> PdeSolution:
    """Phi(q, x) for one system with boundary log ch(beta (h + x)) at q = 1."""
    if grid is None:
        grid = PdeGrid.default(spec, beta)
    sol = solve_from_boundary(spec, measure, grid, 1.0, boundary_logch(beta, h), beta, extra_q=extra_q, h=h)
    sol.meta.update(kind="single", beta=beta)
    return sol


@dataclass
class FieldAverage:
    """E over field nodes of Phi(0, 0), with the per-node solutions kept."""

    value: float
    nodes: list
    weights: np.ndarray
    solutions: list


def expected_phi0(
    spec: MixtureSpec,
    measure: ParisiMeasure,
    beta: float,
    fields: FieldSpec,
    j: int = 0,
    grid: PdeGrid | None = None,
    extra_q: Sequence[float] = (),
) -> FieldAverage:
    hs, ws = fields.marginal_nodes(j)
    sols = [solve_phi(spec, measure, beta, float(h), grid, extra_q) for h in hs]
    value = float(sum(w * s.phi0 for w, s in zip(ws, sols)))
    return FieldAverage(value, list(map(float, hs)), ws, sols)


@dataclass
class CoupledSolve:
    value: float  # E Phi_v(0, 0)
    phi_sum0: float  # E [Phi_1(0,0) + Phi_2(0,0)]
    solutions: list  # per joint node: (sol_v, sol_1, sol_2)
    weights: np.ndarray
    v: float


def _sum_boundary(f1, f2):
    def f(x):
        a, da = f1(x)
        b, db = f2(x)
        return a + b, da + db

    return f


def solve_phi_coupled(
    spec: MixtureSpec,
    mu: ParisiMeasure,
    beta1: float,
    beta2: float,
    v: float,
    mu1: ParisiMeasure,
    mu2: ParisiMeasure,
    fields: FieldSpec,
    grid: PdeGrid | None = None,
    boundaries: list | None = None,
) -> CoupledSolve:
    """Phi_v on [0, v] with boundary Phi_1(v, .) + Phi_2(v, .), averaged over (h1, h2).

    ``boundaries`` may carry precomputed (sol_1, sol_2) per joint node; each
    must hold a slice at q = v on the shared grid.
    """
    if not 0.0 <= v <= 1.0:
        raise ValueError("v must lie in [0, 1]")
    if grid is None:
        grid = PdeGrid.default(spec, beta1 + beta2)
    h1s, h2s, ws = fields.joint_nodes()
    out, total, base = [], 0.0, 0.0
    for k, (h1, h2) in enumerate(zip(h1s, h2s)):
        if boundaries is not None:
            s1, s2 = boundaries[k]
            if s1.grid != grid or s2.grid != grid:
                raise GridError("boundary solutions use a different grid")
        else:
            s1 = solve_phi(spec, mu1, beta1, float(h1), grid, extra_q=(v,))
            s2 = solve_phi(spec, mu2, beta2, float(h2), grid, extra_q=(v,))
        if v == 1.0:
            bnd = _sum_boundary(boundary_logch(beta1, float(h1)), boundary_logch(beta2, float(h2)))
        else:
            bnd = (s1.phi_at(v) + s2.phi_at(v), s1.dphi_at(v) + s2.dphi_at(v))
        sv = solve_from_boundary(spec, mu, grid, v, bnd, beta1 + beta2, h=(float(h1), float(h2)))
        sv.meta.update(kind="coupled", beta1=beta1, beta2=beta2, v=v)
        out.append((sv, s1, s2))
        total += ws[k] * sv.phi0
        base += ws[k] * (s1.phi0 + s2.phi0)
    return CoupledSolve(float(total), float(base), out, ws, v)


def psi(solution: PdeSolution, q: float, x, normalized: bool = True):
    """dPhi/dx at a stored slice; divided by the slope (beta) when normalized."""
    d = solution.dphi_at(q, x)
    return d / solution.beta if normalized else d


def psi_fd(solution: PdeSolution, q: float, normalized: bool = True) -> np.ndarray:
    """Centered finite difference of the stored Phi slice (edges one-sided)."""
    d = np.gradient(solution.phi_at(q), solution.grid.dx)
    return d / solution.beta if normalized else d


@dataclass
class Distinctness:
    sup: float
    x_at: float
    sup_far: float
    sup_near: float
    sup_deriv: float


def psi_distinctness(sol1: PdeSolution, sol2: PdeSolution, q: float = 0.0, split: float = 4.0) -> Distinctness:
    """sup_x |Phi_1/beta_1 - Phi_2/beta_2| at a common slice q."""
    if sol1.grid != sol2.grid:
        raise GridError("solutions use different grids")
    d = np.abs(sol1.phi_at(q) / sol1.beta - sol2.phi_at(q) / sol2.beta)
    dd = np.abs(sol1.dphi_at(q) / sol1.beta - sol2.dphi_at(q) / sol2.beta)
    x = sol1.x
    k = int(np.argmax(d))
    far = np.abs(x) > split
    return Distinctness(
        sup=float(d[k]),
        x_at=float(x[k]),
        sup_far=float(d[far].max()) if far.any() else 0.0,
        sup_near=float(d[~far].max()),
        sup_deriv=float(dd.max()),
    )
