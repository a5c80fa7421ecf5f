"""Monte Carlo checks of the PDE layer through its stochastic representations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .measure import ParisiMeasure
from .mixture import MixtureSpec
from .pde import PdeSolution

BLOCK = 8192
ESCAPE_LIMIT = 1e-6


SE_FLOOR = 1e-10


class EscapeError(RuntimeError):
    pass


@dataclass(frozen=True)
class SdeConfig:
    dt: float = 1e-3
    paths: int = 100_000
    seed: int = 0
    antithetic: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.paths < 2:
            raise ValueError("need at least two paths")


@dataclass
class ControlProcess:
    """Feedback control along the state, clamped to |u| <= bound.

    The control is u(q, x) = df/dx(q, x) + offset(q) when ``rule`` is None
    (``offset=None`` gives the optimizer u* itself).  A general ``rule(q, x,
    base)`` receiving the optimizer value ``base`` may be supplied instead; it
    runs on the slower vectorized path.
    """

    rule: Callable | None = None
    bound: float = math.inf
    offset: Callable[[float], float] | None = None

    def __call__(self, f: PdeSolution, q: float, x: np.ndarray) -> np.ndarray:
        base = f.dphi_interp(q, x)
        if self.rule is not None:
            u = self.rule(q, x, base)
        elif self.offset is not None:
            u = base + self.offset(q)
        else:
            u = base
        return np.clip(u, -self.bound, self.bound)


def time_nodes(spec: MixtureSpec, measure: ParisiMeasure, s: float, t: float, dt: float):
    """Time grid on [s, t] with step <= dt that contains every breakpoint."""
    edges = [s] + [q for q in measure.breakpoints if s < q < t] + [t]
    pts = [s]
    for a, b in zip(edges, edges[1:]):
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        pts.extend(a + (b - a) * np.arange(1, n + 1) / n)
    ts = np.array(pts)
    dxi = np.diff(spec.xi1(ts))
    mus = np.array([measure.cdf(a) for a in ts[:-1]])
    return ts, dxi, mus


def _normals(config: SdeConfig, n_steps: int):
    """Yield standard normal blocks of shape (n_steps, block) in a fixed order.

    Each block has its own stream spawned from the seed, so results do not
    depend on how blocks are scheduled.
    """
    n_base = config.paths // 2 if config.antithetic else config.paths
    seeds = np.random.SeedSequence(config.seed).spawn(math.ceil(n_base / BLOCK))
    done = 0
    for ss in seeds:
        size = min(BLOCK, n_base - done)
        z = np.random.default_rng(ss).standard_normal((n_steps, size))
        done += size
        if config.antithetic:
            z = np.concatenate([z, -z], axis=1)
        yield z


@numba.njit(cache=True)
def _em_block(X, cost, z, table, x0, dx, ks, ws, drift, sqd, offs, bound, track_cost):
    """In-place Euler-Maruyama over one block of paths (compiled kernel).

    ``z`` has shape (paths, steps).
    ``table`` holds dPhi/dx slices on a uniform x grid; step n uses slices
    ks[n], ks[n]+1 blended with weight ws[n].  Outside the grid the edge value
    is used.
    """
    nx = table.shape[1]
    for j in range(X.shape[0]):
        xj = X[j]
        cj = 0.0
        for n in range(ks.shape[0]):
            if drift[n] != 0.0:
                r = (xj - x0) / dx
                if r <= 0.0:
                    i, f = 0, 0.0
                elif r >= nx - 1:
                    i, f = nx - 2, 1.0
                else:
                    i = int(r)
                    f = r - i
                k = ks[n]
                lo = table[k, i] + f * (table[k, i + 1] - table[k, i])
                w = ws[n]
                if w != 0.0:
                    hi = table[k + 1, i] + f * (table[k + 1, i + 1] - table[k + 1, i])
                    lo = lo + w * (hi - lo)
                u = lo + offs[n]
                if u > bound:
                    u = bound
                elif u < -bound:
                    u = -bound
                xj += drift[n] * u
                if track_cost:
                    cj += 0.5 * drift[n] * u * u
            xj += sqd[n] * z[j, n]
        X[j] = xj
        cost[j] = cj


def _slice_weights(sol: PdeSolution, ts: np.ndarray):
    qs = sol.qs
    if len(qs) == 1:
        return np.zeros(len(ts), np.int64), np.zeros(len(ts))
    k = np.clip(np.searchsorted(qs, ts, side="right") - 1, 0, len(qs) - 2)
    w = np.clip((ts - qs[k]) / (qs[k + 1] - qs[k]), 0.0, 1.0)
    return k.astype(np.int64), w


def _uniform(x: np.ndarray) -> bool:
    d = np.diff(x)
    return len(x) > 1 and np.allclose(d, d[0], rtol=1e-9, atol=0.0)


def _simulate(spec, measure, drift_sol, s, t, x, config, control: ControlProcess | None):
    """Euler-Maruyama on [s, t]; returns terminal states and running costs.

    The diffusion increment uses the exact variance xi'(t_{n+1}) - xi'(t_n);
    drift and control are frozen at the left point.
    """
    ts, dxi, mus = time_nodes(spec, measure, s, t, config.dt)
    t_left = ts[:-1]
    grid = drift_sol.x
    x_lo, x_hi = grid[0], grid[-1]
    fast = _uniform(grid) and (control is None or control.rule is None)
    if fast:
        ks, ws = _slice_weights(drift_sol, t_left)
        drift = mus * dxi
        sqd = np.sqrt(dxi)
        offs = np.zeros(len(t_left))
        bound = math.inf
        if control is not None:
            bound = control.bound
            if control.offset is not None:
                offs = np.array([control.offset(q) for q in t_left], dtype=float)
        table = np.ascontiguousarray(drift_sol.dphi)
        dx = float(grid[1] - grid[0])
    finals, costs = [], []
    escaped = 0
    for z in _normals(config, len(dxi)):
        X = np.full(z.shape[1], float(x))
        cost = np.zeros_like(X)
        if fast:
            _em_block(X, cost, np.ascontiguousarray(z.T), table, float(x_lo), dx, ks, ws, drift, sqd, offs,
                      float(bound), control is not None)
        else:
            for n in range(len(dxi)):
                if mus[n] > 0.0:
                    u = control(drift_sol, ts[n], X) if control else drift_sol.dphi_interp(ts[n], X)
                    X = X + mus[n] * dxi[n] * u
                    if control:
                        cost += 0.5 * mus[n] * dxi[n] * u * u
                X = X + math.sqrt(dxi[n]) * z[n]
        escaped += int(np.count_nonzero((X < x_lo) | (X > x_hi)))
        finals.append(X)
        costs.append(cost)
    X = np.concatenate(finals)
    if escaped / len(X) > ESCAPE_LIMIT:
        raise EscapeError(f"{escaped} of {len(X)} paths left the grid")
    return X, np.concatenate(costs)


def simulate_state(
    spec: MixtureSpec,
    measure: ParisiMeasure,
    beta: float,
    sol: PdeSolution,
    q_start: float,
    x_start: float,
    config: SdeConfig = SdeConfig(),
) -> np.ndarray:
    """Terminal samples X(1) of dX = xi'' beta mu psi dt + sqrt(xi'') dB, X(q_start) = x_start.

    ``beta * psi`` is dPhi/dx taken from ``sol``.
    """
    X, _ = _simulate(spec, measure, sol, q_start, 1.0, x_start, config, None)
    return X


def coupled_refinement(
    spec: MixtureSpec,
    measure: ParisiMeasure,
    sol: PdeSolution,
    q_start: float,
    x_start: float,
    dt: float,
    paths: int = 2000,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Endpoints X(1) at steps dt and dt/2 driven by the same Brownian path (strong-error probe)."""
    ts_f, dxi_f, mus_f = time_nodes(spec, measure, q_start, 1.0, dt / 2)
    ts_c, dxi_c, mus_c = time_nodes(spec, measure, q_start, 1.0, dt)
    if len(ts_f) != 2 * len(ts_c) - 1 or not np.allclose(ts_f[::2], ts_c):
        raise ValueError("dt must split every measure interval evenly")
    rng = np.random.default_rng(seed)
    dW = np.sqrt(dxi_f)[:, None] * rng.standard_normal((len(dxi_f), paths))

    def run(ts, dxi, mus, dw):
        X = np.full(paths, float(x_start))
        for n in range(len(dxi)):
            if mus[n] > 0.0:
                X = X + mus[n] * dxi[n] * sol.dphi_interp(ts[n], X)
            X = X + dw[n]
        return X

    return run(ts_c, dxi_c, mus_c, dW[0::2] + dW[1::2]), run(ts_f, dxi_f, mus_f, dW)


def _mean_se(values: np.ndarray, antithetic: bool) -> tuple[float, float]:
    if antithetic:
        half = len(values) // 2
        pair = 0.5 * (values[:half] + values[half : 2 * half])
        return float(pair.mean()), float(pair.std(ddof=1) / math.sqrt(len(pair)))
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))


@dataclass
class ItoCheck:
    q: float
    x: float
    mc_value: float
    pde_value: float
    stderr: float
    z_score: float
    failed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def ito_check(
    spec: MixtureSpec,
    measure: ParisiMeasure,
    beta: float,
    h: float,
    q: float,
    x: float,
    pde: PdeSolution,
    config: SdeConfig = SdeConfig(),
) -> ItoCheck:
    """Compare psi(q, x) with E th(beta (h + X(1)))."""
    pde_value = float(pde.dphi_interp(q, np.array([x]))[0] / beta)
    if q >= 1.0:
        mc, se = math.tanh(beta * (h + x)), 0.0
    else:
        X = simulate_state(spec, measure, beta, pde, q, x, config)
        mc, se = _mean_se(np.tanh(beta * (h + X)), config.antithetic)
    # symmetric probes (h = x = 0) make the antithetic pairs cancel exactly;
    # the standard error is then pure round-off and is floored
    z = (mc - pde_value) / max(se, SE_FLOOR)
    return ItoCheck(q, x, mc, pde_value, se, z, abs(z) > 5.0)


@dataclass
class VariationalEstimate:
    value: float
    stderr: float
    terminal: float
    running_cost: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def variational_value(
    spec: MixtureSpec,
    f: PdeSolution,
    control: ControlProcess,
    s: float,
    t: float,
    x: float,
    config: SdeConfig = SdeConfig(),
) -> VariationalEstimate:
    """E[ f(t, X_t) - (1/2) int_s^t xi'' mu u^2 dq ] for the controlled state.

    X_t = x + int xi'' mu u dq + int sqrt(xi'') dB, with mu the measure that
    ``f`` was solved with.
    """
    if not (f.q_start - 1e-12 <= s < t <= f.q_end + 1e-12):
        raise ValueError("[s, t] must lie inside the solved range of f")
    X, cost = _simulate(spec, f.measure, f, s, t, x, config, control)
    vals = f.phi_interp(t, X) - cost
    mean, se = _mean_se(vals, config.antithetic)
    return VariationalEstimate(mean, se, float(np.mean(f.phi_interp(t, X))), float(cost.mean()))


def sine_perturbation(amplitude: float, s: float, t: float, freq: float = 1.0, phase: float = 0.0):
    """Offset q -> amplitude * sin(2 pi freq (q - s) / (t - s) + phase), for ``ControlProcess.offset``."""

    def offset(q):
        return amplitude * math.sin(2 * math.pi * freq * (q - s) / (t - s) + phase)

    return offset


def convexity_window(spec: MixtureSpec, mu: ParisiMeasure, s: float, v: float) -> float:
    """int_s^v xi''(q) mu(q) dq, exact per step; < 1 certifies strict concavity of F."""
    if v <= s:
        return 0.0
    return float(sum(m * (spec.xi1(b) - spec.xi1(a)) for a, b, m in mu.intervals(s, v)))


def subdivisions_needed(spec: MixtureSpec, mu: ParisiMeasure, s: float, v: float) -> int:
    """Smallest n such that splitting [s, v] into n equal pieces keeps each window below 1."""
    n = 1
    while n < 1 << 20:
        edges = s + (v - s) * np.arange(n + 1) / n
        if all(convexity_window(spec, mu, a, b) < 1.0 for a, b in zip(edges, edges[1:])):
            return n
        n *= 2
    raise ValueError("window cannot be made < 1")
