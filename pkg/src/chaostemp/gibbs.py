"""Finite-N two-temperature Gibbs engine for mixed p-spin models with p in {2, 4}.

Both systems share the Hamiltonian

    H_N(sigma) = sum_p gamma_p N^{-(p-1)/2} sum_{i_1..i_p} g_{i_1..i_p} sigma_{i_1}...sigma_{i_p}

(sum over all ordered index tuples, coincident indices included, so that
E H_N(s1) H_N(s2) = N xi(R_12) exactly) and differ only in the external field
and inverse temperature: system j has weights proportional to
exp(beta_j (H_N(sigma) + h^j . sigma)).

Exact mode enumerates {-1, +1}^N; Monte Carlo mode runs Metropolis sweeps with
replica exchange.  Both evaluate energies through the reduced multilinear form
(constant + quadratic + quartic over distinct indices), which follows from
sigma_i^2 = 1 and makes single-spin-flip energy changes exact.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from scipy.special import logsumexp

from .fields import FieldSpec
from .mixture import MixtureSpec

SUPPORTED_POWERS = (2, 4)
EXACT_CAP = 14
PAIR_CAP = 12
MC_CAP = 256
QUARTIC_CAP = 24
OVERLAP_TYPES = ("ss", "rr", "sr")


class BudgetError(ValueError):
    """Requested size exceeds the memory or enumeration budget."""


def spec_hash(spec: MixtureSpec) -> int:
    return int.from_bytes(hashlib.sha256(spec.key().encode()).digest()[:4], "little")


@dataclass(frozen=True)
class ReducedForm:
    """H(sigma) = const + sigma^T Q sigma + sum_{ijkl} T_ijkl sigma_i sigma_j sigma_k sigma_l.

    Q is symmetric with zero diagonal; T (or None) is fully symmetric and
    vanishes whenever two indices coincide.
    """

    const: float
    Q: np.ndarray
    T: np.ndarray | None

    def energies(self, S: np.ndarray, chunk: int = 4096) -> np.ndarray:
        S = np.asarray(S, dtype=float)
        out = np.empty(len(S))
        n = S.shape[1]
        for a in range(0, len(S), chunk):
            s = S[a : a + chunk]
            e = self.const + np.einsum("ai,ai->a", s @ self.Q, s)
            if self.T is not None:
                s2 = (s[:, :, None] * s[:, None, :]).reshape(len(s), n * n)
                e = e + np.einsum("ak,ak->a", s2 @ self.T.reshape(n * n, n * n), s2)
            out[a : a + chunk] = e
        return out

    def local_fields(self, S: np.ndarray) -> np.ndarray:
        """dH/dsigma_i of the multilinear form (independent of sigma_i)."""
        S = np.asarray(S, dtype=float)
        L = 2.0 * S @ self.Q
        if self.T is not None:
            L = L + 4.0 * np.einsum("ijkl,aj,ak,al->ai", self.T, S, S, S, optimize=True)
        return L


def _reduce_quadratic(g: np.ndarray, c: float):
    Q = 0.5 * c * (g + g.T)
    np.fill_diagonal(Q, 0.0)
    return c * float(np.trace(g)), Q


def _reduce_quartic(g: np.ndarray, c: float):
    n = g.shape[0]
    idx = np.indices(g.shape).reshape(4, -1)
    vals = c * g.reshape(-1)
    mult = (idx[:, None, :] == idx[None, :, :]).sum(axis=0)
    odd = mult % 2 == 1
    n_odd = odd.sum(axis=0)
    distinct = (mult == 1).all(axis=0)
    const = float(vals[n_odd == 0].sum())
    pair = (n_odd > 0) & ~distinct
    x = np.where(odd, idx, n).min(axis=0)[pair]
    y = np.where(odd, idx, -1).max(axis=0)[pair]
    Q = np.zeros((n, n))
    np.add.at(Q, (x, y), 0.5 * vals[pair])
    np.add.at(Q, (y, x), 0.5 * vals[pair])
    raw = np.where(distinct, vals, 0.0).reshape(g.shape)
    perms = [(a, b, c_, d) for a in range(4) for b in range(4) for c_ in range(4) for d in range(4)
             if len({a, b, c_, d}) == 4]
    T = sum(raw.transpose(p) for p in perms) / len(perms)
    return const, Q, T


@dataclass(frozen=True, eq=False)
class DisorderRealization:
    """One draw of couplings and paired fields, regenerable from (seed, N, spec)."""

    spec: MixtureSpec
    n: int
    seed: int
    fields: FieldSpec
    couplings: dict
    h: np.ndarray  # shape (N, 2): column j is the field of system j+1
    shift: float = 0.0

    @classmethod
    def sample(cls, spec: MixtureSpec, n: int, seed: int, fields: FieldSpec | None = None):
        if n < 1:
            raise ValueError("N must be positive")
        bad = [p for p in spec.powers if p not in SUPPORTED_POWERS]
        if bad:
            raise BudgetError(f"powers {bad} not supported; only p in {SUPPORTED_POWERS}")
        if 4 in spec.powers and n > QUARTIC_CAP:
            raise BudgetError(f"p=4 tensors limited to N <= {QUARTIC_CAP}")
        if n > MC_CAP:
            raise BudgetError(f"N <= {MC_CAP} required")
        fields = fields or FieldSpec.fixed(0.0)
        ss_coup, ss_field = np.random.SeedSequence([seed, n, spec_hash(spec)]).spawn(2)
        rng = np.random.default_rng(ss_coup)
        couplings = {p: rng.standard_normal((n,) * p) for p in spec.powers}
        h = fields.sample(np.random.default_rng(ss_field), n)
        return cls(spec, n, seed, fields, couplings, h)

    def with_fields(self, h: np.ndarray) -> "DisorderRealization":
        h = np.asarray(h, dtype=float)
        if h.shape != (self.n, 2):
            raise ValueError("fields must have shape (N, 2)")
        return DisorderRealization(self.spec, self.n, self.seed, self.fields, self.couplings, h, self.shift)

    def shifted(self, c: float) -> "DisorderRealization":
        """Same disorder with a constant c added to H_N."""
        return DisorderRealization(self.spec, self.n, self.seed, self.fields, self.couplings, self.h,
                                   self.shift + c)

    def gamma(self, p: int) -> float:
        return float(self.spec.coefficients[p])

    def hamiltonian(self, sigma, j: int | None = None) -> float:
        """H_N(sigma) by direct nested sums over the raw tensors; plus h^j . sigma if j is given."""
        s = np.asarray(sigma, dtype=float)
        if s.shape != (self.n,) or not np.all(np.abs(s) == 1):
            raise ValueError("sigma must be a +-1 vector of length N")
        total = self.shift
        for p, g in self.couplings.items():
            acc = g
            for _ in range(p):
                acc = acc @ s
            total += self.gamma(p) * self.n ** (-(p - 1) / 2) * float(acc)
        if j is not None:
            total += float(self.h[:, j] @ s)
        return total

    @cached_property
    def reduced(self) -> ReducedForm:
        const, Q, T = self.shift, np.zeros((self.n, self.n)), None
        for p, g in self.couplings.items():
            c = self.gamma(p) * self.n ** (-(p - 1) / 2)
            if p == 2:
                c0, Qp = _reduce_quadratic(g, c)
            else:
                c0, Qp, T = _reduce_quartic(g, c)
            const += c0
            Q = Q + Qp
        return ReducedForm(const, Q, T)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"disorder_{self.seed}_{self.n}_{spec_hash(self.spec):08x}.npz"
        np.savez(path, h=self.h, **{f"g{p}": g for p, g in self.couplings.items()})
        return path

    def matches_file(self, path: str | Path) -> bool:
        data = np.load(path)
        return np.array_equal(data["h"], self.h) and all(
            np.array_equal(data[f"g{p}"], g) for p, g in self.couplings.items()
        )


def draws(spec: MixtureSpec, n: int, seeds: Sequence[int], fields: FieldSpec | None = None):
    return [DisorderRealization.sample(spec, n, s, fields) for s in seeds]


# ---------------------------------------------------------------------------
# exact enumeration


def configurations(n: int) -> np.ndarray:
    """All of {-1, +1}^N, row k has sigma_i = 1 - 2 * bit_i(k)."""
    if n > EXACT_CAP:
        raise BudgetError(f"exact enumeration limited to N <= {EXACT_CAP}")
    k = np.arange(2**n)
    return (1 - 2 * ((k[:, None] >> np.arange(n)) & 1)).astype(np.int8)


def overlap_levels(n: int) -> np.ndarray:
    """Overlap value of Hamming class d: 1 - 2 d / N, d = 0..N."""
    return 1.0 - 2.0 * np.arange(n + 1) / n


def class_matrix(w: np.ndarray, n: int, chunk: int = 256) -> np.ndarray:
    """C[s, d] = sum over t at Hamming distance d from s of w[t].

    Only sums of the nonnegative weights are formed, so small classes keep
    full relative precision.
    """
    M = 2**n
    idx = np.arange(M, dtype=np.int64)
    out = np.empty((M, n + 1))
    for a in range(0, M, chunk):
        rows = idx[a : a + chunk]
        D = np.bitwise_count(rows[:, None] ^ idx[None, :]).astype(np.int64)
        flat = (D + (n + 1) * np.arange(len(rows))[:, None]).ravel()
        out[a : a + len(rows)] = np.bincount(
            flat, weights=np.broadcast_to(w, D.shape).ravel(), minlength=len(rows) * (n + 1)
        ).reshape(len(rows), n + 1)
    return out


@dataclass(eq=False)
class GibbsEnsemble:
    """Gibbs measures of the two systems for one disorder draw."""

    real: DisorderRealization
    beta1: float
    beta2: float
    mode: str
    # exact mode
    log_weights: np.ndarray | None = None  # (2, 2^N), normalized
    log_z: np.ndarray | None = None  # (2,)
    # mc mode
    snapshots: np.ndarray | None = None  # (2, R, T, N) int8 at the target temperatures
    swap_rates: np.ndarray | None = None  # (2, R, L-1)
    ladders: np.ndarray | None = None  # (2, L)
    sweeps: int = 0
    burn_in: int = 0
    warnings: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.real.n

    @property
    def betas(self) -> tuple[float, float]:
        return self.beta1, self.beta2

    @property
    def free_energy(self) -> np.ndarray:
        """(1/N) log Z_N^j for j = 1, 2 (exact mode)."""
        self._need_exact()
        return self.log_z / self.n

    def weights(self, j: int) -> np.ndarray:
        self._need_exact()
        return np.exp(self.log_weights[j])

    def _need_exact(self):
        if self.mode != "exact":
            raise ValueError("operation requires an exact-mode ensemble")

    @cached_property
    def classes(self) -> dict:
        """Class matrices for the star sums around a configuration.

        ``ss``: t drawn from system 1; ``rr``: from system 2 (both indexed by a
        system-1 or system-2 configuration respectively); ``sr``: indexed by a
        system-1 configuration, t drawn from system 2.
        """
        self._need_exact()
        w1, w2 = self.weights(0), self.weights(1)
        c1 = class_matrix(w1, self.n)
        c2 = c1 if (self.beta1 == self.beta2 and np.array_equal(self.real.h[:, 0], self.real.h[:, 1])) \
            else class_matrix(w2, self.n)
        return {"ss": c1, "rr": c2, "sr": c2}

    def overlap_distribution(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        """(levels, masses) of the overlap of two replicas of the given kind."""
        if self.mode == "exact":
            outer = self.weights(1) if kind == "rr" else self.weights(0)
            mass = outer @ self.classes[kind]
            return overlap_levels(self.n), mass
        vals = self.overlap_samples(kind).ravel()
        levels = overlap_levels(self.n)
        d = np.rint((1.0 - vals) * self.n / 2).astype(int)
        return levels, np.bincount(d, minlength=self.n + 1) / len(d)

    def overlap_samples(self, kind: str) -> np.ndarray:
        """MC overlap samples, shape (T, pairs), averaged over nothing."""
        if self.mode != "mc":
            raise ValueError("samples exist only in mc mode")
        S = self.snapshots.astype(float)
        n = self.n
        if kind == "ss":
            return (np.einsum("tn,tn->t", S[0, 0], S[0, 1]) / n)[:, None]
        if kind == "rr":
            return (np.einsum("tn,tn->t", S[1, 0], S[1, 1]) / n)[:, None]
        R = S.shape[1]
        return np.stack([np.einsum("tn,tn->t", S[0, a], S[1, b]) / n for a in range(R) for b in range(R)], axis=1)

    def overlap_moments(self, batches: int = 20) -> dict:
        """First two moments of each overlap type with standard errors.

        Exact mode returns zero standard errors; mc mode uses batch means over
        the measurement sweeps.
        """
        out = {}
        for kind in OVERLAP_TYPES:
            if self.mode == "exact":
                lv, m = self.overlap_distribution(kind)
                out[kind] = dict(m1=float(m @ lv), m2=float(m @ lv**2), se1=0.0, se2=0.0)
                continue
            x = self.overlap_samples(kind).mean(axis=1)
            x2 = (self.overlap_samples(kind) ** 2).mean(axis=1)
            out[kind] = dict(m1=float(x.mean()), m2=float(x2.mean()),
                             se1=batch_se(x, batches), se2=batch_se(x2, batches))
        return out


def batch_se(x: np.ndarray, batches: int = 20) -> float:
    """Standard error of the mean of a correlated series by batch means."""
    x = np.asarray(x, dtype=float)
    b = min(batches, len(x))
    if b < 2:
        return math.inf
    m = len(x) // b
    means = x[: m * b].reshape(b, m).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(b))


def system_energies(real: DisorderRealization, S: np.ndarray | None = None) -> np.ndarray:
    """(2, M) energies H_N(sigma) + h^j . sigma over the rows of S (all configurations by default)."""
    S = configurations(real.n) if S is None else S
    base = real.reduced.energies(S)
    return np.stack([base + S @ real.h[:, 0], base + S @ real.h[:, 1]])


def exact_ensemble(real: DisorderRealization, beta1: float, beta2: float) -> GibbsEnsemble:
    if beta1 <= 0 or beta2 <= 0:
        raise ValueError("inverse temperatures must be positive")
    E = system_energies(real)
    logits = np.array([beta1, beta2])[:, None] * E
    log_z = logsumexp(logits, axis=1)
    return GibbsEnsemble(real, beta1, beta2, "exact", log_weights=logits - log_z[:, None], log_z=log_z)


# ---------------------------------------------------------------------------
# overlap-constrained coupled free energy


def achievable_overlaps(n: int) -> np.ndarray:
    return overlap_levels(n)[::-1].copy()


def _overlap_class(n: int, u: float) -> int:
    k = u * n
    if abs(u) > 1 + 1e-12 or abs(k - round(k)) > 1e-9 or (round(k) - n) % 2:
        raise ValueError(f"overlap {u} is not achievable at N={n}")
    return (n - round(k)) // 2


def pair_log_sums(real: DisorderRealization, beta1: float, beta2: float) -> np.ndarray:
    """log sum_{sigma.rho = N u_d} exp(beta1 H^1(sigma) + beta2 H^2(rho)) for every class d."""
    if real.n > PAIR_CAP:
        raise BudgetError(f"pair enumeration limited to N <= {PAIR_CAP}")
    E = system_energies(real)
    a, b = beta1 * E[0], beta2 * E[1]
    ma, mb = a.max(), b.max()
    C = class_matrix(np.exp(b - mb), real.n)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - ma) @ C) + ma + mb


@dataclass
class ConstrainedEstimate:
    u: float
    value: float
    stderr: float
    per_draw: np.ndarray

    def to_dict(self) -> dict:
        return dict(u=self.u, value=self.value, stderr=self.stderr, draws=len(self.per_draw))


def constrained_curve(reals: Sequence[DisorderRealization], beta1: float, beta2: float) -> dict:
    """F_N(u) for every achievable u, averaged over the given draws."""
    n = reals[0].n
    logs = np.array([pair_log_sums(r, beta1, beta2) for r in reals]) / n
    lv = overlap_levels(n)
    out = {}
    for d in range(n + 1):
        col = logs[:, d]
        se = float(col.std(ddof=1) / math.sqrt(len(col))) if len(col) > 1 else math.nan
        out[float(lv[d])] = ConstrainedEstimate(float(lv[d]), float(col.mean()), se, col)
    return out


def constrained_free_energy(reals, beta1: float, beta2: float, u: float, mode: str = "exact") -> ConstrainedEstimate:
    """F_N(u) = (1/N) E log sum_{sigma.rho = N u} exp(beta1 H^1(sigma) + beta2 H^2(rho))."""
    if mode != "exact":
        raise ValueError("only exact mode is available for the constrained free energy")
    reals = [reals] if isinstance(reals, DisorderRealization) else list(reals)
    n = reals[0].n
    d = _overlap_class(n, u)
    return constrained_curve(reals, beta1, beta2)[float(overlap_levels(n)[d])]


# ---------------------------------------------------------------------------
# Monte Carlo: Metropolis + replica exchange


@numba.njit(cache=True)
def _flip_update(s, L, i, Q, T, has_quartic):
    delta = -2.0 * s[i]
    s[i] = -s[i]
    n = s.shape[0]
    for k in range(n):
        L[k] += 2.0 * Q[k, i] * delta
    if has_quartic:
        for k in range(n):
            acc = 0.0
            for a in range(n):
                sa = s[a]
                for b in range(n):
                    acc += T[k, i, a, b] * sa * s[b]
            L[k] += 12.0 * acc * delta


@numba.njit(cache=True)
def _pt_run(S, L, E, betas, Q, T, has_quartic, sites, u_flip, u_swap, parity0, accepts, attempts, snaps,
            snap_offset):
    """Run len(u_flip) sweeps of N single-spin proposals at uniformly random sites.

    Random sites keep the chain aperiodic even where almost every flip is
    accepted (a fixed sequential order flips every spin deterministically
    as beta -> 0).

    S, L: (G, K, N) spins and local fields, group G = system * R + replica,
    K rungs ordered by increasing beta; E: (G, K) energies; betas: (G, K).
    Measurements of the top rung go to snaps[snap_offset + t] when
    snap_offset + t >= 0.
    """
    G, K, N = S.shape
    n_sweeps = u_flip.shape[0]
    for t in range(n_sweeps):
        for g in range(G):
            for k in range(K):
                beta = betas[g, k]
                for step in range(N):
                    i = sites[t, g, k, step]
                    dH = -2.0 * S[g, k, i] * L[g, k, i]
                    x = beta * dH
                    if x >= 0.0 or u_flip[t, g, k, step] < math.exp(x):
                        _flip_update(S[g, k], L[g, k], i, Q, T, has_quartic)
                        E[g, k] += dH
            start = (parity0 + t) % 2
            for k in range(start, K - 1, 2):
                attempts[g, k] += 1
                x = (betas[g, k] - betas[g, k + 1]) * (E[g, k + 1] - E[g, k])
                if x >= 0.0 or u_swap[t, g, k] < math.exp(x):
                    accepts[g, k] += 1
                    for i in range(N):
                        tmp = S[g, k, i]
                        S[g, k, i] = S[g, k + 1, i]
                        S[g, k + 1, i] = tmp
                        tmp = L[g, k, i]
                        L[g, k, i] = L[g, k + 1, i]
                        L[g, k + 1, i] = tmp
                    tmp = E[g, k]
                    E[g, k] = E[g, k + 1]
                    E[g, k + 1] = tmp
        idx = snap_offset + t
        if idx >= 0:
            for g in range(G):
                for i in range(N):
                    snaps[idx, g, i] = S[g, K - 1, i]


def geometric_ladder(beta: float, rungs: int = 8, low: float = 0.25) -> np.ndarray:
    if rungs == 1:
        return np.array([beta])
    return beta * low ** (1.0 - np.arange(rungs) / (rungs - 1))


def metropolis_accept_probability(beta: float, delta_h: float) -> float:
    """Acceptance probability of a move changing H by delta_h under weights exp(beta H)."""
    return min(1.0, math.exp(beta * delta_h)) if beta * delta_h < 700 else 1.0


def mc_ensemble(
    real: DisorderRealization,
    beta1: float,
    beta2: float,
    sweeps: int = 20_000,
    ladder: int | tuple[np.ndarray, np.ndarray] = 8,
    seed: int = 0,
    burn_in: int | None = None,
    replicas: int = 2,
    batch: int = 256,
    swap_window: tuple[float, float] = (0.1, 0.9),
) -> GibbsEnsemble:
    """Parallel tempering for both systems; snapshots of the target rung each sweep."""
    if real.n > MC_CAP:
        raise BudgetError(f"mc mode limited to N <= {MC_CAP}")
    if beta1 <= 0 or beta2 <= 0:
        raise ValueError("inverse temperatures must be positive")
    if isinstance(ladder, int):
        ladders = np.stack([geometric_ladder(beta1, ladder), geometric_ladder(beta2, ladder)])
    else:
        ladders = np.stack([np.asarray(ladder[0], float), np.asarray(ladder[1], float)])
        if not (np.isclose(ladders[0, -1], beta1) and np.isclose(ladders[1, -1], beta2)):
            raise ValueError("ladders must end at the target inverse temperatures")
    burn_in = sweeps // 10 if burn_in is None else burn_in
    n, K = real.n, ladders.shape[1]
    G = 2 * replicas
    rng = np.random.default_rng(np.random.SeedSequence([seed, n, spec_hash(real.spec), 7]))
    S = rng.choice(np.array([-1.0, 1.0]), size=(G, K, n))
    red = real.reduced
    h = np.repeat(real.h.T, replicas, axis=0)  # (G, N)
    flat = S.reshape(G * K, n)
    L = (red.local_fields(flat).reshape(G, K, n) + h[:, None, :]).copy()
    E = (red.energies(flat).reshape(G, K) + np.einsum("gkn,gn->gk", S, h)).copy()
    betas = np.repeat(ladders, replicas, axis=0).copy()
    T = red.T if red.T is not None else np.zeros((1, 1, 1, 1))
    accepts = np.zeros((G, K - 1), np.int64) if K > 1 else np.zeros((G, 1), np.int64)
    attempts = np.zeros_like(accepts)
    snaps = np.zeros((sweeps, G, n), np.int8)
    total = burn_in + sweeps
    done = 0
    while done < total:
        m = min(batch, total - done)
        sites = rng.integers(0, n, size=(m, G, K, n))
        u_flip = rng.random((m, G, K, n))
        u_swap = rng.random((m, G, max(K - 1, 1)))
        _pt_run(S, L, E, betas, red.Q, T, red.T is not None, sites, u_flip, u_swap, done % 2,
                accepts, attempts, snaps, done - burn_in)
        done += m
    rates = np.where(attempts > 0, accepts / np.maximum(attempts, 1), np.nan)[:, : K - 1]
    notes = []
    lo, hi = swap_window
    if K > 1 and (np.nanmin(rates) < lo or np.nanmax(rates) > hi):
        msg = (f"swap acceptance in [{np.nanmin(rates):.3f}, {np.nanmax(rates):.3f}] outside "
               f"[{lo}, {hi}]; {'add rungs or narrow the ladder' if np.nanmin(rates) < lo else 'use fewer rungs'}")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    snapshots = snaps.reshape(sweeps, 2, replicas, n).transpose(1, 2, 0, 3).copy()
    return GibbsEnsemble(
        real, beta1, beta2, "mc",
        snapshots=snapshots,
        swap_rates=rates.reshape(2, replicas, -1),
        ladders=ladders,
        sweeps=sweeps,
        burn_in=burn_in,
        warnings=notes,
    )
