"""Finite-step Parisi measures on [0, 1], stored through their CDF."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mixture import MixtureSpec

MATCH_TOL = 1e-9


class MeasureError(ValueError):
    pass


@dataclass(frozen=True)
class ParisiMeasure:
    """Right-continuous step CDF.

    ``values[0]`` holds on ``[0, breakpoints[0])`` and ``values[l]`` on
    ``[breakpoints[l-1], breakpoints[l])``; the last value extends to 1.
    The mass at ``{0}`` is ``values[0]`` (so ``cdf(0) = values[0]``).
    """

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.breakpoints)
        v = tuple(float(x) for x in self.values)
        if len(v) != len(b) + 1:
            raise MeasureError("need exactly one more value than breakpoints")
        if any(x < 0.0 or x > 1.0 for x in b):
            raise MeasureError("breakpoints must lie in [0, 1]")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise MeasureError("breakpoints must be strictly increasing")
        if any(x < -1e-15 or x > 1.0 + 1e-15 for x in v):
            raise MeasureError("CDF values must lie in [0, 1]")
        if any(v2 < v1 - 1e-15 for v1, v2 in zip(v, v[1:])):
            raise MeasureError("non-monotone measure")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    # constructors -------------------------------------------------------------
    @classmethod
    def dirac(cls, q: float) -> "ParisiMeasure":
        if q <= 0.0:
            return cls((), (1.0,))
        return cls((q,), (0.0, 1.0))

    @classmethod
    def constant(cls, m: float) -> "ParisiMeasure":
        """CDF identically equal to m on [0, 1] (m = 1 is the Dirac mass at 0)."""
        return cls((), (m,))

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[float, float]]) -> "ParisiMeasure":
        """Build from (mass, location) pairs."""
        atoms = sorted((float(q), float(w)) for w, q in atoms)
        bps, vals, acc = [], [0.0], 0.0
        for q, w in atoms:
            acc += w
            if q <= 0.0:
                vals[0] = acc
            elif bps and abs(bps[-1] - q) < 1e-15:
                vals[-1] = acc
            else:
                bps.append(q)
                vals.append(acc)
        return cls(tuple(bps), tuple(min(v, 1.0) for v in vals))

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "ParisiMeasure":
        """Parse the serialized ``[(q_l, m_l), ...]`` form; the first pair must have q = 0."""
        pairs = [(float(q), float(m)) for q, m in pairs]
        if not pairs or pairs[0][0] != 0.0:
            raise MeasureError("first pair must start at q = 0")
        return cls(tuple(q for q, _ in pairs[1:]), tuple(m for _, m in pairs))

    def to_pairs(self) -> list[list[float]]:
        return [[0.0, self.values[0]]] + [[q, m] for q, m in zip(self.breakpoints, self.values[1:])]

    # queries --------------------------------------------------------------------
    @property
    def total_mass(self) -> float:
        return self.values[-1]

    @property
    def is_probability(self) -> bool:
        return abs(self.total_mass - 1.0) < 1e-12

    def cdf(self, q):
        idx = np.searchsorted(np.asarray(self.breakpoints), q, side="right")
        out = np.asarray(self.values)[idx]
        return out if np.ndim(out) else float(out)

    def left_limit(self, q):
        """mu([0, q)); equals 0 at q = 0."""
        q = np.asarray(q, dtype=float)
        idx = np.searchsorted(np.asarray(self.breakpoints), q, side="left")
        out = np.where(q <= 0.0, 0.0, np.asarray(self.values)[idx])
        return out if np.ndim(out) else float(out)

    def intervals(self, lo: float = 0.0, hi: float = 1.0):
        """Yield (a, b, m) pieces covering [lo, hi] on which the CDF equals m."""
        edges = [lo] + [q for q in self.breakpoints if lo < q < hi] + [hi]
        for a, b in zip(edges, edges[1:]):
            if b > a:
                yield a, b, self.cdf(a)

    def restrict(self, v: float, scale: float = 1.0) -> "ParisiMeasure":
        """scale * mu on [0, v]; the step structure beyond v is dropped."""
        bps = [q for q in self.breakpoints if q <= v]
        vals = [scale * m for m in self.values[: len(bps) + 1]]
        return ParisiMeasure(tuple(bps), tuple(vals))

    def scaled(self, a: float) -> "ParisiMeasure":
        return ParisiMeasure(self.breakpoints, tuple(a * m for m in self.values))

    def integrate(self, weight, lo: float = 0.0, hi: float = 1.0) -> float:
        """int_lo^hi mu(q) dW(q) for an antiderivative W, exact on each step."""
        return float(sum(m * (weight(b) - weight(a)) for a, b, m in self.intervals(lo, hi)))

    def theta_integral(self, spec: MixtureSpec, lo: float = 0.0, hi: float = 1.0) -> float:
        """int mu(q) theta'(q) dq, using theta as the exact antiderivative."""
        return self.integrate(spec.theta, lo, hi)


def mix(a: ParisiMeasure, b: ParisiMeasure, weight: float) -> ParisiMeasure:
    """Pointwise CDF combination weight*a + (1-weight)*b."""
    bps = sorted(set(a.breakpoints) | set(b.breakpoints))
    pts = [0.0] + bps
    vals = [weight * a.cdf(q) + (1 - weight) * b.cdf(q) for q in pts]
    return ParisiMeasure(tuple(bps), tuple(vals))


def cdf(measure: ParisiMeasure, q):
    return measure.cdf(q)


def support_inf(measure: ParisiMeasure) -> float:
    """Smallest point carrying mass."""
    if measure.total_mass <= 0.0:
        raise MeasureError("empty measure")
    if measure.values[0] > 0.0:
        return 0.0
    for q, lo, hi in zip(measure.breakpoints, measure.values, measure.values[1:]):
        if hi > lo:
            return q
    raise MeasureError("empty measure")


def decoupling_point(
    mu1: ParisiMeasure, mu2: ParisiMeasure, beta1: float, beta2: float, tol: float = MATCH_TOL
) -> float:
    """inf{t : beta1 mu1([0,t)) != beta2 mu2([0,t))}, or 1 if the two never differ.

    Left limits are constant on (q_l, q_{l+1}], so it is enough to compare
    them just to the right of 0 and of every merged breakpoint.
    """
    merged = sorted({0.0, *mu1.breakpoints, *mu2.breakpoints})
    for t in merged:
        if t >= 1.0:
            break
        # value of the left limit on (t, next breakpoint]: it equals cdf(t)
        if abs(beta1 * mu1.cdf(t) - beta2 * mu2.cdf(t)) > tol:
            return t
    return 1.0


def coupling_lambda(beta1: float, beta2: float) -> float:
    return beta1 / (beta1 + beta2)


def coupled_measure(
    mu1: ParisiMeasure,
    mu2: ParisiMeasure,
    lam: float,
    v: float,
    mu2_check: bool = True,
    tol: float = MATCH_TOL,
) -> ParisiMeasure:
    """The canonical coupled CDF lam*mu1 = (1-lam)*mu2 restricted to [0, v].

    Raises if the two scaled CDFs disagree anywhere on [0, v], and checks
    mu(v) <= min(mu1(v), mu2(v)).
    """
    if not 0.0 < lam < 1.0:
        raise MeasureError("lambda must lie in (0, 1)")
    out = mu1.restrict(v, lam)
    if mu2_check:
        pts = sorted({0.0, v, *[q for q in mu1.breakpoints + mu2.breakpoints if q <= v]})
        for q in pts:
            a, b = lam * mu1.cdf(q), (1.0 - lam) * mu2.cdf(q)
            if abs(a - b) > tol:
                raise MeasureError(
                    f"coupled measure inconsistent at q={q}: lam*mu1={a}, (1-lam)*mu2={b}"
                )
    check_matching(out, mu1, mu2, v)
    return out


def check_matching(mu: ParisiMeasure, mu1: ParisiMeasure, mu2: ParisiMeasure, v: float) -> None:
    if mu.cdf(v) > min(mu1.cdf(v), mu2.cdf(v)) + 1e-15:
        raise MeasureError("matching condition mu(v) <= min(mu1(v), mu2(v)) violated")
