"""Mixture function xi(x) = sum_p gamma_p^2 x^p and derived quantities."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

_DOMAIN_TOL = 1e-12
_SUM_BOUND = 1e12


class MixtureError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureSpec:
    """Coefficients gamma_p of the mixed p-spin Hamiltonian.

    Only gamma_p is stored; every formula uses gamma_p**2, so the sign of a
    coefficient never matters.
    """

    coefficients: Mapping[int, float]
    even_only: bool = False
    _powers: np.ndarray = field(init=False, repr=False, compare=False)
    _weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        coeffs = {int(p): float(g) for p, g in dict(self.coefficients).items()}
        if any(p < 2 for p in coeffs):
            raise MixtureError("all powers p must be >= 2")
        if self.even_only:
            odd = [p for p, g in coeffs.items() if p % 2 and g != 0.0]
            if odd:
                raise MixtureError(f"odd term present: p={odd}")
        if sum(2.0**p * g * g for p, g in coeffs.items()) >= _SUM_BOUND:
            raise MixtureError("sum_p 2^p gamma_p^2 exceeds sanity bound")
        live = sorted(p for p, g in coeffs.items() if g != 0.0)
        if not live:
            raise MixtureError("xi(1) must be positive: no nonzero coefficient")
        object.__setattr__(self, "coefficients", dict(sorted(coeffs.items())))
        object.__setattr__(self, "_powers", np.array(live, dtype=float))
        object.__setattr__(self, "_weights", np.array([coeffs[p] ** 2 for p in live]))

    @classmethod
    def from_pairs(cls, pairs: Iterable, even_only: bool = False) -> "MixtureSpec":
        return cls({int(p): float(g) for p, g in pairs}, even_only=even_only)

    def to_pairs(self) -> list[list]:
        return [[p, g] for p, g in self.coefficients.items()]

    @property
    def powers(self) -> list[int]:
        return [int(p) for p in self._powers]

    def key(self) -> str:
        """Stable text key, used for seeding and cache names."""
        return ";".join(f"{p}:{g!r}" for p, g in self.coefficients.items())

    # evaluation -----------------------------------------------------------
    def _poly(self, x, deriv: int):
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > 1.0 + _DOMAIN_TOL):
            raise MixtureError("xi is defined on [-1, 1]")
        out = np.zeros_like(x)
        for p, w in zip(self._powers, self._weights):
            c = w
            for k in range(deriv):
                c *= p - k
            if p - deriv >= 0:
                out = out + c * x ** (p - deriv)
        return out if out.ndim else float(out)

    def xi(self, x):
        return self._poly(x, 0)

    def xi1(self, x):
        return self._poly(x, 1)

    def xi2(self, x):
        return self._poly(x, 2)

    def theta(self, q):
        """q xi'(q) - xi(q)."""
        q = np.asarray(q, dtype=float)
        out = q * self.xi1(q) - self.xi(q)
        return out if np.ndim(out) else float(out)

    def theta1(self, q):
        """theta'(q) = q xi''(q)."""
        q = np.asarray(q, dtype=float)
        out = q * self.xi2(q)
        return out if np.ndim(out) else float(out)


def xi(spec: MixtureSpec, x):
    return spec.xi(x)


def xi_derivatives(spec: MixtureSpec, x):
    return spec.xi1(x), spec.xi2(x)


def theta(spec: MixtureSpec, q):
    if np.any(np.asarray(q) < -_DOMAIN_TOL) or np.any(np.asarray(q) > 1 + _DOMAIN_TOL):
        raise MixtureError("theta is defined on [0, 1]")
    return spec.theta(q)


@dataclass
class GenericityReport:
    valid: bool
    odd_free: bool
    even_powers: list[int]
    warnings: list[str]


def validate_generic(spec: MixtureSpec, even_only: bool | None = None) -> GenericityReport:
    """Check the even-generic assumptions as far as a finite truncation can.

    A finite set of powers never satisfies the Muntz density condition, so
    the report warns instead of failing. Odd terms are a hard error only
    when ``even_only`` is requested.
    """
    even_only = spec.even_only if even_only is None else even_only
    odd = [p for p, g in spec.coefficients.items() if p % 2 and g != 0.0]
    if odd and even_only:
        raise MixtureError(f"odd term present: p={odd}")
    evens = [p for p, g in spec.coefficients.items() if p % 2 == 0 and g != 0.0]
    warnings = []
    if len(evens) < 2:
        warnings.append("single even power; genericity approximated")
    else:
        warnings.append(
            f"finite truncation with {len(evens)} even powers; density condition approximated"
        )
    if odd:
        warnings.append(f"odd powers present: {odd}")
    return GenericityReport(valid=not odd, odd_free=not odd, even_powers=evens, warnings=warnings)
