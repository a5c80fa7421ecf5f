"""Joint law of the external fields (h1, h2)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FieldSpec:
    """Distribution of the field pair.

    kind is ``"deterministic"`` (means only), ``"gaussian"`` (means and a 2x2
    covariance) or ``"empirical"`` (an explicit list of pairs, each weighted
    equally).
    """

    kind: str = "deterministic"
    means: tuple = (0.0, 0.0)
    cov: tuple = ((0.0, 0.0), (0.0, 0.0))
    samples: tuple = ()
    nodes_per_dim: int = 21

    def __post_init__(self):
        if self.kind not in ("deterministic", "gaussian", "empirical"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if self.kind == "empirical" and not self.samples:
            raise ValueError("empirical field spec needs samples")

    @classmethod
    def fixed(cls, h1: float = 0.0, h2: float | None = None) -> "FieldSpec":
        return cls("deterministic", (float(h1), float(h1 if h2 is None else h2)))

    @classmethod
    def from_dict(cls, d: dict) -> "FieldSpec":
        kind = d.get("kind", "deterministic")
        return cls(
            kind=kind,
            means=tuple(float(x) for x in d.get("means", (0.0, 0.0))),
            cov=tuple(tuple(float(y) for y in row) for row in d.get("cov", ((0.0, 0.0), (0.0, 0.0)))),
            samples=tuple(tuple(float(y) for y in s) for s in d.get("samples", ())),
            nodes_per_dim=int(d.get("nodes_per_dim", 21)),
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "means": list(self.means),
            "cov": [list(r) for r in self.cov],
            "samples": [list(s) for s in self.samples],
            "nodes_per_dim": self.nodes_per_dim,
        }

    def swapped(self) -> "FieldSpec":
        c = self.cov
        return FieldSpec(
            self.kind,
            self.means[::-1],
            ((c[1][1], c[1][0]), (c[0][1], c[0][0])),
            tuple(s[::-1] for s in self.samples),
            self.nodes_per_dim,
        )

    @property
    def second_moments(self) -> tuple[float, float]:
        if self.kind == "empirical":
            s = np.asarray(self.samples)
            return float(np.mean(s[:, 0] ** 2)), float(np.mean(s[:, 1] ** 2))
        m = self.means
        c = self.cov if self.kind == "gaussian" else ((0, 0), (0, 0))
        return m[0] ** 2 + c[0][0], m[1] ** 2 + c[1][1]

    # quadrature -----------------------------------------------------------------
    def joint_nodes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nodes (h1, h2) and weights summing to 1 for E over the pair."""
        if self.kind == "deterministic":
            return np.array([self.means[0]]), np.array([self.means[1]]), np.array([1.0])
        if self.kind == "empirical":
            s = np.asarray(self.samples, dtype=float)
            return s[:, 0].copy(), s[:, 1].copy(), np.full(len(s), 1.0 / len(s))
        cov = np.asarray(self.cov, dtype=float)
        means = np.asarray(self.means, dtype=float)
        z, w = _hermite(self.nodes_per_dim)
        # factor cov = L L^T; degenerate coordinates collapse to single nodes
        L = _psd_factor(cov)
        active = [k for k in range(2) if np.any(L[:, k] != 0.0)]
        if not active:
            return means[:1].copy(), means[1:].copy(), np.array([1.0])
        grids = np.meshgrid(*[z] * len(active), indexing="ij")
        wts = np.ones_like(grids[0])
        for g in np.meshgrid(*[w] * len(active), indexing="ij"):
            wts = wts * g
        pts = np.zeros((2, grids[0].size))
        for j, k in enumerate(active):
            pts += np.outer(L[:, k], grids[j].ravel())
        h = means[:, None] + pts
        return h[0], h[1], wts.ravel()

    def marginal_nodes(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights for h^j alone (j = 0 or 1)."""
        if self.kind == "gaussian":
            var = float(self.cov[j][j])
            if var <= 0.0:
                return np.array([self.means[j]]), np.array([1.0])
            z, w = _hermite(self.nodes_per_dim)
            return self.means[j] + np.sqrt(var) * z, w
        h1, h2, w = self.joint_nodes()
        return (h1 if j == 0 else h2), w

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n i.i.d. pairs, shape (n, 2)."""
        if self.kind == "deterministic":
            return np.tile(np.asarray(self.means, dtype=float), (n, 1))
        if self.kind == "empirical":
            s = np.asarray(self.samples, dtype=float)
            return s[rng.integers(0, len(s), size=n)]
        L = _psd_factor(np.asarray(self.cov, dtype=float))
        return np.asarray(self.means, dtype=float) + rng.standard_normal((n, 2)) @ L.T


def _hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Probabilists' Gauss-Hermite rule normalized to the standard normal."""
    z, w = np.polynomial.hermite_e.hermegauss(n)
    return z, w / w.sum()


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if np.any(vals < -1e-12):
        raise ValueError("field covariance is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    return _hermite(n)
