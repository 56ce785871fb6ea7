"""Sparse signed measures rho on the sites of a domain."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lattice import LatticeDomain


@dataclass(frozen=True, eq=False)
class HarmonicWeights:
    """rho(y) on a sparse support; ``kind`` names the construction."""

    domain: LatticeDomain
    indices: np.ndarray
    weights: np.ndarray
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, domain, indices, weights, kind="custom", **meta):
        idx = np.asarray(indices, dtype=np.int64).ravel()
        w = np.asarray(weights, dtype=np.float64).ravel()
        if idx.shape != w.shape:
            raise ValueError("indices and weights differ in length")
        order = np.argsort(idx, kind="stable")
        idx, w = idx[order], w[order]
        if idx.size and np.any(idx[1:] == idx[:-1]):
            # merge duplicates in a fixed order
            uniq, start = np.unique(idx, return_index=True)
            w = np.add.reduceat(w, start)
            idx = uniq
        idx.flags.writeable = False
        w.flags.writeable = False
        return cls(domain, idx, w, kind, dict(meta))

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    @property
    def l1_norm(self) -> float:
        return float(np.abs(self.weights).sum())

    def sites(self) -> list[tuple[int, int]]:
        return [self.domain.site(k) for k in self.indices]

    def apply(self, fields) -> np.ndarray | float:
        """<rho, phi> for one (side, side) field or a batch (b, side, side)."""
        a = np.asarray(getattr(fields, "values", fields))
        if a.ndim == 2:
            return float(a.reshape(-1)[self.indices] @ self.weights)
        flat = a.reshape(a.shape[0], -1)
        return flat[:, self.indices] @ self.weights

    def dense(self) -> np.ndarray:
        out = np.zeros(self.domain.n_sites)
        out[self.indices] = self.weights
        return out.reshape(self.domain.shape)

    def sparse_row(self) -> sp.csr_matrix:
        n = self.domain.n_sites
        return sp.csr_matrix((self.weights, (np.zeros_like(self.indices), self.indices)), shape=(1, n))

    def combine(self, other: "HarmonicWeights", a: float = 1.0, b: float = 1.0, kind=None, **meta):
        """a * self + b * other."""
        return HarmonicWeights.build(
            self.domain, np.concatenate([self.indices, other.indices]),
            np.concatenate([a * self.weights, b * other.weights]), kind or self.kind, **meta)

    def translate(self, shift) -> "HarmonicWeights":
        """Shift the support by an integer vector (caller keeps it inside the domain)."""
        S = self.domain.side
        i, j = np.divmod(self.indices, S)
        i = i + int(shift[0])
        j = j + int(shift[1])
        if i.min() < 0 or j.min() < 0 or i.max() >= S or j.max() >= S:
            from .errors import GeometryError
            raise GeometryError("translated weights leave the domain")
        return HarmonicWeights.build(self.domain, i * S + j, self.weights, self.kind, **self.meta)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "weight"])
            for (x1, x2), val in zip(self.sites(), self.weights):
                w.writerow([x1, x2, repr(float(val))])


def fingerprint(w: HarmonicWeights) -> str:
    """Content hash of a functional: domain size, support and weights."""
    h = hashlib.sha256()
    h.update(str(w.domain.N).encode())
    h.update(np.ascontiguousarray(w.indices, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(w.weights, dtype="<f8").tobytes())
    return h.hexdigest()[:32]


def site_weights(domain: LatticeDomain, x) -> HarmonicWeights:
    """The point evaluation phi -> phi(x)."""
    return HarmonicWeights.build(domain, [domain.index(x)], [1.0], kind="site", site=tuple(x))
