"""Dirichlet Laplacian on a site set: Green's functions, harmonic extension,
harmonic measure and exact Gaussian free field sampling.

The operator acts on the interior of a SiteSet: ``L = 4 I - A`` where ``A`` is
the adjacency among interior sites.  With zero boundary values the discrete
Gaussian free field has covariance ``L^{-1}``.

Backends:
  * ``spectral`` for rectangular sets: L is diagonalised by the orthonormal
    type-I sine transform, so solves and exact samples cost one FFT each.
  * ``cholmod`` (scikit-sparse, if installed), else ``dense`` Cholesky for small
    sets, else ``splu`` (sparse LU with a symmetric ordering, used as LDL^T).
  * ``cg`` on request for one-off Green's columns.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GeometryError, InputError, SolverError
from .lattice import NEIGHBOR_OFFSETS, LatticeDomain, SiteSet
from .state import FieldState
from .weights import HarmonicWeights

try:  # optional fast sparse Cholesky
    from sksparse.cholmod import cholesky as _cholmod_cholesky
except ImportError:  # pragma: no cover - depends on the environment
    _cholmod_cholesky = None

DENSE_LIMIT = 6000
RESIDUAL_TOL = 1e-10


class DirichletOperator:
    def __init__(self, site_set: SiteSet | LatticeDomain, method: str | None = None):
        if isinstance(site_set, LatticeDomain):
            site_set = site_set.as_site_set()
        self.site_set = site_set
        self.domain = site_set.domain
        self.interior = site_set.interior_indices
        self.boundary = site_set.boundary_indices
        if self.interior.size == 0:
            raise GeometryError("site set has no interior sites")
        h, w = site_set.mask.shape
        rect = site_set.mask.all()
        if method is None:
            if rect:
                method = "spectral"
            elif _cholmod_cholesky is not None:
                method = "cholmod"
            elif self.interior.size <= DENSE_LIMIT:
                method = "dense"
            else:
                method = "splu"
        if method == "spectral" and not rect:
            raise InputError("spectral backend needs a rectangular site set")
        if method == "cholmod" and _cholmod_cholesky is None:
            raise SolverError("scikit-sparse is not installed")
        if method not in ("spectral", "cholmod", "dense", "splu"):
            raise InputError(f"unknown solver backend {method!r}")
        self.method = method
        self._rect_shape = (h - 2, w - 2) if rect else None

    @property
    def n(self) -> int:
        return int(self.interior.size)

    # ----- structure -------------------------------------------------------
    @cached_property
    def _position(self) -> dict:
        return {int(k): p for p, k in enumerate(self.interior)}

    def local_index(self, x) -> int:
        k = self.domain.index(x)
        try:
            return self._position[k]
        except KeyError:
            raise GeometryError(f"site {tuple(x)} is not interior to the set") from None

    @cached_property
    def _links(self):
        """(interior->interior pairs, interior->boundary pairs) as local indices."""
        S = self.domain.side
        full = np.full(self.domain.n_sites, -1, dtype=np.int64)
        full[self.interior] = np.arange(self.n)
        bpos = np.full(self.domain.n_sites, -1, dtype=np.int64)
        bpos[self.boundary] = np.arange(self.boundary.size)
        ii, bb, ia, ib = [], [], [], []
        for dx, dy in NEIGHBOR_OFFSETS:
            nb = self.interior + dx * S + dy
            a = full[nb]
            m = a >= 0
            ia.append(np.flatnonzero(m))
            ib.append(a[m])
            b = bpos[nb]
            m = b >= 0
            ii.append(np.flatnonzero(m))
            bb.append(b[m])
        return (np.concatenate(ia), np.concatenate(ib)), (np.concatenate(ii), np.concatenate(bb))

    @cached_property
    def L(self) -> sp.csc_matrix:
        (r, c), _ = self._links
        A = sp.csc_matrix((np.ones(r.size), (r, c)), shape=(self.n, self.n))
        return (4.0 * sp.identity(self.n, format="csc") - A).tocsc()

    @cached_property
    def B(self) -> sp.csr_matrix:
        """Interior-by-boundary adjacency (counts edges from interior to boundary)."""
        _, (r, c) = self._links
        return sp.csr_matrix((np.ones(r.size), (r, c)), shape=(self.n, self.boundary.size))

    @cached_property
    def _eig(self):
        h, w = self._rect_shape
        j = np.arange(1, h + 1)
        k = np.arange(1, w + 1)
        lam = (4.0 - 2.0 * np.cos(np.pi * j / (h + 1)))[:, None] - 2.0 * np.cos(np.pi * k / (w + 1))[None, :]
        return lam

    @cached_property
    def _factor(self):
        try:
            if self.method == "cholmod":
                return _cholmod_cholesky(self.L)
            if self.method == "dense":
                return sla.cholesky(self.L.toarray(), lower=True)
            if self.method == "splu":
                lu = spla.splu(self.L, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                               options={"SymmetricMode": True})
                return lu
        except Exception as exc:  # factorization failure
            raise SolverError(f"factorization failed ({self.method}): {exc}") from None
        return None

    # ----- linear algebra --------------------------------------------------
    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.L @ x

    def _to_rect(self, b):
        h, w = self._rect_shape
        return b.reshape((h, w) + b.shape[1:]) if b.ndim == 1 else b.T.reshape((-1, h, w))

    def solve(self, b: np.ndarray, method: str | None = None) -> np.ndarray:
        """Solve L x = b for b of shape (n,) or (n, k)."""
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise InputError(f"right-hand side has {b.shape[0]} rows, expected {self.n}")
        method = method or self.method
        if method == "cg":
            cols = b[:, None] if b.ndim == 1 else b
            out = np.empty_like(cols)
            for k in range(cols.shape[1]):
                x, info = spla.cg(self.L, cols[:, k], rtol=1e-14, atol=0.0, maxiter=20 * self.n)
                if info != 0:
                    raise SolverError(f"conjugate gradient did not converge (info={info})")
                out[:, k] = x
            return out[:, 0] if b.ndim == 1 else out
        if method == "spectral":
            if b.ndim == 1:
                r = self._to_rect(b)
                x = sfft.idstn(sfft.dstn(r, type=1, norm="ortho") / self._eig, type=1, norm="ortho")
                return x.ravel()
            r = self._to_rect(b)
            x = sfft.idstn(sfft.dstn(r, type=1, norm="ortho", axes=(1, 2)) / self._eig,
                           type=1, norm="ortho", axes=(1, 2))
            return x.reshape(x.shape[0], -1).T
        f = self._factor
        if method == "cholmod":
            return f(b)
        if method == "dense":
            return sla.cho_solve((f, True), b)
        return f.solve(b)

    def residual(self, x: np.ndarray, b: np.ndarray) -> float:
        return float(np.max(np.abs(self.L @ x - b)))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Exact draws with covariance L^{-1}: shape (n,) or (size, n)."""
        k = 1 if size is None else int(size)
        if self.method == "spectral":
            h, w = self._rect_shape
            z = rng.standard_normal((k, h, w))
            x = sfft.idstn(z / np.sqrt(self._eig), type=1, norm="ortho", axes=(1, 2))
            x = x.reshape(k, -1)
        else:
            z = rng.standard_normal((self.n, k))
            x = self._transposed_factor_solve(z).T
        return x[0] if size is None else x

    def _transposed_factor_solve(self, z):
        f = self._factor
        if self.method == "cholmod":
            return f.apply_Pt(f.solve_Lt(z, use_LDLt_decomposition=False))
        if self.method == "dense":
            return sla.solve_triangular(f, z, lower=True, trans="T")
        # splu in symmetric mode: Pr A Pr^T = L U with U = D L^T
        if not np.array_equal(f.perm_r, f.perm_c):
            raise SolverError("sparse LU did not keep a symmetric ordering")
        U = f.U.tocsr()
        d = U.diagonal()
        if np.any(d <= 0):
            raise SolverError("LU factor has non-positive pivots; matrix not positive definite")
        y = spla.spsolve_triangular(U, np.sqrt(d)[:, None] * z, lower=False)
        return y[f.perm_r]

    # ----- field helpers ---------------------------------------------------
    def embed(self, interior_values: np.ndarray, boundary_values=None) -> np.ndarray:
        """Full-domain array (zeros outside the set) with the given interior values."""
        out = np.zeros(self.domain.n_sites)
        out[self.interior] = interior_values
        if boundary_values is not None:
            out[self.boundary] = boundary_values
        return out.reshape(self.domain.shape)


@dataclass(frozen=True)
class GreensColumn:
    source: tuple
    values: np.ndarray  # aligned with op.interior
    op: DirichletOperator

    def __getitem__(self, x) -> float:
        return float(self.values[self.op.local_index(x)])

    def on_grid(self) -> np.ndarray:
        return self.op.embed(self.values)


def greens_column(op: DirichletOperator, source, method: str | None = None) -> GreensColumn:
    k = op.local_index(source)
    e = np.zeros(op.n)
    e[k] = 1.0
    g = op.solve(e, method=method)
    res = op.residual(g, e)
    if not np.all(np.isfinite(g)) or res > RESIDUAL_TOL:
        raise SolverError(f"Green's function solve residual {res:.3e} exceeds {RESIDUAL_TOL}")
    return GreensColumn(tuple(source), g, op)


def gff_variance(op: DirichletOperator, x) -> float:
    return greens_column(op, x)[x]


def _boundary_vector(op: DirichletOperator, boundary_values) -> np.ndarray:
    if isinstance(boundary_values, dict):
        pos = {op.domain.index(k): v for k, v in boundary_values.items()}
        missing = [op.domain.site(b) for b in op.boundary if int(b) not in pos]
        if missing:
            raise InputError(f"boundary data missing at {len(missing)} sites, e.g. {missing[:3]}")
        return np.array([pos[int(b)] for b in op.boundary], dtype=float)
    f = np.asarray(boundary_values, dtype=float)
    if f.shape == op.domain.shape:
        return f.reshape(-1)[op.boundary]
    if f.shape != (op.boundary.size,):
        raise InputError(f"boundary data has shape {f.shape}, expected ({op.boundary.size},)")
    return f


def harmonic_extension(op: DirichletOperator, boundary_values) -> np.ndarray:
    """Discrete harmonic extension; returned as a full-domain array, zero off the set.

    ``boundary_values`` is a dict site -> value, an array aligned with
    ``op.boundary``, or a full-domain array (only its boundary entries are read).
    """
    f = _boundary_vector(op, boundary_values)
    rhs = op.B @ f
    h = op.solve(rhs)
    res = op.residual(h, rhs)
    if res > RESIDUAL_TOL * max(1.0, float(np.abs(f).max(initial=0.0))):
        raise SolverError(f"harmonic extension residual {res:.3e}")
    return op.embed(h, f)


def harmonic_measure(domain: LatticeDomain, ball: SiteSet, center, op: DirichletOperator | None = None
                     ) -> HarmonicWeights:
    """Exit distribution on the boundary of ``ball`` of simple random walk from ``center``.

    a(v, y) = sum over interior neighbours z of y of G(v, z), with G = L^{-1}
    (G counts expected visits divided by 4, and each visit to z leaves through
    the edge z -> y with probability 1/4).
    """
    if ball.domain != domain:
        raise GeometryError("ball belongs to a different domain")
    if not ball.contains(center):
        raise GeometryError(f"center {tuple(center)} is not in the ball")
    if ball.is_boundary(center):
        raise GeometryError(f"center {tuple(center)} lies on the boundary of the ball")
    op = op or DirichletOperator(ball)
    g = greens_column(op, center).values
    a = op.B.T @ g
    s = a.sum()
    if not abs(s - 1.0) <= 1e-9:
        raise SolverError(f"harmonic measure sums to {s!r}")
    return HarmonicWeights.build(domain, op.boundary, a, kind="harmonic_measure",
                                 center=tuple(int(c) for c in center))


def sample_exact_gff(op: DirichletOperator, rng: np.random.Generator, seed: int = 0) -> FieldState:
    """One exact zero-boundary GFF draw on the set, as a FieldState on the domain."""
    x = op.sample(rng)
    st = FieldState(op.domain, op.embed(x), seed=seed)
    st.lineage["sampler"] = "exact"
    return st


def sample_exact_gff_batch(op: DirichletOperator, rng: np.random.Generator, size: int) -> np.ndarray:
    """Batch of exact draws as full-domain arrays of shape (size, side, side)."""
    x = op.sample(rng, size)
    out = np.zeros((int(size), op.domain.n_sites))
    out[:, op.interior] = x
    return out.reshape((int(size),) + op.domain.shape)
