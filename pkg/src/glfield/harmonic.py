"""Multiscale harmonic averages of fields.

* circle averages C_r(v, phi) = sum_y a_{B_r(v)}(v, y) phi(y) over the l1 ball
  B_r(v) = {|x - v|_1 < r};
* smoothed averages X_R = sum_r f(r) C_r over the integer radii of a window
  around R with a normalised raised-cosine taper f;
* the geometric schedule r_k = (1 + eps)^(-k) Delta with r_{k,+-} = (1 +- eps^3) r_k;
* increments U_m and the W / Y / Z telescoping decomposition.

Harmonic measures depend only on the ball's shape, i.e. on n = ceil(r) - 1, so
they are computed once per n in a canonical frame and translated.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError, ParameterError
from .laplace import DirichletOperator, harmonic_extension, harmonic_measure
from .lattice import LatticeDomain, build_box, l1_ball, l1_radius_steps
from .weights import HarmonicWeights

__all__ = [
    "HarmonicWeights", "SmoothingWindow", "ScaleSchedule", "build_schedule", "circle_average",
    "circle_weights", "smoothed_average", "smoothed_weights", "increments", "increment_kernel",
    "increment_kernels", "telescoping_values", "harmonic_test_family", "MEASURE_CACHE",
]


class HarmonicMeasureCache:
    """Canonical harmonic measures of l1 balls, keyed by the extent n.

    Read-mostly: lookups take no lock; a miss computes under a per-cache lock so
    each key is inserted once.
    """

    def __init__(self):
        self._data: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def get(self, n: int):
        hit = self._data.get(n)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._data.get(n)
            if hit is None:
                if n < 1:
                    raise GeometryError("balls of radius <= 1 have their center on the boundary")
                dom = build_box(n + 1)
                hm = harmonic_measure(dom, l1_ball(dom, (0, 0), n + 0.5), (0, 0))
                di, dj = np.divmod(hm.indices, dom.side)
                hit = (di - (n + 1), dj - (n + 1), hm.weights)
                for a in hit:
                    a.flags.writeable = False
                self._data[n] = hit
            return hit

    def __len__(self):
        return len(self._data)

    def clear(self):
        with self._lock:
            self._data.clear()


MEASURE_CACHE = HarmonicMeasureCache()


def _check_ball(domain: LatticeDomain, v, r: float) -> int:
    n = l1_radius_steps(r)
    if not domain.contains(v) or max(abs(v[0]), abs(v[1])) + n > domain.N:
        raise GeometryError(f"ball of radius {r} at {tuple(v)} leaves D_{domain.N}")
    return n


def circle_weights(domain: LatticeDomain, v, r: float) -> HarmonicWeights:
    """Harmonic measure of B_r(v) seen from v, as weights on the domain."""
    n = _check_ball(domain, v, r)
    di, dj, w = MEASURE_CACHE.get(n)
    S = domain.side
    idx = (di + v[0] + domain.N) * S + (dj + v[1] + domain.N)
    return HarmonicWeights.build(domain, idx, w, kind="harmonic_measure", center=tuple(v), radius=float(r))


def _values(field):
    return np.asarray(getattr(field, "values", field))


def circle_average(field, v, r: float) -> float:
    a = _values(field)
    dom = getattr(field, "domain", None) or LatticeDomain((a.shape[0] - 1) // 2)
    return circle_weights(dom, v, r).apply(a)


@dataclass(frozen=True)
class SmoothingWindow:
    """Integer radii in [R - h, R + h], h = max(w R, min_half_width), rounded inward.

    Weights follow the raised cosine 1 + cos(pi (r - R) / (h + 1)), normalised to
    sum to one (strictly positive on the window).
    """

    R: float
    w: float
    taper: str = "raised_cosine"
    min_half_width: float = 0.0

    def __post_init__(self):
        if not self.R > 0:
            raise ParameterError(f"window radius must be positive, got {self.R}")
        if not 0 <= self.w < 1:
            raise ParameterError(f"relative width must lie in [0, 1), got {self.w}")
        if self.taper not in ("raised_cosine", "flat"):
            raise ParameterError(f"unknown taper {self.taper!r}")
        if self.radii.size == 0:
            raise ParameterError(f"window around R={self.R} with width {self.w} contains no integer radius")

    @property
    def half_width(self) -> float:
        return max(self.w * self.R, self.min_half_width)

    @cached_property
    def radii(self) -> np.ndarray:
        h = self.half_width
        lo = math.ceil(self.R - h - 1e-9)
        hi = math.floor(self.R + h + 1e-9)
        return np.arange(max(lo, 1), hi + 1, dtype=np.int64)

    @cached_property
    def weights(self) -> np.ndarray:
        r = self.radii.astype(float)
        if self.taper == "flat" or r.size == 1:
            f = np.ones_like(r)
        else:
            f = 1.0 + np.cos(np.pi * (r - self.R) / (self.half_width + 1.0))
        return f / f.sum()

    @property
    def outer(self) -> int:
        return int(self.radii[-1])

    @property
    def inner(self) -> int:
        return int(self.radii[0])


def smoothed_weights(domain: LatticeDomain, v, window: SmoothingWindow) -> HarmonicWeights:
    _check_ball(domain, v, window.outer)
    parts = [circle_weights(domain, v, float(r)) for r in window.radii]
    if len(parts) == 1:
        hw = parts[0]
        return HarmonicWeights.build(domain, hw.indices, hw.weights * window.weights[0], kind="smoothed",
                                     center=tuple(v), R=window.R)
    idx = np.concatenate([p.indices for p in parts])
    w = np.concatenate([f * p.weights for f, p in zip(window.weights, parts)])
    return HarmonicWeights.build(domain, idx, w, kind="smoothed", center=tuple(v), R=window.R)


def smoothed_average(field, v, window: SmoothingWindow) -> float:
    a = _values(field)
    dom = getattr(field, "domain", None) or LatticeDomain((a.shape[0] - 1) // 2)
    if window.radii.size == 1:
        return circle_average(field, v, float(window.radii[0]))
    return smoothed_weights(dom, v, window).apply(a)


# ---------------------------------------------------------------- schedules
@dataclass(frozen=True)
class ScaleSchedule:
    Delta: float
    eps: float
    c: float
    M: int
    r: np.ndarray
    r_plus: np.ndarray
    r_minus: np.ndarray
    window_width: float
    min_half_width: float
    index_rule: str = "floor"
    notes: list = field(default_factory=list)

    def window(self, k: int, sign: str) -> SmoothingWindow:
        R = {"+": self.r_plus, "-": self.r_minus}[sign][k]
        return SmoothingWindow(float(R), self.window_width, min_half_width=self.min_half_width)

    def macro_index(self, m: int, K: int) -> int:
        return (m * self.M) // K

    def describe(self) -> dict:
        return {"Delta": self.Delta, "eps": self.eps, "c": self.c, "M": self.M,
                "window_width": self.window_width, "min_half_width": self.min_half_width,
                "index_rule": self.index_rule, "notes": list(self.notes)}


def build_schedule(Delta: float, eps: float, c: float, window_width: float | None = None,
                   min_half_width: float = 0.5) -> ScaleSchedule:
    """Geometric radii r_k = (1+eps)^-k Delta, k = 0..M, M = floor((1-c) log Delta / log(1+eps)).

    Windows around r_{k,+-} have relative width ``window_width`` (default eps^4)
    and at least ``min_half_width`` in absolute terms, so each holds an integer
    radius.  Consecutive windows must be separated:
    (1 + 2w) r_{k+1,+} < (1 - 2w) r_{k,-}.
    """
    if not 0 < eps <= 0.2:
        raise ParameterError(f"eps must lie in (0, 0.2], got {eps}")
    if not 0 < c < 1:
        raise ParameterError(f"c must lie in (0, 1), got {c}")
    if not Delta >= (1 + eps) ** 2:
        raise ParameterError(f"Delta={Delta} too small for eps={eps} (need M >= 1)")
    w = eps ** 4 if window_width is None else float(window_width)
    M = int(math.floor((1 - c) * math.log(Delta) / math.log(1 + eps) + 1e-12))
    if M < 1:
        raise ParameterError(f"schedule has M={M} < 1")
    k = np.arange(M + 1)
    r = Delta * (1 + eps) ** (-k.astype(float))
    rp = (1 + eps ** 3) * r
    rm = (1 - eps ** 3) * r
    sep = (1 + 2 * w) * rp[1:] < (1 - 2 * w) * rm[:-1]
    if not sep.all():
        bad = int(np.argmin(sep))
        raise ParameterError(f"scales {bad} and {bad + 1} are not separated for window width {w}")
    notes = []
    if w * rm[-1] < 0.5 or min_half_width > 0:
        notes.append("windows widened to absolute half width >= min_half_width where w*r is smaller")
    return ScaleSchedule(float(Delta), float(eps), float(c), M, r, rp, rm, w, float(min_half_width),
                         notes=notes)


# ---------------------------------------------------------------- increments
def _x_weights(domain, v, schedule, k, sign):
    return smoothed_weights(domain, v, schedule.window(k, sign))


def increment_kernels(domain: LatticeDomain, v, schedule: ScaleSchedule, K: int) -> list[HarmonicWeights]:
    """rho_m with <rho_m, phi> = U_m(v) = X_{r_a(m),+} - X_{r_a(m-1),-}, a(m) = floor(mM/K)."""
    if not isinstance(K, (int, np.integer)) or K < 2:
        raise ParameterError(f"K must be an integer >= 2, got {K}")
    if K > schedule.M:
        raise ParameterError(f"K={K} exceeds M={schedule.M}")
    out = []
    for m in range(1, K + 1):
        hi = _x_weights(domain, v, schedule, schedule.macro_index(m, K), "+")
        lo = _x_weights(domain, v, schedule, schedule.macro_index(m - 1, K), "-")
        out.append(hi.combine(lo, 1.0, -1.0, kind="increment", m=m, center=tuple(v)))
    return out


def increments(field, v, schedule: ScaleSchedule, K: int) -> np.ndarray:
    a = _values(field)
    dom = getattr(field, "domain", None) or LatticeDomain((a.shape[0] - 1) // 2)
    return np.array([rho.apply(a) for rho in increment_kernels(dom, v, schedule, K)])


def increment_kernel(domain: LatticeDomain, v, R1: float, R2: float, windows=0.0,
                     min_half_width: float = 0.0) -> HarmonicWeights:
    """rho with <rho, phi> = X_{R2}(v) - X_{R1}(v) for R1 > R2.

    ``windows`` is a relative width shared by both windows or a pair of
    SmoothingWindow objects.  Requires (1 + 2w) R1 < dist(v, boundary) and
    (1 + 2w) R2 < (1 - 2w) R1.
    """
    from .lattice import dist_to_boundary

    if isinstance(windows, (tuple, list)):
        w1, w2 = windows
        eps = max(w1.w, w2.w)
    else:
        eps = float(windows)
        w1 = SmoothingWindow(float(R1), eps, min_half_width=min_half_width)
        w2 = SmoothingWindow(float(R2), eps, min_half_width=min_half_width)
    if not (1 + 2 * eps) * R1 < dist_to_boundary(domain, v) + 1:
        raise ParameterError(f"outer radius {R1} too large for distance to the boundary")
    if not ((1 + 2 * eps) * R2 < (1 - 2 * eps) * R1 and w2.outer < w1.inner):
        raise ParameterError(f"radii R1={R1}, R2={R2} are not nested")
    hi = smoothed_weights(domain, v, w2)
    lo = smoothed_weights(domain, v, w1)
    return hi.combine(lo, 1.0, -1.0, kind="increment", center=tuple(v), R1=float(R1), R2=float(R2))


# ---------------------------------------------------------------- telescoping
@dataclass
class TelescopingValues:
    t: float
    log_W: np.ndarray   # j = 1..M
    log_Y: np.ndarray   # j = 1..M
    log_Z: np.ndarray   # j = 1..M
    log_start: float    # t X_{r_0,-}
    overflow: bool

    @property
    def W(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_W)

    @property
    def Y(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_Y)

    @property
    def Z(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_Z)

    def identity_error(self) -> float:
        """Relative error of log Z_M = sum_j log W_j + sum_{j<M} log Y_j + t X_{r_0,-}."""
        rhs = self.log_W.sum() + self.log_Y[:-1].sum() + self.log_start
        lhs = self.log_Z[-1]
        return abs(lhs - rhs) / max(1.0, abs(lhs))


def schedule_values(field, v, schedule: ScaleSchedule) -> tuple[np.ndarray, np.ndarray]:
    """(X_{r_k,+}, X_{r_k,-}) for k = 0..M."""
    a = _values(field)
    dom = getattr(field, "domain", None) or LatticeDomain((a.shape[0] - 1) // 2)
    xp = np.array([_x_weights(dom, v, schedule, k, "+").apply(a) if k > 0 else np.nan
                   for k in range(schedule.M + 1)])
    xm = np.array([_x_weights(dom, v, schedule, k, "-").apply(a) for k in range(schedule.M + 1)])
    return xp, xm


def telescoping_values(field, v, schedule: ScaleSchedule, t: float) -> TelescopingValues:
    """log W_j = t (X_{j,+} - X_{j-1,-}), log Y_j = t (X_{j,-} - X_{j,+}), log Z_j = t X_{j,+}."""
    if not abs(t) <= 100:
        raise ParameterError(f"|t| must be at most 100, got {t}")
    xp, xm = schedule_values(field, v, schedule)
    t = float(t)
    log_W = t * (xp[1:] - xm[:-1])
    log_Y = t * (xm[1:] - xp[1:])
    log_Z = t * xp[1:]
    big = np.log(np.finfo(float).max)
    overflow = bool(np.any(np.abs(np.concatenate([log_W, log_Y, log_Z])) > big))
    return TelescopingValues(t, log_W, log_Y, log_Z, t * xm[0], overflow)


# ---------------------------------------------------------------- test family
def harmonic_test_family(domain: LatticeDomain, n_random: int = 5, seed: int = 0) -> list[np.ndarray]:
    """{1, x1, x2, x1 x2, x1^2 - x2^2, Re and Im (x1 + i x2)^3} plus harmonic
    extensions of random boundary data, as (side, side) arrays."""
    X1, X2 = (a.astype(float) for a in domain.coordinates())
    fam = [np.ones(domain.shape), X1, X2, X1 * X2, X1 ** 2 - X2 ** 2,
           X1 ** 3 - 3 * X1 * X2 ** 2, 3 * X1 ** 2 * X2 - X2 ** 3]
    g = np.random.default_rng(seed)
    op = DirichletOperator(domain)
    for _ in range(n_random):
        fam.append(harmonic_extension(op, g.normal(size=domain.shape)))
    return fam


def kernel_matrix(kernels: list[HarmonicWeights]) -> sp.csr_matrix:
    """Stack kernels as rows of a sparse matrix over the domain's sites."""
    dom = kernels[0].domain
    rows = np.concatenate([np.full(k.indices.size, i) for i, k in enumerate(kernels)])
    cols = np.concatenate([k.indices for k in kernels])
    vals = np.concatenate([k.weights for k in kernels])
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(kernels), dom.n_sites))
