"""Truncated counts of multiscale high points and tile statistics.

Both need smoothed harmonic averages at many centres.  They are evaluated one
radius at a time: circle averages C_r(v) for all v at once (an FFT correlation
of the field with the canonical harmonic measure of radius r, or a direct gather
when only few centres need r), then scattered into the per-centre windows.
"""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np
from scipy import fft as sfft
from scipy import stats as sst

from .. import _core
from ..errors import GeometryError, ParameterError
from ..harmonic import MEASURE_CACHE, SmoothingWindow, build_schedule
from ..lattice import LatticeDomain, l1_radius_steps
from ..store import Ensemble
from . import data
from .extremes import _g
from .stats import N_BOOT, Check, Estimate, ExperimentReport, bootstrap, estimate_from_boot, fisher_z, inflation


class AverageScanner:
    """Weighted sums of circle averages, sum_r f_{v,s}(r) C_r(v), for centres v and slots s."""

    # cost model per field: direct ~ DIRECT_NS * (support x centres), FFT ~ FFT_NS * side^2
    DIRECT_NS = 1.5
    FFT_NS = 25.0

    def __init__(self, domain: LatticeDomain, centers: np.ndarray, n_slots: int, backend: str | None = None):
        self.domain = domain
        self._gather = _core.get_gather(backend if backend else _core.BACKEND)
        self.centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
        self.n_slots = int(n_slots)
        S = domain.side
        self.pos = (self.centers[:, 0] + domain.N) * S + (self.centers[:, 1] + domain.N)
        self._parts = defaultdict(list)
        self._plan = None

    def add(self, center_ids, slot: int, window: SmoothingWindow):
        """Give slot ``slot`` of the listed centres the window's radii and weights."""
        ids = np.asarray(center_ids, dtype=np.int64)
        if window.inner < 2:
            raise GeometryError(f"window around R={window.R:.3g} contains radius {window.inner} < 2")
        far = np.max(np.abs(self.centers[ids]), axis=1) + l1_radius_steps(window.outer)
        if np.any(far > self.domain.N):
            raise GeometryError(f"window with outer radius {window.outer} leaves D_{self.domain.N}")
        for r, f in zip(window.radii, window.weights):
            self._parts[int(r)].append((ids * self.n_slots + slot, ids, np.full(ids.size, f)))

    def _finalize(self):
        plan = []
        S = self.domain.side
        for r in sorted(self._parts):
            rows, ids, w = (np.concatenate(a) for a in zip(*self._parts[r]))
            di, dj, hw = MEASURE_CACHE.get(l1_radius_steps(r))
            uniq, inv = np.unique(ids, return_inverse=True)
            direct = self.DIRECT_NS * hw.size * uniq.size < self.FFT_NS * S * S
            plan.append((r, rows, inv, w, uniq, (di, dj, hw), direct))
        self._plan = plan
        self._parts = None

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        """(b, n_centers, n_slots) values for a batch of (side, side) fields."""
        if self._plan is None:
            self._finalize()
        b = batch.shape[0]
        S = self.domain.side
        flat = np.ascontiguousarray(batch, dtype=float).reshape(b, -1)
        out = np.zeros((b, self.centers.shape[0] * self.n_slots))
        fhat = None
        for r, rows, inv, w, uniq, (di, dj, hw), direct in self._plan:
            pos = self.pos[uniq]
            if direct:
                vals = np.empty((b, pos.size))
                self._gather(flat, pos, (di * S + dj).astype(np.int64), hw, vals)
            else:
                if fhat is None:
                    fhat = sfft.rfft2(batch, axes=(1, 2))
                ker = np.zeros((S, S))
                ker[(-di) % S, (-dj) % S] = hw
                conv = sfft.irfft2(fhat * sfft.rfft2(ker)[None], s=(S, S), axes=(1, 2))
                vals = conv.reshape(b, -1)[:, pos]
            out[:, rows] += vals[:, inv] * w
        return out.reshape(b, -1, self.n_slots)


def centre_grid(N: int, stride: int, frac: float = 0.9) -> np.ndarray:
    """Sites of [-frac N, frac N]^2 on the sub-lattice stride * Z^2 (through the origin)."""
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    L = int(math.floor(frac * N + 1e-9))
    a = np.arange(-(L // stride) * stride, L + 1, stride)
    X1, X2 = np.meshgrid(a, a, indexing="ij")
    return np.stack([X1.ravel(), X2.ravel()], axis=1)


def increment_scanner(domain: LatticeDomain, centers: np.ndarray, K: int, eps: float, c: float,
                      window_width=None, min_half_width: float = 0.5):
    """Scanner whose slots (2m-2, 2m-1) hold X_{r_a(m),+} and X_{r_a(m-1),-}."""
    sc = AverageScanner(domain, centers, 2 * K)
    Delta = domain.N - np.max(np.abs(centers), axis=1)
    schedules = {}
    for D in np.unique(Delta):
        ids = np.flatnonzero(Delta == D)
        sch = build_schedule(float(D), eps, c, window_width, min_half_width)
        if sch.M < K:
            raise ParameterError(f"schedule at Delta={D} has M={sch.M} < K={K}")
        schedules[int(D)] = sch
        for m in range(1, K + 1):
            sc.add(ids, 2 * (m - 1), sch.window(sch.macro_index(m, K), "+"))
            sc.add(ids, 2 * (m - 1) + 1, sch.window(sch.macro_index(m - 1, K), "-"))
    return sc, schedules


def _power(N: int, a: float) -> float:
    """N^a, inf on overflow."""
    x = a * math.log(N)
    return math.inf if x > 709 else math.exp(x)


def truncated_count(ens: Ensemble, beta: float, K: int, g, *, mode: str = "maximum", eta: float | None = None,
                    eps: float = 0.1, c: float = 0.15, stride: int = 1, window_width=None,
                    min_half_width: float = 0.5, batch: int = 16, n_boot: int = N_BOOT, seed: int = 0,
                    slack: float = 3.0) -> ExperimentReport:
    """Z = s^2 #{v on the stride-s grid of [-0.9N, 0.9N]^2 : every U_m(v) lies in its window}.

    Windows are [(1-beta), (1+beta)] * 2 sqrt(g) log N / K (``mode='maximum'``)
    or [eta (1+beta), eta (1+2 beta)] * 2 sqrt(g) log N / K (``mode='high_points'``).
    """
    if not beta > 0:
        raise ParameterError("beta must be positive")
    if mode not in ("maximum", "high_points"):
        raise ParameterError(f"unknown mode {mode!r}")
    if mode == "high_points" and not (eta is not None and 0 < eta < 1):
        raise ParameterError("high_points mode needs eta in (0, 1)")
    g = _g(g)
    N = ens.N
    unit = 2 * math.sqrt(g) * math.log(N) / K
    lo, hi = ((1 - beta) * unit, (1 + beta) * unit) if mode == "maximum" else \
        (eta * (1 + beta) * unit, eta * (1 + 2 * beta) * unit)
    centers = centre_grid(N, stride)
    sc, schedules = increment_scanner(ens.domain, centers, K, eps, c, window_width, min_half_width)

    def count(b):
        v = sc(b)
        U = v[..., 0::2] - v[..., 1::2]
        return ((U >= lo) & (U <= hi)).all(axis=2).sum(axis=1)

    Z = ens.map_batches(count, batch).astype(float) * stride ** 2
    n = Z.size
    ess = data.series_ess(ens, Z)
    s = inflation(n, ess)
    rep = ExperimentReport("truncated-count", {"N": N, "beta": beta, "K": K, "g": g, "mode": mode, "eta": eta,
                                               "eps": eps, "c": c, "stride": stride, "window": [lo, hi],
                                               "n_centers": int(centers.shape[0]), "n_boot": n_boot,
                                               "seed": seed},
                           inputs=[data.describe(ens)])
    EZ, EZ2, P1 = float(Z.mean()), float(np.mean(Z ** 2)), float(np.mean(Z >= 1))
    reps = bootstrap(Z, lambda b: np.stack([b.mean(axis=1), (b ** 2).mean(axis=1), (b >= 1).mean(axis=1)],
                                           axis=1), n_boot, seed)
    rep.estimates["mean_Z"] = estimate_from_boot(EZ, reps[:, 0], s)
    rep.estimates["mean_Z2"] = estimate_from_boot(EZ2, reps[:, 1], s)
    bench = _power(N, 17 * beta)
    if P1 > 0:
        rep.estimates["P_Z_ge_1"] = estimate_from_boot(P1, reps[:, 2], s)
    else:
        rep.estimates["P_Z_ge_1"] = Estimate(0.0, ci=(0.0, 3.0 / ess))
        rep.flags.append("all counts are zero; P(Z >= 1) reported by its one-sided 95% upper bound 3/n")
    if EZ > 0:
        with np.errstate(divide="ignore", invalid="ignore"):
            rr = reps[:, 1] / reps[:, 0] ** 2
            pzr = reps[:, 2] - reps[:, 0] ** 2 / reps[:, 1]
        ratio = EZ2 / EZ ** 2
        rep.estimates["second_moment_ratio"] = estimate_from_boot(ratio, rr, s)
        d = P1 - EZ ** 2 / EZ2
        de = estimate_from_boot(d, pzr, s)
        rep.estimates["paley_zygmund_margin"] = de
        rep.checks.append(Check("paley_zygmund", d >= -slack * (de.se if np.isfinite(de.se) else 0.0), d, 0.0,
                                "P(Z >= 1) - E[Z]^2 / E[Z^2] >= -3 SE"))
        rep.checks.append(Check("second_moment_ratio_bound", ratio <= bench, ratio, bench,
                                f"E[Z^2] / E[Z]^2 <= N^(17 beta) = {bench:.4g}"))
    else:
        rep.checks.append(Check("paley_zygmund", True, None, 0.0, "vacuous: all counts are zero"))
        rep.checks.append(Check("second_moment_ratio_bound", False, None, bench,
                                "undefined: all counts are zero"))
    rep.estimates["first_moment_reference"] = Estimate(_power(N, -5 * beta), exact=True)
    rep.estimates["second_moment_reference"] = Estimate(_power(N, 2 / K + 6 * beta), exact=True)
    rep.estimates["ess"] = Estimate(ess, exact=True)
    rep.parameters["schedule_M_range"] = [min(s_.M for s_ in schedules.values()),
                                          max(s_.M for s_ in schedules.values())]
    rep.rows = [{"sample": i, "Z": float(z)} for i, z in enumerate(Z)]
    return rep


# ---------------------------------------------------------------- tiles
def tiling(N: int, eta_tile: float):
    """Side l and grid origin of the m x m tiling of D_N by boxes of side ~N^(1 - eta)."""
    side = 2 * N + 1
    m = max(1, int(math.floor(side / N ** (1 - eta_tile) + 1e-9)))
    ell = side // m
    return m, ell, (side - m * ell) // 2


def tile_decoupling(ens: Ensemble, eta_tile: float, beta: float, g, *, eps: float = 0.1, stride: int = 1,
                    batch: int = 16, n_boot: int = N_BOOT, seed: int = 0, slack: float = 3.0
                    ) -> ExperimentReport:
    """S_i = max over the half-size sub-box of tile i of phi(v) - X_{R,-}(v), R = l/4.

    Reports correlations of S_i across non-adjacent tiles (Fisher z with a
    Bonferroni correction over pairs at the 3 sigma level) and
    P(max_{i <= k} S_i >= (1 - 2 beta)(1 - eta) 2 sqrt(g) log N) over nested
    sets of the first k tiles.
    """
    g = _g(g)
    N = ens.N
    m, ell, off = tiling(N, eta_tile)
    if ell < 16:
        raise GeometryError(f"tiles of side {ell} hold fewer than 16^2 sites")
    R = ell / 4
    win = SmoothingWindow(R * (1 - eps ** 3), eps ** 4, min_half_width=0.5)
    centers, tile_of = [], []
    for a in range(m):
        for b in range(m):
            ca = off + a * ell + (ell - 1) / 2 - N
            cb = off + b * ell + (ell - 1) / 2 - N
            ra = np.arange(math.ceil(ca - ell / 4), math.floor(ca + ell / 4) + 1, stride)
            rb = np.arange(math.ceil(cb - ell / 4), math.floor(cb + ell / 4) + 1, stride)
            A, B = np.meshgrid(ra, rb, indexing="ij")
            centers.append(np.stack([A.ravel(), B.ravel()], axis=1))
            tile_of.append(np.full(A.size, a * m + b))
    centers = np.concatenate(centers)
    tile_of = np.concatenate(tile_of)
    sc = AverageScanner(ens.domain, centers, 1)
    sc.add(np.arange(centers.shape[0]), 0, win)
    S = ens.domain.side
    pos = (centers[:, 0] + N) * S + (centers[:, 1] + N)
    order = np.argsort(tile_of, kind="stable")
    starts = np.flatnonzero(np.r_[True, np.diff(tile_of[order]) != 0])

    def stat(b):
        x = b.reshape(b.shape[0], -1)[:, pos] - sc(b)[..., 0]
        return np.maximum.reduceat(x[:, order], starts, axis=1)

    Smax = ens.map_batches(stat, batch)
    n, T = Smax.shape
    ess = float(ens.ess() or n)
    thr = (1 - 2 * beta) * (1 - eta_tile) * 2 * math.sqrt(g) * math.log(N)
    rep = ExperimentReport("tiles", {"N": N, "eta_tile": eta_tile, "beta": beta, "g": g, "m_per_axis": m,
                                     "tile_side": ell, "R": R, "eps": eps, "stride": stride, "threshold": thr,
                                     "n_boot": n_boot, "seed": seed},
                           inputs=[data.describe(ens)])
    idx = [(i // m, i % m) for i in range(T)]
    pairs = [(i, j) for i in range(T) for j in range(i + 1, T)
             if max(abs(idx[i][0] - idx[j][0]), abs(idx[i][1] - idx[j][1])) >= 2]
    if pairs:
        C = np.corrcoef(Smax, rowvar=False)
        zs = np.array([fisher_z(C[i, j], ess) for i, j in pairs])
        crit = float(sst.norm.isf(sst.norm.sf(slack) / len(pairs)))
        rep.estimates["mean_correlation"] = Estimate(float(np.mean([C[i, j] for i, j in pairs])),
                                                     1 / math.sqrt(max(ess - 3, 1)) / math.sqrt(len(pairs)))
        rep.estimates["max_abs_z"] = Estimate(float(np.abs(zs).max()), exact=True)
        rep.checks.append(Check("non_adjacent_uncorrelated", bool(np.all(np.abs(zs) <= crit)),
                                float(np.abs(zs).max()), crit,
                                f"{len(pairs)} pairs, Bonferroni-adjusted {slack} sigma"))
        for (i, j), z in zip(pairs, zs):
            rep.rows.append({"tile_i": i, "tile_j": j, "correlation": float(C[i, j]), "fisher_z": float(z)})
    else:
        rep.flags.append("no pair of non-adjacent tiles")
    run = np.maximum.accumulate(Smax, axis=1)
    p = (run >= thr).mean(axis=0)
    for k in range(T):
        rep.rows.append({"tiles": k + 1, "P_max_ge_threshold": float(p[k])})
    rep.checks.append(Check("exceedance_non_decreasing_in_tiles", bool(np.all(np.diff(p) >= 0)),
                            float(np.min(np.diff(p))) if T > 1 else 0.0, 0.0))
    pm = float(p[-1])
    rep.estimates["P_max_ge_threshold"] = Estimate(pm, math.sqrt(pm * (1 - pm) / ess))
    rep.estimates["ess"] = Estimate(ess, exact=True)
    return rep
