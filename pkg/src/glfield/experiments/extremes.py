"""Maxima, high points and one-point tails."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats as sst

from ..errors import InputError, ParameterError
from ..lattice import dist_to_boundary
from ..store import Ensemble
from . import data
from .stats import (N_BOOT, Check, Estimate, ExperimentReport, bootstrap, estimate_from_boot,
                    inflation)


def _g(g) -> float:
    g = float(getattr(g, "value", getattr(g, "g_hat", g)))
    if not g > 0:
        raise ParameterError(f"g must be positive, got {g}")
    return g


def _median_estimate(x, ess, n_boot, seed) -> Estimate:
    reps = bootstrap(x, lambda b: np.median(b, axis=1), n_boot, seed)
    return estimate_from_boot(float(np.median(x)), reps, inflation(x.size, ess))


def max_statistics(ens: Ensemble, g, delta: float = 0.1, *, n_boot: int = N_BOOT,
                   seed: int = 0) -> ExperimentReport:
    """Distribution of max phi / log N against 2 sqrt(g)."""
    g = _g(g)
    N = ens.N
    logN = math.log(N)
    m = data.max_values(ens) / logN
    ess = data.series_ess(ens, m)
    if ess < 100:
        raise InputError(f"effective sample size {ess:.0f} < 100")
    target = 2 * math.sqrt(g)
    med = _median_estimate(m, ess, n_boot, seed)
    corr = 0.75 * math.sqrt(g) * math.log(logN) / logN
    rep = ExperimentReport("max-statistics", {"N": N, "g": g, "delta": delta, "n_boot": n_boot,
                                              "seed": seed}, inputs=[data.describe(ens)])
    rep.estimates["median"] = med
    rep.estimates["gap"] = Estimate(med.value - target, med.se, (med.ci[0] - target, med.ci[1] - target))
    rep.estimates["median_corrected"] = Estimate(med.value + corr, med.se,
                                                 (med.ci[0] + corr, med.ci[1] + corr))
    rep.estimates["target"] = Estimate(target, exact=True)
    for name, frac in (("above", np.mean(m >= target + delta)), ("below", np.mean(m <= target - delta))):
        rep.estimates[f"fraction_{name}"] = Estimate(frac, math.sqrt(frac * (1 - frac) / ess))
    rep.estimates["ess"] = Estimate(ess, exact=True)
    rep.checks.append(Check("max_positive", bool(np.all(m > 0)), float(m.min()), 0.0))
    rep.rows = [{"sample": i, "max_over_logN": float(v)} for i, v in enumerate(m)]
    return rep


def max_scaling(ensembles: dict, g, delta: float = 0.1, *, rel_tol: float = 0.2, n_boot: int = N_BOOT,
                seed: int = 0) -> ExperimentReport:
    """max_statistics over several N with the trend of |median - 2 sqrt(g)|."""
    g = _g(g)
    target = 2 * math.sqrt(g)
    rep = ExperimentReport("max-scaling", {"g": g, "delta": delta, "rel_tol": rel_tol, "n_boot": n_boot,
                                           "seed": seed, "sizes": sorted(ensembles)})
    gaps = []
    cgaps = []
    for N in sorted(ensembles):
        r = max_statistics(ensembles[N], g, delta, n_boot=n_boot, seed=seed)
        med, cm = r.estimates["median"], r.estimates["median_corrected"]
        gaps.append(abs(med.value - target))
        cgaps.append(abs(cm.value - target))
        rep.estimates[f"median_N{N}"] = med
        rep.inputs += r.inputs
        rep.rows.append({"N": N, "median": med.value, "ci_low": med.ci[0], "ci_high": med.ci[1],
                         "target": target, "abs_gap": gaps[-1], "median_corrected": cm.value,
                         "abs_gap_corrected": cgaps[-1],
                         "fraction_above": r.estimates["fraction_above"].value,
                         "fraction_below": r.estimates["fraction_below"].value})
        rep.checks += [Check(f"{c.name}_N{N}", c.passed, c.value, c.bound) for c in r.checks]
    gaps = np.array(gaps)
    rep.checks.append(Check("abs_gap_non_increasing", bool(np.all(np.diff(gaps) <= 0)),
                            float(np.max(np.diff(gaps))) if gaps.size > 1 else 0.0, 0.0,
                            "|median - 2 sqrt(g)| by increasing N: " + ", ".join(f"{x:.4f}" for x in gaps)))
    largest = rep.rows[-1]
    rel = abs(largest["median"] - target) / target
    rep.checks.append(Check("largest_N_within_tolerance", rel <= rel_tol, rel, rel_tol))
    if not np.all(np.diff(cgaps) <= 0):
        rep.flags.append("corrected gap is not monotone either")
    return rep


def high_points(ens: Ensemble, eta: float, g, *, band=None, n_boot: int = N_BOOT,
                seed: int = 0) -> ExperimentReport:
    """log |H_N(eta)| / log N with H_N(eta) = {x : phi(x) >= 2 sqrt(g) eta log N}."""
    if not 0 < eta < 1:
        raise ParameterError(f"eta must lie in (0, 1), got {eta}")
    g = _g(g)
    N = ens.N
    logN = math.log(N)
    thr = 2 * math.sqrt(g) * eta * logN
    counts = ens.map_batches(lambda b: (b.reshape(b.shape[0], -1) >= thr).sum(axis=1)).astype(float)
    with np.errstate(divide="ignore"):
        expo = np.where(counts > 0, np.log(np.maximum(counts, 1)) / logN, -np.inf)
    ess = float(getattr(ens, "ess")() or counts.size)
    target = 2 * (1 - eta ** 2)
    rep = ExperimentReport("high-points", {"N": N, "eta": eta, "g": g, "threshold": thr, "n_boot": n_boot,
                                           "seed": seed, "band": list(band) if band else None},
                           inputs=[data.describe(ens)])
    n_zero = int(np.sum(counts == 0))
    if n_zero:
        rep.flags.append(f"{n_zero} of {counts.size} samples have no high point")
    finite = np.where(np.isfinite(expo), expo, -1e300)
    reps = bootstrap(finite, lambda b: np.median(b, axis=1), n_boot, seed)
    med = float(np.median(finite))
    if med > -1e299:
        rep.estimates["median_exponent"] = estimate_from_boot(med, reps, inflation(counts.size, ess))
    else:
        rep.estimates["median_exponent"] = Estimate(-math.inf, ci=(-math.inf, float(np.max(reps))))
    rep.estimates["target"] = Estimate(target, exact=True)
    rep.estimates["mean_count"] = Estimate(counts.mean(), counts.std(ddof=1) / math.sqrt(ess))
    if band is not None:
        v = rep.estimates["median_exponent"].value
        rep.checks.append(Check("median_in_band", band[0] <= v <= band[1], v, None, f"band {list(band)}"))
    rep.rows = [{"sample": i, "count": int(c), "exponent": float(e) if np.isfinite(e) else None}
                for i, (c, e) in enumerate(zip(counts, expo))]
    return rep


def tail_curve(ens: Ensemble, x, g, *, u_grid=None, n_grid: int = 40, oracle_variance: float | None = None,
               slack: float = 3.0) -> ExperimentReport:
    """Empirical log P(phi(x) >= u) against the bound -u^2 / (2 g log Delta).

    The grid stops where P-hat drops below 10/n; a longer requested grid is
    truncated with a flag.  With ``oracle_variance`` the curve is also compared
    to the centred Gaussian tail of that variance.
    """
    g = _g(g)
    N = ens.N
    dom = ens.domain
    Delta = dist_to_boundary(dom, x)
    if Delta < math.sqrt(N):
        raise ParameterError(f"distance to the boundary {Delta} is below sqrt(N)")
    vals = data.site_values(ens, x)
    n = vals.size
    ess = data.series_ess(ens, vals)
    srt = np.sort(vals)
    k = 10
    if n < k:
        raise InputError("too few samples for a tail curve")
    u_max = float(srt[n - k])        # P-hat(u_max) >= 10 / n
    rep = ExperimentReport("tail", {"N": N, "x": list(x), "g": g, "Delta": Delta, "slack_sigma": slack,
                                    "oracle_variance": oracle_variance}, inputs=[data.describe(ens)])
    if u_grid is None:
        grid = np.linspace(0.0, max(u_max, 0.0), n_grid)
    else:
        grid = np.asarray(u_grid, dtype=float)
        if np.any(grid > u_max):
            rep.flags.append(f"grid truncated at u = {u_max:.4g} where P-hat falls below 10/n")
            grid = grid[grid <= u_max]
    logD = math.log(Delta)
    worst = -math.inf
    ok_bound = True
    ok_oracle = True
    for u in grid:
        P = float(np.mean(vals >= u))
        se = math.sqrt(P * (1 - P) / ess)
        lse = se / P
        bound = -u * u / (2 * g * logD)
        excess = (math.log(P) - bound) / lse if lse > 0 else (math.log(P) - bound) * math.inf
        worst = max(worst, excess)
        row = {"u": float(u), "P_hat": P, "log_P_hat": math.log(P), "se_log": lse, "bound": bound,
               "excess_sigma": excess}
        if u > 0 and math.log(P) > bound + slack * lse:
            ok_bound = False
        if oracle_variance is not None:
            q = float(sst.norm.logsf(u / math.sqrt(oracle_variance)))
            pq = math.exp(q)
            lse_q = math.sqrt(pq * (1 - pq) / ess) / pq
            row["log_gaussian"] = q
            row["oracle_z"] = (math.log(P) - q) / lse_q
            if abs(math.log(P) - q) > slack * lse_q:
                ok_oracle = False
        rep.rows.append(row)
    P0 = float(np.mean(vals >= 0))
    rep.estimates["P_at_0"] = Estimate(P0, 0.5 / math.sqrt(ess))
    rep.estimates["u_max"] = Estimate(u_max, exact=True)
    rep.estimates["worst_excess_sigma"] = Estimate(worst, exact=True)
    rep.estimates["ess"] = Estimate(ess, exact=True)
    rep.checks.append(Check("P_at_0_is_half", abs(P0 - 0.5) <= slack * 0.5 / math.sqrt(ess), P0, 0.5))
    rep.checks.append(Check("below_bound", ok_bound, worst, slack,
                            "max over u > 0 of (log P-hat - bound) / SE"))
    if oracle_variance is not None:
        rep.checks.append(Check("gaussian_oracle", ok_oracle,
                                max(abs(r["oracle_z"]) for r in rep.rows), slack))
    return rep
