"""Linear functionals of the field: variance domination, log-MGFs, increments, CLT."""
from __future__ import annotations

import math

import numpy as np

from ..errors import InputError, ParameterError
from ..harmonic import ScaleSchedule, harmonic_test_family, increment_kernels, smoothed_weights
from ..laplace import DirichletOperator
from ..potential import from_spec
from ..store import Ensemble
from ..weights import HarmonicWeights, site_weights
from . import data
from .stats import (N_BOOT, Check, Estimate, ExperimentReport, bootstrap, estimate_from_boot,
                    excess_kurtosis, inflation, log_mean_exp, sample_skewness, top_weight)


def _as_weights(domain, f) -> HarmonicWeights:
    if isinstance(f, HarmonicWeights):
        if f.domain != domain:
            raise InputError("functional and ensemble live on different domains")
        return f
    return site_weights(domain, f)


def gaussian_covariance(op: DirichletOperator, fs: list[HarmonicWeights]) -> np.ndarray:
    """C_ij = f_i^T L^{-1} f_j for functionals supported anywhere on the domain.

    Boundary entries multiply pinned zeros and are dropped.
    """
    pos = {int(k): i for i, k in enumerate(op.interior)}
    B = np.zeros((op.n, len(fs)))
    for j, f in enumerate(fs):
        for k, w in zip(f.indices, f.weights):
            i = pos.get(int(k))
            if i is not None:
                B[i, j] += w
    X = np.stack([op.solve(B[:, j]) for j in range(len(fs))], axis=1)
    C = B.T @ X
    return 0.5 * (C + C.T)


def _c_minus(ens, c_minus):
    if c_minus is not None:
        return float(c_minus)
    spec = getattr(ens, "potential", None)
    if not spec:
        raise InputError("c_minus not given and the ensemble does not name its potential")
    return from_spec(spec).c_minus


def bl_check(ens: Ensemble, f, op: DirichletOperator | None = None, *, c_minus: float | None = None,
             n_boot: int = N_BOOT, seed: int = 0, slack: float = 3.0) -> ExperimentReport:
    """Var<phi, f> / Var_G<phi, f> against 1/c-, and the fourth central moment
    against 3 Var_G^2 / c-^2."""
    dom = ens.domain
    f = _as_weights(dom, f)
    op = op or DirichletOperator(dom)
    vg = float(gaussian_covariance(op, [f])[0, 0])
    if not vg > 1e-14 * max(1.0, f.l1_norm ** 2):
        raise InputError("functional has zero Gaussian variance")
    cm = _c_minus(ens, c_minus)
    x = data.linear_values(ens, f)
    ess = data.series_ess(ens, x)
    s = inflation(x.size, ess)

    def var(b):
        return np.var(b, axis=1, ddof=1)

    def m4(b):
        return np.mean((b - b.mean(axis=1, keepdims=True)) ** 4, axis=1)

    both = bootstrap(x, lambda b: np.stack([var(b), m4(b)], axis=1), n_boot, seed)
    v = float(np.var(x, ddof=1))
    ratio = estimate_from_boot(v / vg, both[:, 0] / vg, s)
    m4v = float(np.mean((x - x.mean()) ** 4))
    m4e = estimate_from_boot(m4v, both[:, 1], s)
    bound4 = 3 * vg ** 2 / cm ** 2
    rep = ExperimentReport("bl-check", {"N": ens.N, "functional": f.kind, "support": int(f.indices.size),
                                        "c_minus": cm, "n_boot": n_boot, "seed": seed, "slack_sigma": slack},
                           inputs=[data.describe(ens)])
    rep.estimates["ratio"] = ratio
    rep.estimates["var_gaussian"] = Estimate(vg, exact=True)
    rep.estimates["var"] = estimate_from_boot(v, both[:, 0], s)
    rep.estimates["fourth_moment"] = m4e
    rep.estimates["ess"] = Estimate(ess, exact=True)
    rep.checks.append(Check("variance_bound", ratio.value <= 1 / cm + slack * ratio.se, ratio.value,
                            1 / cm + slack * ratio.se, f"ratio <= 1/c- + {slack} SE"))
    rep.checks.append(Check("fourth_moment_bound", m4v <= bound4 + slack * m4e.se, m4v / bound4, 1.0,
                            "E(X - EX)^4 <= c-^-2 E_G(...)^4 = 3 Var_G^2 / c-^2"))
    return rep


# ---------------------------------------------------------------- log-MGF
def _lmgf_boot(y: np.ndarray, n_boot: int, seed: int) -> np.ndarray:
    """Bootstrap replicates of log-mean-exp for each column of y, shape (B, k)."""
    return bootstrap(y, lambda b: log_mean_exp(b, axis=1), n_boot, seed)


def mgf_check(ens: Ensemble, v, schedule: ScaleSchedule, t_grid, *, g=None, op: DirichletOperator | None = None,
              min_ess: float = 200, n_boot: int = N_BOOT, seed: int = 0, slack: float = 3.0
              ) -> ExperimentReport:
    """Empirical log E exp(t X_{r_M,+}(v)) over ``t_grid`` with bootstrap intervals.

    A value is trusted only where the top 1% of samples carry < 20% of the
    exponential mass.  The trusted points are fitted by a t^2 / 2 + b t; the
    curvature a is compared to the sample variance of X (and reported against
    (1 - c) g log Delta when g is given).  With ``op`` the curve is compared to
    the Gaussian value t^2 Var_G(X) / 2.
    """
    dom = ens.domain
    t = np.asarray(t_grid, dtype=float)
    gv = None if g is None else float(getattr(g, "value", getattr(g, "g_hat", g)))
    if gv is not None and np.any(np.abs(t) > 2 / math.sqrt(gv) + 1):
        raise ParameterError("|t| exceeds 2/sqrt(g) + 1")
    w = smoothed_weights(dom, v, schedule.window(schedule.M, "+"))
    x = data.linear_values(ens, w)
    ess = data.series_ess(ens, x)
    if ess < min_ess:
        raise InputError(f"effective sample size {ess:.0f} < {min_ess}")
    s = inflation(x.size, ess)
    y = x[:, None] * t[None, :]
    lm = log_mean_exp(y, axis=0)
    reps = _lmgf_boot(y, n_boot, seed)
    tw = np.array([top_weight(y[:, i]) for i in range(t.size)])
    reliable = tw < 0.2
    rep = ExperimentReport("mgf", {"N": ens.N, "v": list(v), "schedule": schedule.describe(),
                                   "t_grid": t.tolist(), "g": gv, "n_boot": n_boot, "seed": seed},
                           inputs=[data.describe(ens)])
    if not reliable.all():
        rep.flags.append(f"{int((~reliable).sum())} grid points dominated by the largest samples")
    var_g = None
    if op is not None:
        var_g = float(gaussian_covariance(op, [w])[0, 0])
        rep.estimates["var_gaussian"] = Estimate(var_g, exact=True)
    ok_oracle = True
    for i, ti in enumerate(t):
        e = estimate_from_boot(float(lm[i]), reps[:, i], s) if ti != 0 else Estimate(0.0, exact=True)
        row = {"t": float(ti), "log_mgf": float(lm[i]), "ci_low": e.ci[0] if e.ci else 0.0,
               "ci_high": e.ci[1] if e.ci else 0.0, "se": e.se or 0.0, "top_weight": float(tw[i]),
               "reliable": bool(reliable[i])}
        if var_g is not None:
            row["gaussian"] = 0.5 * ti * ti * var_g
            if reliable[i] and ti != 0 and abs(lm[i] - row["gaussian"]) > slack * e.se:
                ok_oracle = False
        rep.rows.append(row)
    zero = np.flatnonzero(t == 0)
    if zero.size:
        rep.checks.append(Check("zero_at_t0", bool(np.all(lm[zero] == 0.0)), float(np.max(np.abs(lm[zero]))),
                                0.0))
    use = reliable & (t != 0)
    if use.sum() >= 2:
        A = np.stack([0.5 * t[use] ** 2, t[use]], axis=1)
        pinv = np.linalg.pinv(A)
        a = float((pinv @ lm[use])[0])
        a_reps = (pinv @ reps[:, use].T)[0]
        var_reps = bootstrap(x, lambda b: np.var(b, axis=1, ddof=1), n_boot, seed)
        vx = float(np.var(x, ddof=1))
        rep.estimates["curvature"] = estimate_from_boot(a, a_reps, s)
        rep.estimates["var"] = estimate_from_boot(vx, var_reps, s)
        d = estimate_from_boot(a - vx, a_reps - var_reps, s)
        rep.estimates["curvature_minus_var"] = d
        rep.checks.append(Check("curvature_matches_variance", d.ci[0] <= 0 <= d.ci[1], d.value, None,
                                "bootstrap interval of curvature - Var(X) contains 0"))
        if gv is not None:
            ref = (1 - schedule.c) * gv * math.log(schedule.Delta)
            rep.estimates["curvature_over_reference"] = Estimate(a / ref, rep.estimates["curvature"].se / ref)
    else:
        rep.flags.append("fewer than two trusted nonzero grid points; no quadratic fit")
    if var_g is not None:
        rep.checks.append(Check("gaussian_oracle", ok_oracle, None, slack))
    rep.estimates["ess"] = Estimate(ess, exact=True)
    return rep


# ---------------------------------------------------------------- increments
def increment_gaussianity(ens: Ensemble, v, schedule: ScaleSchedule, K: int, lam_grid=None, *, g=None,
                          v2=None, schedule2: ScaleSchedule | None = None, op: DirichletOperator | None = None,
                          var_tol: float | None = None, n_boot: int = N_BOOT, seed: int = 0,
                          slack: float = 3.0) -> ExperimentReport:
    """Joint law of the increments U_1..U_K at v (and optionally at v2).

    Reports Var(U_m), excess kurtosis (checked against 0 at ``slack`` SE) and
    the joint log-MGF on ``lam_grid`` against sum lam_m^2 (g/K) log N / 2.
    With ``var_tol`` each Var(U_m) must lie within that relative distance of
    (g/K) log N; with ``op`` the empirical covariance is compared entrywise to
    rho_m^T G rho_m'.  Two-point mode (``v2``) checks that the joint log-MGF of
    (U(v1), U_{m>j}(v2)) has no cross term.
    """
    dom = ens.domain
    N = ens.N
    gv = None if g is None else float(getattr(g, "value", getattr(g, "g_hat", g)))
    kers = increment_kernels(dom, v, schedule, K)
    U = data.linear_matrix(ens, kers)
    n = U.shape[0]
    ess = min(data.series_ess(ens, U[:, m]) for m in range(K))
    s = inflation(n, ess)
    rep = ExperimentReport("increments", {"N": N, "v": list(v), "K": K, "schedule": schedule.describe(),
                                          "g": gv, "var_tol": var_tol, "n_boot": n_boot, "seed": seed,
                                          "v2": list(v2) if v2 is not None else None},
                           inputs=[data.describe(ens)])
    mom = bootstrap(U, lambda b: np.concatenate([np.var(b, axis=1, ddof=1), excess_kurtosis(b, axis=1)],
                                                axis=1), n_boot, seed)
    var = np.var(U, axis=0, ddof=1)
    kurt = excess_kurtosis(U, axis=0)
    target = gv * math.log(N) / K if gv is not None else None
    ok_k = True
    ok_v = True
    for m in range(K):
        ve = estimate_from_boot(var[m], mom[:, m], s)
        ke = estimate_from_boot(kurt[m], mom[:, K + m], s)
        rep.estimates[f"var_U{m + 1}"] = ve
        rep.estimates[f"kurtosis_U{m + 1}"] = ke
        row = {"m": m + 1, "var": ve.value, "var_se": ve.se, "kurtosis": ke.value, "kurtosis_se": ke.se}
        if abs(ke.value) > slack * ke.se:
            ok_k = False
        if target is not None:
            row["var_target"] = target
            row["var_ratio"] = ve.value / target
            if var_tol is not None and abs(ve.value / target - 1) > var_tol:
                ok_v = False
        rep.rows.append(row)
    rep.checks.append(Check("kurtosis_zero", ok_k, float(np.max(np.abs(kurt))), slack,
                            f"|excess kurtosis| <= {slack} SE for every m"))
    if var_tol is not None:
        if target is None:
            raise ParameterError("var_tol needs g")
        worst = max(abs(r["var_ratio"] - 1) for r in rep.rows)
        rep.checks.append(Check("variance_matches_g_logN_over_K", ok_v, worst, var_tol))
    if op is not None:
        C = gaussian_covariance(op, kers)
        E = np.cov(U, rowvar=False, ddof=1)
        se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C ** 2) / ess)
        z = np.abs(E - C) / se
        rep.estimates["max_cov_z"] = Estimate(float(z.max()), exact=True)
        for m in range(K):
            rep.rows[m]["var_gaussian"] = float(C[m, m])
        rep.checks.append(Check("covariance_oracle", bool(np.all(z <= slack)), float(z.max()), slack))
    if lam_grid is not None:
        lam = np.atleast_2d(np.asarray(lam_grid, dtype=float))
        if lam.shape[1] != K:
            raise ParameterError(f"lambda vectors must have length K={K}")
        y = U @ lam.T
        lm = log_mean_exp(y, axis=0)
        reps = _lmgf_boot(y, n_boot, seed + 1)
        for i, l in enumerate(lam):
            tw = top_weight(y[:, i])
            ref = 0.5 * float(np.sum(l ** 2)) * gv * math.log(N) / K if gv is not None else None
            e = estimate_from_boot(float(lm[i]), reps[:, i], s) if np.any(l) else Estimate(0.0, exact=True)
            rep.rows.append({"lambda": l.tolist(), "log_mgf": float(lm[i]), "se": e.se, "reference": ref,
                             "top_weight": tw, "reliable": tw < 0.2})
        zero = ~np.any(lam != 0, axis=1)
        if zero.any():
            rep.checks.append(Check("zero_lambda", bool(np.all(lm[zero] == 0)), float(np.abs(lm[zero]).max()),
                                    0.0))
    if v2 is not None:
        _two_point(rep, ens, U, v, v2, schedule2, K, lam_grid, n_boot, seed, s, slack)
    rep.estimates["ess"] = Estimate(ess, exact=True)
    return rep


def separation_scale(N: int, K: int, v1, v2) -> int:
    """The j with N^{1 - j/K} <= |v1 - v2| <= N^{1 - (j-1)/K}."""
    d = math.dist(v1, v2)
    for j in range(1, K + 1):
        if N ** (1 - j / K) <= d <= N ** (1 - (j - 1) / K):
            return j
    raise ParameterError(f"|v1 - v2| = {d:.3g} is not between N^0 and N^1 on the K={K} grid")


def _two_point(rep, ens, U1, v1, v2, schedule2, K, lam_grid, n_boot, seed, s, slack):
    N = ens.N
    j = separation_scale(N, K, v1, v2)
    if schedule2 is None:
        raise ParameterError("two-point mode needs the schedule at v2")
    if j >= K:
        raise ParameterError("no increments of v2 below the separation scale")
    U2 = data.linear_matrix(ens, increment_kernels(ens.domain, v2, schedule2, K)[j:])
    rep.parameters["j"] = j
    if lam_grid is None:
        lam_grid = [np.ones(K)]
    lam = np.atleast_2d(np.asarray(lam_grid, dtype=float))
    ok = True
    for i, l in enumerate(lam):
        a = U1 @ l
        b = U2 @ l[j:]
        both = np.stack([a + b, a, b], axis=1)
        reps = _lmgf_boot(both, n_boot, seed + 2 + i)
        lm = log_mean_exp(both, axis=0)
        cross = float(lm[0] - lm[1] - lm[2])
        e = estimate_from_boot(cross, reps[:, 0] - reps[:, 1] - reps[:, 2], s)
        rep.estimates[f"cross_term_{i}"] = e
        rep.rows.append({"lambda": l.tolist(), "two_point_cross_term": cross, "ci_low": e.ci[0],
                         "ci_high": e.ci[1]})
        if not e.ci[0] <= 0 <= e.ci[1]:
            ok = False
    rep.checks.append(Check("two_point_factorization", ok, None, None,
                            "joint log-MGF minus the two one-point log-MGFs has 0 in its bootstrap interval"))


# ---------------------------------------------------------------- CLT
def annihilation_error(rho: HarmonicWeights, n_random: int = 5, seed: int = 0) -> float:
    """max over the harmonic test family of |<rho, H>| / sum |rho H|."""
    worst = 0.0
    for H in harmonic_test_family(rho.domain, n_random=n_random, seed=seed):
        h = H.reshape(-1)[rho.indices]
        scale = max(1.0, float(np.abs(rho.weights * h).sum()))
        worst = max(worst, abs(float(rho.weights @ h)) / scale)
    return worst


def clt_check(ens: Ensemble, rho: HarmonicWeights, op: DirichletOperator | None = None, *,
              g_ratio: float = 1.0, check_ratio: bool = False, tol: float = 1e-8, n_boot: int = N_BOOT,
              seed: int = 0, slack: float = 3.0) -> ExperimentReport:
    """Y = N^-1 <rho, phi> against the Gaussian variance rho^T G rho / N^2 times g / g0.

    ``rho`` must annihilate the harmonic test family.  Normality is judged by
    sample skewness and excess kurtosis, each against 0 at ``slack`` SE.
    """
    dom = ens.domain
    rho = _as_weights(dom, rho)
    err = annihilation_error(rho)
    if err > tol:
        raise InputError(f"rho does not annihilate harmonic functions (relative error {err:.2e})")
    op = op or DirichletOperator(dom)
    N = ens.N
    vg = float(gaussian_covariance(op, [rho])[0, 0]) / N ** 2
    y = data.linear_values(ens, rho) / N
    ess = data.series_ess(ens, y)
    s = inflation(y.size, ess)
    reps = bootstrap(y, lambda b: np.stack([np.var(b, axis=1, ddof=1), sample_skewness(b, axis=1),
                                            excess_kurtosis(b, axis=1)], axis=1), n_boot, seed)
    ref = vg * g_ratio
    ratio = estimate_from_boot(float(np.var(y, ddof=1)) / ref, reps[:, 0] / ref, s)
    sk = estimate_from_boot(float(sample_skewness(y)), reps[:, 1], s)
    ku = estimate_from_boot(float(excess_kurtosis(y)), reps[:, 2], s)
    rep = ExperimentReport("clt", {"N": N, "g_ratio": g_ratio, "annihilation_tol": tol, "n_boot": n_boot,
                                   "seed": seed, "support": int(rho.indices.size)},
                           inputs=[data.describe(ens)])
    rep.estimates.update({"ratio": ratio, "skewness": sk, "excess_kurtosis": ku,
                          "var_gaussian": Estimate(vg, exact=True), "annihilation_error": Estimate(err, exact=True),
                          "ess": Estimate(ess, exact=True)})
    rep.checks.append(Check("skewness_zero", abs(sk.value) <= slack * sk.se, sk.value, slack * sk.se))
    rep.checks.append(Check("kurtosis_zero", abs(ku.value) <= slack * ku.se, ku.value, slack * ku.se))
    if check_ratio:
        rep.checks.append(Check("ratio_one", abs(ratio.value - 1) <= slack * ratio.se, ratio.value, 1.0))
    rep.rows = [{"sample": i, "Y": float(val)} for i, val in enumerate(y)]
    return rep
