"""Effective stiffness g from the growth of Var phi(0) in log N."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .._core.rng import child_seed
from ..errors import ParameterError
from ..lattice import LatticeDomain
from ..potential import Potential
from ..sampler import SamplerConfig, sample_ensemble
from ..store import ExactEnsemble
from ..weights import site_weights
from . import data
from .stats import N_BOOT, Check, Estimate, ExperimentReport, bootstrap, inflation


@dataclass
class StiffnessEstimate:
    g_hat: float
    se: float
    table: dict                      # N -> (Var phi(0), SE, ESS)
    diagnostics: dict = field(default_factory=dict)
    valid: bool = True
    flags: list = field(default_factory=list)

    def report(self) -> ExperimentReport:
        rep = ExperimentReport("estimate-g", dict(self.diagnostics.get("parameters", {})))
        rep.estimates["g_hat"] = Estimate(self.g_hat, self.se)
        rep.estimates["intercept"] = Estimate(self.diagnostics["intercept"], self.diagnostics["intercept_se"])
        for N, (v, se, ess) in sorted(self.table.items()):
            rep.estimates[f"var_center_N{N}"] = Estimate(v, se)
            rep.rows.append({"N": N, "log_N": math.log(N), "var_center": v, "se": se, "ess": ess})
        rep.checks.append(Check("ess_at_least_100", self.valid,
                                min(t[2] for t in self.table.values()), 100.0))
        rep.inputs = list(self.diagnostics.get("inputs", []))
        rep.flags = list(self.flags)
        return rep


def default_ensemble(N: int, p: Potential, cfg: SamplerConfig, exact: bool, seed: int, *,
                     observables=None, keep_fields=True, threads=None):
    """Exact draws for quadratic V when requested, otherwise MCMC chains."""
    if exact:
        if p.name != "quadratic":
            raise ParameterError("the exact sampler exists only for quadratic V")
        return ExactEnsemble(N, cfg.n_samples, seed)
    c = SamplerConfig(**{**cfg.to_dict(), "seed": seed})
    return sample_ensemble(LatticeDomain(N), p, c, observables=observables, keep_fields=keep_fields,
                           threads=threads)


def wls_line(x, y, se):
    """Weighted least squares y = a + b x with weights 1/se^2 (known variances)."""
    x, y, se = (np.asarray(v, dtype=float) for v in (x, y, se))
    w = 1.0 / se ** 2
    X = np.stack([np.ones_like(x), x], axis=1)
    A = X.T @ (w[:, None] * X)
    cov = np.linalg.inv(A)
    coef = cov @ (X.T @ (w * y))
    resid = y - X @ coef
    chi2 = float(np.sum(w * resid ** 2))
    return coef, cov, chi2


def estimate_stiffness(potential: Potential, sizes, cfg: SamplerConfig | None = None, *,
                       exact: bool | None = None, ensembles: dict | None = None, n_boot: int = N_BOOT,
                       seed: int = 0, threads: int | None = None) -> StiffnessEstimate:
    """Slope of Var phi(0) against log N over ``sizes``.

    Each variance carries a bootstrap SE, inflated by sqrt(n / ESS) for chains;
    the slope is the weighted least-squares fit with weights 1/SE^2.  An
    ensemble with ESS < 100 marks the estimate invalid.
    """
    sizes = sorted(int(N) for N in sizes)
    if len(sizes) < 3:
        raise ParameterError("need at least 3 sizes")
    ratios = np.diff(np.log(sizes))
    if np.any(ratios <= 0) or ratios.max() > 1.5 * ratios.min():
        raise ParameterError(f"sizes {sizes} are not geometrically spaced")
    cfg = cfg or SamplerConfig()
    exact = potential.name == "quadratic" if exact is None else bool(exact)
    ensembles = dict(ensembles or {})
    table = {}
    inputs = []
    flags = []
    for N in sizes:
        ens = ensembles.get(N)
        if ens is None:
            ens = default_ensemble(N, potential, cfg, exact, child_seed(cfg.seed, N),
                                   observables={"center": site_weights(LatticeDomain(N), (0, 0))},
                                   keep_fields=False, threads=threads)
        x = data.site_values(ens, (0, 0))
        ess = data.series_ess(ens, x)
        v = float(np.var(x, ddof=1))
        reps = bootstrap(x, lambda b: np.var(b, axis=1, ddof=1), n_boot, seed=child_seed(seed, N))
        se = float(np.std(reps, ddof=1)) * inflation(x.size, ess)
        table[N] = (v, se, ess)
        inputs.append(data.describe(ens))
        if ess < 100:
            flags.append(f"ESS {ess:.0f} < 100 at N={N}")
    logN = np.log(sizes)
    coef, cov, chi2 = wls_line(logN, [table[N][0] for N in sizes], [table[N][1] for N in sizes])
    g_hat, se = float(coef[1]), float(math.sqrt(cov[1, 1]))
    if not g_hat > 0:
        flags.append("non-positive slope")
    diag = {"intercept": float(coef[0]), "intercept_se": float(math.sqrt(cov[0, 0])), "chi2": chi2,
            "dof": len(sizes) - 2, "inputs": inputs,
            "parameters": {"potential": potential.spec(), "sizes": sizes, "exact": exact,
                           "n_samples": cfg.n_samples, "seed": cfg.seed, "n_boot": n_boot,
                           "boot_seed": seed}}
    return StiffnessEstimate(g_hat, se, table, diag, valid=not flags, flags=flags)
