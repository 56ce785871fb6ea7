"""Paired chains with zero and with f boundary values: how harmonic is their difference?"""
from __future__ import annotations

import math

import numpy as np
from scipy import stats as sst

from .._core.rng import child_seed
from ..errors import InputError, ParameterError
from ..laplace import DirichletOperator, harmonic_extension
from ..lattice import LatticeDomain
from ..potential import Potential
from ..sampler import SamplerConfig, sample_ensemble
from ..store import ExactEnsemble
from . import data
from .stats import N_BOOT, Check, Estimate, ExperimentReport, bootstrap, estimate_from_boot, inflation


def boundary_field(domain: LatticeDomain, f) -> np.ndarray:
    """Full-domain array holding f on the outer ring and 0 inside.

    ``f`` is a number, a callable f(x1, x2) on integer arrays, or a full array.
    """
    out = np.zeros(domain.shape)
    mask = domain.boundary_mask
    if callable(f):
        X1, X2 = domain.coordinates()
        vals = np.asarray(f(X1, X2), dtype=float) * np.ones(domain.shape)
        out[mask] = vals[mask]
    elif np.ndim(f) == 0:
        out[mask] = float(f)
    else:
        a = np.asarray(f, dtype=float)
        if a.shape != domain.shape:
            raise InputError(f"boundary array has shape {a.shape}, expected {domain.shape}")
        out[mask] = a[mask]
    if not np.all(np.isfinite(out)):
        raise InputError("boundary values must be finite")
    return out


def _extend(op: DirichletOperator, grid: np.ndarray) -> np.ndarray:
    """Harmonic extension into the set of the values of ``grid`` on its boundary."""
    return harmonic_extension(op, grid)


def paired_ensembles(R: int, p: Potential, f, cfg: SamplerConfig, *, exact: bool, seed: int, threads=None):
    """(phi, phi^f) draws on D_R with common random numbers."""
    dom = LatticeDomain(R)
    bc = boundary_field(dom, f)
    if exact:
        base = ExactEnsemble(R, cfg.n_samples, seed).to_store()
        h = harmonic_extension(DirichletOperator(dom), bc)
        return base.fields, base.fields + h[None], base
    c = SamplerConfig(**{**cfg.to_dict(), "seed": seed})
    e0 = sample_ensemble(dom, p, c, threads=threads)
    ef = sample_ensemble(dom, p, c, boundary=bc, threads=threads)
    return e0.fields, ef.fields, ef


def coupling_experiment(sizes, potential: Potential, f, cfg: SamplerConfig | None = None, *, r_frac: float = 0.25,
                        r_list=None, exact: bool | None = None, Lambda: float | None = None,
                        n_boot: int = N_BOOT, seed: int = 0, slack: float = 3.0, threads=None
                        ) -> ExperimentReport:
    """For each R: chains on D_R with boundary 0 and f under common random numbers.

    In the box D(r) = [-r, r]^2 (r = r_frac R unless ``r_list`` is given):
    (i)  max |E phi^f - harmonic extension of E phi^f from the box boundary|,
         tested against 0 site by site (Student t with df = site ESS - 1,
         Bonferroni over the box at ``slack`` sigma);
    (ii) per sample max |(phi^f - phi) - h|, h the harmonic extension of the
         difference from the box boundary; its median should not grow with R.
    The trend check allows a numerical slack of 1e-9 (1 + max |f|).
    """
    sizes = [int(R) for R in sizes]
    if r_list is not None and len(r_list) != len(sizes):
        raise ParameterError("r_list must match sizes")
    cfg = cfg or SamplerConfig()
    exact = potential.name == "quadratic" if exact is None else bool(exact)
    rep = ExperimentReport("coupling", {"sizes": sizes, "potential": potential.spec(), "r_frac": r_frac,
                                        "r_list": r_list, "exact": exact, "n_samples": cfg.n_samples,
                                        "seed": cfg.seed, "Lambda": Lambda, "n_boot": n_boot,
                                        "slack_sigma": slack})
    meds = []
    fmax = 0.0
    ok_mean = True
    for k, R in enumerate(sizes):
        dom = LatticeDomain(R)
        bc = boundary_field(dom, f)
        fmax = max(fmax, float(np.abs(bc).max()))
        if Lambda is not None and fmax > Lambda * math.log(R) ** Lambda:
            raise ParameterError(f"max |f| = {fmax:.3g} exceeds Lambda (log R)^Lambda")
        r = int(r_list[k]) if r_list is not None else max(1, int(round(r_frac * R)))
        box = dom.sub_box((0, 0), r)
        op = DirichletOperator(box)
        inner = op.interior
        phi0, phif, ens = paired_ensembles(R, potential, f, cfg, exact=exact, seed=child_seed(cfg.seed, R),
                                           threads=threads)
        n = phif.shape[0]
        # (i) per-sample non-harmonic part of phi^f; its mean is the discrepancy field
        dev = np.empty((n, inner.size))
        stat = np.empty(n)
        for i in range(n):
            dev[i] = (phif[i] - _extend(op, phif[i])).reshape(-1)[inner]
            d = phif[i] - phi0[i]
            stat[i] = float(np.abs((d - _extend(op, d)).reshape(-1)[inner]).max())
        if exact:
            ess_site = np.full(inner.size, float(n))
        else:
            ess_site = np.array([data.series_ess(ens, dev[:, i]) for i in range(inner.size)])
        ess = float(data.series_ess(ens, stat)) if not exact and stat.std() > 0 else float(ess_site.min())
        mean_dev = dev.mean(axis=0)
        se = dev.std(axis=0, ddof=1) / np.sqrt(ess_site)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, np.abs(mean_dev) / se, np.where(mean_dev == 0, 0.0, np.inf))
        # two-sided Bonferroni level; Student t with df = ESS - 1 at each site
        alpha = sst.norm.sf(slack) / inner.size
        crit_site = sst.t.isf(alpha, np.maximum(ess_site - 1, 1))
        crit = float(crit_site.max())
        passed = bool(np.all(z <= crit_site))
        ok_mean &= passed
        reps = bootstrap(stat, lambda b: np.median(b, axis=1), n_boot, child_seed(seed, R))
        med = estimate_from_boot(float(np.median(stat)), reps, inflation(n, ess))
        meds.append(med.value)
        rep.estimates[f"mean_discrepancy_R{R}"] = Estimate(float(np.abs(mean_dev).max()),
                                                          float(se[np.argmax(np.abs(mean_dev))]))
        rep.estimates[f"median_stat_ii_R{R}"] = med
        rep.inputs.append({"R": R, **data.describe(ens)} if not exact else {"R": R, "exact": True,
                                                                          "n_samples": n})
        rep.rows.append({"R": R, "r": r, "mean_discrepancy": float(np.abs(mean_dev).max()),
                         "max_z": float(z.max()), "z_critical": crit, "max_z_over_critical": float((z / crit_site).max()), "median_stat_ii": med.value,
                         "ci_low": med.ci[0], "ci_high": med.ci[1], "ess": ess})
    tol = 1e-9 * (1 + fmax)
    d = np.diff(meds)
    rep.checks.append(Check("mean_discrepancy_zero", ok_mean, max(r_["max_z_over_critical"] for r_ in rep.rows),
                            1.0, f"|E phi^f - h| / SE over its Bonferroni {slack} sigma t quantile, every site"))
    rep.checks.append(Check("median_non_increasing", bool(np.all(d <= tol)), float(d.max()) if d.size else 0.0,
                            tol, "median of statistic (ii) by increasing R, numerical slack 1e-9 (1 + max|f|)"))
    return rep
