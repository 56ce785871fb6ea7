"""Observables of ensembles, read in sample order.

Ensembles that kept their fields are evaluated batch by batch; ensembles that
only recorded per-sample observables serve them from their traces, matched by
the content hash of the functional.
"""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateTraceError, InputError
from ..sampler import integrated_autocorr_time
from ..store import Ensemble
from ..weights import HarmonicWeights, fingerprint, site_weights


def has_fields(ens: Ensemble) -> bool:
    f = getattr(ens, "fields", None)
    return f is None or f.shape[0] > 0


def n_samples(ens: Ensemble) -> int:
    if has_fields(ens):
        return int(ens.n_samples)
    return int(sum(chain_lengths(ens)))


def chain_lengths(ens: Ensemble) -> list[int]:
    tr = getattr(ens, "traces", None) or {}
    if "center" in tr:
        return [len(c) for c in tr["center"]]
    return [int(ens.n_samples)]


def _recorded(ens: Ensemble, w: HarmonicWeights):
    tr = getattr(ens, "traces", None) or {}
    fp = fingerprint(w)
    for rec in tr.get("observables", {}).values():
        if rec["fingerprint"] == fp:
            return np.concatenate([np.asarray(v, dtype=float) for v in rec["values"]])
    return None


def linear_values(ens: Ensemble, w: HarmonicWeights) -> np.ndarray:
    """<w, phi> for every sample."""
    if w.domain.N != ens.N:
        raise InputError(f"functional lives on D_{w.domain.N}, ensemble on D_{ens.N}")
    rec = _recorded(ens, w)
    if rec is not None:
        return rec
    if not has_fields(ens):
        raise InputError("ensemble kept no fields and did not record this observable")
    return ens.map_batches(w.apply)


def linear_matrix(ens: Ensemble, ws: list[HarmonicWeights]) -> np.ndarray:
    """(n, k) values of k functionals."""
    recs = [_recorded(ens, w) for w in ws]
    if all(r is not None for r in recs):
        return np.stack(recs, axis=1)
    if not has_fields(ens):
        raise InputError("ensemble kept no fields and did not record these observables")
    from ..harmonic import kernel_matrix
    K = kernel_matrix(ws)
    return ens.map_batches(lambda b: (K @ b.reshape(b.shape[0], -1).T).T)


def site_values(ens: Ensemble, x) -> np.ndarray:
    x = tuple(x)
    tr = getattr(ens, "traces", None) or {}
    if x == (0, 0) and not has_fields(ens) and "center" in tr:
        return np.concatenate([np.asarray(c, dtype=float) for c in tr["center"]])
    return linear_values(ens, site_weights(ens.domain, x))


def max_values(ens: Ensemble) -> np.ndarray:
    if has_fields(ens):
        return ens.map_batches(lambda b: b.reshape(b.shape[0], -1).max(axis=1))
    tr = ens.traces
    return np.concatenate([np.asarray(c, dtype=float) for c in tr["max"]])


def series_ess(ens: Ensemble, x: np.ndarray) -> float:
    """Effective sample size of a per-sample series.

    Exact ensembles give n; MCMC ensembles sum n_i / tau_i over chains, with
    tau_int from the chain's own ordering.  Chains shorter than 100 samples fall
    back to the ensemble's recorded ESS.
    """
    n = x.size
    if getattr(ens, "exact", False):
        return float(n)
    lens = chain_lengths(ens)
    if sum(lens) != n or min(lens) < 100:
        e = ens.ess()
        return float(min(e, n)) if e is not None else float(n)
    ess = 0.0
    s = 0
    for m in lens:
        seg = x[s:s + m]
        s += m
        try:
            tau, _ = integrated_autocorr_time(seg)
        except DegenerateTraceError:
            tau = 1.0
        ess += m / max(tau, 1.0)
    return float(min(ess, n))


def describe(ens: Ensemble) -> dict:
    d = ens.describe()
    d["n_samples"] = n_samples(ens)
    return d
