"""Bootstrap intervals, report containers and small estimators shared by the experiments.

All resampling uses ``np.random.default_rng(seed)`` with a caller-given seed, so
every report is a pure function of its inputs.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special, stats

SCHEMA_VERSION = 1
N_BOOT = 1000
_CHUNK = 1 << 22   # resampled entries held at once


# ---------------------------------------------------------------- bootstrap
def bootstrap(data, stat, n_boot: int = N_BOOT, seed: int = 0) -> np.ndarray:
    """Replicates of ``stat`` over resamples of the rows of ``data``.

    ``stat`` maps an array of shape (b, n, ...) of b resamples to b values (or
    (b, k) values); rows are drawn with replacement.  Resample i depends only on
    (seed, i), so statistics of different data of equal length share indices.
    """
    x = np.asarray(data, dtype=float)
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    per = max(1, _CHUNK // max(1, x[0].size * n))
    out = []
    done = 0
    while done < n_boot:
        b = min(per, n_boot - done)
        idx = np.stack([rng.integers(0, n, size=n) for _ in range(b)])
        out.append(np.asarray(stat(x[idx])))
        done += b
    return np.concatenate(out)


def bc_interval(replicates, estimate: float, level: float = 0.95) -> tuple[float, float]:
    """Bias-corrected percentile interval."""
    r = np.asarray(replicates, dtype=float)
    r = r[np.isfinite(r)]
    if r.size == 0 or not np.isfinite(estimate):
        return (math.nan, math.nan)
    p0 = (np.sum(r < estimate) + 0.5 * np.sum(r == estimate)) / r.size
    p0 = min(max(p0, 0.5 / r.size), 1 - 0.5 / r.size)
    z0 = stats.norm.ppf(p0)
    za = stats.norm.ppf(0.5 * (1 + level))
    q = stats.norm.cdf([2 * z0 - za, 2 * z0 + za])
    lo, hi = np.quantile(r, q)
    return (float(lo), float(hi))


def inflation(n: int, ess: float | None) -> float:
    """Factor sqrt(n / ESS) applied to bootstrap errors of correlated samples."""
    if ess is None or not ess > 0:
        return 1.0
    return math.sqrt(max(1.0, n / ess))


# ---------------------------------------------------------------- reports
@dataclass
class Estimate:
    """A number with its uncertainty: standard error and/or interval, or exact."""

    value: float
    se: float | None = None
    ci: tuple | None = None
    exact: bool = False

    def __post_init__(self):
        self.value = float(self.value)
        if self.se is not None:
            self.se = float(self.se)
        if self.ci is not None:
            self.ci = (float(self.ci[0]), float(self.ci[1]))
        if not self.exact and self.se is None and self.ci is None:
            raise ValueError("an estimate needs a standard error, an interval, or the exact flag")

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se, "ci": list(self.ci) if self.ci else None,
                "exact": self.exact}


def estimate_from_boot(value: float, reps, scale: float = 1.0) -> Estimate:
    """Estimate with bootstrap SE and BC interval, widened by ``scale`` around the value."""
    reps = np.asarray(reps, dtype=float)
    se = float(np.std(reps[np.isfinite(reps)], ddof=1)) * scale if reps.size > 1 else math.nan
    lo, hi = bc_interval(reps, value)
    ci = (value - scale * (value - lo), value + scale * (hi - value))
    return Estimate(value, se, ci)


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    bound: float | None = None
    detail: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = bool(self.passed)
        return d


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class ExperimentReport:
    experiment: str
    parameters: dict
    estimates: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def id(self) -> str:
        blob = json.dumps(_clean({"p": self.parameters, "i": self.inputs}), sort_keys=True)
        return f"{self.experiment}-{hashlib.sha256(blob.encode()).hexdigest()[:12]}"

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return _clean({"schema_version": SCHEMA_VERSION, "id": self.id, "experiment": self.experiment,
                       "parameters": self.parameters,
                       "estimates": {k: v.to_dict() for k, v in self.estimates.items()},
                       "checks": [c.to_dict() for c in self.checks], "passed": self.passed,
                       "inputs": self.inputs, "flags": self.flags, "n_rows": len(self.rows)})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.rows:
            keys = list(self.rows[0].keys())
            for r in self.rows[1:]:
                keys += [k for k in r if k not in keys]
            w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: _fmt(r.get(k)) for k in keys})
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        est = {k: Estimate(v["value"] if v["value"] is not None else math.nan, v["se"],
                           tuple(v["ci"]) if v["ci"] else None, v["exact"])
               for k, v in d.get("estimates", {}).items()}
        checks = [Check(**c) for c in d.get("checks", [])]
        return cls(d["experiment"], d.get("parameters", {}), est, checks, d.get("inputs", []), [],
                   d.get("flags", []))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------- moments
def sample_skewness(x, axis=-1):
    return stats.skew(x, axis=axis, bias=False)


def excess_kurtosis(x, axis=-1):
    return stats.kurtosis(x, axis=axis, fisher=True, bias=False)


def log_mean_exp(a, axis=-1):
    a = np.asarray(a, dtype=float)
    n = a.shape[axis]
    return special.logsumexp(a, axis=axis) - math.log(n)


def top_weight(a, frac: float = 0.01) -> float:
    """Share of sum exp(a) carried by the largest ceil(frac n) terms."""
    a = np.sort(np.asarray(a, dtype=float))
    k = max(1, math.ceil(frac * a.size))
    tot = special.logsumexp(a)
    return float(math.exp(special.logsumexp(a[-k:]) - tot))


def fisher_z(r: float, n: float) -> float:
    """Standardized Fisher transform of a correlation from n effective pairs."""
    r = min(max(r, -0.999999), 0.999999)
    return math.atanh(r) * math.sqrt(max(n - 3, 1))
