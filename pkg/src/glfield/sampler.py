"""MCMC for the Ginzburg-Landau measure with density exp(-sum_edges V(grad phi)).

One chain *step* is a local checkerboard sweep (Metropolis or heat-bath, run by
the compiled core when available) followed by ``hmc_moves`` global split-HMC
trajectories.  All randomness is counter based: sweeps draw from the chain key
and the sweep counter, global moves from the key and the move counter.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _core
from ._core import rng as crng
from .errors import DegenerateTraceError, InputError, NumericalError, ParameterError
from .hmc import SplitHMC, hmc_generator
from .laplace import DirichletOperator
from .lattice import LatticeDomain, SiteSet
from .potential import Potential
from .state import FieldState

KERNELS = ("metropolis", "heatbath")
ORDERS = ("checkerboard", "sequential")


@dataclass
class SamplerConfig:
    sweeps_burnin: int | None = None
    sweeps_between_samples: int = 1
    n_samples: int = 100
    proposal_std: float = 1.0
    kernel: str = "metropolis"
    seed: int = 0
    diagnostics: bool = True
    n_chains: int = 1
    hmc_moves: int = 1
    hmc_steps: int | None = None
    adapt: bool = True
    target_acceptance: float = 0.45

    def __post_init__(self):
        for name in ("sweeps_between_samples", "n_samples", "n_chains"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if self.sweeps_burnin is not None and (not isinstance(self.sweeps_burnin, (int, np.integer))
                                               or self.sweeps_burnin < 0):
            raise ParameterError(f"sweeps_burnin must be a nonnegative integer, got {self.sweeps_burnin!r}")
        if not (0 < self.proposal_std <= 100):
            raise ParameterError(f"proposal_std must lie in (0, 100], got {self.proposal_std}")
        if self.kernel not in KERNELS:
            raise ParameterError(f"kernel must be one of {KERNELS}")
        if self.hmc_moves < 0 or (self.hmc_steps is not None and self.hmc_steps < 1):
            raise ParameterError("hmc_moves >= 0 and hmc_steps >= 1 required")
        if not 0 < self.target_acceptance < 1:
            raise ParameterError("target_acceptance must lie in (0, 1)")
        self.seed = int(self.seed) & (2 ** 64 - 1)

    def burnin_for(self, domain: LatticeDomain, p: Potential) -> int:
        """Default burn-in: O(N^2) local sweeps, or O(1) steps with global moves."""
        if self.sweeps_burnin is not None:
            return int(self.sweeps_burnin)
        ratio = p.c_plus / p.c_minus
        if self.hmc_moves > 0:
            return int(math.ceil(20 * ratio))
        return int(math.ceil(domain.N ** 2 * ratio))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChainDiagnostics:
    n_samples: int
    acceptance_rate: float | None = None
    hmc_acceptance: float | None = None
    tau_center: float | None = None
    tau_max: float | None = None
    ess_center: float | None = None
    ess_max: float | None = None
    proposal_std: float | None = None
    flags: list = field(default_factory=list)

    @property
    def ess(self) -> float | None:
        vals = [v for v in (self.ess_center, self.ess_max) if v is not None]
        return min(vals) if vals else None

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- local sweeps
def _kernel_args(p: Potential, backend):
    if p.kind is not None and backend != "python" and _core.compiled_available():
        return _core.get_kernel("compiled"), p.kind, (p.kernel_params[0] if p.kernel_params else 0.0), None
    kind = p.kind if p.kind is not None else -1
    return _core.get_kernel("python"), kind, (p.kernel_params[0] if p.kernel_params else 0.0), p


def sweep(state: FieldState, p: Potential, cfg: SamplerConfig, rng=None, *, n_sweeps: int = 1,
          order: str = "checkerboard", movable: np.ndarray | None = None, record=None,
          backend: str | None = None, step: float | None = None):
    """Run local sweeps in place and return the state.

    ``rng`` may override the chain key (an int); by default the state's seed and
    sweep counter select the random numbers.  ``record`` is a list of sites whose
    values are traced after every sweep; the trace is stored in
    ``state.lineage['last_trace']``.  Acceptance counts are accumulated in
    ``state.lineage``.
    """
    if order not in ORDERS:
        raise ParameterError(f"order must be one of {ORDERS}")
    key = state.seed if rng is None else int(rng) & (2 ** 64 - 1)
    mov = state.movable if movable is None else (np.asarray(movable, dtype=bool) & state.movable)
    mov8 = np.ascontiguousarray(mov, dtype=np.uint8)
    rec_sites = [] if record is None else list(record)
    rec = np.array([state.domain.index(x) for x in rec_sites], dtype=np.int64)
    trace = np.zeros((n_sweeps, rec.size))
    fn, kind, a, pot = _kernel_args(p, backend or _core.BACKEND)
    method = KERNELS.index(cfg.kernel)
    step = float(cfg.proposal_std if step is None else step)
    args = (state.values, mov8, kind, a, method, step, key, state.sweep_count, n_sweeps,
            p.c_minus, ORDERS.index(order), rec, trace)
    moves, attempts, bad = fn(*args) if pot is None else fn(*args, potential=pot)
    if bad >= 0:
        site = state.domain.site(bad)
        raise NumericalError(f"non-finite energy change while updating site {site}", site=site)
    state.sweep_count += n_sweeps
    lin = state.lineage
    lin["local_moves"] = lin.get("local_moves", 0) + int(moves)
    lin["local_attempts"] = lin.get("local_attempts", 0) + int(attempts)
    if rec.size:
        lin["last_trace"] = trace
    return state


# ---------------------------------------------------------------- chains
class Chain:
    """A single Markov chain on the sites interior to ``region`` (default: D_N)."""

    def __init__(self, state: FieldState, p: Potential, cfg: SamplerConfig,
                 region: SiteSet | None = None, backend: str | None = None):
        self.state = state
        self.p = p
        self.cfg = cfg
        self.backend = backend
        d = state.domain
        if region is None:
            self.movable = state.movable.copy()
            op_set = d.as_site_set()
        else:
            if region.domain != d:
                raise InputError("region belongs to a different domain")
            m = np.zeros(d.n_sites, dtype=bool)
            m[region.interior_indices] = True
            self.movable = m.reshape(d.shape) & state.movable
            op_set = region
        self.step = float(cfg.proposal_std)
        self.hmc = None
        if cfg.hmc_moves > 0 and self.movable.any():
            self.hmc = SplitHMC(DirichletOperator(op_set), p, n_steps=cfg.hmc_steps)
        self.hmc_accepted = 0
        self.hmc_total = 0

    def advance(self, n: int = 1):
        st = self.state
        for _ in range(n):
            sweep(st, self.p, self.cfg, movable=self.movable, backend=self.backend, step=self.step)
            if self.hmc is not None:
                for _ in range(self.cfg.hmc_moves):
                    res = self.hmc.move(st, hmc_generator(st.seed, st.move_count))
                    self.hmc_accepted += res.accepted
                    self.hmc_total += 1
        return st

    def burn_in(self, n: int):
        """Burn-in with Robbins-Monro tuning of the proposal scale, then freeze it."""
        cfg = self.cfg
        block = 10
        done = 0
        k = 0
        st = self.state
        while done < n:
            m = min(block, n - done)
            a0, t0 = st.lineage.get("local_moves", 0), st.lineage.get("local_attempts", 0)
            self.advance(m)
            done += m
            if cfg.adapt and cfg.kernel == "metropolis":
                acc = (st.lineage["local_moves"] - a0) / max(1, st.lineage["local_attempts"] - t0)
                k += 1
                self.step = float(np.clip(self.step * math.exp((acc - cfg.target_acceptance) / math.sqrt(k)),
                                          1e-3, 100.0))
        st.lineage["local_moves"] = 0
        st.lineage["local_attempts"] = 0
        self.hmc_accepted = self.hmc_total = 0


def initial_state(domain: LatticeDomain, seed: int, boundary=None, chain: int = 0) -> FieldState:
    st = FieldState.zeros(domain, seed=seed, boundary=boundary, chain=chain)
    if boundary is not None and np.any(np.asarray(boundary) != 0):
        # start from the harmonic extension of the boundary data
        from .laplace import harmonic_extension
        st.values[...] = harmonic_extension(DirichletOperator(domain), st.values)
    return st


def _run_chain(args):
    domain_N, pspec, cfg_dict, chain_index, n_keep, boundary, backend, observables, keep = args
    from .potential import from_spec
    domain = LatticeDomain(domain_N)
    p = pspec if isinstance(pspec, Potential) else from_spec(pspec)
    cfg = SamplerConfig(**cfg_dict)
    seed = crng.child_seed(cfg.seed, chain_index)
    chain = Chain(initial_state(domain, seed, boundary, chain_index), p, cfg, backend=backend)
    chain.burn_in(cfg.burnin_for(domain, p))
    fields = np.empty(((n_keep if keep else 0),) + domain.shape)
    obs = {name: np.empty(n_keep) for name in observables}
    c = domain.grid_pos((0, 0))
    t_center = np.empty(n_keep)
    t_max = np.empty(n_keep)
    for k in range(n_keep):
        chain.advance(cfg.sweeps_between_samples)
        chain.state.check_finite()
        if keep:
            fields[k] = chain.state.values
        for name, w in observables.items():
            obs[name][k] = w.apply(chain.state.values)
        t_center[k] = chain.state.values[c]
        t_max[k] = chain.state.values.max()
    lin = chain.state.lineage
    acc = lin["local_moves"] / lin["local_attempts"] if lin.get("local_attempts") else None
    hacc = chain.hmc_accepted / chain.hmc_total if chain.hmc_total else None
    return {"fields": fields, "seed": seed, "observables": obs, "trace_center": t_center, "trace_max": t_max,
            "acceptance": acc, "hmc_acceptance": hacc, "proposal_std": chain.step}


def chain_sample_counts(n_samples: int, n_chains: int) -> list[int]:
    q, r = divmod(n_samples, n_chains)
    return [q + (1 if i < r else 0) for i in range(n_chains)]


def sample_ensemble(domain: LatticeDomain, p: Potential, cfg: SamplerConfig, *, boundary=None,
                    threads: int | None = None, backend: str | None = None,
                    observables: dict | None = None, keep_fields: bool = True):
    """Draw ``cfg.n_samples`` fields from ``cfg.n_chains`` independent chains.

    Chain ``i`` uses key ``child_seed(cfg.seed, i)``; chains may run in worker
    processes, and the ensemble is assembled in chain order, so the result does
    not depend on ``threads``.

    ``observables`` maps names to HarmonicWeights whose values are recorded for
    every sample (in ``traces['observables']``); with ``keep_fields=False`` only
    these records and the center / max traces are kept.
    """
    from .weights import fingerprint
    from .store import EnsembleStore

    counts = chain_sample_counts(cfg.n_samples, cfg.n_chains)
    pspec = p.spec() if p.name in ("quadratic", "dipole_gas") else p
    observables = dict(observables or {})
    jobs = [(domain.N, pspec, cfg.to_dict(), i, counts[i], boundary, backend, observables, keep_fields)
            for i in range(cfg.n_chains) if counts[i] > 0]
    threads = int(threads or os.environ.get("GLFIELD_THREADS", 1))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
            results = list(ex.map(_run_chain, jobs))
    else:
        results = [_run_chain(j) for j in jobs]
    fields = np.concatenate([r["fields"] for r in results])
    diag = ensemble_diagnostics(results, cfg)
    return EnsembleStore(
        N=domain.N, potential=p.spec(), fields=fields,
        config={"sampler": "mcmc", **cfg.to_dict(), "backend": backend or _core.BACKEND},
        seeds=[r["seed"] for r in results], diagnostics=diag.to_dict(),
        traces={"center": [r["trace_center"].tolist() for r in results],
                "max": [r["trace_max"].tolist() for r in results],
                "observables": {name: {"fingerprint": fingerprint(w),
                                       "values": [r["observables"][name].tolist() for r in results]}
                                for name, w in observables.items()}})


def ensemble_diagnostics(results, cfg) -> ChainDiagnostics:
    n = sum(len(r["trace_center"]) for r in results)
    out = ChainDiagnostics(n_samples=n)
    accs = [r["acceptance"] for r in results if r["acceptance"] is not None]
    out.acceptance_rate = float(np.mean(accs)) if accs else None
    haccs = [r["hmc_acceptance"] for r in results if r["hmc_acceptance"] is not None]
    out.hmc_acceptance = float(np.mean(haccs)) if haccs else None
    out.proposal_std = float(np.mean([r["proposal_std"] for r in results]))
    if not cfg.diagnostics:
        out.flags.append("diagnostics disabled")
        return out
    for obs, key in (("center", "trace_center"), ("max", "trace_max")):
        ess = 0.0
        taus = []
        for r in results:
            tr = r[key]
            if len(tr) < 100:
                out.flags.append(f"chain trace shorter than 100; ESS of {obs} unavailable")
                ess = None
                break
            try:
                tau, _ = integrated_autocorr_time(tr)
            except DegenerateTraceError:
                out.flags.append(f"degenerate trace for {obs}")
                ess = None
                break
            taus.append(tau)
            ess += len(tr) / max(tau, 1.0)
        if ess is None:
            continue
        setattr(out, f"tau_{obs}", float(np.mean(taus)))
        setattr(out, f"ess_{obs}", float(min(ess, n)))
        if ess < 100:
            out.flags.append(f"ESS of {obs} below 100")
    return out


# ---------------------------------------------------------------- subdomains
def resample_subdomain(state: FieldState, sub: SiteSet, p: Potential, cfg: SamplerConfig, rng=None,
                       n_steps: int | None = None) -> FieldState:
    """Re-equilibrate the sites strictly inside ``sub`` given the rest of the field.

    Sites of ``sub``'s boundary and everything outside are left bit-identical.
    ``rng`` (an int) replaces the state's key for this call.
    """
    if sub.domain != state.domain:
        raise InputError("subdomain belongs to a different domain")
    if rng is not None:
        state.seed = int(rng) & (2 ** 64 - 1)
    chain = Chain(state, p, cfg, region=sub)
    steps = n_steps if n_steps is not None else cfg.burnin_for(state.domain, p)
    chain.advance(steps)
    state.check_finite()
    return state


# ---------------------------------------------------------------- diagnostics
def autocorrelation(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    y = x - x.mean()
    f = np.fft.rfft(y, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    if acf[0] <= 0:
        raise DegenerateTraceError("trace has zero variance")
    return acf / acf[0]


def integrated_autocorr_time(x, c: float = 5.0) -> tuple[float, int]:
    """tau_int = 1 + 2 sum_{k<=W} rho_k with the self-consistent window W >= c tau."""
    rho = autocorrelation(x)
    n = rho.size
    tau = 1.0
    for W in range(1, n):
        tau += 2.0 * rho[W]
        if W >= c * tau:
            return float(tau), W
    return float(tau), n - 1


def diagnostics(trace, acceptance_rate: float | None = None) -> ChainDiagnostics:
    """Autocorrelation diagnostics of a chain trace or an ensemble.

    A 1-D trace gives tau_int = 1 + 2 sum rho_k (1 for i.i.d. draws, (1+r)/(1-r)
    for AR(1) with coefficient r) and ESS = n / tau_int.  A dict with keys
    ``center`` / ``max`` (or an EnsembleStore) is processed per observable.
    """
    from .store import EnsembleStore

    if isinstance(trace, EnsembleStore):
        if trace.diagnostics:
            d = dict(trace.diagnostics)
            return ChainDiagnostics(**{k: d[k] for k in ChainDiagnostics.__dataclass_fields__ if k in d})
        c = trace.domain.grid_pos((0, 0))
        vals = np.stack([f for f in trace.iter_fields()])
        trace = {"center": vals[:, c[0], c[1]], "max": vals.reshape(len(vals), -1).max(axis=1)}
    if isinstance(trace, dict):
        out = None
        for obs in ("center", "max"):
            if obs in trace:
                d = diagnostics(trace[obs], acceptance_rate)
                out = out or ChainDiagnostics(n_samples=d.n_samples, acceptance_rate=acceptance_rate)
                setattr(out, f"tau_{obs}", d.tau_center)
                setattr(out, f"ess_{obs}", d.ess_center)
        if out is None:
            raise InputError("trace dict needs 'center' and/or 'max'")
        return out
    x = np.asarray(trace, dtype=float).ravel()
    if x.size < 100:
        raise InputError(f"trace of length {x.size} is too short (need >= 100)")
    if not np.all(np.isfinite(x)):
        raise NumericalError("trace contains non-finite values")
    tau, _ = integrated_autocorr_time(x)
    tau = max(tau, 1.0 / x.size)
    ess = min(x.size / tau, float(x.size))
    return ChainDiagnostics(n_samples=x.size, acceptance_rate=acceptance_rate,
                            tau_center=tau, ess_center=ess)
