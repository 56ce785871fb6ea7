"""Command-line experiment runner.

    glfield <subcommand> --config <path> [--check] [--threads n] [--seed s]

Every run writes the resolved config, its report (JSON and CSV) and any
saved ensembles into a content-addressed directory under the output
directory, plus a manifest with the sha256 of every file.  Settings that do
not change results (threads, output directory, --check) are recorded in the
manifest only, so rerunning with different values reuses the same directory.

Exit codes: 0 success, 2 config or input error, 3 numerical or solver
error, 4 failed check (with --check), 5 integrity error (hash mismatch).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as C
from ._core.rng import child_seed
from .artifacts import RunDir, read_manifest
from .errors import ConfigError, GLFieldError, IntegrityError, NumericalError, SolverError
from .experiments import (bl_check, clt_check, coupling_experiment, estimate_stiffness, high_points,
                          increment_gaussianity, max_scaling, mgf_check, tail_curve, tile_decoupling,
                          truncated_count)
from .experiments.stats import Check, Estimate, ExperimentReport
from .harmonic import SmoothingWindow, build_schedule, increment_kernel, smoothed_weights
from .laplace import DirichletOperator, gff_variance
from .lattice import LatticeDomain, dist_to_boundary
from .potential import from_spec
from .sampler import sample_ensemble
from .store import EnsembleStore, ExactEnsemble
from .weights import site_weights

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK, EXIT_INTEGRITY = 0, 2, 3, 4, 5

SUBCOMMANDS = [k for k in C.KINDS] + ["run", "smoke"]


# ---------------------------------------------------------------- helpers
def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


def _write_report(run: RunDir, rep: ExperimentReport, stem: str = "report"):
    run.write_text(f"{stem}.json", rep.to_json() + "\n")
    if rep.rows:
        run.write_text(f"{stem}.csv", rep.to_csv())


def _potential(cfg):
    return from_spec(cfg["potential"])


def _oracle_slope(sizes) -> float:
    v = [gff_variance(DirichletOperator(LatticeDomain(N)), (0, 0)) for N in sizes]
    return float(np.polyfit(np.log(sizes), v, 1)[0])


def resolve_g(cfg, run: RunDir) -> float:
    """g from the config: a number, the exact Gaussian regression slope, or an estimate."""
    g = cfg["g"]
    if isinstance(g, (int, float)):
        return float(g)
    if g == "oracle":
        return _oracle_slope(cfg["g_sizes"])
    est = estimate_stiffness(_potential(cfg), cfg["g_sizes"], C.sampler_config(cfg, child_seed(cfg["seed"], 7)),
                             exact=cfg["exact"], n_boot=cfg["stats"]["n_boot"], seed=cfg["seed"],
                             threads=cfg["threads"])
    _write_report(run, est.report(), "g_estimate")
    if not est.g_hat > 0:
        raise NumericalError(f"stiffness estimate is not positive ({est.g_hat:.4g})")
    return est.g_hat


def get_ensemble(cfg, run: RunDir, N: int, observables=None):
    """The ensemble an experiment analyses: a stored one, exact draws, or fresh chains."""
    if cfg["ensemble"]:
        ens = EnsembleStore.load(cfg["ensemble"])
        head = Path(ens.path)
        run.add_input(head, "ensemble header")
        run.add_input(head.parent / json.loads(head.read_text())["payload"], "ensemble payload")
        if ens.N != N:
            raise ConfigError(f"stored ensemble has N={ens.N}, config asks for N={N}")
        return ens
    seed = child_seed(cfg["seed"], N)
    if cfg["exact"]:
        ens = ExactEnsemble(N, cfg["sampler"]["n_samples"], seed)
    else:
        ens = sample_ensemble(LatticeDomain(N), _potential(cfg), C.sampler_config(cfg, seed),
                              observables=observables, threads=cfg["threads"])
    if cfg["save_ensembles"]:
        store = ens.to_store() if isinstance(ens, ExactEnsemble) else ens
        store.save(run.file(f"ensembles/N{N}"))
        store.path = f"ensembles/N{N}.json"
        ens = store
    return ens


def _functional(cfg, dom: LatticeDomain, default: str):
    f = cfg["functional"]
    kind = f["kind"] or default
    x = tuple(f["x"])
    N = dom.N
    if kind == "site":
        return site_weights(dom, x)
    if kind == "smoothed":
        R = f["R"] or N / 2
        return smoothed_weights(dom, x, SmoothingWindow(float(R), f["width"], min_half_width=0.5))
    R1 = f["R1"] or N / 2
    R2 = f["R2"] or N / 5
    return increment_kernel(dom, x, float(R1), float(R2), f["width"], min_half_width=0.5)


def _schedule(cfg, Delta):
    s = cfg["schedule"]
    return build_schedule(float(Delta), s["eps"], s["c"], s["window_width"], s["min_half_width"])


def _oracle_op(cfg, dom):
    if cfg["potential"]["name"] == "quadratic" and cfg["stats"]["oracle"]:
        return DirichletOperator(dom)
    return None


def _boundary(cfg):
    b = cfg["boundary"]
    if isinstance(b, (int, float)):
        return float(b)
    kind = b["kind"]
    if kind == "constant":
        return float(b.get("value", 1.0))
    a, c = float(b.get("a", 1.0)), float(b.get("b", 0.0))
    if kind == "linear":
        return lambda x1, x2: a * x1 + c * x2
    return lambda x1, x2: a * x1 * x2


# ---------------------------------------------------------------- experiments
def do_sample(cfg, run):
    N = cfg["N"]
    ens = get_ensemble(cfg, run, N)
    rep = ExperimentReport("sample", {"N": N, "potential": cfg["potential"], "exact": cfg["exact"],
                                      "sampler": cfg["sampler"], "seed": cfg["seed"]}, inputs=[ens.describe()])
    diag = getattr(ens, "diagnostics", {})
    row = {k: v for k, v in sorted(diag.items()) if k != "flags"}
    if row:
        rep.rows.append(row)
    rep.flags += list(diag.get("flags", []))
    return rep


def do_estimate_g(cfg, run):
    p = _potential(cfg)
    sizes = cfg["sizes"]
    est = estimate_stiffness(p, sizes, C.sampler_config(cfg, cfg["seed"]), exact=cfg["exact"],
                             n_boot=cfg["stats"]["n_boot"], seed=cfg["seed"], threads=cfg["threads"])
    rep = est.report()
    if p.name == "quadratic":
        ref = _oracle_slope(sizes)
        rel = abs(est.g_hat - ref) / ref
        rep.estimates["exact_slope"] = Estimate(ref, exact=True)
        rep.checks.append(Check("within_5pct_of_exact_slope", rel <= 0.05, rel, 0.05))
    return rep


def do_max_scaling(cfg, run):
    g = resolve_g(cfg, run)
    st = cfg["stats"]
    ens = {N: get_ensemble(cfg, run, N) for N in cfg["sizes"]}
    return max_scaling(ens, g, st["delta"], rel_tol=st["rel_tol"], n_boot=st["n_boot"], seed=cfg["seed"])


def do_high_points(cfg, run):
    g = resolve_g(cfg, run)
    st = cfg["stats"]
    ens = get_ensemble(cfg, run, cfg["N"])
    return high_points(ens, st["eta"], g, band=st["band"], n_boot=st["n_boot"], seed=cfg["seed"])


def do_tail(cfg, run):
    g = resolve_g(cfg, run)
    st = cfg["stats"]
    ens = get_ensemble(cfg, run, cfg["N"])
    op = _oracle_op(cfg, ens.domain)
    ov = gff_variance(op, tuple(cfg["site"])) if op is not None else None
    return tail_curve(ens, tuple(cfg["site"]), g, u_grid=st["u_grid"], n_grid=st["n_grid"], oracle_variance=ov,
                      slack=st["slack"])


def do_bl_check(cfg, run):
    st = cfg["stats"]
    ens = get_ensemble(cfg, run, cfg["N"])
    f = _functional(cfg, ens.domain, "site")
    return bl_check(ens, f, DirichletOperator(ens.domain), n_boot=st["n_boot"], seed=cfg["seed"],
                    slack=st["slack"])


def do_mgf(cfg, run):
    g = resolve_g(cfg, run)
    st = cfg["stats"]
    ens = get_ensemble(cfg, run, cfg["N"])
    v = tuple(cfg["site"])
    sch = _schedule(cfg, dist_to_boundary(ens.domain, v))
    t = st["t_grid"] if st["t_grid"] is not None else np.linspace(-2 / math.sqrt(g), 2 / math.sqrt(g), 9)
    return mgf_check(ens, v, sch, t, g=g, op=_oracle_op(cfg, ens.domain), n_boot=st["n_boot"], seed=cfg["seed"],
                     slack=st["slack"])


def do_increments(cfg, run):
    g = resolve_g(cfg, run)
    st = cfg["stats"]
    K = cfg["schedule"]["K"]
    ens = get_ensemble(cfg, run, cfg["N"])
    v = tuple(cfg["site"])
    sch = _schedule(cfg, dist_to_boundary(ens.domain, v))
    v2 = tuple(cfg["site2"]) if cfg["site2"] else None
    sch2 = _schedule(cfg, dist_to_boundary(ens.domain, v2)) if v2 else None
    lam = st["lambda_grid"] if st["lambda_grid"] is not None else [np.zeros(K), np.ones(K)]
    return increment_gaussianity(ens, v, sch, K, lam, g=g, v2=v2, schedule2=sch2, op=_oracle_op(cfg, ens.domain),
                                 var_tol=st["var_tol"], n_boot=st["n_boot"], seed=cfg["seed"], slack=st["slack"])


def do_coupling(cfg, run):
    st = cfg["stats"]
    return coupling_experiment(cfg["sizes"], _potential(cfg), _boundary(cfg), C.sampler_config(cfg, cfg["seed"]),
                               r_frac=cfg["r_frac"], r_list=cfg["r_list"], exact=cfg["exact"],
                               Lambda=cfg["Lambda"], n_boot=st["n_boot"], seed=cfg["seed"], slack=st["slack"],
                               threads=cfg["threads"])


def do_clt(cfg, run):
    st = cfg["stats"]
    ens = get_ensemble(cfg, run, cfg["N"])
    rho = _functional(cfg, ens.domain, "increment")
    return clt_check(ens, rho, DirichletOperator(ens.domain), check_ratio=cfg["potential"]["name"] == "quadratic",
                     n_boot=st["n_boot"], seed=cfg["seed"], slack=st["slack"])


def do_truncated_count(cfg, run):
    g = resolve_g(cfg, run)
    st, s = cfg["stats"], cfg["schedule"]
    ens = get_ensemble(cfg, run, cfg["N"])
    eta = st["eta"] if st["mode"] == "high_points" else None
    return truncated_count(ens, st["beta"], s["K"], g, mode=st["mode"], eta=eta, eps=s["eps"], c=s["c"],
                           stride=st["stride"], window_width=s["window_width"], min_half_width=s["min_half_width"],
                           n_boot=st["n_boot"], seed=cfg["seed"], slack=st["slack"])


def do_tiles(cfg, run):
    g = resolve_g(cfg, run)
    st = cfg["stats"]
    ens = get_ensemble(cfg, run, cfg["N"])
    return tile_decoupling(ens, st["eta_tile"], st["beta"], g, eps=cfg["schedule"]["eps"], stride=st["stride"],
                           n_boot=st["n_boot"], seed=cfg["seed"], slack=st["slack"])


def do_acceptance(cfg, run):
    from .acceptance import run_criteria, summary_report

    def progress(r):
        _log(r.line())
        for n in r.notes:
            _log(f"    {n}")
        run.write_json(f"criteria/criterion_{r.number:02d}.json", r.to_dict())
        for name, rep in r.reports.items():
            if rep.rows:
                run.write_text(f"criteria/criterion_{r.number:02d}_{name}.csv", rep.to_csv())

    res = run_criteria(cfg["criteria"], cfg["profile"], cfg["seed"], cfg["threads"], progress=progress)
    return summary_report(res, cfg["profile"], cfg["seed"])


# ---------------------------------------------------------------- report over manifests
def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def summary_rows(man: dict) -> list[dict]:
    d = Path(man["_dir"])
    kind = man["experiment"]
    rep = json.loads((d / "report.json").read_text())
    est = rep.get("estimates", {})
    rows = []

    def row(quantity, e=None, value=None, reference=None, passed=None, **extra):
        e = e or {}
        ci = e.get("ci") or [None, None]
        rows.append({"experiment": kind, "run": d.name, "quantity": quantity,
                     "value": e.get("value", value), "se": e.get("se"), "ci_low": ci[0], "ci_high": ci[1],
                     "reference": reference, "passed": rep["passed"] if passed is None else passed, **extra})

    if kind == "estimate-g":
        ref = est.get("exact_slope", {}).get("value")
        row("g_hat", est["g_hat"], reference=ref)
    elif kind == "max-scaling":
        csv_rows = list(csv.DictReader(io.StringIO((d / "report.csv").read_text())))
        for r in csv_rows:
            N = int(r["N"])
            row(f"median max/log N, N={N}", est[f"median_N{N}"], reference=float(r["target"]),
                abs_gap=float(r["abs_gap"]))
    elif kind == "high-points":
        eta = rep["parameters"]["eta"]
        row("median log|H|/log N", est["median_exponent"], reference=2 * (1 - eta ** 2))
    elif kind == "acceptance":
        for c in rep["checks"]:
            row(c["name"], value=None, passed=c["passed"], reference=c["detail"])
    else:
        for c in rep["checks"]:
            row(c["name"], value=c["value"], reference=c["bound"], passed=c["passed"])
    return rows


def do_report(cfg, run):
    rows = []
    for m in cfg["manifests"]:
        man = read_manifest(m, verify=True)
        run.add_input(Path(man["_dir"]) / "manifest.json", "manifest")
        rows += summary_rows(man)
    rep = ExperimentReport("report", {"manifests": [str(Path(m)) for m in cfg["manifests"]]})
    rep.rows = rows
    rep.checks.append(Check("all_runs_passed", all(bool(r["passed"]) for r in rows), None, None))
    keys = ["experiment", "quantity", "value", "se", "ci_low", "ci_high", "reference", "passed"]
    if any("abs_gap" in r for r in rows):
        keys.insert(6, "abs_gap")
    table = [keys] + [[_fmt(r.get(k)) for k in keys] for r in rows]
    w = [max(len(t[i]) for t in table) for i in range(len(keys))]
    text = "\n".join("  ".join(c.ljust(w[i]) for i, c in enumerate(t)).rstrip() for t in table) + "\n"
    run.write_text("summary.txt", text)
    print(text, end="")
    return rep


RUNNERS = {
    "sample": do_sample, "estimate-g": do_estimate_g, "max-scaling": do_max_scaling,
    "high-points": do_high_points, "tail": do_tail, "bl-check": do_bl_check, "mgf": do_mgf,
    "increments": do_increments, "coupling": do_coupling, "clt": do_clt, "truncated-count": do_truncated_count,
    "tiles": do_tiles, "report": do_report, "acceptance": do_acceptance,
}


# ---------------------------------------------------------------- entry point
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glfield", description="Ginzburg-Landau gradient field experiments")
    ap.add_argument("--version", action="version", version=f"glfield {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="<subcommand>")
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, required=name not in ("smoke", "report"),
                        help="JSON experiment config")
        sp.add_argument("--check", action="store_true", default=None,
                        help="exit with status 4 when a check fails")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--seed", type=int, default=None)
        if name == "report":
            sp.add_argument("manifests", nargs="*", type=Path, help="manifest files or run directories")
    return ap


def execute(cfg: dict) -> tuple[int, Path]:
    kind = cfg["experiment"]
    addr = C.address(cfg)
    run = RunDir(cfg["output_dir"], f"{kind}-{addr[:16]}")
    try:
        run.write_json("config.resolved.json", C.content(cfg))
        rep = RUNNERS[kind](cfg, run)
        _write_report(run, rep)
        man_path, man, reused = run.commit(kind, addr, rep.passed, C.runtime(cfg))
    except BaseException:
        run.abort()
        raise
    for c in rep.checks:
        _log(f"{'ok  ' if c.passed else 'FAIL'} {c.name}" + ("" if c.value is None else f" = {c.value:.6g}"))
    for f in rep.flags:
        _log(f"flag: {f}")
    _log(("unchanged " if reused else "wrote ") + str(man_path))
    print(man_path)
    if cfg["check"] and not rep.passed:
        return EXIT_CHECK, man_path
    return EXIT_OK, man_path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = C.load(args.config) if args.config else {}
        cmd = args.command
        if cmd == "smoke":
            raw = {"profile": "smoke", **raw}
            kind = "acceptance"
        elif cmd == "run":
            kind = None
        else:
            kind = cmd
        if cmd == "report" and args.manifests:
            raw = {**raw, "manifests": [str(m) for m in args.manifests]}
        cfg = C.resolve(raw, kind, seed=args.seed, threads=args.threads, check=args.check)
        code, _ = execute(cfg)
        return code
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except IntegrityError as exc:
        _log(f"integrity error: {exc}")
        return EXIT_INTEGRITY
    except (NumericalError, SolverError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _log(f"numerical error: {exc}")
        return EXIT_NUMERICAL
    except (GLFieldError, ValueError) as exc:
        _log(f"input error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
