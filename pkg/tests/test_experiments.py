import json
import math

import numpy as np
import pytest

from glfield.errors import GeometryError, InputError, ParameterError
from glfield.experiments import (AverageScanner, Estimate, ExperimentReport, annihilation_error, bc_interval,
                                 bl_check, bootstrap, boundary_field, clt_check, coupling_experiment,
                                 estimate_stiffness, high_points, increment_gaussianity, max_scaling,
                                 max_statistics, mgf_check, separation_scale, tail_curve, tile_decoupling,
                                 tiling, truncated_count)
from glfield.experiments import data
from glfield.experiments.stats import inflation, top_weight
from glfield.harmonic import (SmoothingWindow, build_schedule, increment_kernel, smoothed_average)
from glfield.laplace import DirichletOperator, gff_variance
from glfield.lattice import LatticeDomain
from glfield.potential import dipole_gas, quadratic
from glfield.sampler import SamplerConfig, sample_ensemble
from glfield.store import ExactEnsemble
from glfield.weights import site_weights

G0 = 1 / (2 * math.pi)


@pytest.fixture(scope="module")
def gff32():
    return ExactEnsemble(32, 1000, 5)


@pytest.fixture(scope="module")
def op32():
    return DirichletOperator(LatticeDomain(32))


# ---------------------------------------------------------------- stats
def test_bootstrap_resample_depends_only_on_seed_and_index():
    x = np.arange(50.0)
    a = bootstrap(x, lambda b: b.mean(axis=1), 40, seed=3)
    b = bootstrap(x, lambda b: b.mean(axis=1), 40, seed=3)
    assert np.array_equal(a, b)
    # same indices for another statistic of data of equal length
    c = bootstrap(2 * x, lambda b: b.mean(axis=1), 40, seed=3)
    assert np.allclose(c, 2 * a)


def test_bc_interval_covers_mean_of_normal(rng):
    x = rng.normal(size=400)
    reps = bootstrap(x, lambda b: b.mean(axis=1), 1000, seed=1)
    lo, hi = bc_interval(reps, x.mean())
    assert lo < x.mean() < hi
    assert hi - lo == pytest.approx(2 * 1.96 / math.sqrt(400), rel=0.2)


def test_inflation_and_top_weight():
    assert inflation(100, 25) == pytest.approx(2.0)
    assert inflation(100, 400) == 1.0
    assert top_weight(np.zeros(100)) == pytest.approx(0.01)
    assert top_weight(np.r_[np.zeros(99), 50.0]) == pytest.approx(1.0)


def test_estimate_requires_uncertainty():
    with pytest.raises(ValueError):
        Estimate(1.0)
    assert Estimate(1.0, exact=True).to_dict()["exact"]


def test_report_json_round_trip_and_nan():
    rep = ExperimentReport("demo", {"N": 8, "x": np.float64(1.5)})
    rep.estimates["a"] = Estimate(math.nan, 0.1)
    rep.rows = [{"u": 0.5, "v": 1}, {"u": 0.25, "w": "x"}]
    d = json.loads(rep.to_json())
    assert d["estimates"]["a"]["value"] is None
    assert d["schema_version"] == 1
    back = ExperimentReport.from_dict(d)
    assert back.id == rep.id
    assert rep.to_csv().splitlines()[0] == "u,v,w"


# ---------------------------------------------------------------- stiffness
def test_stiffness_exact_gff_matches_green_function_slope():
    sizes = [8, 16, 32]
    ref = np.polyfit(np.log(sizes), [gff_variance(DirichletOperator(LatticeDomain(N)), (0, 0)) for N in sizes],
                     1)[0]
    est = estimate_stiffness(quadratic(), sizes, SamplerConfig(n_samples=3000), n_boot=300)
    assert est.valid
    assert abs(est.g_hat - ref) <= 3 * est.se
    assert ref == pytest.approx(G0, rel=0.05)
    assert est.report().check("ess_at_least_100").passed


def test_stiffness_preconditions():
    with pytest.raises(ParameterError):
        estimate_stiffness(quadratic(), [8, 16])
    with pytest.raises(ParameterError):
        estimate_stiffness(quadratic(), [8, 16, 128])
    with pytest.raises(ParameterError):
        estimate_stiffness(dipole_gas(0.5), [8, 16, 32], exact=True)


def test_stiffness_flags_small_ess():
    est = estimate_stiffness(quadratic(), [8, 16, 32], SamplerConfig(n_samples=50), n_boot=100)
    assert not est.valid
    assert not est.report().passed


# ---------------------------------------------------------------- extremes
def test_max_statistics_exact(gff32):
    rep = max_statistics(gff32, G0, n_boot=300)
    med = rep.estimates["median"]
    assert rep.check("max_positive").passed
    assert med.ci[0] < med.value < med.ci[1]
    assert rep.estimates["target"].value == pytest.approx(2 * math.sqrt(G0))
    with pytest.raises(InputError):
        max_statistics(ExactEnsemble(16, 50, 1), G0)


def test_max_scaling_rows(gff32):
    rep = max_scaling({16: ExactEnsemble(16, 300, 1), 32: gff32}, G0, n_boot=200)
    assert [r["N"] for r in rep.rows] == [16, 32]
    assert {c.name for c in rep.checks} >= {"abs_gap_non_increasing", "largest_N_within_tolerance"}


def test_high_points_exponent_in_range(gff32):
    rep = high_points(gff32, 0.3, G0, band=(0.0, 2.0), n_boot=200)
    assert rep.check("median_in_band").passed
    rep = high_points(gff32, 0.99, G0, n_boot=200)
    assert rep.flags


def test_tail_curve_gaussian_oracle(gff32, op32):
    rep = tail_curve(gff32, (0, 0), G0, oracle_variance=gff_variance(op32, (0, 0)))
    assert rep.passed, [(c.name, c.value) for c in rep.checks]
    with pytest.raises(ParameterError):
        tail_curve(gff32, (29, 0), G0)
    rep = tail_curve(gff32, (0, 0), G0, u_grid=[0.0, 1.0, 50.0])
    assert rep.flags and len(rep.rows) == 2


# ---------------------------------------------------------------- functionals
def test_bl_check_gaussian_ratio_one(gff32, op32):
    rep = bl_check(gff32, (0, 0), op32, n_boot=300)
    assert rep.passed
    r = rep.estimates["ratio"]
    assert abs(r.value - 1) <= 3 * r.se
    with pytest.raises(InputError):
        bl_check(gff32, (32, 0), op32)


def test_mgf_check_gaussian(gff32, op32):
    sch = build_schedule(32, 0.1, 0.3)
    rep = mgf_check(gff32, (0, 0), sch, np.linspace(-2, 2, 9), g=G0, op=op32, n_boot=300)
    assert rep.passed
    assert rep.check("zero_at_t0").value == 0.0
    with pytest.raises(ParameterError):
        mgf_check(gff32, (0, 0), sch, [10.0], g=G0)


def test_increments_gaussian_covariance(gff32, op32):
    sch = build_schedule(32, 0.1, 0.3)
    rep = increment_gaussianity(gff32, (0, 0), sch, 3, [np.zeros(3), np.ones(3)], g=G0, op=op32, n_boot=300)
    assert rep.check("covariance_oracle").passed
    assert rep.check("kurtosis_zero").passed
    assert rep.check("zero_lambda").value == 0.0
    with pytest.raises(ParameterError):
        increment_gaussianity(gff32, (0, 0), sch, 3, [np.ones(2)], g=G0)


def test_increments_two_point_mode(gff32):
    v1, v2 = (-6, 0), (6, 0)
    assert separation_scale(32, 2, v1, v2) == 1
    s1 = build_schedule(26, 0.1, 0.3)
    rep = increment_gaussianity(gff32, v1, s1, 2, [np.ones(2)], g=G0, v2=v2, schedule2=s1, n_boot=300)
    assert rep.check("two_point_factorization").passed
    with pytest.raises(ParameterError):
        separation_scale(32, 2, v1, v1)


def test_clt_check_and_annihilation(gff32, op32):
    rho = increment_kernel(gff32.domain, (0, 0), 16, 6, 0.0, min_half_width=0.5)
    assert annihilation_error(rho) < 1e-10
    rep = clt_check(gff32, rho, op32, check_ratio=True, n_boot=300)
    assert rep.passed
    with pytest.raises(InputError):
        clt_check(gff32, site_weights(gff32.domain, (0, 0)), op32)


# ---------------------------------------------------------------- counting
def test_average_scanner_matches_direct_average(gff32):
    dom = gff32.domain
    win = SmoothingWindow(5.0, 0.01, min_half_width=0.5)
    centers = np.array([[0, 0], [3, -4], [-10, 7]])
    field = next(gff32.iter_batches(2))
    for backend in ("compiled", "python"):
        sc = AverageScanner(dom, centers, 1, backend=backend)
        sc.add(np.arange(3), 0, win)
        got = sc(field)[..., 0]
        want = [[smoothed_average(f, tuple(c), win) for c in centers] for f in field]
        assert np.allclose(got, want, atol=1e-12)
    # the FFT path gives the same numbers
    sc = AverageScanner(dom, centers, 1)
    sc.DIRECT_NS = 1e9
    sc.add(np.arange(3), 0, win)
    assert np.allclose(sc(field)[..., 0], want, atol=1e-12)
    with pytest.raises(GeometryError):
        sc2 = AverageScanner(dom, centers, 1)
        sc2.add([0], 0, SmoothingWindow(1.0, 0.01, min_half_width=0.5))
    with pytest.raises(GeometryError):
        AverageScanner(dom, np.array([[30, 0]]), 1).add([0], 0, win)


def test_truncated_count_wide_windows_count_every_centre():
    e = ExactEnsemble(32, 200, 5)
    rep = truncated_count(e, 1e3, 2, G0, c=0.4, n_boot=100)
    assert rep.estimates["second_moment_ratio"].value == pytest.approx(1.0)
    assert rep.passed


def test_truncated_count_paley_zygmund(gff32):
    rep = truncated_count(gff32, 0.3, 2, G0, c=0.4, n_boot=200)
    assert rep.check("paley_zygmund").passed
    # P(Z >= 1) >= E[Z]^2 / E[Z^2] holds for any empirical distribution
    assert rep.check("paley_zygmund").value >= 0


def test_truncated_count_zero_counts_flagged():
    e = ExactEnsemble(32, 100, 5)
    rep = truncated_count(e, 1e-4, 2, G0, c=0.4, n_boot=50)
    assert rep.flags
    assert not rep.check("second_moment_ratio_bound").passed
    assert rep.estimates["P_Z_ge_1"].ci == (0.0, 0.03)
    with pytest.raises(ParameterError):
        truncated_count(e, 0.1, 2, G0, mode="high_points")


def test_tile_decoupling_independent_gaussian_tiles():
    assert tiling(64, 0.2) == (4, 32, 0)
    rep = tile_decoupling(ExactEnsemble(64, 300, 2), 0.2, 0.2, G0, n_boot=100)
    assert rep.passed
    with pytest.raises(GeometryError):
        tile_decoupling(ExactEnsemble(64, 10, 2), 0.4, 0.2, G0)


# ---------------------------------------------------------------- coupling
def test_boundary_field_forms():
    dom = LatticeDomain(4)
    b = boundary_field(dom, 2.0)
    assert b[dom.boundary_mask].min() == 2.0 and b[~dom.boundary_mask].max() == 0.0
    c = boundary_field(dom, lambda x1, x2: x1)
    assert c[0, 0] == -4 and c[4, 4] == 0
    with pytest.raises(InputError):
        boundary_field(dom, np.zeros((3, 3)))


def test_coupling_gaussian_difference_is_harmonic():
    rep = coupling_experiment([8, 16], quadratic(), lambda x1, x2: 0.1 * x1 * x2, SamplerConfig(n_samples=200),
                              n_boot=200)
    assert rep.passed
    assert max(r["median_stat_ii"] for r in rep.rows) < 1e-10


def test_coupling_chain_constant_shift():
    rep = coupling_experiment([8, 16], dipole_gas(0.5), 1.0, SamplerConfig(n_samples=120), n_boot=100)
    assert rep.check("median_non_increasing").passed
    assert max(r["median_stat_ii"] for r in rep.rows) < 1e-10
    with pytest.raises(ParameterError):
        coupling_experiment([8], quadratic(), 100.0, Lambda=1.0)


# ---------------------------------------------------------------- recorded observables and purity
def test_recorded_observables_equal_field_values():
    dom = LatticeDomain(8)
    w = site_weights(dom, (1, 2))
    cfg = SamplerConfig(n_samples=30, seed=4)
    full = sample_ensemble(dom, dipole_gas(0.5), cfg, observables={"x": w})
    lean = sample_ensemble(dom, dipole_gas(0.5), cfg, observables={"x": w}, keep_fields=False)
    direct = full.fields[:, 9, 10]
    assert np.array_equal(data.linear_values(lean, w), direct)
    assert np.array_equal(data.site_values(full, (1, 2)), direct)


def test_reports_are_pure_functions_of_inputs(gff32):
    a = max_statistics(gff32, G0, n_boot=100, seed=7).to_json()
    b = max_statistics(ExactEnsemble(32, 1000, 5), G0, n_boot=100, seed=7).to_json()
    assert a == b
