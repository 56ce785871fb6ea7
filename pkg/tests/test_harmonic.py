import numpy as np
import pytest

from glfield.errors import GeometryError, ParameterError
from glfield.harmonic import (MEASURE_CACHE, SmoothingWindow, build_schedule, circle_average,
                              circle_weights, harmonic_test_family, increment_kernel, increment_kernels,
                              increments, schedule_values, smoothed_average, smoothed_weights,
                              telescoping_values)
from glfield.laplace import harmonic_measure
from glfield.lattice import build_box, l1_ball
from glfield.state import FieldState


@pytest.fixture(scope="module")
def dom():
    return build_box(40)


@pytest.fixture(scope="module")
def family(dom):
    return harmonic_test_family(dom, n_random=5, seed=3)


def test_family_is_harmonic(dom, family):
    assert len(family) == 12
    for h in family:
        inner = h[1:-1, 1:-1]
        lap = 4 * inner - h[:-2, 1:-1] - h[2:, 1:-1] - h[1:-1, :-2] - h[1:-1, 2:]
        assert np.max(np.abs(lap)) <= 1e-9 * max(1.0, np.abs(h).max())


def test_circle_average_basics(rng):
    d = build_box(10)
    c = np.full(d.shape, 3.25)
    assert circle_average(c, (1, 2), 5.5) == pytest.approx(3.25, abs=1e-12)
    X1, _ = d.coordinates()
    assert abs(circle_average((X1 - 1).astype(float), (1, 2), 5.5)) <= 1e-12
    f = rng.normal(size=d.shape)
    arms = [f[11, 11], f[9, 11], f[10, 12], f[10, 10]]
    assert circle_average(f, (0, 1), 1.5) == pytest.approx(np.mean(arms), abs=1e-15)


def test_cached_weights_match_direct_solve(dom):
    for v, r in (((3, -4), 7.3), ((-20, 10), 12.0), ((0, 0), 2.0)):
        a = circle_weights(dom, v, r)
        b = harmonic_measure(dom, l1_ball(dom, v, r), v)
        assert np.array_equal(a.indices, b.indices)
        assert np.max(np.abs(a.weights - b.weights)) <= 1e-13


def test_circle_average_repeatable(dom, rng):
    f = rng.normal(size=dom.shape)
    assert circle_average(f, (2, 2), 9.7) == circle_average(f, (2, 2), 9.7)
    n = len(MEASURE_CACHE)
    circle_average(f, (5, -1), 9.7)
    assert len(MEASURE_CACHE) == n


def test_ball_leaving_domain(dom):
    with pytest.raises(GeometryError):
        circle_average(np.zeros(dom.shape), (35, 0), 7.0)


def test_window_rounding_and_weights():
    w = SmoothingWindow(10.0, 0.2)
    assert w.radii.tolist() == [8, 9, 10, 11, 12]
    assert w.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(w.weights > 0)
    assert w.weights[2] == w.weights.max()
    with pytest.raises(ParameterError):
        SmoothingWindow(10.3, 0.01)
    assert SmoothingWindow(10.3, 0.01, min_half_width=0.5).radii.tolist() == [10]


def test_degenerate_window_bit_exact(dom, rng):
    f = rng.normal(size=dom.shape)
    w = SmoothingWindow(9.0, 0.01)
    assert w.radii.tolist() == [9]
    assert smoothed_average(f, (1, 1), w) == circle_average(f, (1, 1), 9.0)


def test_smoothed_reproduces_harmonic(dom, family):
    v = (4, -7)
    for w in (SmoothingWindow(12.0, 0.25), SmoothingWindow(20.5, 0.1), SmoothingWindow(3.0, 0.4)):
        for h in family:
            got = smoothed_average(h, v, w)
            assert abs(got - h[v[0] + 40, v[1] + 40]) <= 1e-8 * max(1.0, np.abs(h).max())


def test_schedule_example():
    s = build_schedule(100, 0.1, 0.5)
    assert s.M == 24
    assert s.r[0] == 100
    assert np.allclose(s.r_plus / s.r_minus, (1 + 1e-3) / (1 - 1e-3), rtol=1e-14)
    assert np.all(np.diff(s.r) < 0)
    assert s.r[-1] >= 100 ** 0.5 / 1.1


@pytest.mark.parametrize("args", [(100, 0.3, 0.5), (100, 0.1, 1.0), (1.1, 0.1, 0.5), (100, 0.1, 0.5, 0.2)])
def test_schedule_errors(args):
    with pytest.raises(ParameterError):
        build_schedule(*args)


def test_increment_kernels_annihilate_family(dom, family):
    v = (2, -3)
    s = build_schedule(36, 0.1, 0.3)
    kernels = increment_kernels(dom, v, s, 4)
    kernels.append(increment_kernel(dom, v, 30.0, 11.0, 0.1))
    kernels.append(increment_kernel(dom, v, 8.0, 3.0, 0.05))
    for rho in kernels:
        assert rho.total == pytest.approx(0.0, abs=1e-12)
        for h in family:
            assert abs(rho.apply(h)) <= 1e-8 * np.abs(h).max() * rho.l1_norm


def test_increment_kernel_matches_smoothed_difference(dom, rng):
    f = rng.normal(size=dom.shape)
    v = (0, 5)
    rho = increment_kernel(dom, v, 20.0, 9.0, 0.1)
    want = smoothed_average(f, v, SmoothingWindow(9.0, 0.1)) - smoothed_average(f, v, SmoothingWindow(20.0, 0.1))
    assert abs(rho.apply(f) - want) <= 1e-12
    assert rho.apply(np.ones(dom.shape)) == pytest.approx(0, abs=1e-13)
    with pytest.raises(ParameterError):
        increment_kernel(dom, v, 20.0, 19.0, 0.1)
    with pytest.raises(ParameterError):
        increment_kernel(dom, v, 34.0, 9.0, 0.1)


def test_increments_trivial_fields(dom, family):
    s = build_schedule(30, 0.1, 0.2)
    assert np.all(increments(np.full(dom.shape, 2.0), (1, 1), s, 3) == pytest.approx(0, abs=1e-12))
    for h in family[:7]:
        u = increments(h, (1, 1), s, 3)
        assert np.max(np.abs(u)) <= 1e-8 * max(1, np.abs(h).max())
    with pytest.raises(ParameterError):
        increments(family[1], (1, 1), s, s.M + 1)


def test_increment_telescoping(dom, rng):
    f = rng.normal(size=dom.shape)
    s = build_schedule(36, 0.1, 0.3)
    K = 4
    u = increments(f, (0, 0), s, K)
    xp, xm = schedule_values(f, (0, 0), s)
    a = [s.macro_index(m, K) for m in range(1, K)]
    lhs = u.sum() + sum(xm[k] - xp[k] for k in a)
    assert abs(lhs - (xp[s.M] - xm[0])) <= 1e-10


def test_telescoping_identity(dom, rng):
    s = build_schedule(38, 0.15, 0.2)
    st = FieldState(dom, np.zeros(dom.shape))
    tv = telescoping_values(st, (1, -1), s, 0.0)
    assert np.all(tv.W == 1) and np.all(tv.Y == 1) and np.all(tv.Z == 1)
    tv = telescoping_values(np.full(dom.shape, 0.7), (1, -1), s, 2.0)
    assert np.allclose(tv.W, 1, atol=1e-13) and np.allclose(tv.Y, 1, atol=1e-13)
    assert np.allclose(tv.Z, np.exp(1.4), rtol=1e-13)
    for t in (-3.0, 0.5, 7.0, 100.0):
        f = rng.normal(size=dom.shape) * 5
        tv = telescoping_values(f, (2, 0), s, t)
        assert tv.identity_error() <= 1e-9
        assert len(tv.log_W) == len(tv.log_Y) == len(tv.log_Z) == s.M
    with pytest.raises(ParameterError):
        telescoping_values(f, (2, 0), s, 101.0)


def test_telescoping_overflow_flagged(dom):
    s = build_schedule(38, 0.15, 0.2)
    f = np.full(dom.shape, 1e4)
    tv = telescoping_values(f, (0, 0), s, 100.0)
    assert tv.overflow
    assert np.isfinite(tv.log_Z).all()


def test_kernel_csv(tmp_path, dom):
    rho = circle_weights(dom, (0, 0), 2.0)
    rho.to_csv(tmp_path / "k.csv")
    lines = (tmp_path / "k.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,weight" and len(lines) == 5
