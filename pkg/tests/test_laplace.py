import itertools

import numpy as np
import pytest

from glfield.errors import GeometryError, InputError
from glfield.laplace import (DirichletOperator, gff_variance, greens_column, harmonic_extension,
                             harmonic_measure, sample_exact_gff, sample_exact_gff_batch)
from glfield.lattice import build_box, l1_ball

# G(0,0) on D_N, N = 16, 32, 64, 128, 256; frozen from the dense-loop oracle at
# small N and the spectral solver (checked against cg) at large N.
G00 = {16: 0.7106073808868756, 32: 0.8209739881961879, 64: 0.9313039735023126,
       128: 1.0416248188560835, 256: 1.1519433801869987}


def dense_laplacian(N):
    """Independent construction: explicit loops over interior sites."""
    sites = [(a, b) for a in range(-N + 1, N) for b in range(-N + 1, N)]
    pos = {s: k for k, s in enumerate(sites)}
    L = np.zeros((len(sites), len(sites)))
    for s, k in pos.items():
        L[k, k] = 4
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            t = (s[0] + dx, s[1] + dy)
            if t in pos:
                L[k, pos[t]] = -1
    return L, sites, pos


def test_three_by_three():
    op = DirichletOperator(build_box(1))
    assert greens_column(op, (0, 0)).values[0] == pytest.approx(0.25, abs=1e-15)
    assert gff_variance(op, (0, 0)) == pytest.approx(0.25, abs=1e-15)


def test_five_by_five_against_dense_inverse():
    L, sites, pos = dense_laplacian(2)
    Ginv = np.linalg.inv(L)
    op = DirichletOperator(build_box(2))
    col = greens_column(op, (0, 0))
    for s in sites:
        assert col[s] == pytest.approx(Ginv[pos[(0, 0)], pos[s]], abs=1e-13)
    assert col[(0, 0)] == pytest.approx(0.375, abs=1e-14)


def test_symmetry_and_positivity():
    op = DirichletOperator(build_box(6))
    a = greens_column(op, (0, 1))
    b = greens_column(op, (1, 0))
    assert abs(a[(1, 0)] - b[(0, 1)]) <= 1e-10
    assert np.all(a.values >= 0) and a[(0, 1)] > 0


@pytest.mark.parametrize("method", ["cholmod", "dense", "splu", "cg"])
def test_backends_agree_on_ball(method):
    d = build_box(12)
    ball = l1_ball(d, (1, 2), 8.5)
    ref = greens_column(DirichletOperator(ball, method="dense"), (2, 2)).values
    if method == "cg":
        g = greens_column(DirichletOperator(ball), (2, 2), method="cg").values
    else:
        g = greens_column(DirichletOperator(ball, method=method), (2, 2)).values
    assert np.max(np.abs(g - ref)) <= 1e-11


def test_spectral_matches_cg():
    op = DirichletOperator(build_box(20))
    a = greens_column(op, (3, -5)).values
    b = greens_column(op, (3, -5), method="cg").values
    assert np.max(np.abs(a - b)) <= 1e-10


def test_frozen_center_variances_and_slope():
    vals = []
    for N in (16, 32, 64, 128):
        v = gff_variance(DirichletOperator(build_box(N)), (0, 0))
        assert v == pytest.approx(G00[N], rel=1e-12)
        vals.append(v)
    assert np.all(np.diff(vals) > 0)
    slope = np.polyfit(np.log([16, 32, 64, 128]), vals, 1)[0]
    # G = L^{-1} counts random-walk visits divided by 4: slope 1/(2 pi)
    assert slope == pytest.approx(1 / (2 * np.pi), rel=0.05)


def test_harmonic_extension_constant_and_linear():
    d = build_box(5)
    op = DirichletOperator(d)
    X1, X2 = d.coordinates()
    h = harmonic_extension(op, np.full(d.shape, 2.5))
    assert np.max(np.abs(h - 2.5)) <= 1e-12
    h = harmonic_extension(op, X1.astype(float))
    assert np.max(np.abs(h - X1)) <= 1e-12


def test_harmonic_extension_dense_oracle(rng):
    d = build_box(2)
    op = DirichletOperator(d)
    f = rng.choice([-1.0, 1.0], size=d.shape)
    L, sites, pos = dense_laplacian(2)
    rhs = np.zeros(len(sites))
    for s, k in pos.items():
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            t = (s[0] + dx, s[1] + dy)
            if t not in pos:
                rhs[k] += f[t[0] + 2, t[1] + 2]
    want = np.linalg.solve(L, rhs)
    h = harmonic_extension(op, f)
    for s, k in pos.items():
        assert h[s[0] + 2, s[1] + 2] == pytest.approx(want[k], abs=1e-13)
    b = d.boundary_mask
    assert np.array_equal(h[b], f[b])
    inner = h[1:-1, 1:-1]
    lap = 4 * inner - h[:-2, 1:-1] - h[2:, 1:-1] - h[1:-1, :-2] - h[1:-1, 2:]
    assert np.max(np.abs(lap)) <= 1e-10


def test_harmonic_extension_on_ball_dict_and_missing():
    d = build_box(6)
    ball = l1_ball(d, (0, 0), 4.5)
    op = DirichletOperator(ball)
    data = {x: float(x[0] * x[1]) for x in ball.sites("boundary")}
    h = harmonic_extension(op, data)
    for x in ball.sites():
        assert h[x[0] + 6, x[1] + 6] == pytest.approx(x[0] * x[1], abs=1e-12)
    data.pop(next(iter(data)))
    with pytest.raises(InputError):
        harmonic_extension(op, data)


def test_restriction_then_extension_is_identity(rng):
    d = build_box(8)
    op = DirichletOperator(d)
    h = harmonic_extension(op, rng.normal(size=d.shape))
    sub = d.sub_box((1, -1), 4)
    h2 = harmonic_extension(DirichletOperator(sub), h)
    m = sub.full_mask()
    assert np.max(np.abs(h2[m] - h[m])) <= 1e-10


def test_plus_ball_harmonic_measure():
    d = build_box(3)
    hm = harmonic_measure(d, l1_ball(d, (0, 0), 1.5), (0, 0))
    assert np.allclose(hm.weights, 0.25, atol=1e-15)


def test_harmonic_measure_reproduces_harmonic_functions():
    d = build_box(12)
    X1, X2 = d.coordinates()
    h = (X1 ** 3 - 3 * X1 * X2 ** 2).astype(float)
    for R in (2.0, 3.5, 7.0, 9.2):
        hm = harmonic_measure(d, l1_ball(d, (1, -2), R), (1, -2))
        assert hm.total == pytest.approx(1.0, abs=1e-9)
        assert np.all(hm.weights >= 0)
        assert hm.apply(h) == pytest.approx(h[13, 10], abs=1e-9 * np.abs(h).max())


def test_harmonic_measure_errors():
    d = build_box(4)
    with pytest.raises(GeometryError):
        harmonic_measure(d, l1_ball(d, (0, 0), 1.0), (0, 0))
    with pytest.raises(GeometryError):
        harmonic_measure(d, l1_ball(d, (0, 0), 2.5), (2, 0))


def test_harmonic_measure_random_walk_oracle():
    """Exit frequencies of 10^6 simple random walks from the center of B_2.5."""
    d = build_box(4)
    hm = harmonic_measure(d, l1_ball(d, (0, 0), 2.5), (0, 0))
    g = np.random.default_rng(7)
    n = 1_000_000
    pos = np.zeros((n, 2), dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    steps = np.array([(1, 0), (-1, 0), (0, 1), (0, -1)])
    while alive.any():
        idx = np.flatnonzero(alive)
        pos[idx] += steps[g.integers(0, 4, idx.size)]
        alive[idx] = np.abs(pos[idx]).sum(axis=1) < 2
    keys = pos[:, 0] * 100 + pos[:, 1]
    for (x1, x2), w in zip(hm.sites(), hm.weights):
        p = np.mean(keys == x1 * 100 + x2)
        se = np.sqrt(w * (1 - w) / n)
        assert abs(p - w) <= 3 * se, ((x1, x2), p, w)


def test_exact_sampler_three_by_three():
    op = DirichletOperator(build_box(1))
    x = op.sample(np.random.default_rng(1), 100_000)[:, 0]
    se = 0.25 * np.sqrt(2 / x.size)
    assert abs(x.var() - 0.25) <= 3 * se


def test_exact_sampler_mean_and_covariance():
    d = build_box(4)
    op = DirichletOperator(d)
    n = 100_000
    f = sample_exact_gff_batch(op, np.random.default_rng(2), n)
    m = f.mean(axis=0)
    sd = f.std(axis=0)
    inner = ~d.boundary_mask
    assert np.all(np.abs(m[inner]) <= 4 * sd[inner] / np.sqrt(n))
    assert np.all(f[:, d.boundary_mask] == 0)
    col = greens_column(op, (0, 0)).on_grid()
    c = f[:, 4, 4][:, None, None] * f
    est = c.mean(axis=0)
    se = c.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(est - col)[inner] <= 3 * se[inner])


def test_cholesky_sampler_covariance_on_ball():
    d = build_box(5)
    ball = l1_ball(d, (0, 0), 4.5)
    op = DirichletOperator(ball)
    x = op.sample(np.random.default_rng(3), 100_000)
    k = op.local_index((0, 0))
    g = greens_column(op, (0, 0)).values
    prod = x[:, k][:, None] * x
    est, se = prod.mean(axis=0), prod.std(axis=0) / np.sqrt(x.shape[0])
    assert np.all(np.abs(est - g) <= 3.5 * se)


def test_exact_sampler_deterministic():
    op = DirichletOperator(build_box(8))
    a = sample_exact_gff(op, np.random.default_rng(99)).values
    b = sample_exact_gff(op, np.random.default_rng(99)).values
    assert a.tobytes() == b.tobytes()
