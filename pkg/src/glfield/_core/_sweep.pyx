# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled single-site sweep kernels (Metropolis and heat-bath)."""
from cython.parallel cimport prange
from libc.math cimport cos, sin, log, sqrt, exp, isfinite
from libc.stdint cimport uint64_t, int64_t, uint8_t
import numpy as np

cdef double TWO_PI = 6.283185307179586
cdef double U53 = 1.0 / 9007199254740992.0
cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef int MAX_ATTEMPTS = 85


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double uniform(uint64_t key, uint64_t ctr) noexcept nogil:
    cdef uint64_t b = mix64(key + (ctr + 1) * GOLDEN)
    return (<double>(b >> 11) + 0.5) * U53


cdef inline double normal(uint64_t key, uint64_t c1, uint64_t c2) noexcept nogil:
    cdef double u1 = uniform(key, c1)
    cdef double u2 = uniform(key, c2)
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


cdef inline double pot(int kind, double a, double x) noexcept nogil:
    if kind == 0:
        return 0.5 * x * x
    return 0.5 * x * x + a * cos(x)


cdef inline double dpot(int kind, double a, double x) noexcept nogil:
    if kind == 0:
        return x
    return x - a * sin(x)


cdef inline double d2pot(int kind, double a, double x) noexcept nogil:
    if kind == 0:
        return 1.0
    return 1.0 - a * cos(x)


cdef inline double local_energy(int kind, double a, double t, double n0, double n1,
                                double n2, double n3) noexcept nogil:
    return pot(kind, a, t - n0) + pot(kind, a, t - n1) + pot(kind, a, t - n2) + pot(kind, a, t - n3)


cdef inline int update_site(double[:, ::1] phi, Py_ssize_t i, Py_ssize_t j, int kind, double a,
                            int method, double step, uint64_t key, uint64_t ctr,
                            double c_minus, int64_t* attempts) noexcept nogil:
    """Update one site; returns 1 if moved, 0 if not, -1 on a numerical failure."""
    cdef double n0 = phi[i - 1, j], n1 = phi[i + 1, j], n2 = phi[i, j - 1], n3 = phi[i, j + 1]
    cdef double t = phi[i, j], tp, dE, u, d1, d2, psi_t, mu, sd, x, logacc
    cdef int it, att
    cdef uint64_t base
    if method == 0:
        tp = t + step * normal(key, ctr, ctr + 1)
        dE = local_energy(kind, a, tp, n0, n1, n2, n3) - local_energy(kind, a, t, n0, n1, n2, n3)
        if not isfinite(dE):
            return -1
        attempts[0] += 1
        u = uniform(key, ctr + 2)
        if dE <= 0.0 or u < exp(-dE):
            phi[i, j] = tp
            return 1
        return 0
    # heat bath: rejection from the tangent Gaussian envelope (curvature 4 c_-)
    t = 0.25 * (n0 + n1 + n2 + n3)
    for it in range(2):
        d1 = dpot(kind, a, t - n0) + dpot(kind, a, t - n1) + dpot(kind, a, t - n2) + dpot(kind, a, t - n3)
        d2 = d2pot(kind, a, t - n0) + d2pot(kind, a, t - n1) + d2pot(kind, a, t - n2) + d2pot(kind, a, t - n3)
        t = t - d1 / d2
    psi_t = local_energy(kind, a, t, n0, n1, n2, n3)
    d1 = dpot(kind, a, t - n0) + dpot(kind, a, t - n1) + dpot(kind, a, t - n2) + dpot(kind, a, t - n3)
    mu = t - d1 / (4.0 * c_minus)
    sd = 1.0 / sqrt(4.0 * c_minus)
    for att in range(MAX_ATTEMPTS):
        base = ctr + 3 * att
        x = mu + sd * normal(key, base, base + 1)
        logacc = -(local_energy(kind, a, x, n0, n1, n2, n3) - psi_t - d1 * (x - t)
                   - 2.0 * c_minus * (x - t) * (x - t))
        if not isfinite(logacc):
            return -1
        attempts[0] += 1
        u = uniform(key, base + 2)
        if u < exp(logacc):
            phi[i, j] = x
            return 1
    return -1


def run_sweeps(double[:, ::1] phi, const uint8_t[:, ::1] movable, int kind, double a,
               int method, double step, uint64_t key, int64_t sweep0, int n_sweeps,
               double c_minus, int order, const int64_t[::1] record, double[:, ::1] trace):
    """Run ``n_sweeps`` sweeps in place.

    Returns (moves, attempts, bad_site); bad_site is -1 unless an update hit a
    non-finite energy (or exhausted its rejection budget), in which case the
    sweep stops at the end of the offending phase.
    """
    cdef Py_ssize_t H = phi.shape[0], W = phi.shape[1]
    cdef uint64_t n_sites = <uint64_t>(H * W)
    cdef Py_ssize_t i, j, j0, r, nrec = record.shape[0]
    cdef int s, parity, res
    cdef int64_t moves = 0, attempts = 0, bad = -1
    cdef int64_t row_moves, row_att
    cdef uint64_t sweep_base, ctr
    cdef int64_t[::1] badbuf = np.full(1, -1, dtype=np.int64)
    for s in range(n_sweeps):
        sweep_base = <uint64_t>(sweep0 + s) * n_sites
        if order == 0:
            for parity in range(2):
                for i in prange(1, H - 1, nogil=True, schedule="static"):
                    row_moves = 0
                    row_att = 0
                    j0 = 1 + ((i + 1 + parity) % 2)
                    for j in range(j0, W - 1, 2):
                        if movable[i, j]:
                            ctr = (sweep_base + <uint64_t>(i * W + j)) * 256
                            res = update_site(phi, i, j, kind, a, method, step, key, ctr, c_minus, &row_att)
                            if res < 0:
                                badbuf[0] = i * W + j
                            else:
                                row_moves = row_moves + res
                    moves += row_moves
                    attempts += row_att
                if badbuf[0] >= 0:
                    return moves, attempts, badbuf[0]
        else:
            for i in range(1, H - 1):
                for j in range(1, W - 1):
                    if movable[i, j]:
                        ctr = (sweep_base + <uint64_t>(i * W + j)) * 256
                        res = update_site(phi, i, j, kind, a, method, step, key, ctr, c_minus, &attempts)
                        if res < 0:
                            return moves, attempts, i * W + j
                        moves += res
        for r in range(nrec):
            trace[s, r] = phi[record[r] // W, record[r] % W]
    return moves, attempts, bad


cdef inline double wpot(int kind, double a, double kappa, double s) noexcept nogil:
    return pot(kind, a, s) - 0.5 * kappa * s * s


cdef inline double dwpot(int kind, double a, double kappa, double s) noexcept nogil:
    return dpot(kind, a, s) - kappa * s


def edge_force(const double[:, ::1] phi, int kind, double a, double kappa, double[:, ::1] out):
    """out = gradient of sum_edges w(grad phi), with w = V - kappa s^2/2."""
    cdef Py_ssize_t H = phi.shape[0], W = phi.shape[1], i, j
    cdef double s, f
    with nogil:
        for i in range(H):
            for j in range(W):
                out[i, j] = 0.0
        for i in range(H - 1):
            for j in range(W):
                s = phi[i + 1, j] - phi[i, j]
                f = dwpot(kind, a, kappa, s)
                out[i + 1, j] += f
                out[i, j] -= f
        for i in range(H):
            for j in range(W - 1):
                s = phi[i, j + 1] - phi[i, j]
                f = dwpot(kind, a, kappa, s)
                out[i, j + 1] += f
                out[i, j] -= f


def edge_energy(const double[:, ::1] phi, int kind, double a, double kappa):
    """sum over edges of w(grad phi)."""
    cdef Py_ssize_t H = phi.shape[0], W = phi.shape[1], i, j
    cdef double tot = 0.0
    with nogil:
        for i in range(H - 1):
            for j in range(W):
                tot += wpot(kind, a, kappa, phi[i + 1, j] - phi[i, j])
        for i in range(H):
            for j in range(W - 1):
                tot += wpot(kind, a, kappa, phi[i, j + 1] - phi[i, j])
    return tot


def gather_weighted(const double[:, ::1] flat, const int64_t[::1] pos, const int64_t[::1] off,
                    const double[::1] w, double[:, ::1] out):
    """out[b, i] = sum_k w[k] flat[b, pos[i] + off[k]] (indices are not checked)."""
    cdef Py_ssize_t nb = flat.shape[0], npos = pos.shape[0], noff = off.shape[0]
    cdef Py_ssize_t i, b, k
    cdef int64_t base
    cdef double acc
    for i in prange(npos, nogil=True, schedule="static"):
        base = pos[i]
        for b in range(nb):
            acc = 0.0
            for k in range(noff):
                acc = acc + w[k] * flat[b, base + off[k]]
            out[b, i] = acc
