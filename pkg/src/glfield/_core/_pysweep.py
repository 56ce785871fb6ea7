"""NumPy implementation of the sweep kernels, same interface as the compiled core.

Also serves custom potentials the compiled core does not know about: pass the
Potential object as ``potential`` and ``kind=-1``.
"""
from __future__ import annotations

import numpy as np

from . import rng

MAX_ATTEMPTS = 85


def _funcs(kind, a, potential):
    if kind == 0:
        return (lambda x: 0.5 * x * x), (lambda x: x), (lambda x: np.ones_like(x))
    if kind == 1:
        return ((lambda x: 0.5 * x * x + a * np.cos(x)), (lambda x: x - a * np.sin(x)),
                (lambda x: 1.0 - a * np.cos(x)))
    return potential.V, potential.dV, potential.d2V


def _update(flat, idx, W, V, dV, d2V, method, step, key, ctr, c_minus):
    """Update the (conditionally independent) sites idx; returns (moves, attempts, bad)."""
    n = (flat[idx - W], flat[idx + W], flat[idx - 1], flat[idx + 1])

    def energy(t):
        return V(t - n[0]) + V(t - n[1]) + V(t - n[2]) + V(t - n[3])

    def grad(t):
        return dV(t - n[0]) + dV(t - n[1]) + dV(t - n[2]) + dV(t - n[3])

    if method == 0:
        t = flat[idx]
        tp = t + step * rng.normal(key, ctr, ctr + np.uint64(1))
        dE = energy(tp) - energy(t)
        bad = ~np.isfinite(dE)
        if bad.any():
            return 0, 0, int(idx[np.argmax(bad)])
        u = rng.uniform(key, ctr + np.uint64(2))
        with np.errstate(over="ignore"):
            acc = (dE <= 0.0) | (u < np.exp(-dE))
        flat[idx[acc]] = tp[acc]
        return int(acc.sum()), idx.size, -1

    t = 0.25 * (n[0] + n[1] + n[2] + n[3])
    for _ in range(2):
        d2 = d2V(t - n[0]) + d2V(t - n[1]) + d2V(t - n[2]) + d2V(t - n[3])
        t = t - grad(t) / d2
    psi_t = energy(t)
    d1 = grad(t)
    mu = t - d1 / (4.0 * c_minus)
    sd = 1.0 / np.sqrt(4.0 * c_minus)
    out = np.empty(idx.size)
    pending = np.arange(idx.size)
    attempts = 0
    for att in range(MAX_ATTEMPTS):
        if pending.size == 0:
            break
        base = ctr[pending] + np.uint64(3 * att)
        x = mu[pending] + sd * rng.normal(key, base, base + np.uint64(1))
        sub = tuple(v[pending] for v in n)
        e = V(x - sub[0]) + V(x - sub[1]) + V(x - sub[2]) + V(x - sub[3])
        dx = x - t[pending]
        logacc = -(e - psi_t[pending] - d1[pending] * dx - 2.0 * c_minus * dx * dx)
        bad = ~np.isfinite(logacc)
        if bad.any():
            return 0, attempts, int(idx[pending[np.argmax(bad)]])
        attempts += pending.size
        u = rng.uniform(key, base + np.uint64(2))
        with np.errstate(over="ignore"):
            ok = u < np.exp(logacc)
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
    if pending.size:
        return 0, attempts, int(idx[pending[0]])
    flat[idx] = out
    return idx.size, attempts, -1


def run_sweeps(phi, movable, kind, a, method, step, key, sweep0, n_sweeps, c_minus,
               order, record, trace, potential=None):
    H, W = phi.shape
    flat = phi.reshape(-1)
    V, dV, d2V = _funcs(kind, a, potential)
    mov = np.asarray(movable, dtype=bool)
    ii, jj = np.nonzero(mov)
    all_idx = (ii * W + jj).astype(np.int64)
    parity = (ii + jj) % 2
    groups = [all_idx[parity == 0], all_idx[parity == 1]]
    moves = attempts = 0
    rec = np.asarray(record, dtype=np.int64)
    for s in range(n_sweeps):
        sweep = int(sweep0) + s
        if order == 0:
            for idx in groups:
                if idx.size == 0:
                    continue
                ctr = rng.site_counters(sweep, H * W, idx)
                m, at, bad = _update(flat, idx, W, V, dV, d2V, method, step, key, ctr, c_minus)
                moves += m
                attempts += at
                if bad >= 0:
                    return moves, attempts, bad
        else:
            for k in all_idx:
                idx = np.array([k], dtype=np.int64)
                ctr = rng.site_counters(sweep, H * W, idx)
                m, at, bad = _update(flat, idx, W, V, dV, d2V, method, step, key, ctr, c_minus)
                moves += m
                attempts += at
                if bad >= 0:
                    return moves, attempts, bad
        if rec.size:
            trace[s, :] = flat[rec]
    return moves, attempts, -1


def _wfuncs(kind, a, kappa, potential):
    V, dV, _ = _funcs(kind, a, potential)
    return (lambda s: V(s) - 0.5 * kappa * s * s), (lambda s: dV(s) - kappa * s)


def edge_force(phi, kind, a, kappa, out, potential=None):
    """out = gradient of sum_edges w(grad phi), with w = V - kappa s^2/2."""
    _, dw = _wfuncs(kind, a, kappa, potential)
    out[...] = 0.0
    fv = dw(phi[1:, :] - phi[:-1, :])
    fh = dw(phi[:, 1:] - phi[:, :-1])
    out[1:, :] += fv
    out[:-1, :] -= fv
    out[:, 1:] += fh
    out[:, :-1] -= fh


def edge_energy(phi, kind, a, kappa, potential=None):
    w, _ = _wfuncs(kind, a, kappa, potential)
    return float(w(phi[1:, :] - phi[:-1, :]).sum() + w(phi[:, 1:] - phi[:, :-1]).sum())


def gather_weighted(flat, pos, off, w, out):
    """out[b, i] = sum_k w[k] flat[b, pos[i] + off[k]]."""
    step = max(1, (1 << 21) // max(1, off.size))
    for s in range(0, pos.size, step):
        p = pos[s:s + step]
        out[:, s:s + step] = flat[:, p[:, None] + off[None, :]] @ w
