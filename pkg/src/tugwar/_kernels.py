"""Compiled sweep kernels for the value-iteration solvers."""
from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True)
def gauss_seidel(u, indptr, indices, order, f, tol, max_sweeps, direction):
    """In-place sweeps of the Bellman operator until the sup change is <= tol.

    ``direction`` is +1 (iterates should not decrease), -1 (should not
    increase) or 0 (unchecked).  Returns (sweeps, last_change, monotone_ok).
    """
    ok = True
    change = np.inf
    sweeps = 0
    while sweeps < max_sweeps:
        change = 0.0
        for t in range(order.shape[0]):
            x = order[t]
            mx = -np.inf
            mn = np.inf
            for k in range(indptr[x], indptr[x + 1]):
                v = u[indices[k]]
                if v > mx:
                    mx = v
                if v < mn:
                    mn = v
            new = 0.5 * (mx + mn) + f[x]
            d = new - u[x]
            if direction * d < -1e-12 * (1.0 + abs(new)):
                ok = False
            if abs(d) > change:
                change = abs(d)
            u[x] = new
        sweeps += 1
        if change <= tol:
            break
    return sweeps, change, ok


@njit(cache=True, parallel=True)
def _jacobi_once(u, out, indptr, indices, order, f):
    n = order.shape[0]
    diffs = np.zeros(n)
    for t in prange(n):
        x = order[t]
        mx = -np.inf
        mn = np.inf
        for k in range(indptr[x], indptr[x + 1]):
            v = u[indices[k]]
            if v > mx:
                mx = v
            if v < mn:
                mn = v
        new = 0.5 * (mx + mn) + f[x]
        out[x] = new
        diffs[t] = new - u[x]
    return diffs


@njit(cache=True)
def jacobi(u, indptr, indices, order, f, tol, max_sweeps, direction):
    ok = True
    change = np.inf
    sweeps = 0
    out = u.copy()
    while sweeps < max_sweeps:
        diffs = _jacobi_once(u, out, indptr, indices, order, f)
        change = 0.0
        for t in range(diffs.shape[0]):
            d = diffs[t]
            if direction * d < -1e-12 * (1.0 + abs(out[order[t]])):
                ok = False
            if abs(d) > change:
                change = abs(d)
        for t in range(order.shape[0]):
            u[order[t]] = out[order[t]]
        sweeps += 1
        if change <= tol:
            break
    return sweeps, change, ok


@njit(cache=True)
def favored_sweeps(v, small_ptr, small_idx, big_ptr, big_idx, terminal, order,
                   run_ext, sign, tol, max_sweeps):
    """Jacobi sweeps for the favoured epsilon-games.

    ``sign=+1`` is the II-favoured game (player I targets z, II answers with
    minima); ``sign=-1`` is the mirror image for the I-favoured game.
    ``run_ext[z]`` is the (already scaled) inf or sup of the running payoff
    over the big ball around z.
    """
    n = v.shape[0]
    A = np.empty(n)
    change = np.inf
    sweeps = 0
    ok = True
    while sweeps < max_sweeps:
        for z in range(n):
            # sign * (value chosen by the answering player)
            best_any = np.inf
            best_y = sign * v[z]
            for k in range(big_ptr[z], big_ptr[z + 1]):
                y = big_idx[k]
                w = sign * v[y]
                if w < best_any:
                    best_any = w
                if terminal[y] and w < best_y:
                    best_y = w
            A[z] = run_ext[z] + 0.5 * sign * (best_y + best_any)
        change = 0.0
        for t in range(order.shape[0]):
            x = order[t]
            best = -np.inf
            for k in range(small_ptr[x], small_ptr[x + 1]):
                w = sign * A[small_idx[k]]
                if w > best:
                    best = w
            new = sign * best
            d = new - v[x]
            if sign * d < -1e-12 * (1.0 + abs(new)):
                ok = False
            if abs(d) > change:
                change = abs(d)
            v[x] = new
        sweeps += 1
        if change <= tol:
            break
    return sweeps, change, ok


@njit(cache=True)
def favored_apply(v, small_ptr, small_idx, big_ptr, big_idx, terminal, run_ext, sign):
    """One application of the favoured operator (terminal entries unchanged)."""
    n = v.shape[0]
    A = np.empty(n)
    for z in range(n):
        best_any = np.inf
        best_y = sign * v[z]
        for k in range(big_ptr[z], big_ptr[z + 1]):
            y = big_idx[k]
            w = sign * v[y]
            if w < best_any:
                best_any = w
            if terminal[y] and w < best_y:
                best_y = w
        A[z] = run_ext[z] + 0.5 * sign * (best_y + best_any)
    out = v.copy()
    for x in range(n):
        if terminal[x]:
            continue
        best = -np.inf
        for k in range(small_ptr[x], small_ptr[x + 1]):
            w = sign * A[small_idx[k]]
            if w > best:
                best = w
        out[x] = sign * best
    return out
