"""Numba kernels for the branching OU simulation (depth-first, lineage-keyed)."""
from __future__ import annotations

import math

import numba as nb
import numpy as np

# TBB in this kind of environment is often too old; prefer OpenMP, then workqueue.
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .rng import child_key, normal_pair, replicate_key, uniform

OK = 0
ABORTED = 1


@nb.njit(cache=True, error_model="numpy")
def sample_count(v, sf, m, beta):
    """min{n >= 1 : S(n) < v} with S tabulated in sf[0..N] and exact beyond."""
    N = sf.shape[0] - 1
    for n in range(1, N + 1):
        if sf[n] < v:
            return n
    log_c = math.log(m - 1.0) + math.log(beta) - math.lgamma(1.0 - beta)
    log_v = math.log(v)
    guess = math.exp((log_c - log_v) / (1.0 + beta))
    hi = max(N + 1, np.int64(guess * 1.1) + 2)
    while log_c + math.lgamma(hi - beta) - math.lgamma(hi + 1.0) >= log_v:
        hi *= 2
    lo = max(N, min(np.int64(guess * 0.9), hi - 1))
    while lo > N and log_c + math.lgamma(lo - beta) - math.lgamma(lo + 1.0) < log_v:
        lo = max(N, lo // 2)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if log_c + math.lgamma(mid - beta) - math.lgamma(mid + 1.0) < log_v:
            hi = mid
        else:
            lo = mid
    return hi


@nb.njit(cache=True)
def _grow2(arr, n):
    out = np.empty((2 * arr.shape[0], arr.shape[1]), dtype=arr.dtype)
    out[:n] = arr[:n]
    return out


@nb.njit(cache=True)
def _grow1(arr, n):
    out = np.empty(2 * arr.shape[0], dtype=arr.dtype)
    out[:n] = arr[:n]
    return out


@nb.njit(cache=True, error_model="numpy")
def run_one(key, x0, n_steps, substeps, a, mu, sd_stat, sf, m, beta, exps,
            max_particles, record_pos, counts, sums):
    """Simulate one replicate.

    Records, at times j/substeps for j = 0..n_steps, the population count and
    the power sums sum_u X(u)^alpha for the multi-indices in ``exps``.
    Returns (status, rec_index, rec_pos); the last two are empty unless
    ``record_pos``.
    """
    d = x0.shape[0]
    n_mono = exps.shape[0]
    D = 0
    for j in range(n_mono):
        s = 0
        for i in range(d):
            s += exps[j, i]
        D = max(D, s)
    counts[:] = 0
    sums[:, :] = 0.0
    dt_grid = 1.0 / substeps
    horizon = n_steps * dt_grid
    # most moves span exactly one grid step
    fac_grid = math.exp(-mu * dt_grid)
    sd_grid = sd_stat * math.sqrt(-math.expm1(-2.0 * mu * dt_grid))

    cap = 64
    st_time = np.empty(cap)
    st_pos = np.empty((cap, d))
    st_key = np.empty(cap, dtype=np.uint64)
    top = 1
    st_time[0] = 0.0
    st_pos[0, :] = x0
    st_key[0] = key

    rcap = 64 if record_pos else 1
    rec_idx = np.empty(rcap, dtype=np.int64)
    rec_pos = np.empty((rcap, d))
    n_rec = 0

    x = np.empty(d)
    pw = np.ones((d, D + 1))

    while top > 0:
        top -= 1
        t = st_time[top]
        x[:] = st_pos[top]
        k = st_key[top]
        death = t - math.log(uniform(k, 0)) / a
        ctr = 2
        spare = 0.0
        has_spare = False

        j = np.int64(math.ceil(t * substeps - 1e-9))
        if j < 0:
            j = 0
        while j <= n_steps and j * dt_grid < death:
            tj = j * dt_grid
            dt = tj - t
            if dt > 0.0:
                if dt == dt_grid:
                    fac = fac_grid
                    sd = sd_grid
                else:
                    fac = math.exp(-mu * dt)
                    sd = sd_stat * math.sqrt(-math.expm1(-2.0 * mu * dt))
                for i in range(d):
                    if has_spare:
                        z = spare
                        has_spare = False
                    else:
                        z, spare = normal_pair(k, ctr)
                        ctr += 2
                        has_spare = True
                    x[i] = x[i] * fac + sd * z
            t = tj
            counts[j] += 1
            if counts[j] > max_particles:
                return ABORTED, rec_idx[:0], rec_pos[:0]
            for i in range(d):
                for q in range(1, D + 1):
                    pw[i, q] = pw[i, q - 1] * x[i]
            for q in range(n_mono):
                v = 1.0
                for i in range(d):
                    v *= pw[i, exps[q, i]]
                sums[j, q] += v
            if record_pos:
                if n_rec == rec_idx.shape[0]:
                    rec_idx = _grow1(rec_idx, n_rec)
                    rec_pos = _grow2(rec_pos, n_rec)
                rec_idx[n_rec] = j
                rec_pos[n_rec, :] = x
                n_rec += 1
            j += 1

        if death > horizon:
            continue
        dt = death - t
        if dt > 0.0:
            fac = math.exp(-mu * dt)
            sd = sd_stat * math.sqrt(-math.expm1(-2.0 * mu * dt))
            for i in range(d):
                if has_spare:
                    z = spare
                    has_spare = False
                else:
                    z, spare = normal_pair(k, ctr)
                    ctr += 2
                    has_spare = True
                x[i] = x[i] * fac + sd * z
        n_child = sample_count(uniform(k, 1), sf, m, beta)
        if top + n_child > max_particles:
            return ABORTED, rec_idx[:0], rec_pos[:0]
        while top + n_child > st_time.shape[0]:
            st_time = _grow1(st_time, top)
            st_pos = _grow2(st_pos, top)
            st_key = _grow1(st_key, top)
        for c in range(n_child):
            st_time[top] = death
            st_pos[top, :] = x
            st_key[top] = child_key(k, c)
            top += 1

    return OK, rec_idx[:n_rec], rec_pos[:n_rec]


@nb.njit(cache=True, parallel=True)
def run_batch(root_key, first, n_rep, x0, n_steps, substeps, a, mu, sd_stat, sf, m, beta,
              exps, max_particles, counts, sums, status):
    for r in nb.prange(n_rep):
        key = replicate_key(root_key, first + r)
        st, _, _ = run_one(key, x0, n_steps, substeps, a, mu, sd_stat, sf, m, beta, exps,
                           max_particles, False, counts[r], sums[r])
        status[r] = st


@nb.njit(cache=True, parallel=True)
def gw_batch(root_key, n_rep, t_end, threshold, a, sf, m, beta, out_count, out_hit):
    """Pure Galton-Watson counts at ``t_end``.

    The count never decreases (p_0 = 0), so a replicate is stopped as soon as
    it exceeds ``threshold``; ``out_count`` then holds the first value above it.
    """
    for r in nb.prange(n_rep):
        key = replicate_key(root_key, r)
        n = np.int64(1)
        t = 0.0
        i = 0
        while True:
            t -= math.log(uniform(key, i)) / (a * n)
            if t > t_end:
                break
            n += sample_count(uniform(key, i + 1), sf, m, beta) - 1
            i += 2
            if n > threshold:
                break
        out_count[r] = n
        out_hit[r] = n <= threshold
