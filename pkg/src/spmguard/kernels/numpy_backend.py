"""Vectorized numpy implementations of the hot kernels (no compilation).

Loop-carried kernels (the well-mixed run and RK4) keep a Python loop over
time steps and vectorize within a step.
"""

import numpy as np
import scipy.sparse as sp


def _rows(indptr):
    n = indptr.shape[0] - 1
    return np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))


def gather_neighbors(indptr, indices, nodes):
    """Concatenated neighbor lists of ``nodes`` in the order given."""
    nodes = np.asarray(nodes, dtype=np.int64)
    starts = indptr[nodes]
    lens = indptr[nodes + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, dtype=indices.dtype)
    shift = np.repeat(starts - (np.cumsum(lens) - lens), lens)
    return indices[shift + np.arange(total)]


def csr_matvec(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    return np.bincount(_rows(indptr), weights=data * x[indices], minlength=n).astype(np.float64)


def connected_components(indptr, indices, data):
    n = indptr.shape[0] - 1
    keep = data != 0
    src = _rows(indptr)[keep]
    dst = indices[keep].astype(np.int64)
    labels = np.arange(n, dtype=np.int64)
    while True:
        nxt = labels.copy()
        np.minimum.at(nxt, src, labels[dst])
        nxt = nxt[nxt]
        if np.array_equal(nxt, labels):
            break
        labels = nxt
    _, ranks = np.unique(labels, return_inverse=True)
    return ranks.astype(np.int64)


def bfs_distance_stats(indptr, indices, sources):
    n = indptr.shape[0] - 1
    sources = np.asarray(sources, dtype=np.int64)
    dist_sum = np.zeros(sources.shape[0], np.int64)
    reached = np.zeros(sources.shape[0], np.int64)
    ecc = np.zeros(sources.shape[0], np.int64)
    for a, s in enumerate(sources):
        seen = np.zeros(n, dtype=bool)
        seen[s] = True
        frontier = np.array([s], dtype=np.int64)
        level = 0
        total = 0
        count = 0
        while frontier.size:
            nb = gather_neighbors(indptr, indices, frontier)
            nb = np.unique(nb[~seen[nb]])
            if nb.size == 0:
                break
            level += 1
            seen[nb] = True
            total += level * nb.size
            count += nb.size
            frontier = nb
        dist_sum[a] = total
        reached[a] = count
        ecc[a] = level
    return dist_sum, reached, ecc


def k_core_mask(indptr, indices, k):
    src = _rows(indptr)
    n = indptr.shape[0] - 1
    alive = np.ones(n, dtype=bool)
    deg = np.diff(indptr).astype(np.int64)
    while True:
        drop = alive & (deg < k)
        if not drop.any():
            return alive
        alive &= ~drop
        w = (alive[src] & alive[indices]).astype(np.int64)
        deg = np.bincount(src, weights=w, minlength=n).astype(np.int64)


def triangle_counts(indptr, indices):
    """Triangles through each node, via sparse ``(A @ A) * A``."""
    n = indptr.shape[0] - 1
    a = sp.csr_matrix((np.ones(indices.shape[0], dtype=np.int64), indices, indptr), shape=(n, n))
    closed = (a @ a).multiply(a)
    return (np.asarray(closed.sum(axis=1)).ravel() // 2).astype(np.int64)


def nb_matvec(src, dst, rev, x, n):
    s = np.bincount(dst, weights=x, minlength=n)
    return s[src] - x[rev]


def epidemic_step(indptr, indices, state, active, dormant, u_inf, u_exit, u_act,
                  beta, mu, gamma1, gamma2, sis):
    new = state.copy()
    nb = gather_neighbors(indptr, indices, active)
    newly = np.unique(nb[(state[nb] == 0) & (u_inf < beta)]).astype(np.int64)
    exit_cut = mu + gamma1
    recover = u_exit < mu
    new[active[recover]] = 0 if sis else 3
    new[active[~recover & (u_exit < exit_cut)]] = 2
    new[dormant[u_act < gamma2]] = 1
    new[newly] = 1
    return new, newly


def well_mixed_run(n, i0, u, beta, mu, gamma1, gamma2, sis, max_steps):
    state = np.zeros(n, np.int8)
    state[:i0] = 1
    ever = state == 1
    counts = np.zeros((max_steps + 1, 4), np.int64)
    cum = np.zeros(max_steps + 1, np.int64)
    counts[0, 0] = n - i0
    counts[0, 1] = i0
    cum[0] = i0
    pos = 0
    steps = 0
    exit_cut = mu + gamma1
    for t in range(max_steps):
        active = np.flatnonzero(state == 1)
        dormant = np.flatnonzero(state == 2)
        na, nd = active.size, dormant.size
        if na + nd == 0:
            break
        if pos + 3 * na + nd > u.shape[0]:
            return counts, cum, steps, pos, False
        pair = u[pos:pos + 2 * na].reshape(na, 2)
        pos += 2 * na
        new_state = state.copy()
        if n >= 2 and na:
            tgt = (pair[:, 0] * (n - 1)).astype(np.int64)
            tgt += tgt >= active
            hits = tgt[(state[tgt] == 0) & (pair[:, 1] < beta)]
        else:
            hits = np.empty(0, np.int64)
        v = u[pos:pos + na]
        pos += na
        recover = v < mu
        new_state[active[recover]] = 0 if sis else 3
        new_state[active[~recover & (v < exit_cut)]] = 2
        w = u[pos:pos + nd]
        pos += nd
        new_state[dormant[w < gamma2]] = 1
        new_state[hits] = 1
        ever[hits] = True
        state = new_state
        steps = t + 1
        counts[steps] = np.bincount(state, minlength=4)
        cum[steps] = int(ever.sum())
    return counts, cum, steps, pos, True


def _rhs(y, beta, mu, gamma1, gamma2, sis, n):
    s, i, d = y[0], y[1], y[2]
    force = beta * s * i / n
    if sis:
        return np.array([-force + mu * i, force - mu * i, 0.0, 0.0])
    return np.array([
        -force,
        force - (mu + gamma1) * i + gamma2 * d,
        gamma1 * i - gamma2 * d,
        mu * i,
    ])


def rk4_integrate(y0, beta, mu, gamma1, gamma2, sis, n, dt, steps):
    out = np.empty((steps + 1, 4))
    y = np.asarray(y0, dtype=np.float64).copy()
    out[0] = y
    for t in range(steps):
        k1 = _rhs(y, beta, mu, gamma1, gamma2, sis, n)
        k2 = _rhs(y + 0.5 * dt * k1, beta, mu, gamma1, gamma2, sis, n)
        k3 = _rhs(y + 0.5 * dt * k2, beta, mu, gamma1, gamma2, sis, n)
        k4 = _rhs(y + dt * k3, beta, mu, gamma1, gamma2, sis, n)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[t + 1] = y
    return out
