"""``@njit`` implementations of the hot kernels."""

import numpy as np
from numba import njit

njit_kwargs = {"cache": True, "nogil": True}


@njit(**njit_kwargs)
def csr_matvec(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    y = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        y[i] = acc
    return y


@njit(**njit_kwargs)
def connected_components(indptr, indices, data):
    """Label components in order of their smallest node id; zero-weight
    half-edges are ignored."""
    n = indptr.shape[0] - 1
    labels = np.full(n, -1, np.int64)
    queue = np.empty(n, np.int64)
    current = 0
    for s in range(n):
        if labels[s] >= 0:
            continue
        labels[s] = current
        head = 0
        tail = 1
        queue[0] = s
        while head < tail:
            v = queue[head]
            head += 1
            for p in range(indptr[v], indptr[v + 1]):
                if data[p] == 0:
                    continue
                w = indices[p]
                if labels[w] < 0:
                    labels[w] = current
                    queue[tail] = w
                    tail += 1
        current += 1
    return labels


@njit(**njit_kwargs)
def bfs_distance_stats(indptr, indices, sources):
    n = indptr.shape[0] - 1
    k = sources.shape[0]
    dist_sum = np.zeros(k, np.int64)
    reached = np.zeros(k, np.int64)
    ecc = np.zeros(k, np.int64)
    dist = np.full(n, -1, np.int64)
    queue = np.empty(n, np.int64)
    for a in range(k):
        s = sources[a]
        dist[s] = 0
        queue[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = queue[head]
            head += 1
            dv = dist[v]
            for p in range(indptr[v], indptr[v + 1]):
                w = indices[p]
                if dist[w] < 0:
                    dist[w] = dv + 1
                    queue[tail] = w
                    tail += 1
        total = 0
        far = 0
        for b in range(tail):
            d = dist[queue[b]]
            total += d
            if d > far:
                far = d
            dist[queue[b]] = -1
        dist_sum[a] = total
        reached[a] = tail - 1
        ecc[a] = far
    return dist_sum, reached, ecc


@njit(**njit_kwargs)
def k_core_mask(indptr, indices, k):
    n = indptr.shape[0] - 1
    deg = np.empty(n, np.int64)
    removed = np.zeros(n, np.bool_)
    queue = np.empty(n, np.int64)
    tail = 0
    for i in range(n):
        deg[i] = indptr[i + 1] - indptr[i]
        if deg[i] < k:
            removed[i] = True
            queue[tail] = i
            tail += 1
    head = 0
    while head < tail:
        v = queue[head]
        head += 1
        for p in range(indptr[v], indptr[v + 1]):
            w = indices[p]
            if removed[w]:
                continue
            deg[w] -= 1
            if deg[w] < k:
                removed[w] = True
                queue[tail] = w
                tail += 1
    return ~removed


@njit(**njit_kwargs)
def triangle_counts(indptr, indices):
    """Triangles through each node; neighbor lists must be sorted."""
    n = indptr.shape[0] - 1
    tri = np.zeros(n, np.int64)
    mark = np.full(n, -1, np.int64)
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            mark[indices[p]] = i
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j <= i:
                continue
            for q in range(indptr[j], indptr[j + 1]):
                w = indices[q]
                if w > j and mark[w] == i:
                    tri[i] += 1
                    tri[j] += 1
                    tri[w] += 1
    return tri


@njit(**njit_kwargs)
def nb_matvec(src, dst, rev, x, n):
    s = np.zeros(n)
    for e in range(x.shape[0]):
        s[dst[e]] += x[e]
    y = np.empty(x.shape[0])
    for e in range(x.shape[0]):
        y[e] = s[src[e]] - x[rev[e]]
    return y


@njit(**njit_kwargs)
def epidemic_step(indptr, indices, state, active, dormant, u_inf, u_exit, u_act,
                  beta, mu, gamma1, gamma2, sis):
    n = state.shape[0]
    new = state.copy()
    hit = np.zeros(n, np.bool_)
    pos = 0
    n_hit = 0
    for a in range(active.shape[0]):
        i = active[a]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if state[j] == 0 and u_inf[pos] < beta and not hit[j]:
                hit[j] = True
                n_hit += 1
            pos += 1
    exit_cut = mu + gamma1
    for a in range(active.shape[0]):
        i = active[a]
        u = u_exit[a]
        if u < mu:
            new[i] = 0 if sis else 3
        elif u < exit_cut:
            new[i] = 2
    for a in range(dormant.shape[0]):
        if u_act[a] < gamma2:
            new[dormant[a]] = 1
    newly = np.empty(n_hit, np.int64)
    c = 0
    for j in range(n):
        if hit[j]:
            new[j] = 1
            newly[c] = j
            c += 1
    return new, newly


@njit(**njit_kwargs)
def well_mixed_run(n, i0, u, beta, mu, gamma1, gamma2, sis, max_steps):
    """Homogeneous-mixing run: every active node makes one uniform contact
    per step. Draws come from ``u``; ``ok`` is False if ``u`` ran out."""
    state = np.zeros(n, np.int8)
    ever = np.zeros(n, np.bool_)
    for i in range(i0):
        state[i] = 1
        ever[i] = True
    counts = np.zeros((max_steps + 1, 4), np.int64)
    cum = np.zeros(max_steps + 1, np.int64)
    counts[0, 0] = n - i0
    counts[0, 1] = i0
    cum[0] = i0
    n_ever = i0
    pos = 0
    total = u.shape[0]
    active = np.empty(n, np.int64)
    dormant = np.empty(n, np.int64)
    hit = np.zeros(n, np.bool_)
    exit_cut = mu + gamma1
    steps = 0
    for t in range(max_steps):
        na = 0
        nd = 0
        for i in range(n):
            if state[i] == 1:
                active[na] = i
                na += 1
            elif state[i] == 2:
                dormant[nd] = i
                nd += 1
        if na + nd == 0:
            break
        if pos + 3 * na + nd > total:
            return counts, cum, steps, pos, False
        for a in range(na):
            i = active[a]
            u1 = u[pos]
            u2 = u[pos + 1]
            pos += 2
            if n < 2:
                continue
            tgt = np.int64(u1 * (n - 1))
            if tgt >= i:
                tgt += 1
            if state[tgt] == 0 and u2 < beta:
                hit[tgt] = True
        new_state = state.copy()
        for a in range(na):
            i = active[a]
            v = u[pos]
            pos += 1
            if v < mu:
                new_state[i] = 0 if sis else 3
            elif v < exit_cut:
                new_state[i] = 2
        for a in range(nd):
            if u[pos] < gamma2:
                new_state[dormant[a]] = 1
            pos += 1
        for j in range(n):
            if hit[j]:
                hit[j] = False
                new_state[j] = 1
                if not ever[j]:
                    ever[j] = True
                    n_ever += 1
        state = new_state
        steps = t + 1
        for j in range(n):
            counts[steps, state[j]] += 1
        cum[steps] = n_ever
    return counts, cum, steps, pos, True


@njit(**njit_kwargs)
def _rhs(y, beta, mu, gamma1, gamma2, sis, n):
    s, i, d = y[0], y[1], y[2]
    force = beta * s * i / n
    out = np.empty(4)
    if sis:
        out[0] = -force + mu * i
        out[1] = force - mu * i
        out[2] = 0.0
        out[3] = 0.0
    else:
        out[0] = -force
        out[1] = force - (mu + gamma1) * i + gamma2 * d
        out[2] = gamma1 * i - gamma2 * d
        out[3] = mu * i
    return out


@njit(**njit_kwargs)
def rk4_integrate(y0, beta, mu, gamma1, gamma2, sis, n, dt, steps):
    out = np.empty((steps + 1, 4))
    y = y0.astype(np.float64)
    out[0] = y
    for t in range(steps):
        k1 = _rhs(y, beta, mu, gamma1, gamma2, sis, n)
        k2 = _rhs(y + 0.5 * dt * k1, beta, mu, gamma1, gamma2, sis, n)
        k3 = _rhs(y + 0.5 * dt * k2, beta, mu, gamma1, gamma2, sis, n)
        k4 = _rhs(y + dt * k3, beta, mu, gamma1, gamma2, sis, n)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[t + 1] = y
    return out
