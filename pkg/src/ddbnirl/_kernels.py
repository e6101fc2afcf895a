"""Compiled inner loops for the additive-likelihood samplers.

Each kernel mirrors a pure-Python routine (``ddcrp.gibbs_sweep``,
``samplers.crp_sweep``, ``samplers.sample_actions``) and consumes the same
uniform draws in the same order, so both paths produce the same chain.
"""

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True)
def _lse(lw, a):
    """log sum_g exp(lw[g] + a[g])."""
    m = NEG_INF
    for g in range(lw.shape[0]):
        v = lw[g] + a[g]
        if v > m:
            m = v
    if m == NEG_INF:
        return NEG_INF
    s = 0.0
    for g in range(lw.shape[0]):
        s += np.exp(lw[g] + a[g] - m)
    return m + np.log(s)


@njit(cache=True)
def _lse2(lw, a, b):
    """log sum_g exp(lw[g] + a[g] + b[g])."""
    m = NEG_INF
    for g in range(lw.shape[0]):
        v = lw[g] + a[g] + b[g]
        if v > m:
            m = v
    if m == NEG_INF:
        return NEG_INF
    s = 0.0
    for g in range(lw.shape[0]):
        s += np.exp(lw[g] + a[g] + b[g] - m)
    return m + np.log(s)


@njit(cache=True)
def _draw(logp, n, temperature, u, cdf):
    """Index drawn from exp(logp / temperature); argmax when temperature <= 0."""
    best = 0
    m = logp[0]
    for j in range(1, n):
        if logp[j] > m:
            m = logp[j]
            best = j
    if temperature <= 0:
        return best
    if temperature != 1.0:
        m = m / temperature
    if not m > NEG_INF:
        raise ValueError("conditional has no finite mass")
    acc = 0.0
    for j in range(n):
        v = logp[j] / temperature if temperature != 1.0 else logp[j]
        acc += np.exp(v - m)
        cdf[j] = acc
    target = u * acc
    for j in range(n):
        if cdf[j] > target:
            return j
    return n


@njit(cache=True)
def _refresh_slot(k, label, node_stats, node_counts, lw, stats, counts, loglike):
    n, G = node_stats.shape
    for g in range(G):
        stats[k, g] = 0.0
    c = 0
    for j in range(n):
        if label[j] == k and node_counts[j] > 0:
            c += node_counts[j]
            for g in range(G):
                stats[k, g] += node_stats[j, g]
    counts[k] = c
    if c == 0:
        loglike[k] = 0.0
    else:
        loglike[k] = _lse(lw, stats[k])


@njit(cache=True)
def ddcrp_sweep(links, label, free, n_free, node_stats, node_counts, lw, scores, order,
                uniforms, temperature, stats, counts, loglike):
    """One sweep over the link variables; ``label`` holds cluster slots.

    ``free`` is the stack of unused slots (first ``n_free`` entries). Nodes
    with a zero count must have zero statistics. On return ``stats``,
    ``counts`` and ``loglike`` hold the per-slot caches. Returns the new
    stack height.
    """
    n, G = node_stats.shape
    active = np.zeros(n, dtype=np.bool_)
    for j in range(n):
        active[label[j]] = True
    for k in range(n):
        if active[k]:
            _refresh_slot(k, label, node_stats, node_counts, lw, stats, counts, loglike)
    mem = np.empty(n, dtype=np.int64)
    mark = np.zeros(n, dtype=np.int8)
    path = np.empty(n, dtype=np.int64)
    bonus = np.zeros(n)
    merged = np.zeros(n)
    logp = np.empty(n)
    cdf = np.empty(n)
    for step in range(order.shape[0]):
        i = order[step]
        # detach: self-link i, split off the nodes whose path runs into i
        if links[i] != i:
            links[i] = i
            k = label[i]
            cnt = 0
            for j in range(n):
                if label[j] == k:
                    mem[cnt] = j
                    mark[j] = 0
                    cnt += 1
            mark[i] = 1
            tsize = 0
            for q in range(cnt):
                x = mem[q]
                plen = 0
                while mark[x] == 0:
                    mark[x] = 3
                    path[plen] = x
                    plen += 1
                    x = links[x]
                r = 1 if mark[x] == 1 else 2
                for p in range(plen):
                    mark[path[p]] = r
            for q in range(cnt):
                if mark[mem[q]] == 1:
                    tsize += 1
            if tsize < cnt:
                n_free -= 1
                new = free[n_free]
                active[new] = True
                for q in range(cnt):
                    if mark[mem[q]] == 1:
                        label[mem[q]] = new
                _refresh_slot(k, label, node_stats, node_counts, lw, stats, counts, loglike)
                _refresh_slot(new, label, node_stats, node_counts, lw, stats, counts, loglike)
        # conditional over targets
        zi = label[i]
        for k in range(n):
            bonus[k] = 0.0
        if counts[zi] > 0:
            for k in range(n):
                if active[k] and k != zi and counts[k] > 0:
                    merged[k] = _lse2(lw, stats[k], stats[zi])
                    bonus[k] = merged[k] - loglike[zi] - loglike[k]
        for j in range(n):
            logp[j] = scores[i, j] + bonus[label[j]]
        j = _draw(logp, n, temperature, uniforms[step], cdf)
        # attach: link i -> j, merging clusters
        links[i] = j
        kj = label[j]
        if kj != zi:
            for q in range(n):
                if label[q] == zi:
                    label[q] = kj
            if counts[zi] > 0 and counts[kj] > 0:
                loglike[kj] = merged[kj]
            elif counts[zi] > 0:
                loglike[kj] = loglike[zi]
            for g in range(G):
                stats[kj, g] += stats[zi, g]
            counts[kj] += counts[zi]
            active[zi] = False
            free[n_free] = zi
            n_free += 1
    return n_free


@njit(cache=True)
def crp_sweep(label, free, n_free, sizes, node_stats, lw, log_alpha, order, uniforms, temperature):
    """One collapsed CRP sweep over the demonstration labels (slots), in place."""
    n, G = node_stats.shape
    stats = np.zeros((n, G))
    loglike = np.zeros(n)
    ones = np.ones(n, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    for k in range(n):
        if sizes[k] > 0:
            _refresh_slot(k, label, node_stats, ones, lw, stats, counts, loglike)
    logp = np.empty(n + 1)
    cdf = np.empty(n + 1)
    ks = np.empty(n, dtype=np.int64)
    for step in range(order.shape[0]):
        d = order[step]
        k_old = label[d]
        sizes[k_old] -= 1
        if sizes[k_old] > 0:
            for g in range(G):
                stats[k_old, g] -= node_stats[d, g]
            loglike[k_old] = _lse(lw, stats[k_old])
        else:
            free[n_free] = k_old
            n_free += 1
        lm_d = _lse(lw, node_stats[d])
        nk = 0
        for k in range(n):
            if sizes[k] > 0:
                ks[nk] = k
                logp[nk] = (np.log(sizes[k]) + _lse2(lw, stats[k], node_stats[d])
                            - loglike[k])
                nk += 1
        logp[nk] = log_alpha + lm_d if nk > 0 else 0.0
        pick = _draw(logp, nk + 1, temperature, uniforms[step], cdf)
        if pick == nk:
            n_free -= 1
            k = free[n_free]
            for g in range(G):
                stats[k, g] = node_stats[d, g]
            loglike[k] = lm_d
        else:
            k = ks[pick]
            for g in range(G):
                stats[k, g] += node_stats[d, g]
            loglike[k] = _lse(lw, stats[k])
        sizes[k] += 1
        label[d] = k
    return n_free


@njit(cache=True)
def action_pass(stats, slot_of_demo, node_of_demo, states, actions, log_t, log_pi, pi, lw,
                node_stats, uniforms, temperature):
    """Redraw every hidden action given the cluster statistics, in place.

    ``pi`` is ``exp(log_pi)``; the goal mixture is formed in linear space
    around its largest term, with an exact log-space fallback on underflow.
    """
    D = states.shape[0]
    G, _, A = log_pi.shape
    logp = np.empty(A)
    cdf = np.empty(A)
    tmp = np.empty(G)
    w = np.empty(G)
    for d in range(D):
        k = slot_of_demo[d]
        s = states[d]
        a_old = actions[d]
        top = NEG_INF
        for g in range(G):
            tmp[g] = lw[g] + stats[k, g] - log_pi[g, s, a_old]
            if tmp[g] > top:
                top = tmp[g]
        for g in range(G):
            w[g] = np.exp(tmp[g] - top)
        for a in range(A):
            if log_t[d, a] == NEG_INF:
                logp[a] = NEG_INF
                continue
            acc = 0.0
            for g in range(G):
                acc += w[g] * pi[g, s, a]
            if acc > 1e-250:
                logp[a] = log_t[d, a] + top + np.log(acc)
                continue
            m = NEG_INF
            for g in range(G):
                v = tmp[g] + log_pi[g, s, a]
                if v > m:
                    m = v
            acc = 0.0
            for g in range(G):
                acc += np.exp(tmp[g] + log_pi[g, s, a] - m)
            logp[a] = log_t[d, a] + m + np.log(acc)
        a_new = _draw(logp, A, temperature, uniforms[d], cdf)
        if a_new != a_old:
            node = node_of_demo[d]
            for g in range(G):
                delta = log_pi[g, s, a_new] - log_pi[g, s, a_old]
                stats[k, g] += delta
                if node >= 0:
                    node_stats[node, g] += delta
            actions[d] = a_new
