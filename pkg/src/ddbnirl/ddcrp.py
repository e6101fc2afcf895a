"""Distance-dependent CRP prior and the link-variable Gibbs sweep.

Clusters are the weakly connected components of the functional graph
``i -> links[i]``. Cluster likelihoods come from an evaluator object with
this duck-typed interface::

    cluster_stat(members) -> stat
    combine(stat_a, stat_b) -> stat
    log_marginal(stat) -> float
    merge_log_marginals(stat, [stat_k, ...]) -> array of log L(C u C_k)
    is_empty(stat) -> bool      # True if the cluster carries no data

``AdditiveEvaluator`` covers every subgoal model in this package;
``CallableEvaluator`` wraps an arbitrary ``members -> log L`` function.
"""

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .likelihood import logsumexp, lse_rows, lse_vector


@dataclass(frozen=True)
class ScoreConfig:
    """Exponential-decay score ``f(d) = (1 - kappa) exp(-d / scale) + kappa``.

    ``scale=None`` calibrates the decay length to ``quantile`` of the finite
    off-diagonal distances.
    """

    scale: float = None
    kappa: float = 0.05
    self_link: float = 1.0
    quantile: float = 0.5

    def __post_init__(self):
        if self.scale is not None and not self.scale > 0:
            raise ValueError("scale must be positive")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.self_link < 0:
            raise ValueError("self_link must be nonnegative")
        if not 0.0 < self.quantile < 1.0:
            raise ValueError("quantile must lie in (0, 1)")

    def score(self, distance, scale=None):
        scale = self.scale if scale is None else scale
        d = np.asarray(distance, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            decay = np.where(np.isinf(d), 0.0, np.exp(-d / scale))
        return (1.0 - self.kappa) * decay + self.kappa

    def to_dict(self):
        return {"scale": self.scale, "kappa": self.kappa,
                "self_link": self.self_link, "quantile": self.quantile}


def calibrate_scale(distances, quantile=0.5):
    """Quantile (linear interpolation) of the finite off-diagonal distances."""
    d = np.asarray(distances, dtype=float)
    off = d[~np.eye(d.shape[0], dtype=bool)]
    finite = off[np.isfinite(off)]
    if finite.size == 0:
        raise ValueError("no finite off-diagonal distances to calibrate against")
    scale = float(np.quantile(finite, quantile))
    if scale <= 0:
        raise ValueError("calibrated scale is not positive")
    return scale


def score_matrix(distances, config):
    """Log prior link scores: log f(d_ij) off the diagonal, log nu on it."""
    d = np.asarray(distances, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError("distances must be a square matrix")
    if np.any(d < 0) or np.any(np.isnan(d)):
        raise ValueError("distances must be nonnegative")
    scale = config.scale
    if scale is None:
        scale = calibrate_scale(d, config.quantile) if d.shape[0] > 1 else 1.0
    with np.errstate(divide="ignore"):
        out = np.log(config.score(d, scale))
        np.fill_diagonal(out, math.log(config.self_link) if config.self_link > 0 else -np.inf)
    return out


def clusters_from_links(links):
    """Component labels (numbered by smallest member) and sorted member lists."""
    links = np.asarray(links, dtype=int)
    n = links.size
    if n and (links.min() < 0 or links.max() >= n):
        raise ValueError("link targets out of range")
    graph = coo_matrix((np.ones(n), (np.arange(n), links)), shape=(n, n))
    _, raw = connected_components(graph, directed=True, connection="weak")
    order = {}
    labels = np.empty(n, dtype=int)
    for i, r in enumerate(raw):
        labels[i] = order.setdefault(r, len(order))
    members = [[] for _ in order]
    for i, k in enumerate(labels):
        members[k].append(i)
    return labels, members


class AdditiveEvaluator:
    """Subgoal-marginal likelihood with per-node log-likelihood rows.

    ``node_stats[i, g]`` is the summed log-likelihood of the demonstrations
    attached to node ``i`` under goal ``g``; ``node_counts[i]`` is how many
    demonstrations that is. A cluster's likelihood is
    ``log sum_g p(g) exp(sum_{i in C} node_stats[i, g])``.
    """

    def __init__(self, log_weights, node_stats, node_counts):
        self.log_weights = np.asarray(log_weights, dtype=float)
        self.node_stats = np.asarray(node_stats, dtype=float)
        self.node_counts = np.asarray(node_counts, dtype=int)

    def cluster_stat(self, members):
        if len(members) == 1:
            (i,) = members
            return self.node_stats[i].copy(), int(self.node_counts[i])
        idx = np.fromiter(members, dtype=int, count=len(members))
        return self.node_stats[idx].sum(axis=0), int(self.node_counts[idx].sum())

    def remove(self, stat, i):
        return stat[0] - self.node_stats[i], stat[1] - int(self.node_counts[i])

    def combine(self, a, b):
        return a[0] + b[0], a[1] + b[1]

    def is_empty(self, stat):
        return stat[1] == 0

    def log_marginal(self, stat):
        if stat[1] == 0:
            return 0.0
        return lse_vector(self.log_weights + stat[0])

    def merge_log_marginals(self, stat, others):
        M = np.array([o[0] for o in others])
        M += stat[0] + self.log_weights
        return lse_rows(M)

    def __call__(self, members):
        return self.log_marginal(self.cluster_stat(members))


class CallableEvaluator:
    """Adapts a plain ``members -> log L`` function (sorted tuple argument)."""

    def __init__(self, fn, memo_size=1 << 16):
        self._fn = functools.lru_cache(maxsize=memo_size)(fn)

    def cluster_stat(self, members):
        return tuple(sorted(members))

    def combine(self, a, b):
        return tuple(sorted(a + b))

    def is_empty(self, stat):
        return False

    def log_marginal(self, stat):
        return float(self._fn(stat))

    def merge_log_marginals(self, stat, others):
        return np.array([self.log_marginal(self.combine(stat, o)) for o in others])

    def __call__(self, members):
        return self.log_marginal(self.cluster_stat(members))


class PartitionState:
    """Link variables plus their induced clusters and cached likelihoods.

    Cluster ids in ``cluster_of`` are internal slot numbers; use
    ``canonical_labels()`` for ids ordered by smallest member.
    """

    def __init__(self, links, evaluator):
        links = np.asarray(links, dtype=int)
        self.n = links.size
        self._links = links.tolist()
        labels, members = clusters_from_links(links)
        self.cluster_of = labels.copy()
        self.members = {k: set(m) for k, m in enumerate(members)}
        self._free = list(range(self.n - 1, len(members) - 1, -1))
        self.stats = {}
        self.log_like = {}
        self.refresh(evaluator)

    @classmethod
    def self_links(cls, n, evaluator):
        return cls(np.arange(n), evaluator)

    @classmethod
    def single_cluster(cls, n, evaluator):
        links = np.arange(1, n + 1)
        if n:
            links[-1] = n - 1
        return cls(links, evaluator)

    @property
    def links(self):
        return np.array(self._links, dtype=int)

    @property
    def n_clusters(self):
        return len(self.members)

    def refresh(self, evaluator):
        """Recompute every cluster statistic from scratch."""
        for k, m in self.members.items():
            self._set_stat(k, evaluator.cluster_stat(m), evaluator)

    def _set_stat(self, k, stat, evaluator):
        self.stats[k] = stat
        self.log_like[k] = evaluator.log_marginal(stat)

    def canonical_labels(self):
        return clusters_from_links(self._links)[0]

    @property
    def cluster_members(self):
        return sorted(sorted(m) for m in self.members.values())

    @property
    def cluster_log_like(self):
        order = sorted(self.members, key=lambda k: min(self.members[k]))
        return [self.log_like[k] for k in order]

    def total_log_like(self):
        return float(sum(self.log_like.values()))

    def check(self, evaluator, atol=1e-9):
        """Assert every invariant; used by tests and debug runs."""
        labels, members = clusters_from_links(self._links)
        got = sorted(sorted(m) for m in self.members.values())
        assert got == sorted(members), "cluster members out of sync with links"
        for k, m in self.members.items():
            assert all(self.cluster_of[i] == k for i in m), "cluster_of out of sync"
            fresh = evaluator.log_marginal(evaluator.cluster_stat(m))
            assert abs(fresh - self.log_like[k]) <= atol, "stale cluster likelihood"

    def detach(self, i, evaluator):
        """Replace link i by a self-link, splitting its cluster if needed."""
        c = self._links
        if c[i] == i:
            return
        c[i] = i
        k = self.cluster_of[i]
        group = self.members[k]
        tree = _tree_of(c, group, i)
        if len(tree) == len(group):
            return
        new = self._free.pop()
        rest = group - tree
        self.members[k] = rest
        self.members[new] = tree
        self.cluster_of[list(tree)] = new
        self._set_stat(k, evaluator.cluster_stat(rest), evaluator)
        self._set_stat(new, evaluator.cluster_stat(tree), evaluator)

    def attach(self, i, j, evaluator):
        """Set link i -> j (i must currently self-link), merging clusters."""
        self._links[i] = j
        ki, kj = self.cluster_of[i], self.cluster_of[j]
        if ki == kj:
            return
        a, b = (ki, kj) if len(self.members[ki]) >= len(self.members[kj]) else (kj, ki)
        moved = self.members.pop(b)
        self.members[a] |= moved
        self.cluster_of[list(moved)] = a
        stat = evaluator.combine(self.stats.pop(b), self.stats[a])
        del self.log_like[b]
        self._set_stat(a, stat, evaluator)
        self._free.append(b)


def _tree_of(links, group, root):
    """Members of ``group`` whose forward link path runs into ``root``."""
    reach = {root: True}
    for m in group:
        if m in reach:
            continue
        path = []
        x = m
        while x not in reach:
            reach[x] = None
            path.append(x)
            x = links[x]
        r = bool(reach[x])
        for p in path:
            reach[p] = r
    return {m for m in group if reach[m]}


def sample_log_weights(logp, rng, temperature=1.0):
    """Draw an index with probability proportional to exp(logp / temperature).

    A zero temperature returns the argmax (lowest index on ties).
    """
    if temperature <= 0:
        return int(np.argmax(logp))
    if temperature != 1.0:
        logp = logp / temperature
    m = logp.max()
    if not m > -np.inf:
        raise ValueError("conditional has no finite mass")
    cdf = np.exp(logp - m).cumsum()
    return int(cdf.searchsorted(rng.random() * cdf[-1], side="right"))


def link_conditional(state, i, scores, evaluator):
    """Unnormalized log conditional over targets j for node i (i detached)."""
    logp = np.array(scores[i], dtype=float)
    zi = state.cluster_of[i]
    stat_i = state.stats[zi]
    if evaluator.is_empty(stat_i):
        return logp
    others = [k for k in state.members if k != zi and not evaluator.is_empty(state.stats[k])]
    if not others:
        return logp
    merged = evaluator.merge_log_marginals(stat_i, [state.stats[k] for k in others])
    bonus = np.zeros(state.n)
    bonus[others] = merged - state.log_like[zi] - np.array([state.log_like[k] for k in others])
    return logp + bonus[state.cluster_of]


def gibbs_sweep(state, scores, evaluator, temperature=1.0, rng=None, order=None, fast=True):
    """One systematic-scan sweep over all link variables, in place.

    Each node's link is removed and redrawn from its full conditional
    (prior score times the merge likelihood ratio), raised to ``1/temperature``.
    With an ``AdditiveEvaluator`` and ``fast`` the compiled kernel runs the
    sweep; it draws the same random numbers as the Python loop.
    Returns ``state`` for chaining.
    """
    if rng is None:
        rng = np.random.default_rng()
    if order is None:
        order = range(state.n)
    if fast and isinstance(evaluator, AdditiveEvaluator):
        return _fast_sweep(state, scores, evaluator, temperature, rng, order)
    for i in order:
        state.detach(i, evaluator)
        logp = link_conditional(state, i, scores, evaluator)
        j = sample_log_weights(logp, rng, temperature)
        state.attach(i, j, evaluator)
    return state


def _fast_sweep(state, scores, evaluator, temperature, rng, order):
    order = np.asarray(order, dtype=np.int64)
    uniforms = rng.random(order.size) if temperature > 0 else np.zeros(order.size)
    n, G = evaluator.node_stats.shape
    links = np.array(state._links, dtype=np.int64)
    label = np.asarray(state.cluster_of, dtype=np.int64).copy()
    free = np.zeros(n, dtype=np.int64)
    free[:len(state._free)] = state._free
    stats, counts, loglike = np.zeros((n, G)), np.zeros(n, dtype=np.int64), np.zeros(n)
    n_free = _kernels.ddcrp_sweep(links, label, free, len(state._free), evaluator.node_stats,
                                  evaluator.node_counts.astype(np.int64), evaluator.log_weights,
                                  np.asarray(scores, dtype=float), order, uniforms,
                                  float(temperature), stats, counts, loglike)
    state._links = links.tolist()
    state.cluster_of = label
    state._free = free[:n_free].tolist()
    state.members = {}
    for i, k in enumerate(label.tolist()):
        state.members.setdefault(k, set()).add(i)
    state.stats = {k: (stats[k], int(counts[k])) for k in state.members}
    state.log_like = {k: float(loglike[k]) for k in state.members}
    return state


def normalized_log_prior(scores):
    """Row-normalized log link probabilities."""
    scores = np.asarray(scores, dtype=float)
    return scores - logsumexp(scores, axis=1)[:, None]


def log_joint(state, scores, evaluator=None):
    """log p(c) + sum_k log L(C_k) for the current links.

    Cached cluster likelihoods are used; pass ``evaluator`` to recompute
    them from scratch instead.
    """
    prior = normalized_log_prior(scores)
    links = np.array(state._links)
    lp = float(prior[np.arange(state.n), links].sum())
    if evaluator is None:
        return lp + state.total_log_like()
    return lp + sum(evaluator.log_marginal(evaluator.cluster_stat(m)) for m in state.members.values())
