"""Subgoal action likelihoods, subgoal priors and cluster marginals."""

import hashlib
import math
import os
from dataclasses import dataclass

import numpy as np

from .mdp import DEFAULT_TOL, greedy_policy, hitting_time_matrix, subgoal_q_all

SOFTMAX = "softmax"
NORMALIZED = "normalized"
MODES = (SOFTMAX, NORMALIZED)

DEFAULT_BETA = math.log(50.0)
CONSTANT_ROW_RTOL = 1e-9


def logsumexp(x, axis=None):
    """Log-sum-exp that tolerates all ``-inf`` slices."""
    x = np.asarray(x, dtype=float)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def lse_vector(x):
    """Fast log-sum-exp of a 1-D array (hot path of the samplers)."""
    m = x.max()
    if m == -np.inf:
        return -np.inf
    return m + math.log(np.exp(x - m).sum())


def lse_rows(M):
    """Fast row-wise log-sum-exp of a 2-D array with a finite entry per row."""
    m = M.max(axis=1)
    return m + np.log(np.exp(M - m[:, None]).sum(axis=1))


@dataclass(frozen=True, eq=False)
class SubgoalPrior:
    """Distribution over candidate subgoal states."""

    support: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=int).ravel()
        logw = np.asarray(self.log_weights, dtype=float).ravel()
        if support.size == 0:
            raise ValueError("subgoal prior needs a non-empty support")
        if support.shape != logw.shape:
            raise ValueError("support and log_weights differ in length")
        if np.unique(support).size != support.size:
            raise ValueError("support states must be distinct")
        if abs(np.exp(logw).sum() - 1.0) > 1e-9:
            raise ValueError("prior weights must sum to one")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "log_weights", logw)

    @classmethod
    def uniform(cls, states):
        states = np.unique(np.asarray(states, dtype=int))
        return cls(states, np.full(states.size, -math.log(states.size)))

    @classmethod
    def all_states(cls, n_states):
        return cls.uniform(np.arange(n_states))

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def __len__(self):
        return self.support.size

    def to_dict(self):
        return {"support": self.support.tolist(), "log_weights": self.log_weights.tolist()}


@dataclass(frozen=True, eq=False)
class LikelihoodCache:
    """Per-subgoal action log-likelihoods plus planning by-products.

    ``log_pi[k, s, a]`` is log pi(a | s, goal = support[k]); ``policies[k]``
    is the greedy policy for that goal and ``hitting_times[:, k]`` the
    expected number of steps from every state to it.
    """

    support: np.ndarray
    log_pi: np.ndarray
    mode: str
    beta: float
    policies: np.ndarray
    hitting_times: np.ndarray
    key: str = ""

    @property
    def n_goals(self):
        return self.support.size

    def probs(self):
        """``exp(log_pi)``, computed once per cache."""
        memo = self.__dict__.get("_probs")
        if memo is None:
            memo = np.exp(self.log_pi)
            object.__setattr__(self, "_probs", memo)
        return memo

    def goal_column(self, state):
        """Index of ``state`` in the support, or -1."""
        hit = np.flatnonzero(self.support == state)
        return int(hit[0]) if hit.size else -1


def normalize_q(Q, epsilon=1.0, rtol=0.0):
    """Per-state min-max rescaling of Q-values to [0, 1].

    Constant rows are set to ``epsilon``. With ``rtol > 0`` a row whose
    spread is at most ``rtol`` times the spread of the whole table also
    counts as constant; ``build_cache`` uses this to discard planning
    round-off.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1]")
    Q = np.asarray(Q, dtype=float)
    hi = Q.max(axis=-1, keepdims=True)
    lo = Q.min(axis=-1, keepdims=True)
    spread = hi - lo
    table = Q.max(axis=(-2, -1), keepdims=True) - Q.min(axis=(-2, -1), keepdims=True)
    constant = spread <= rtol * table
    safe = np.where(constant, 1.0, spread)
    return np.where(constant, epsilon, (Q - lo) / safe)


def softmax_likelihood(values, beta):
    """Row-wise log softmax of ``beta * values``."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    z = beta * np.asarray(values, dtype=float)
    return z - logsumexp(z, axis=-1)[..., None]


def _cache_key(mdp, prior, beta, mode, reward_mass, epsilon):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mdp.transition).tobytes())
    h.update(repr((mdp.discount, float(beta), mode, float(reward_mass), float(epsilon))).encode())
    h.update(prior.support.tobytes())
    h.update(prior.log_weights.tobytes())
    return h.hexdigest()[:16]


def build_cache(mdp, prior, beta=DEFAULT_BETA, mode=NORMALIZED, reward_mass=1.0,
                epsilon=1.0, tol=DEFAULT_TOL, hitting=True, cache_dir=None):
    """Plan for every goal in the prior support and tabulate the likelihoods.

    ``cache_dir`` enables an ``.npz`` sidecar keyed by a hash of the inputs,
    so repeated CLI runs skip planning.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if prior.support.min() < 0 or prior.support.max() >= mdp.n_states:
        raise ValueError("prior support lies outside the state set")
    key = _cache_key(mdp, prior, beta, mode, reward_mass, epsilon)
    path = os.path.join(cache_dir, f"likelihood-{key}.npz") if cache_dir else None
    if path and os.path.exists(path):
        with np.load(path) as data:
            ht = data["hitting_times"]
            if hitting and ht.size == 0:
                ht = hitting_time_matrix(mdp, data["policies"], data["support"])
            return LikelihoodCache(data["support"], data["log_pi"], mode, float(beta),
                                   data["policies"], ht, key)

    Q = subgoal_q_all(mdp, prior.support, reward_mass, tol)
    policies = greedy_policy(Q)
    values = normalize_q(Q, epsilon, CONSTANT_ROW_RTOL) if mode == NORMALIZED else Q
    log_pi = softmax_likelihood(values, beta)
    ht = hitting_time_matrix(mdp, policies, prior.support) if hitting else np.empty((0, 0))
    cache = LikelihoodCache(prior.support.copy(), log_pi, mode, float(beta), policies, ht, key)
    if path:
        os.makedirs(cache_dir, exist_ok=True)
        np.savez(path, support=cache.support, log_pi=log_pi, policies=policies, hitting_times=ht)
    return cache


def _check(cache, prior):
    if not np.array_equal(cache.support, prior.support):
        raise ValueError("cache and prior have different supports")


def demo_log_likelihoods(cache, states, actions):
    """(G, D) matrix of log pi(a_d | s_d, g)."""
    return cache.log_pi[:, np.asarray(states, dtype=int), np.asarray(actions, dtype=int)]


def cluster_log_marginal(cache, prior, states, actions):
    """log sum_g p(g) prod_d pi(a_d | s_d, g) for the demonstrations of one cluster."""
    _check(cache, prior)
    ll = demo_log_likelihoods(cache, states, actions).sum(axis=1)
    return logsumexp(prior.log_weights + ll)


def subgoal_posterior(cache, prior, states, actions):
    """Posterior over the support given the demonstrations of one cluster."""
    _check(cache, prior)
    logp = prior.log_weights + demo_log_likelihoods(cache, states, actions).sum(axis=1)
    lz = logsumexp(logp)
    if not np.isfinite(lz):
        raise ValueError("demonstrations have zero likelihood under every subgoal")
    return np.exp(logp - lz)


def map_subgoal(posterior, prior):
    """Support state with the largest posterior mass."""
    return int(prior.support[int(np.argmax(posterior))])


def posterior_from_stat(log_weights, stat):
    """Subgoal posterior from a summed log-likelihood vector."""
    logp = log_weights + stat
    return np.exp(logp - logsumexp(logp))


def cache_fingerprint(cache):
    return cache.key or hashlib.sha256(cache.log_pi.tobytes()).hexdigest()[:16]


def prior_from_dict(data):
    return SubgoalPrior(np.asarray(data["support"]), np.asarray(data["log_weights"]))

