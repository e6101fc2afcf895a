"""Posterior predictive policies, uncertainty maps and subgoal reports."""

import logging
from dataclasses import dataclass

import numpy as np

from .samplers import (BNIRL, DDBNIRL_S, DDBNIRL_T, cluster_labels, cluster_posteriors,
                       distances_to, sample_actions_or_observed, sample_demo_clusters)

log = logging.getLogger(__name__)

SOFTMAX = "softmax"
OPTIMAL = "optimal"


@dataclass
class PredictiveDistribution:
    probs: np.ndarray
    n_samples: int


def action_model(cache, policy_mode):
    """(G, S, A) per-goal action probabilities."""
    if policy_mode == SOFTMAX:
        return np.exp(cache.log_pi)
    if policy_mode == OPTIMAL:
        G, S, A = cache.log_pi.shape
        model = np.zeros((G, S, A))
        model[np.arange(G)[:, None], np.arange(S)[None, :], cache.policies] = 1.0
        return model
    raise ValueError(f"policy_mode must be {SOFTMAX!r} or {OPTIMAL!r}")


def nearest_demo(mdp, cache, demos, distances=None):
    """Index of the demonstration closest (in hitting time) to each state."""
    if distances is None:
        dist = distances_to(mdp, cache, demos.states)
    else:
        dist = np.asarray(distances)[:, demos.states]
    return np.argmin(dist, axis=1)


def _goal_weights(bundle, cache, prior, demos, samples, n, nearest):
    """(S, G) subgoal posterior mixing weights of every state for sample n."""
    row = samples.links[n]
    actions = sample_actions_or_observed(bundle, demos, samples, n)
    if bundle.model == DDBNIRL_S:
        labels = cluster_labels(DDBNIRL_S, row)
        post = cluster_posteriors(cache, prior, demos, actions, labels[demos.states], labels.max() + 1)
        return post[labels]
    labels = cluster_labels(bundle.model, row)
    post = cluster_posteriors(cache, prior, demos, actions, labels, labels.max() + 1)
    return post[labels[nearest]]


def predictive_distribution(bundle, cache, prior, demos, policy_mode=SOFTMAX, mdp=None,
                            distances=None):
    """Monte Carlo posterior predictive p(a | s, D) at every state.

    For the temporal model a query state inherits the cluster of its nearest
    demonstration, which needs ``mdp`` (or precomputed ``distances``).
    """
    if bundle.model == BNIRL:
        raise ValueError("BNIRL has no state-dependent predictive; see bnirl_predictive")
    samples = bundle.prediction_samples()
    if len(samples) == 0:
        raise ValueError("bundle holds no samples")
    M = action_model(cache, policy_mode)
    nearest = None
    if bundle.model == DDBNIRL_T:
        if mdp is None and distances is None:
            raise ValueError("temporal predictions need the MDP or a distance matrix")
        nearest = nearest_demo(mdp, cache, demos, distances)
    total = np.zeros(M.shape[1:])
    for n in range(len(samples)):
        W = _goal_weights(bundle, cache, prior, demos, samples, n, nearest)
        total += np.einsum("sg,gsa->sa", W, M)
    probs = total / len(samples)
    probs /= probs.sum(axis=1, keepdims=True)
    return PredictiveDistribution(probs, len(samples))


def bnirl_predictive(bundle, cache, prior, demos, policy_mode=OPTIMAL):
    """Frequency-only BNIRL predictive: the same subgoal mixture at every state.

    A query state joins cluster k with probability n_k / (D + alpha) or a
    fresh cluster (subgoal drawn from the prior) with alpha / (D + alpha).
    """
    samples = bundle.prediction_samples()
    if len(samples) == 0:
        raise ValueError("bundle holds no samples")
    alpha = float(bundle.config.get("crp_alpha", 1.0))
    M = action_model(cache, policy_mode)
    D = len(demos)
    total = np.zeros(M.shape[1:])
    for n in range(len(samples)):
        labels = cluster_labels(BNIRL, samples.links[n])
        actions = sample_actions_or_observed(bundle, demos, samples, n)
        K = labels.max() + 1
        post = cluster_posteriors(cache, prior, demos, actions, labels, K)
        freq = np.bincount(labels, minlength=K) / (D + alpha)
        w = freq @ post + alpha / (D + alpha) * prior.weights
        total += np.einsum("g,gsa->sa", w, M)
    probs = total / len(samples)
    probs /= probs.sum(axis=1, keepdims=True)
    return PredictiveDistribution(probs, len(samples))


def map_policy(pred):
    """Most probable action per state, lowest index on ties."""
    probs = pred.probs if isinstance(pred, PredictiveDistribution) else np.asarray(pred)
    return np.argmax(probs, axis=1)


def entropy_map(pred):
    """Prediction entropy per state in nats, with 0 log 0 = 0."""
    p = pred.probs if isinstance(pred, PredictiveDistribution) else np.asarray(pred)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return np.maximum(-terms.sum(axis=1), 0.0)


def _pick_sample(bundle, sample_index):
    if sample_index is None or sample_index == "final":
        return bundle.final, 0
    samples = bundle.samples
    if not -len(samples) <= sample_index < len(samples):
        raise IndexError(f"sample_index {sample_index} out of range for {len(samples)} samples")
    return samples, sample_index % len(samples)


def report_subgoals(bundle, cache, prior, demos, sample_index=None):
    """Members, subgoal posterior and MAP subgoal of every cluster of one sample.

    ``sample_index`` indexes the tempered samples; ``None`` picks the final
    (MAP-temperature) state.
    """
    samples, n = _pick_sample(bundle, sample_index)
    row = samples.links[n]
    actions = sample_actions_or_observed(bundle, demos, samples, n)
    labels = cluster_labels(bundle.model, row)
    demo_clusters = sample_demo_clusters(bundle, row, len(demos), demos.states)
    K = labels.max() + 1
    post = cluster_posteriors(cache, prior, demos, actions, demo_clusters, K)
    reports = []
    for k in range(K):
        reports.append({
            "cluster": k,
            "members": np.flatnonzero(labels == k).tolist(),
            "n_demos": int(np.sum(demo_clusters == k)),
            "posterior": post[k],
            "map_subgoal": int(prior.support[int(np.argmax(post[k]))]),
        })
    return reports


def phase_policies(bundle, cache, prior, demos, sample_index=None, policy_mode=SOFTMAX):
    """Per-cluster predictive action distributions over all states, (K, S, A).

    For the temporal model each cluster is one behavioral phase.
    """
    M = action_model(cache, policy_mode)
    reports = report_subgoals(bundle, cache, prior, demos, sample_index)
    return np.array([np.einsum("g,gsa->sa", r["posterior"], M) for r in reports])
