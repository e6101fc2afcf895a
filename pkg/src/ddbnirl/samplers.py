"""Gibbs samplers for ddBNIRL-S, ddBNIRL-T and vanilla BNIRL."""

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from . import _kernels, ddcrp
from .ddcrp import AdditiveEvaluator, PartitionState, ScoreConfig
from .likelihood import lse_rows, posterior_from_stat
from .mdp import greedy_policy, hitting_time_matrix, subgoal_q_all

log = logging.getLogger(__name__)

DDBNIRL_S = "ddbnirl-s"
DDBNIRL_T = "ddbnirl-t"
BNIRL = "bnirl"

STATE_ACTION = "state-action"
STATE_SUCCESSOR = "state-successor"


@dataclass(frozen=True, eq=False)
class DemoSet:
    """Expert records; exactly one of ``actions`` / ``successors`` is set.

    ``trajectory`` ids group records; ``timestamps`` are optional and must
    increase strictly within each trajectory.
    """

    states: np.ndarray
    actions: np.ndarray = None
    successors: np.ndarray = None
    timestamps: np.ndarray = None
    trajectory: np.ndarray = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=int).ravel()
        object.__setattr__(self, "states", states)
        for name in ("actions", "successors", "trajectory"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=int).ravel()
                if value.shape != states.shape:
                    raise ValueError(f"{name} has {value.size} entries, expected {states.size}")
                object.__setattr__(self, name, value)
        if (self.actions is None) == (self.successors is None):
            raise ValueError("exactly one of actions or successors must be given")
        if self.trajectory is None:
            object.__setattr__(self, "trajectory", np.zeros(states.size, dtype=int))
        if self.timestamps is not None:
            t = np.asarray(self.timestamps, dtype=float).ravel()
            if t.shape != states.shape:
                raise ValueError("timestamps must match states in length")
            for tid in np.unique(self.trajectory):
                tt = t[self.trajectory == tid]
                if np.any(np.diff(tt) <= 0):
                    raise ValueError(f"timestamps of trajectory {tid} are not strictly increasing")
            object.__setattr__(self, "timestamps", t)

    @property
    def kind(self):
        return STATE_ACTION if self.actions is not None else STATE_SUCCESSOR

    def __len__(self):
        return self.states.size

    def validate(self, mdp):
        S, A = mdp.n_states, mdp.n_actions
        for name, bound in (("states", S), ("actions", A), ("successors", S)):
            v = getattr(self, name)
            if v is not None and v.size and (v.min() < 0 or v.max() >= bound):
                bad = int(np.flatnonzero((v < 0) | (v >= bound))[0])
                raise ValueError(f"record {bad}: {name[:-1]} {v[bad]} out of range [0, {bound})")
        if self.kind == STATE_SUCCESSOR:
            reach = mdp.transition[self.states, :, self.successors].max(axis=1)
            if np.any(reach <= 0):
                bad = int(np.flatnonzero(reach <= 0)[0])
                raise ValueError(f"record {bad}: successor unreachable under every action")

    def visited_states(self):
        if self.successors is None:
            return np.unique(self.states)
        return np.unique(np.concatenate([self.states, self.successors]))

    def times(self, gap_factor=10.0):
        """Timestamps, falling back to record index with gaps between trajectories."""
        if self.timestamps is not None:
            return self.timestamps.copy()
        t = np.empty(len(self))
        offset = 0.0
        for tid in _ordered_unique(self.trajectory):
            idx = np.flatnonzero(self.trajectory == tid)
            t[idx] = offset + np.arange(idx.size)
            offset = t[idx[-1]] + gap_factor
        return t

    def subset(self, index):
        index = np.asarray(index, dtype=int)
        pick = lambda v: None if v is None else v[index]
        return DemoSet(self.states[index], pick(self.actions), pick(self.successors),
                       pick(self.timestamps), self.trajectory[index])

    def digest(self):
        h = hashlib.sha256()
        for v in (self.states, self.actions, self.successors, self.timestamps, self.trajectory):
            h.update(b"-" if v is None else np.ascontiguousarray(v).tobytes())
        return h.hexdigest()[:16]


def _ordered_unique(values):
    seen = {}
    for v in values:
        seen.setdefault(int(v), None)
    return list(seen)


@dataclass
class InferenceConfig:
    sweeps: int = 2000
    burn_in: int = 500
    thin: int = 5
    t0: float = 1.0
    t_min: float = 0.05
    run_cold_chain: bool = True
    seed: int = 0
    score: ScoreConfig = field(default_factory=ScoreConfig)
    crp_alpha: float = 1.0
    init: str = "self"
    random_scan: bool = False
    gap_factor: float = 10.0

    def __post_init__(self):
        if isinstance(self.score, dict):
            self.score = ScoreConfig(**self.score)
        if self.sweeps < 1 or self.thin < 1:
            raise ValueError("sweeps and thin must be positive")
        if not 0 <= self.burn_in < self.sweeps:
            raise ValueError("burn_in must lie in [0, sweeps)")
        if not 0 < self.t_min <= self.t0:
            raise ValueError("need 0 < t_min <= t0")
        if self.init not in ("self", "single"):
            raise ValueError("init must be 'self' or 'single'")
        if self.crp_alpha < 0:
            raise ValueError("crp_alpha must be nonnegative")

    def to_dict(self):
        return asdict(self)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def anneal_temperature(sweep, config):
    """Geometric schedule from ``t0`` reaching ``t_min`` at the last sweep."""
    if sweep < 0:
        raise ValueError("sweep must be nonnegative")
    if config.t_min >= config.t0:
        return config.t0
    rate = (config.t_min / config.t0) ** (1.0 / max(config.sweeps - 1, 1))
    return max(config.t_min, config.t0 * rate ** sweep)


@dataclass
class ChainSamples:
    """Retained states of one chain (rows of ``links`` are link or label vectors)."""

    sweeps: np.ndarray
    temperatures: np.ndarray
    links: np.ndarray
    log_joint: np.ndarray
    actions: np.ndarray = None

    def __len__(self):
        return len(self.sweeps)

    def records(self, model):
        out = []
        for n in range(len(self)):
            row = self.links[n]
            rec = {
                "sweep": int(self.sweeps[n]),
                "temperature": float(self.temperatures[n]),
                "links": row.tolist(),
                "cluster_of": cluster_labels(model, row).tolist(),
                "log_joint": float(self.log_joint[n]),
            }
            if self.actions is not None:
                rec["actions"] = self.actions[n].tolist()
            out.append(rec)
        return out

    @classmethod
    def from_records(cls, records):
        actions = None
        if records and "actions" in records[0]:
            actions = np.array([r["actions"] for r in records], dtype=int)
        width = len(records[0]["links"]) if records else 0
        return cls(np.array([r["sweep"] for r in records], dtype=int),
                   np.array([r["temperature"] for r in records], dtype=float),
                   np.array([r["links"] for r in records], dtype=int).reshape(len(records), width),
                   np.array([r["log_joint"] for r in records], dtype=float),
                   actions)


@dataclass
class PosteriorBundle:
    """Posterior samples of one inference run.

    ``final`` holds the last state of the annealed chain (the MAP-temperature
    sample); ``cold_samples`` come from the companion chain kept at T = 1.
    """

    model: str
    kind: str
    samples: ChainSamples
    cold_samples: ChainSamples
    final: ChainSamples
    config: dict
    provenance: dict

    @property
    def n_nodes(self):
        return self.final.links.shape[1]

    def prediction_samples(self):
        if self.cold_samples is not None and len(self.cold_samples):
            return self.cold_samples
        log.warning("no cold-chain samples; predicting from the tempered chain (biased toward MAP)")
        return self.samples

    def to_dict(self):
        return {
            "model": self.model,
            "kind": self.kind,
            "config": self.config,
            "provenance": self.provenance,
            "final": self.final.records(self.model)[0],
            "samples": self.samples.records(self.model),
            "cold_samples": None if self.cold_samples is None else self.cold_samples.records(self.model),
        }

    @classmethod
    def from_dict(cls, data):
        cold = data.get("cold_samples")
        return cls(data["model"], data["kind"], ChainSamples.from_records(data["samples"]),
                   None if cold is None else ChainSamples.from_records(cold),
                   ChainSamples.from_records([data["final"]]), data["config"], data["provenance"])


def cluster_labels(model, row):
    """Canonical cluster labels (numbered by smallest member) of a sample row."""
    row = np.asarray(row, dtype=int)
    if model == BNIRL:
        order = {}
        return np.array([order.setdefault(int(v), len(order)) for v in row], dtype=int)
    return ddcrp.clusters_from_links(row)[0]


# -- model plumbing ---------------------------------------------------------

class _Model:
    """Maps demonstrations onto Gibbs nodes and builds the evaluator."""

    def __init__(self, name, cache, prior, demos, n_nodes, node_of_demo):
        if not np.array_equal(cache.support, prior.support):
            raise ValueError("cache and prior have different supports")
        self.name = name
        self.cache = cache
        self.prior = prior
        self.demos = demos
        self.n_nodes = n_nodes
        self.node_of_demo = np.asarray(node_of_demo, dtype=int)
        counts = np.zeros(n_nodes, dtype=int)
        np.add.at(counts, self.node_of_demo, 1)
        self.evaluator = AdditiveEvaluator(prior.log_weights, np.zeros((n_nodes, cache.n_goals)), counts)

    def set_actions(self, actions):
        ll = self.cache.log_pi[:, self.demos.states, actions].T
        stats = np.zeros((self.n_nodes, self.cache.n_goals))
        np.add.at(stats, self.node_of_demo, ll)
        self.evaluator.node_stats = stats


def _initial_actions(mdp, demos):
    if demos.kind == STATE_ACTION:
        return demos.actions.copy()
    # most likely action for the observed transition, lowest index on ties
    return np.argmax(mdp.transition[demos.states, :, demos.successors], axis=1)


def sample_actions(state, demos, mdp, cache, prior, rng, actions, cluster_of_demo,
                   temperature=1.0, evaluator=None, node_of_demo=None, fast=True):
    """Collapsed pass over the hidden actions of state-successor demonstrations.

    Each a_d is redrawn from T(s'_d | s_d, a) times the subgoal-marginal
    likelihood of its cluster with a_d replaced by a. ``cluster_of_demo[d]``
    is the cluster slot of demonstration d in ``state``. Works in place on
    ``actions`` and, if given, on the evaluator node statistics; cluster
    caches are refreshed at the end.
    """
    if demos.kind != STATE_SUCCESSOR:
        raise ValueError("action sampling needs state-successor demonstrations")
    with np.errstate(divide="ignore"):
        log_t = np.log(mdp.transition[demos.states, :, demos.successors])
    if np.any(np.all(np.isneginf(log_t), axis=1)):
        raise ValueError("observed successor unreachable under every action")
    lw = prior.log_weights
    log_pi = cache.log_pi
    if fast:
        return _fast_actions(state, demos, rng, actions, cluster_of_demo, temperature,
                             evaluator, node_of_demo, log_t, cache, lw)
    for d in range(len(demos)):
        k = cluster_of_demo[d]
        vec, count = state.stats[k]
        s, a_old = demos.states[d], actions[d]
        cand = (lw + vec - log_pi[:, s, a_old])[:, None] + log_pi[:, s, :]
        logp = log_t[d] + lse_rows(cand.T)
        a_new = ddcrp.sample_log_weights(logp, rng, temperature)
        if a_new != a_old:
            delta = log_pi[:, s, a_new] - log_pi[:, s, a_old]
            state.stats[k] = (vec + delta, count)
            if evaluator is not None:
                evaluator.node_stats[node_of_demo[d]] += delta
            actions[d] = a_new
    if evaluator is not None:
        state.refresh(evaluator)
    return actions


def _fast_actions(state, demos, rng, actions, cluster_of_demo, temperature, evaluator,
                  node_of_demo, log_t, cache, lw):
    D = len(demos)
    uniforms = rng.random(D) if temperature > 0 else np.zeros(D)
    slots = sorted(state.stats)
    index = {k: n for n, k in enumerate(slots)}
    stats = np.array([state.stats[k][0] for k in slots], dtype=float)
    slot_of_demo = np.array([index[int(k)] for k in cluster_of_demo], dtype=np.int64)
    if evaluator is not None:
        node_stats, nodes = evaluator.node_stats, np.asarray(node_of_demo, dtype=np.int64)
    else:
        node_stats, nodes = np.zeros((1, lw.size)), np.full(D, -1, dtype=np.int64)
    work = np.asarray(actions, dtype=np.int64).copy()
    _kernels.action_pass(stats, slot_of_demo, nodes, demos.states.astype(np.int64), work,
                         np.ascontiguousarray(log_t), cache.log_pi, cache.probs(), lw,
                         node_stats, uniforms,
                         float(temperature))
    actions[:] = work
    if evaluator is not None:
        state.refresh(evaluator)
    else:
        for k in slots:
            state.stats[k] = (stats[index[k]], state.stats[k][1])
    return actions


class CrpState:
    """Cluster labels of the exchangeable (BNIRL) model with cached likelihoods."""

    def __init__(self, labels, evaluator):
        labels = np.asarray(labels, dtype=int)
        self.n = labels.size
        canon = cluster_labels(BNIRL, labels)
        self.cluster_of = canon.copy()
        self.members = {}
        for d, k in enumerate(canon):
            self.members.setdefault(int(k), set()).add(d)
        self._free = list(range(self.n - 1, len(self.members) - 1, -1))
        self.stats = {}
        self.log_like = {}
        self.refresh(evaluator)

    def refresh(self, evaluator):
        for k, m in self.members.items():
            self.stats[k] = evaluator.cluster_stat(m)
            self.log_like[k] = evaluator.log_marginal(self.stats[k])

    @property
    def links(self):
        return self.cluster_of.copy()

    def total_log_like(self):
        return float(sum(self.log_like.values()))

    def check(self, evaluator, atol=1e-9):
        for k, m in self.members.items():
            assert m and all(self.cluster_of[d] == k for d in m)
            assert abs(evaluator(m) - self.log_like[k]) <= atol, "stale cluster likelihood"
        assert sum(len(m) for m in self.members.values()) == self.n


def crp_sweep(state, evaluator, alpha, temperature=1.0, rng=None, order=None, fast=True):
    """Collapsed Gibbs sweep over the BNIRL labels with a CRP(alpha) prior.

    Existing clusters are proposed in slot order, then a fresh one. With an
    ``AdditiveEvaluator`` and ``fast`` the compiled kernel runs the sweep.
    """
    if rng is None:
        rng = np.random.default_rng()
    log_alpha = math.log(alpha) if alpha > 0 else -np.inf
    if order is None:
        order = range(state.n)
    if fast and isinstance(evaluator, AdditiveEvaluator):
        return _fast_crp(state, evaluator, log_alpha, temperature, rng, order)
    for d in order:
        k_old = state.cluster_of[d]
        group = state.members[k_old]
        group.discard(d)
        if group:
            state.stats[k_old] = evaluator.remove(state.stats[k_old], d)
            state.log_like[k_old] = evaluator.log_marginal(state.stats[k_old])
        else:
            del state.members[k_old], state.stats[k_old], state.log_like[k_old]
            state._free.append(k_old)
        stat_d = evaluator.cluster_stat([d])
        lm_d = evaluator.log_marginal(stat_d)
        ks = sorted(state.members)
        logp = np.empty(len(ks) + 1)
        if ks:
            merged = evaluator.merge_log_marginals(stat_d, [state.stats[k] for k in ks])
            sizes = np.array([len(state.members[k]) for k in ks], dtype=float)
            logp[:-1] = np.log(sizes) + merged - np.array([state.log_like[k] for k in ks])
        logp[-1] = log_alpha + lm_d if ks else 0.0
        pick = ddcrp.sample_log_weights(logp, rng, temperature)
        if pick == len(ks):
            k = state._free.pop()
            state.members[k] = {d}
            state.stats[k] = stat_d
            state.log_like[k] = lm_d
        else:
            k = ks[pick]
            state.members[k].add(d)
            state.stats[k] = evaluator.combine(state.stats[k], stat_d)
            state.log_like[k] = evaluator.log_marginal(state.stats[k])
        state.cluster_of[d] = k
    # drop the round-off accumulated by the incremental removals
    state.refresh(evaluator)
    return state


def _fast_crp(state, evaluator, log_alpha, temperature, rng, order):
    order = np.asarray(order, dtype=np.int64)
    uniforms = rng.random(order.size) if temperature > 0 else np.zeros(order.size)
    n = state.n
    label = np.asarray(state.cluster_of, dtype=np.int64).copy()
    free = np.zeros(n, dtype=np.int64)
    free[:len(state._free)] = state._free
    sizes = np.bincount(label, minlength=n).astype(np.int64)
    n_free = _kernels.crp_sweep(label, free, len(state._free), sizes, evaluator.node_stats,
                                evaluator.log_weights, float(log_alpha), order, uniforms,
                                float(temperature))
    state.cluster_of = label
    state._free = free[:n_free].tolist()
    state.members = {}
    for d, k in enumerate(label.tolist()):
        state.members.setdefault(k, set()).add(d)
    state.stats, state.log_like = {}, {}
    state.refresh(evaluator)
    return state


def crp_log_prior(labels, alpha):
    """log probability of a partition under CRP(alpha)."""
    sizes = np.bincount(cluster_labels(BNIRL, labels))
    n, K = sizes.sum(), sizes.size
    if alpha == 0:
        return 0.0 if K == 1 else -np.inf
    return float(K * math.log(alpha) + gammaln(sizes).sum() + gammaln(alpha) - gammaln(alpha + n))


# -- chain driver -----------------------------------------------------------

def _run_chain(model, mdp, config, rng, tempered, sweep_fn, new_state, joint_fn):
    demos = model.demos
    actions = _initial_actions(mdp, demos)
    model.set_actions(actions)
    ev = model.evaluator
    state = new_state(ev)
    successor = demos.kind == STATE_SUCCESSOR
    keep_sweeps, keep_temps, keep_links, keep_joint, keep_actions = [], [], [], [], []
    for k in range(config.sweeps):
        temp = anneal_temperature(k, config) if tempered else 1.0
        order = rng.permutation(model.n_nodes) if config.random_scan else None
        sweep_fn(state, temp, rng, order)
        if successor:
            cod = state.cluster_of[model.node_of_demo]
            sample_actions(state, demos, mdp, model.cache, model.prior, rng, actions, cod,
                           temp, ev, model.node_of_demo)
        if k >= config.burn_in and (k - config.burn_in) % config.thin == 0:
            keep_sweeps.append(k)
            keep_temps.append(temp)
            keep_links.append(state.links)
            keep_joint.append(joint_fn(state))
            keep_actions.append(actions.copy())
    samples = ChainSamples(np.array(keep_sweeps, dtype=int), np.array(keep_temps),
                           np.array(keep_links, dtype=int).reshape(len(keep_sweeps), model.n_nodes),
                           np.array(keep_joint),
                           np.array(keep_actions, dtype=int) if successor else None)
    final = ChainSamples(np.array([config.sweeps - 1]), np.array([temp]), state.links[None, :],
                         np.array([joint_fn(state)]), actions[None, :].copy() if successor else None)
    return samples, final


def _run(model, mdp, config, sweep_fn, new_state, joint_fn):
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    annealed = config.t_min < config.t0
    samples, final = _run_chain(model, mdp, config, np.random.default_rng(seeds[0]),
                                annealed, sweep_fn, new_state, joint_fn)
    cold = None
    if config.run_cold_chain and annealed:
        cold, _ = _run_chain(model, mdp, config, np.random.default_rng(seeds[1]),
                             False, sweep_fn, new_state, joint_fn)
    elif not annealed:
        cold = samples
    provenance = {"config": config.digest(), "cache": model.cache.key or "", "demos": model.demos.digest()}
    return PosteriorBundle(model.name, model.demos.kind, samples, cold, final,
                           config.to_dict(), provenance)


def _ddcrp_run(model, mdp, config, scores):
    n = model.n_nodes
    init = PartitionState.self_links if config.init == "self" else PartitionState.single_cluster

    def sweep(state, temp, rng, order):
        ddcrp.gibbs_sweep(state, scores, model.evaluator, temp, rng, order)

    def joint(state):
        return ddcrp.log_joint(state, scores)

    return _run(model, mdp, config, sweep, lambda ev: init(n, ev), joint)


def _check_inputs(mdp, demos, cache):
    if cache.log_pi.shape[1:] != (mdp.n_states, mdp.n_actions):
        raise ValueError("likelihood cache was built for a different MDP")
    demos.validate(mdp)


def distances_to(mdp, cache, targets, reward_mass=1.0):
    """Hitting times from every state to each of ``targets``, shape (S, len(targets))."""
    targets = np.asarray(targets, dtype=int)
    out = np.empty((mdp.n_states, targets.size))
    cols = np.array([cache.goal_column(t) for t in targets], dtype=int)
    have = (cols >= 0) & (cache.hitting_times.size > 0)
    if np.any(have):
        out[:, have] = cache.hitting_times[:, cols[have]]
    missing = np.unique(targets[~have])
    if missing.size:
        pol = greedy_policy(subgoal_q_all(mdp, missing, reward_mass))
        extra = hitting_time_matrix(mdp, pol, missing)
        lookup = {int(t): extra[:, n] for n, t in enumerate(missing)}
        for n in np.flatnonzero(~have):
            out[:, n] = lookup[int(targets[n])]
    return out


def infer_ddbnirl_s(mdp, demos, cache, prior, config=None, distances=None):
    """Spatial model: one link per state, distances are hitting times.

    ``distances`` (|S| x |S|) can be passed to reuse a precomputed metric.
    """
    config = config or InferenceConfig()
    _check_inputs(mdp, demos, cache)
    if distances is None:
        distances = distances_to(mdp, cache, np.arange(mdp.n_states))
    scores = ddcrp.score_matrix(distances, config.score)
    model = _Model(DDBNIRL_S, cache, prior, demos, mdp.n_states, demos.states)
    return _ddcrp_run(model, mdp, config, scores)


def temporal_distances(demos, gap_factor=10.0):
    t = demos.times(gap_factor)
    return np.abs(t[:, None] - t[None, :])


def infer_ddbnirl_t(mdp, demos, cache, prior, config=None):
    """Temporal model: one link per demonstration, distances |t_d - t_d'|."""
    config = config or InferenceConfig()
    _check_inputs(mdp, demos, cache)
    if demos.timestamps is None:
        log.info("no timestamps; using record index with inter-trajectory gaps")
    D = len(demos)
    dist = temporal_distances(demos, config.gap_factor)
    scores = ddcrp.score_matrix(dist, config.score) if D > 1 else np.zeros((D, D))
    if D == 1:
        scores[0, 0] = 0.0
    model = _Model(DDBNIRL_T, cache, prior, demos, D, np.arange(D))
    return _ddcrp_run(model, mdp, config, scores)


def infer_bnirl(mdp, demos, cache, prior, config=None):
    """Vanilla BNIRL: collapsed Gibbs over CRP labels of the demonstrations."""
    config = config or InferenceConfig()
    _check_inputs(mdp, demos, cache)
    D = len(demos)
    model = _Model(BNIRL, cache, prior, demos, D, np.arange(D))
    alpha = config.crp_alpha

    def new_state(ev):
        labels = np.arange(D) if config.init == "self" else np.zeros(D, dtype=int)
        return CrpState(labels, ev)

    def sweep(state, temp, rng, order):
        crp_sweep(state, model.evaluator, alpha, temp, rng, order)

    def joint(state):
        return crp_log_prior(state.cluster_of, alpha) + state.total_log_like()

    return _run(model, mdp, config, sweep, new_state, joint)


# -- post-processing --------------------------------------------------------

def sample_demo_clusters(bundle, row, n_demos, demo_states):
    """Canonical cluster label of every demonstration for one sample row."""
    labels = cluster_labels(bundle.model, row)
    if bundle.model == DDBNIRL_S:
        return labels[np.asarray(demo_states, dtype=int)]
    return labels[:n_demos]


def cluster_posteriors(cache, prior, demos, actions, demo_clusters, n_clusters):
    """Subgoal posterior of each cluster given its demonstrations, (K, G)."""
    ll = cache.log_pi[:, demos.states, actions].T
    stats = np.zeros((n_clusters, cache.n_goals))
    np.add.at(stats, demo_clusters, ll)
    return np.array([posterior_from_stat(prior.log_weights, st) for st in stats]).reshape(
        n_clusters, cache.n_goals)


def sample_actions_or_observed(bundle, demos, samples, n):
    if demos.kind == STATE_ACTION:
        return demos.actions
    return samples.actions[n]


def bnirl_ext_assign(bundle, mdp, cache, prior, demos, distances=None):
    """Subgoal (state index) for every state via its nearest demonstration.

    Uses the MAP-temperature sample: each demo's cluster yields a MAP
    subgoal, and each state adopts the subgoal of the demo whose state is
    closest in hitting time (lowest demo index on ties).
    """
    if len(demos) == 0:
        raise ValueError("BNIRL-EXT needs at least one demonstration")
    final = bundle.final
    actions = sample_actions_or_observed(bundle, demos, final, 0)
    labels = cluster_labels(BNIRL, final.links[0])
    K = labels.max() + 1
    post = cluster_posteriors(cache, prior, demos, actions, labels, K)
    goal_of_cluster = prior.support[np.argmax(post, axis=1)]
    if distances is None:
        dist = distances_to(mdp, cache, demos.states)
    else:
        dist = np.asarray(distances)[:, demos.states]
    nearest = np.argmin(dist, axis=1)
    return goal_of_cluster[labels[nearest]]


def policy_from_subgoals(mdp, cache, subgoal_of_state, reward_mass=1.0):
    """Greedy action at each state for the subgoal assigned to it."""
    subgoal_of_state = np.asarray(subgoal_of_state, dtype=int)
    goals = np.unique(subgoal_of_state)
    pols = {}
    for g in goals:
        col = cache.goal_column(g)
        pols[int(g)] = cache.policies[col] if col >= 0 else greedy_policy(
            subgoal_q_all(mdp, [g], reward_mass)[0])
    return np.array([pols[int(g)][s] for s, g in enumerate(subgoal_of_state)], dtype=int)
