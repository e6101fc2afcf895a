"""Synthetic environments, simulated experts and the benchmark/active-learning loops."""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .likelihood import NORMALIZED, DEFAULT_BETA, SubgoalPrior, build_cache
from .mdp import Mdp, greedy_policy, policy_evaluation, subgoal_q_all, value_iteration
from .prediction import (OPTIMAL, bnirl_predictive, map_policy,
                         predictive_distribution)
from .samplers import (DemoSet, InferenceConfig, bnirl_ext_assign, infer_bnirl,
                       infer_ddbnirl_s, policy_from_subgoals)

# (d_row, d_col), clockwise from north so that neighbours differ by one index
DIRECTIONS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
DIRECTION_NAMES = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")


@dataclass(frozen=True)
class GridWorldSpec:
    """Rectangular 8-connected grid; wall cells are removed from the state set."""

    width: int = 20
    height: int = 20
    walls: frozenset = frozenset()
    success_prob: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(tuple(w) for w in self.walls))
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0.0 < self.success_prob <= 1.0:
            raise ValueError("success_prob must lie in (0, 1]")

    def cells(self):
        """(row, col) of every state, row-major over non-wall cells."""
        return [(r, c) for r in range(self.height) for c in range(self.width)
                if (r, c) not in self.walls]

    def index(self):
        return {cell: s for s, cell in enumerate(self.cells())}

    def state_of(self, row, col):
        return self.index()[(row, col)]


def figure_wall(width=20, height=20, length=9):
    """Horizontal wall bar in the middle of the grid."""
    row = height // 2
    start = (width - length) // 2
    return frozenset((row, c) for c in range(start, start + length))


def make_gridworld(spec, discount=0.9):
    """Noisy 8-direction grid: intended move w.p. success_prob, each neighbour
    direction w.p. half the rest; blocked moves stay in place."""
    cells = spec.cells()
    if not cells:
        raise ValueError("grid has no free cells")
    index = spec.index()
    S, A = len(cells), len(DIRECTIONS)
    T = np.zeros((S, A, S))
    slip = (1.0 - spec.success_prob) / 2.0
    for s, (r, c) in enumerate(cells):
        for a in range(A):
            for direction, p in ((a, spec.success_prob), ((a - 1) % A, slip), ((a + 1) % A, slip)):
                if p == 0:
                    continue
                dr, dc = DIRECTIONS[direction]
                target = index.get((r + dr, c + dc), s)
                T[s, a, target] += p
    return Mdp(T, discount)


@dataclass(frozen=True)
class RandomMdpSpec:
    n_states: int = 100
    n_actions: int = 10
    dirichlet_concentration: float = 0.01
    n_reward_states: int = 10
    discount: float = 0.9


def make_random_mdp(spec, rng):
    """Garnet-style MDP with sparse uniform rewards; returns (mdp, reward, pi_star)."""
    S, A = spec.n_states, spec.n_actions
    if not 0 <= spec.n_reward_states <= S:
        raise ValueError("n_reward_states must lie in [0, n_states]")
    T = rng.dirichlet(np.full(S, spec.dirichlet_concentration), size=S * A).reshape(S, A, S)
    T /= T.sum(axis=2, keepdims=True)
    mdp = Mdp(T, spec.discount)
    reward = np.zeros(S)
    rewarded = rng.choice(S, size=spec.n_reward_states, replace=False)
    reward[rewarded] = rng.uniform(0.0, 1.0, size=spec.n_reward_states)
    _, Q = value_iteration(mdp, reward)
    return mdp, reward, greedy_policy(Q)


@dataclass(frozen=True)
class ExpertSpec:
    optimal_prob: float = 0.9
    trajectory_length: int = 10
    n_trajectories: int = 10


def expert_action(policy, state, optimal_prob, n_actions, rng):
    """Optimal action w.p. ``optimal_prob``, otherwise a uniform suboptimal one."""
    best = int(policy[state])
    if n_actions == 1 or rng.random() < optimal_prob:
        return best
    other = int(rng.integers(n_actions - 1))
    return other + (other >= best)


def simulate_expert(mdp, pi_star, expert, rng, start_states=None):
    """Noisy expert trajectories as state-successor records.

    Returns ``(demos, true_actions)``; the actions are kept apart for scoring.
    """
    starts = np.arange(mdp.n_states) if start_states is None else np.asarray(start_states)
    states, succ, times, traj, acts = [], [], [], [], []
    for n in range(expert.n_trajectories):
        s = int(starts[rng.integers(starts.size)])
        for t in range(expert.trajectory_length):
            a = expert_action(pi_star, s, expert.optimal_prob, mdp.n_actions, rng)
            s_next = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
            states.append(s)
            succ.append(s_next)
            times.append(t)
            traj.append(n)
            acts.append(a)
            s = s_next
    demos = DemoSet(np.array(states), successors=np.array(succ),
                    timestamps=np.array(times, dtype=float), trajectory=np.array(traj))
    return demos, np.array(acts, dtype=int)


def value_loss(mdp, reward, pi_star, pi_hat):
    """||V* - V^pi_hat||_2 / ||V*||_2."""
    v_star = policy_evaluation(mdp, pi_star, reward)
    v_hat = policy_evaluation(mdp, pi_hat, reward)
    num = np.linalg.norm(v_star - v_hat)
    den = np.linalg.norm(v_star)
    if den == 0:
        if num == 0:
            return 0.0
        raise ValueError("optimal value is zero but the reconstruction differs")
    return float(num / den)


ACQUISITIONS = ("entropy", "confidence", "margin")


def acquisition_score(row, kind):
    """Uncertainty of one predictive row; larger means more worth querying."""
    p = np.asarray(row, dtype=float)
    if kind in ("entropy", "highest-entropy"):
        nz = p[p > 0]
        return float(-np.sum(nz * np.log(nz)))
    if kind in ("confidence", "least-confidence"):
        return float(1.0 - p.max())
    if kind in ("margin", "smallest-margin"):
        if p.size < 2:
            return -1.0
        top = np.sort(p)[::-1]
        return float(top[1] - top[0])
    raise ValueError(f"unknown acquisition kind {kind!r}")


def select_query(probs, kind, rng):
    """Next query state: acquisition argmax (lowest index on ties) or uniform."""
    if kind == "random":
        return int(rng.integers(probs.shape[0]))
    scores = np.array([acquisition_score(row, kind) for row in probs])
    return int(np.argmax(scores))


@dataclass
class ActiveConfig:
    budget: int = 30
    inference: InferenceConfig = field(default_factory=lambda: InferenceConfig(
        sweeps=500, burn_in=100, thin=5))
    beta: float = DEFAULT_BETA
    mode: str = NORMALIZED


def active_learning_run(mdp, reward, pi_star, expert, acq_kind, config, rng, cache=None):
    """Loss after each query of an uncertainty-sampling session.

    Entry q of the returned array is the value loss of the MAP policy fitted
    to the first q + 1 demonstrations.
    """
    if config.budget < 1:
        raise ValueError("budget must be at least one")
    prior = SubgoalPrior.all_states(mdp.n_states)
    if cache is None:
        cache = build_cache(mdp, prior, config.beta, config.mode)
    states = [int(rng.integers(mdp.n_states))]
    actions = [expert_action(pi_star, states[0], expert.optimal_prob, mdp.n_actions, rng)]
    losses = []
    for q in range(config.budget):
        demos = DemoSet(np.array(states), np.array(actions))
        inf = replace(config.inference, seed=int(rng.integers(2**63)))
        bundle = infer_ddbnirl_s(mdp, demos, cache, prior, inf, distances=cache.hitting_times)
        pred = predictive_distribution(bundle, cache, prior, demos, OPTIMAL)
        losses.append(value_loss(mdp, reward, pi_star, map_policy(pred)))
        if q + 1 < config.budget:
            s = select_query(pred.probs, acq_kind, rng)
            states.append(s)
            actions.append(expert_action(pi_star, s, expert.optimal_prob, mdp.n_actions, rng))
    return np.array(losses)


def segmentation_agreement(predicted, truth):
    """Fraction of agreeing labels under the best one-to-one relabeling."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError("label vectors differ in length")
    if predicted.size == 0:
        return 1.0
    p_ids, p = np.unique(predicted, return_inverse=True)
    t_ids, t = np.unique(truth, return_inverse=True)
    counts = np.zeros((p_ids.size, t_ids.size))
    np.add.at(counts, (p, t), 1)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, cols].sum() / predicted.size)


def label_switches(labels):
    """Number of changes between consecutive labels."""
    labels = np.asarray(labels)
    return int(np.sum(labels[1:] != labels[:-1]))


# -- random-MDP benchmark ---------------------------------------------------

@dataclass
class BenchConfig:
    n_reward_states: int = 10
    n_trajectories: int = 10
    expert: ExpertSpec = field(default_factory=ExpertSpec)
    inference: InferenceConfig = field(default_factory=lambda: InferenceConfig(
        sweeps=300, burn_in=100, thin=5))
    beta: float = DEFAULT_BETA
    mode: str = NORMALIZED


METHODS = ("ddbnirl-s", "bnirl-ext", "bnirl")


def method_losses(mdp, reward, pi_star, demos, config, seed, cache=None):
    """Value losses of ddBNIRL-S, BNIRL-EXT and BNIRL fitted to ``demos``."""
    prior = SubgoalPrior.all_states(mdp.n_states)
    if cache is None:
        cache = build_cache(mdp, prior, config.beta, config.mode)
    dist = cache.hitting_times
    inf = replace(config.inference, seed=seed)
    bundle_s = infer_ddbnirl_s(mdp, demos, cache, prior, inf, distances=dist)
    pred_s = predictive_distribution(bundle_s, cache, prior, demos, OPTIMAL)
    bundle_b = infer_bnirl(mdp, demos, cache, prior, inf)
    pred_b = bnirl_predictive(bundle_b, cache, prior, demos, OPTIMAL)
    ext_goals = bnirl_ext_assign(bundle_b, mdp, cache, prior, demos, distances=dist)
    pi_ext = policy_from_subgoals(mdp, cache, ext_goals)
    return {
        "ddbnirl-s": value_loss(mdp, reward, pi_star, map_policy(pred_s)),
        "bnirl-ext": value_loss(mdp, reward, pi_star, pi_ext),
        "bnirl": value_loss(mdp, reward, pi_star, map_policy(pred_b)),
    }


def random_mdp_trial(config, rng):
    """One Monte Carlo run on a fresh random MDP."""
    spec = RandomMdpSpec(n_reward_states=config.n_reward_states)
    mdp, reward, pi_star = make_random_mdp(spec, rng)
    return _trial(mdp, reward, pi_star, config, rng)


def reward_gridworld(n_reward_states, rng, success_prob=0.7, walls=None):
    """Grid world (wall bar by default) with sparse uniform rewards.

    Returns ``(mdp, reward, pi_star)`` like ``make_random_mdp``.
    """
    walls = figure_wall() if walls is None else walls
    mdp = make_gridworld(GridWorldSpec(20, 20, walls, success_prob))
    if not 0 < n_reward_states <= mdp.n_states:
        raise ValueError("n_reward_states must lie in [1, n_states]")
    reward = np.zeros(mdp.n_states)
    rewarded = rng.choice(mdp.n_states, size=n_reward_states, replace=False)
    reward[rewarded] = rng.uniform(0.0, 1.0, size=n_reward_states)
    _, Q = value_iteration(mdp, reward)
    return mdp, reward, greedy_policy(Q)


def gridworld_trial(config, rng, success_prob=0.7):
    """One Monte Carlo run on a reward grid world."""
    mdp, reward, pi_star = reward_gridworld(config.n_reward_states, rng, success_prob)
    return _trial(mdp, reward, pi_star, config, rng)


def _trial(mdp, reward, pi_star, config, rng):
    expert = replace(config.expert, n_trajectories=config.n_trajectories)
    demos, _ = simulate_expert(mdp, pi_star, expert, rng)
    seed = int(rng.integers(2**63))
    out = {"n_demos": len(demos)}
    out.update(method_losses(mdp, reward, pi_star, demos, config, seed))
    return out


def run_trials(fn, n_runs, seed, jobs=1):
    """Evaluate ``fn(run_id, rng)`` for every run with an independent stream.

    Run r always gets the r-th child of ``SeedSequence(seed)``, so results do
    not depend on ``jobs``.
    """
    children = np.random.SeedSequence(seed).spawn(n_runs)
    tasks = [(fn, r, children[r]) for r in range(n_runs)]
    if jobs <= 1:
        return [_call(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_call, tasks))


def _call(task):
    fn, run_id, seq = task
    return fn(run_id, np.random.default_rng(seq))


# -- grid-world scenarios ---------------------------------------------------

@dataclass
class Scenario:
    """Generated demonstrations with ground truth for scoring."""

    spec: GridWorldSpec
    mdp: Mdp
    demos: DemoSet
    true_actions: np.ndarray
    phases: np.ndarray
    targets: list
    successors: np.ndarray = None

    def successor_demos(self):
        """The same records with actions hidden (state-successor kind)."""
        d = self.demos
        return DemoSet(d.states, successors=self.successors, timestamps=d.timestamps,
                       trajectory=d.trajectory)


def _follow(mdp, policy, start, goal, rng, optimal_prob, max_steps):
    s, out = start, []
    for _ in range(max_steps):
        if s == goal:
            break
        a = expert_action(policy, s, optimal_prob, mdp.n_actions, rng)
        s_next = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
        out.append((s, a, s_next))
        s = s_next
    return out, s


def phased_task(spec, start, waypoints, rng, optimal_prob=1.0, discount=0.9, max_leg=60):
    """Expert visiting ``waypoints`` (cells) in order from ``start``.

    Each leg follows the optimal policy for its waypoint until it is reached;
    the leg index is the ground-truth phase label of every record.
    """
    mdp = make_gridworld(spec, discount)
    index = spec.index()
    goals = [index[w] for w in waypoints]
    policies = greedy_policy(subgoal_q_all(mdp, goals))
    s = index[start]
    records, phases = [], []
    for k, g in enumerate(goals):
        leg, s = _follow(mdp, policies[k], s, g, rng, optimal_prob, max_leg)
        records.extend(leg)
        phases.extend([k] * len(leg))
    states, actions, succ = (np.array(v, dtype=int) for v in zip(*records))
    demos = DemoSet(states, actions, timestamps=np.arange(len(states), dtype=float))
    return Scenario(spec, mdp, demos, actions, np.array(phases), goals, succ)


def three_leg_task(rng, success_prob=0.7, optimal_prob=1.0):
    """Three legs around the central wall bar of a 20x20 grid."""
    spec = GridWorldSpec(20, 20, figure_wall(), success_prob)
    return phased_task(spec, (17, 3), [(13, 16), (4, 16), (3, 4)], rng, optimal_prob)


def three_phase_task(rng, success_prob=0.8, optimal_prob=0.9):
    """Open 20x20 grid, three straight phases meeting at right angles."""
    spec = GridWorldSpec(20, 20, frozenset(), success_prob)
    return phased_task(spec, (16, 3), [(3, 3), (3, 16), (16, 16)], rng, optimal_prob)


def straight_up_demos(spec, column=None, start_row=None, length=10):
    """State-action pairs of a straight upward run along one column."""
    column = spec.width // 2 if column is None else column
    start_row = spec.height // 2 + length // 2 if start_row is None else start_row
    index = spec.index()
    states = [index[(start_row - k, column)] for k in range(length)]
    return DemoSet(np.array(states), np.zeros(length, dtype=int))


def summarize(values):
    """Mean, standard deviation and standard error of a sample."""
    v = np.asarray(values, dtype=float)
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(v.mean()), "std": sd, "stderr": sd / math.sqrt(v.size)}
