"""Finite MDPs, exact planning and the hitting-time quasi-metric."""

import json
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import sparse

DEFAULT_TOL = 1e-8
MAX_ITER = 10_000


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with dense transition tensor ``transition[s, a, s']``."""

    transition: np.ndarray
    discount: float

    def __post_init__(self):
        T = np.array(self.transition, dtype=float)
        if T.ndim != 3 or T.shape[0] != T.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {T.shape}")
        if T.shape[0] == 0 or T.shape[1] == 0:
            raise ValueError("MDP needs at least one state and one action")
        if not np.all(np.isfinite(T)) or np.any(T < 0):
            raise ValueError("transition probabilities must be finite and nonnegative")
        sums = T.sum(axis=2)
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            s, a = np.unravel_index(np.argmax(np.abs(sums - 1.0)), sums.shape)
            raise ValueError(f"T(.|s={s}, a={a}) sums to {sums[s, a]!r}, not 1")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        T.setflags(write=False)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    def flat_transition(self):
        """(S*A, S) matrix, sparse when most entries are zero."""
        cached = self.__dict__.get("_flat")
        if cached is None:
            flat = self.transition.reshape(-1, self.n_states)
            if np.count_nonzero(flat) < 0.1 * flat.size:
                flat = sparse.csr_matrix(flat)
            object.__setattr__(self, "_flat", flat)
            cached = flat
        return cached

    def policy_matrix(self, policy):
        """State-to-state transition matrix of a deterministic policy."""
        policy = np.asarray(policy)
        return self.transition[np.arange(self.n_states), policy, :]

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "transition": self.transition.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        T = np.asarray(data["transition"], dtype=float)
        expected = (int(data["n_states"]), int(data["n_actions"]), int(data["n_states"]))
        if T.shape != expected:
            raise ValueError(f"transition has shape {T.shape}, header says {expected}")
        return cls(T, float(data["discount"]))


def load_mdp(path):
    with open(path) as fh:
        return Mdp.from_dict(json.load(fh))


def save_mdp(mdp, path):
    with open(path, "w") as fh:
        json.dump(mdp.to_dict(), fh)


def _backup(mdp, rewards, V):
    # rewards, V: (S, G) -> Q: (S, A, G)
    S, A = mdp.n_states, mdp.n_actions
    EV = mdp.flat_transition() @ V
    return rewards[:, None, :] + mdp.discount * np.asarray(EV).reshape(S, A, -1)


def _evaluate_policies(mdp, rewards, policies):
    """Exact discounted values of one deterministic policy per reward column."""
    S = mdp.n_states
    V = np.empty_like(rewards)
    eye = np.eye(S)
    for g in range(rewards.shape[1]):
        P = mdp.policy_matrix(policies[:, g])
        V[:, g] = np.linalg.solve(eye - mdp.discount * P, rewards[:, g])
    return V


def solve_q(mdp, rewards, tol=DEFAULT_TOL, max_iter=MAX_ITER):
    """Optimal Q-tables for several reward vectors at once.

    ``rewards`` has shape (S, G); the result has shape (G, S, A). Value
    iteration runs until successive iterates differ by at most ``tol``, then
    the greedy policies are polished by exact policy evaluation so that the
    returned tables sit at the Bellman fixed point up to round-off.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim == 1:
        rewards = rewards[:, None]
    if rewards.shape[0] != mdp.n_states:
        raise ValueError(f"reward has {rewards.shape[0]} entries, MDP has {mdp.n_states} states")
    if not np.all(np.isfinite(rewards)):
        raise ValueError("reward entries must be finite")
    if tol <= 0:
        raise ValueError("tol must be positive")

    V = np.zeros_like(rewards)
    for _ in range(max_iter):
        Q = _backup(mdp, rewards, V)
        V_new = Q.max(axis=1)
        delta = np.max(np.abs(V_new - V)) if V.size else 0.0
        V = V_new
        if delta <= tol:
            break
    else:
        raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")

    if mdp.discount > 0:
        policies = np.argmax(Q, axis=1)
        for _ in range(100):
            V = _evaluate_policies(mdp, rewards, policies)
            Q = _backup(mdp, rewards, V)
            improved = np.argmax(Q, axis=1)
            # only switch where the gain is real, otherwise round-off can cycle
            rows = np.arange(mdp.n_states)[:, None]
            cols = np.arange(rewards.shape[1])[None, :]
            gain = Q[rows, improved, cols] - Q[rows, policies, cols]
            scale = 1e-12 * max(1.0, np.max(np.abs(Q)))
            switch = gain > scale
            if not switch.any():
                break
            policies = np.where(switch, improved, policies)
    return np.moveaxis(Q, 2, 0)


def value_iteration(mdp, reward, tol=DEFAULT_TOL):
    """Return ``(V, Q)`` for a single state reward vector."""
    reward = np.asarray(reward, dtype=float)
    if reward.shape != (mdp.n_states,):
        raise ValueError(f"reward must have shape ({mdp.n_states},), got {reward.shape}")
    Q = solve_q(mdp, reward[:, None], tol)[0]
    return Q.max(axis=1), Q


def subgoal_rewards(mdp, goals, reward_mass=1.0):
    goals = np.asarray(goals, dtype=int)
    if goals.size and (goals.min() < 0 or goals.max() >= mdp.n_states):
        raise ValueError(f"goal index out of range [0, {mdp.n_states})")
    R = np.zeros((mdp.n_states, goals.size))
    R[goals, np.arange(goals.size)] = reward_mass
    return R


def subgoal_q(mdp, goal, reward_mass=1.0, tol=DEFAULT_TOL):
    """Optimal Q-table for a point-mass reward ``reward_mass`` at ``goal``."""
    if not 0 <= goal < mdp.n_states:
        raise ValueError(f"goal {goal} out of range [0, {mdp.n_states})")
    return solve_q(mdp, subgoal_rewards(mdp, [goal], reward_mass), tol)[0]


def subgoal_q_all(mdp, goals, reward_mass=1.0, tol=DEFAULT_TOL):
    """Q-tables for many point-mass goals, shape (G, S, A)."""
    return solve_q(mdp, subgoal_rewards(mdp, goals, reward_mass), tol)


def greedy_policy(Q):
    """Row-wise argmax; ``np.argmax`` already returns the lowest index on ties."""
    return np.argmax(np.asarray(Q), axis=-1)


def _reaches_with_certainty(P, target):
    """Boolean mask of states that hit ``target`` with probability one under P."""
    n = P.shape[0]
    succ = [np.flatnonzero(P[i] > 0) for i in range(n)]
    pred = [[] for _ in range(n)]
    for i in range(n):
        if i == target:
            continue
        for j in succ[i]:
            pred[j].append(i)

    can_reach = np.zeros(n, dtype=bool)
    can_reach[target] = True
    queue = deque([target])
    while queue:
        j = queue.popleft()
        for i in pred[j]:
            if not can_reach[i]:
                can_reach[i] = True
                queue.append(i)

    # a state that can wander into a dead region misses the target with positive probability
    doomed = ~can_reach
    queue = deque(np.flatnonzero(doomed))
    while queue:
        j = queue.popleft()
        for i in pred[j]:
            if not doomed[i]:
                doomed[i] = True
                queue.append(i)
    return ~doomed


def policy_evaluation(mdp, policy, reward, tol=DEFAULT_TOL, undiscounted_absorbing=None):
    """Value of a deterministic policy.

    With ``undiscounted_absorbing=j`` the target ``j`` is made absorbing and
    the recursion runs with discount one; states that reach ``j`` with
    probability below one get ``-inf`` (for a reward of -1 per step) since
    their undiscounted return diverges.
    """
    policy = np.asarray(policy, dtype=int)
    reward = np.asarray(reward, dtype=float)
    if policy.shape != (mdp.n_states,) or policy.min() < 0 or policy.max() >= mdp.n_actions:
        raise ValueError("policy must hold one valid action per state")
    if reward.shape != (mdp.n_states,) or not np.all(np.isfinite(reward)):
        raise ValueError("reward must be a finite vector over states")
    if tol <= 0:
        raise ValueError("tol must be positive")
    P = mdp.policy_matrix(policy)
    n = mdp.n_states
    if undiscounted_absorbing is None:
        return np.linalg.solve(np.eye(n) - mdp.discount * P, reward)

    target = int(undiscounted_absorbing)
    P = P.copy()
    P[target] = 0.0
    P[target, target] = 1.0
    finite = _reaches_with_certainty(P, target)
    V = np.full(n, np.nan)
    V[target] = reward[target]
    free = np.flatnonzero(finite & (np.arange(n) != target))
    if free.size:
        A = np.eye(free.size) - P[np.ix_(free, free)]
        b = reward[free] + P[free, target] * reward[target]
        V[free] = np.linalg.solve(A, b)
    bad = ~finite
    if np.any(reward[bad] > 0):
        raise ValueError("undiscounted evaluation diverges with positive rewards off the target")
    V[bad] = np.where(reward[bad] < 0, -np.inf, np.nan)
    if np.any(np.isnan(V)):
        raise RuntimeError("undiscounted evaluation has no finite value for some states")
    return V


def hitting_times(mdp, policy, target):
    """Expected first-passage times to ``target`` under ``policy`` (+inf if not certain)."""
    reward = -np.ones(mdp.n_states)
    reward[target] = 0.0
    return -policy_evaluation(mdp, policy, reward, undiscounted_absorbing=target)


def hitting_time_matrix(mdp, subgoal_policies, targets=None):
    """Matrix ``delta[i, k]`` of expected steps from state i to ``targets[k]``.

    ``subgoal_policies[k]`` is the optimal policy for ``targets[k]``; targets
    default to all states in order.
    """
    subgoal_policies = np.asarray(subgoal_policies, dtype=int)
    if targets is None:
        targets = np.arange(mdp.n_states)
    targets = np.asarray(targets, dtype=int)
    if subgoal_policies.shape != (targets.size, mdp.n_states):
        raise ValueError("need one policy per target")
    delta = np.empty((mdp.n_states, targets.size))
    for k, j in enumerate(targets):
        delta[:, k] = hitting_times(mdp, subgoal_policies[k], j)
        delta[j, k] = 0.0
    return delta


def state_distances(mdp, reward_mass=1.0, tol=DEFAULT_TOL):
    """Full |S| x |S| hitting-time quasi-metric under the optimal subgoal policies."""
    targets = np.arange(mdp.n_states)
    policies = greedy_policy(subgoal_q_all(mdp, targets, reward_mass, tol))
    return hitting_time_matrix(mdp, policies, targets)
