import math

import numpy as np
import pytest

from ddbnirl.bench import (DIRECTION_NAMES, ActiveConfig, ExpertSpec, GridWorldSpec,
                           RandomMdpSpec, acquisition_score, active_learning_run, expert_action,
                           figure_wall, label_switches, make_gridworld, make_random_mdp,
                           phased_task, run_trials, segmentation_agreement, select_query,
                           simulate_expert, straight_up_demos, summarize, value_loss)
from ddbnirl.mdp import Mdp, greedy_policy, subgoal_q_all
from ddbnirl.samplers import InferenceConfig
from oracles import dirichlet_max_mc, linear_policy_value


# -- grid world ------------------------------------------------------------------

def test_deterministic_move():
    spec = GridWorldSpec(5, 5, success_prob=1.0)
    mdp = make_gridworld(spec)
    s = spec.state_of(2, 2)
    assert DIRECTION_NAMES[0] == "N"
    assert mdp.transition[s, 0, spec.state_of(1, 2)] == 1.0
    assert mdp.transition[s, 3, spec.state_of(3, 3)] == 1.0


def test_slip_goes_to_adjacent_directions():
    spec = GridWorldSpec(5, 5, success_prob=0.7)
    mdp = make_gridworld(spec)
    s = spec.state_of(2, 2)
    row = mdp.transition[s, 2]   # east
    assert row[spec.state_of(2, 3)] == pytest.approx(0.7)
    assert row[spec.state_of(1, 3)] == pytest.approx(0.15)
    assert row[spec.state_of(3, 3)] == pytest.approx(0.15)


def test_corner_blocked_moves_stay():
    spec = GridWorldSpec(4, 4, success_prob=0.7)
    mdp = make_gridworld(spec)
    corner = spec.state_of(0, 0)
    stay = mdp.transition[corner, :, corner]
    # N, NW and W push into the boundary together with both of their slips
    for a in (0, 6, 7):
        assert stay[a] == pytest.approx(1.0)
    # east only loses its north-east slip; south-east leaves the corner
    assert stay[2] == pytest.approx(0.15)
    assert stay[3] == 0.0
    assert np.all(stay[[0, 6, 7]] >= spec.success_prob)


def test_walls_are_not_states_and_rows_sum():
    spec = GridWorldSpec(20, 20, figure_wall(), 0.7)
    mdp = make_gridworld(spec)
    assert mdp.n_states == 400 - 9
    assert np.allclose(mdp.transition.sum(axis=2), 1.0, atol=1e-12)
    with pytest.raises(KeyError):
        spec.state_of(10, 7)
    above, below = spec.state_of(9, 8), spec.state_of(11, 8)
    assert mdp.transition[above, 4, above] == pytest.approx(1.0)   # south into the bar
    assert mdp.transition[above, :, below].max() == 0.0


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridWorldSpec(0, 3)
    with pytest.raises(ValueError):
        GridWorldSpec(3, 3, success_prob=0.0)


def test_straight_up_demos_default():
    spec = GridWorldSpec()
    demos = straight_up_demos(spec)
    assert len(demos) == 10 and set(demos.actions.tolist()) == {0}
    rows = [divmod(int(s), 20) for s in demos.states]
    assert rows[0] == (15, 10) and rows[-1] == (6, 10)


# -- random MDPs and experts -------------------------------------------------------

def test_random_mdp_rows_and_rewards():
    mdp, reward, pi_star = make_random_mdp(RandomMdpSpec(), np.random.default_rng(0))
    assert mdp.transition.shape == (100, 10, 100)
    assert np.max(np.abs(mdp.transition.sum(axis=2) - 1)) <= 1e-9
    assert np.count_nonzero(reward) == 10 and reward.min() >= 0 and reward.max() <= 1
    V = linear_policy_value(mdp.transition, pi_star, reward, 0.9)
    Q = reward[:, None] + 0.9 * mdp.transition @ V
    assert np.all(Q.max(axis=1) <= V + 1e-8)   # pi_star is greedy in its own value


def test_every_state_rewarded_when_asked():
    _, reward, _ = make_random_mdp(RandomMdpSpec(n_reward_states=100), np.random.default_rng(1))
    assert np.all(reward > 0)
    with pytest.raises(ValueError):
        make_random_mdp(RandomMdpSpec(n_reward_states=101), np.random.default_rng(1))


def test_dirichlet_rows_match_gamma_oracle():
    mdp, _, _ = make_random_mdp(RandomMdpSpec(), np.random.default_rng(2))
    rows = mdp.transition.reshape(-1, 100)
    got = rows.max(axis=1)
    expected = dirichlet_max_mc(0.01, 100, 200_000, np.random.default_rng(3))
    assert abs(got.mean() - expected) <= 4 * got.std(ddof=1) / math.sqrt(got.size)
    # a total concentration of one puts most of each row on a handful of entries
    assert np.mean(np.sort(rows, axis=1)[:, -5:].sum(axis=1)) > 0.9


def test_expert_optimal_frequency():
    rng = np.random.default_rng(4)
    policy = rng.integers(10, size=100)
    hits = sum(expert_action(policy, s, 0.9, 10, rng) == policy[s]
               for s in rng.integers(100, size=10_000))
    assert hits / 10_000 == pytest.approx(0.9, abs=0.01)
    assert all(expert_action(policy, s, 1.0, 10, rng) == policy[s] for s in range(100))
    assert all(expert_action(policy, s, 0.0, 10, rng) != policy[s] for s in range(100))


def test_simulated_trajectories():
    mdp, _, pi_star = make_random_mdp(RandomMdpSpec(), np.random.default_rng(5))
    demos, acts = simulate_expert(mdp, pi_star, ExpertSpec(1.0, 10, 3), np.random.default_rng(6))
    assert len(demos) == 30 and demos.kind == "state-successor"
    assert np.array_equal(acts, pi_star[demos.states])
    for n in range(3):
        idx = np.flatnonzero(demos.trajectory == n)
        assert idx.size == 10
        assert np.array_equal(demos.states[idx[1:]], demos.successors[idx[:-1]])


# -- value loss and acquisition ---------------------------------------------------

def test_value_loss_zero_value_system():
    T = np.zeros((2, 2, 2))
    T[:, :, 0] = 1
    mdp = Mdp(T, 0.5)
    assert value_loss(mdp, np.zeros(2), [0, 0], [1, 1]) == 0.0


def test_value_loss_matches_linear_solve():
    rng = np.random.default_rng(7)
    mdp, reward, pi_star = make_random_mdp(RandomMdpSpec(), rng)
    pi_rand = rng.integers(10, size=100)
    V_star = linear_policy_value(mdp.transition, pi_star, reward, 0.9)
    V_rand = linear_policy_value(mdp.transition, pi_rand, reward, 0.9)
    expected = np.linalg.norm(V_star - V_rand) / np.linalg.norm(V_star)
    assert value_loss(mdp, reward, pi_star, pi_rand) == pytest.approx(expected, rel=1e-9)
    assert value_loss(mdp, reward, pi_star, pi_star) == 0.0


def test_value_loss_closed_form_ratio():
    # state 0 absorbs with reward 1.5 and state 1 can loop on reward 2 (gamma = 1/2),
    # so V* = (3, 4); leaving state 1 instead gives 2 + 3 / 2, hence V_hat = (3, 3.5)
    T = np.zeros((2, 2, 2))
    T[0, :, 0] = 1
    T[1, 0, 1] = 1
    T[1, 1, 0] = 1
    mdp = Mdp(T, 0.5)
    R = np.array([1.5, 2.0])
    assert value_loss(mdp, R, [0, 0], [0, 1]) == pytest.approx(0.5 / 5.0)


@pytest.mark.parametrize("kind,expected", [("entropy", math.log(8)), ("confidence", 0.875),
                                           ("margin", 0.0)])
def test_acquisition_uniform_row(kind, expected):
    assert acquisition_score(np.full(8, 1 / 8), kind) == pytest.approx(expected)


@pytest.mark.parametrize("kind,expected", [("entropy", 0.0), ("confidence", 0.0),
                                           ("margin", -1.0)])
def test_acquisition_point_mass(kind, expected):
    assert acquisition_score(np.eye(8)[3], kind) == pytest.approx(expected)


def test_acquisition_margin_and_errors():
    assert acquisition_score([0.6, 0.4], "margin") == pytest.approx(-0.2)
    assert acquisition_score([0.6, 0.4], "smallest-margin") == pytest.approx(-0.2)
    with pytest.raises(ValueError):
        acquisition_score([1.0], "variance")


def test_select_query_ties_and_random():
    probs = np.array([[1.0, 0.0], [0.5, 0.5], [0.5, 0.5]])
    assert select_query(probs, "entropy", None) == 1
    picks = {select_query(probs, "random", np.random.default_rng(s)) for s in range(40)}
    assert picks == {0, 1, 2}


def test_active_learning_budget_one():
    mdp, reward, pi_star = make_random_mdp(RandomMdpSpec(n_states=12, n_actions=3),
                                           np.random.default_rng(8))
    cfg = ActiveConfig(budget=1, inference=InferenceConfig(sweeps=20, burn_in=5))
    losses = active_learning_run(mdp, reward, pi_star, ExpertSpec(), "entropy", cfg,
                                 np.random.default_rng(9))
    assert losses.shape == (1,) and 0 <= losses[0]
    with pytest.raises(ValueError):
        active_learning_run(mdp, reward, pi_star, ExpertSpec(), "entropy",
                            ActiveConfig(budget=0), np.random.default_rng(9))


def test_active_learning_run_is_reproducible():
    mdp, reward, pi_star = make_random_mdp(RandomMdpSpec(n_states=12, n_actions=3),
                                           np.random.default_rng(10))
    cfg = ActiveConfig(budget=4, inference=InferenceConfig(sweeps=20, burn_in=5))
    run = lambda: active_learning_run(mdp, reward, pi_star, ExpertSpec(), "margin", cfg,
                                      np.random.default_rng(11))
    assert np.array_equal(run(), run())


# -- segmentation metrics and trial plumbing ---------------------------------------

def test_segmentation_agreement_examples():
    assert segmentation_agreement([1, 1, 2, 2], [1, 1, 1, 2]) == 0.75
    assert segmentation_agreement([5, 5, 7, 7], [0, 0, 1, 1]) == 1.0
    assert segmentation_agreement([0, 0, 0], [0, 1, 2]) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        segmentation_agreement([0], [0, 1])


def test_label_switches():
    assert label_switches([0, 0, 1, 1, 0]) == 2
    assert label_switches([3]) == 0


def test_phased_task_labels_and_timestamps():
    spec = GridWorldSpec(8, 8, success_prob=1.0)
    sc = phased_task(spec, (7, 0), [(0, 0), (0, 7)], np.random.default_rng(12))
    assert sc.phases.tolist() == [0] * 7 + [1] * 7
    assert np.array_equal(sc.demos.timestamps, np.arange(14.0))
    pol = greedy_policy(subgoal_q_all(sc.mdp, sc.targets))
    assert all(pol[p][s] == a for s, a, p in zip(sc.demos.states, sc.demos.actions, sc.phases))
    assert np.array_equal(sc.successor_demos().successors, sc.successors)


def _draw(run_id, rng):
    return (run_id, float(rng.random()))


def test_run_trials_independent_of_jobs():
    serial = run_trials(_draw, 6, seed=13, jobs=1)
    parallel = run_trials(_draw, 6, seed=13, jobs=2)
    assert serial == parallel
    assert [r for r, _ in serial] == list(range(6))
    assert len({x for _, x in serial}) == 6


def test_summarize():
    out = summarize([1.0, 2.0, 3.0])
    assert out["mean"] == 2.0 and out["std"] == 1.0
    assert out["stderr"] == pytest.approx(1 / math.sqrt(3))
