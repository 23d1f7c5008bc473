import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctds.envs import (
    DOWN,
    LEFT,
    N_MOVES,
    NOOP,
    RIGHT,
    UP,
    WIN_BONUS,
    Combat,
    EnvConfig,
    EnvState,
    MatrixGameConfig,
    make_env,
    matrix_game,
)
from ctds.errors import ConfigurationError, ContractViolation
from ctds.learner import replay_episode


def place(env: Combat, positions, hit_points=None) -> EnvState:
    """Overwrite the layout of a reset environment with explicit unit positions."""
    st_ = env.state
    st_.positions = np.array(positions, dtype=np.int64)
    if hit_points is not None:
        st_.hit_points = np.array(hit_points, dtype=np.int64)
    return st_


def random_rollout(env, seed: int, rng: np.random.Generator):
    env.reset(seed)
    actions, outcomes = [], []
    while True:
        avail = env.available_actions_all()
        act = np.array([rng.choice(np.flatnonzero(m)) for m in avail])
        out = env.step(act)
        actions.append(act)
        outcomes.append(out)
        if out.terminated:
            return np.array(actions), outcomes


# ---------------------------------------------------------------------------
# configuration


def test_default_config_matches_desk_rules():
    c = EnvConfig()
    assert (c.grid_size, c.n_agents, c.hit_points, c.attack_range, c.max_steps) == (15, 5, 3, 1, 40)
    assert (c.sight_range, c.perfect_sight_range) == (2, 4)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"grid_size": 1},
        {"n_agents": 0},
        {"hit_points": 0},
        {"max_steps": 0},
        {"sight_range": 5, "perfect_sight_range": 4},
    ],
)
def test_invalid_config_rejected(kwargs):
    with pytest.raises(ConfigurationError):
        EnvConfig(**kwargs)


def test_team_that_does_not_fit_rejected():
    with pytest.raises(ConfigurationError):
        Combat(EnvConfig(grid_size=3, n_agents=4, sight_range=1, perfect_sight_range=2))


# ---------------------------------------------------------------------------
# reset


def test_reset_is_deterministic():
    env = Combat(EnvConfig())
    a = env.reset(7)
    snapshot = EnvState(a.positions.copy(), a.hit_points.copy(), a.last_actions.copy(), a.t, a.rng)
    b = Combat(EnvConfig()).reset(7)
    assert snapshot.same_as(b)


def test_reset_5v5_full_health():
    env = Combat(EnvConfig())
    st_ = env.reset(3)
    assert st_.alive.sum() == 10
    assert np.all(st_.hit_points == 3)
    assert st_.t == 0


def test_reset_mirrors_teams():
    env = Combat(EnvConfig())
    st_ = env.reset(11)
    n, side = env.n_agents, env.config.grid_size
    np.testing.assert_array_equal(st_.positions[:n, 0], st_.positions[n:, 0])
    np.testing.assert_array_equal(st_.positions[:n, 1], side - 1 - st_.positions[n:, 1])


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_observation_length(n):
    env = Combat(EnvConfig(n_agents=n))
    n_actions = N_MOVES + n
    assert env.obs_dim == 3 + 4 * (2 * n - 1) + n_actions + n
    assert env.observations("partial").shape == (n, env.obs_dim)
    assert env.observations("perfect").shape == (n, env.obs_dim)


# ---------------------------------------------------------------------------
# availability


def test_no_enemy_in_range_masks_attacks():
    env = Combat(EnvConfig(n_agents=2))
    place(env, [[0, 0], [1, 0], [10, 10], [12, 12]])
    assert not env.available_actions_all()[:, N_MOVES:].any()


def test_adjacent_enemy_attackable():
    env = Combat(EnvConfig(n_agents=2))
    place(env, [[5, 5], [0, 0], [6, 6], [12, 12]])
    mask = env.available_actions(0)
    assert mask[N_MOVES + 0] and not mask[N_MOVES + 1]


def test_dead_agent_only_noop():
    env = Combat(EnvConfig(n_agents=2))
    place(env, [[5, 5], [0, 0], [10, 10], [12, 12]], hit_points=[0, 3, 3, 3])
    mask = env.available_actions(0)
    assert mask[NOOP] and mask.sum() == 1


def test_border_moves_masked():
    env = Combat(EnvConfig(n_agents=1))
    place(env, [[0, 0], [10, 10]])
    mask = env.available_actions(0)
    assert not mask[UP] and not mask[LEFT] and mask[DOWN] and mask[RIGHT]


# ---------------------------------------------------------------------------
# step


def test_move_right_into_free_cell():
    env = Combat(EnvConfig(n_agents=1))
    place(env, [[3, 3], [14, 14]])
    env.step([RIGHT])
    np.testing.assert_array_equal(env.state.positions[0], [3, 4])


def test_move_into_occupied_cell_is_noop():
    env = Combat(EnvConfig(n_agents=2))
    place(env, [[3, 3], [3, 4], [14, 14], [14, 0]])
    env.step([RIGHT, NOOP])
    np.testing.assert_array_equal(env.state.positions[0], [3, 3])


def test_contested_cell_goes_to_first_unit():
    env = Combat(EnvConfig(n_agents=2))
    place(env, [[3, 3], [3, 5], [14, 14], [14, 0]])
    env.step([RIGHT, LEFT])
    np.testing.assert_array_equal(env.state.positions[0], [3, 4])
    np.testing.assert_array_equal(env.state.positions[1], [3, 5])


def test_unavailable_action_rejected():
    env = Combat(EnvConfig(n_agents=1))
    place(env, [[0, 0], [10, 10]])
    with pytest.raises(ContractViolation):
        env.step([UP])
    with pytest.raises(ContractViolation):
        env.step([N_MOVES])


def test_killing_last_opponents_wins():
    env = Combat(EnvConfig(n_agents=2))
    place(env, [[5, 5], [8, 8], [5, 6], [8, 9]], hit_points=[3, 3, 1, 1])
    out = env.step([N_MOVES + 0, N_MOVES + 1])
    assert out.terminated and out.win
    # both opponents also strike back simultaneously before dying
    assert out.reward == pytest.approx(WIN_BONUS + 0.1 * (2 - out.damage_received))


def test_time_limit_is_a_draw():
    env = Combat(EnvConfig(n_agents=1, max_steps=1))
    place(env, [[0, 0], [14, 14]])
    out = env.step([NOOP])
    assert out.terminated and not out.win
    assert out.reward == 0.0


def test_losing_gives_negative_bonus():
    env = Combat(EnvConfig(n_agents=1))
    place(env, [[5, 5], [5, 6]], hit_points=[1, 3])
    out = env.step([NOOP])
    assert out.terminated and not out.win
    assert out.reward == pytest.approx(-WIN_BONUS - 0.1)


# ---------------------------------------------------------------------------
# observation masking


def test_infinite_sight_sees_all_living_units():
    env = Combat(EnvConfig(sight_range=math.inf, perfect_sight_range=math.inf))
    obs = env.observations("partial")
    flags = obs[:, 3 : 3 + 4 * 9 : 4]
    assert np.all(flags == 1.0)


def test_unit_beyond_sight_is_all_zero():
    env = Combat(EnvConfig(n_agents=1))
    place(env, [[5, 5], [5, 8]])
    obs = env.build_observation(0, 2)
    np.testing.assert_array_equal(obs[3:7], np.zeros(4))
    assert env.build_observation(0, 3)[3] == 1.0


def test_sight_masks_nest():
    env = Combat(EnvConfig())
    rng = np.random.default_rng(0)
    env.reset(5)
    for _ in range(6):
        small, large = env.observe(2), env.observe(4)
        keep = small != 0
        np.testing.assert_array_equal(small[keep], large[keep])
        act = [rng.choice(np.flatnonzero(m)) for m in env.available_actions_all()]
        if env.step(act).terminated:
            break


def test_dead_agent_observes_only_identity():
    env = Combat(EnvConfig(n_agents=2))
    place(env, [[5, 5], [5, 6], [5, 7], [0, 14]], hit_points=[0, 3, 3, 3])
    obs = env.build_observation(0, math.inf)
    ident = np.zeros(env.obs_dim)
    ident[env.obs_dim - 2] = 1.0
    np.testing.assert_array_equal(obs, ident)


def test_perfect_reads_are_counted():
    env = Combat(EnvConfig())
    before = env.central_reads
    env.observations("partial")
    assert env.central_reads == before
    env.observations("perfect")
    assert env.central_reads == before + 1


# ---------------------------------------------------------------------------
# scripted opponent


def test_opponent_attacks_sole_adjacent_learner():
    env = Combat(EnvConfig(n_agents=1))
    place(env, [[5, 5], [5, 6]])
    assert env.opponent_policy()[0] == N_MOVES + 0


def test_opponent_chases_to_the_left():
    # learner three cells to the opponent's left: moving left is the only improving move
    env = Combat(EnvConfig(n_agents=1))
    place(env, [[5, 2], [5, 5]])
    assert env.opponent_policy()[0] == LEFT


def test_opponent_chases_to_the_right():
    env = Combat(EnvConfig(n_agents=1))
    place(env, [[5, 8], [5, 5]])
    assert env.opponent_policy()[0] == RIGHT


def test_opponent_prefers_up_on_ties():
    env = Combat(EnvConfig(n_agents=1))
    place(env, [[2, 2], [5, 5]])
    assert env.opponent_policy()[0] == UP


def test_opponent_idles_without_learners():
    env = Combat(EnvConfig(n_agents=1))
    place(env, [[2, 2], [5, 5]], hit_points=[0, 3])
    assert env.opponent_policy()[0] == NOOP


# ---------------------------------------------------------------------------
# trajectory properties


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2**31))
def test_trajectory_is_deterministic(seed, action_seed):
    env = Combat(EnvConfig(n_agents=3, max_steps=15))
    actions, first = random_rollout(env, seed, np.random.default_rng(action_seed))
    replay = make_env(EnvConfig(n_agents=3, max_steps=15))
    replay.reset(seed)
    for act, out in zip(actions, first):
        again = replay.step(act)
        assert again.reward == out.reward and again.terminated == out.terminated
        np.testing.assert_array_equal(again.avail, out.avail)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_hit_points_never_increase_and_reward_decomposes(seed):
    env = Combat(EnvConfig(n_agents=3, max_steps=25, grid_size=6, sight_range=1, perfect_sight_range=2))
    rng = np.random.default_rng(seed)
    env.reset(seed)
    total_hp = env.total_hit_points()
    dealt = received = 0
    ret = 0.0
    while True:
        act = [rng.choice(np.flatnonzero(m)) for m in env.available_actions_all()]
        out = env.step(act)
        assert env.total_hit_points() <= total_hp
        total_hp = env.total_hit_points()
        dealt += out.damage_dealt
        received += out.damage_received
        ret += out.reward
        assert math.isfinite(out.reward)
        assert not out.win or out.terminated
        if out.terminated:
            bonus = WIN_BONUS if out.win else (-WIN_BONUS if not env.state.alive[:3].any() and env.state.alive[3:].any() else 0.0)
            assert ret == pytest.approx(0.1 * (dealt - received) + bonus, abs=1e-9)
            break


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_mask_soundness(seed):
    env = Combat(EnvConfig(n_agents=2, grid_size=5, sight_range=1, perfect_sight_range=2, max_steps=10))
    rng = np.random.default_rng(seed)
    env.reset(seed)
    for _ in range(5):
        mask = env.available_actions_all()
        st0 = env.state
        saved = (st0.positions.copy(), st0.hit_points.copy(), st0.last_actions.copy(), st0.t,
                 st0.rng.bit_generator.state)
        for agent in range(2):
            for a in range(env.n_actions):
                act = np.zeros(2, dtype=np.int64)
                act[agent] = a
                if mask[agent, a]:
                    env.step(act)
                else:
                    with pytest.raises(ContractViolation):
                        env.step(act)
                st0.positions, st0.hit_points, st0.last_actions = (x.copy() for x in saved[:3])
                st0.t = saved[3]
                st0.rng.bit_generator.state = saved[4]
        act = [rng.choice(np.flatnonzero(m)) for m in mask]
        if env.step(act).terminated:
            break


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_replay_rebuilds_episode(seed):
    env = Combat(EnvConfig(n_agents=2, max_steps=12))
    actions, outcomes = random_rollout(env, seed, np.random.default_rng(seed + 1))
    ep = replay_episode(Combat(EnvConfig(n_agents=2, max_steps=12)), seed, actions)
    np.testing.assert_array_equal(ep.rewards, [o.reward for o in outcomes])
    assert ep.terminated[-1] and ep.filled == len(actions)


# ---------------------------------------------------------------------------
# matrix game


def test_matrix_table_lookup():
    env = matrix_game(MatrixGameConfig(payoff=tuple(tuple(float(i + j) for j in range(3)) for i in range(3))))
    env.reset(0)
    out = env.step([2, 1])
    assert out.reward == 3.0 and out.terminated


def test_matrix_zero_table():
    env = matrix_game(MatrixGameConfig(payoff=((0.0, 0.0), (0.0, 0.0))))
    for a in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        env.reset(0)
        assert env.step(a).reward == 0.0


def test_matrix_terminates_after_one_step():
    env = matrix_game(MatrixGameConfig())
    env.reset(0)
    assert env.step([0, 0]).terminated
    with pytest.raises(ContractViolation):
        env.step([0, 0])


def test_matrix_views_identical():
    env = matrix_game(MatrixGameConfig())
    np.testing.assert_array_equal(env.observations("partial"), env.observations("perfect"))


def test_matrix_default_optimum_is_unique_eight():
    table = MatrixGameConfig().table
    assert table.max() == 8.0 and (table == 8.0).sum() == 1


@pytest.mark.parametrize("payoff", [((1.0, 2.0), (3.0,)), ((float("nan"),),), ()])
def test_matrix_invalid_table_rejected(payoff):
    with pytest.raises(ConfigurationError):
        MatrixGameConfig(payoff=payoff)
