"""Seeded cooperative environments.

``Combat`` is a two-team grid battle between the learners and a scripted
opponent team. ``MatrixGame`` is a one-shot two-agent cooperative game whose
payoff table makes the optimal joint action known in advance.

Both expose the same surface used by the learner:

* ``reset(seed)`` and ``step(actions) -> StepOutcome``
* ``observations(view)`` with ``view`` in ``{"partial", "perfect"}``
* ``available_actions_all()``, ``state_vector()``
* sizes ``n_agents``, ``n_actions``, ``obs_dim``, ``state_dim``, ``episode_limit``

Every request for the perfect view bumps ``central_reads``; execution-time
code checks that this counter never moves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolation

NOOP, UP, DOWN, LEFT, RIGHT = range(5)
N_MOVES = 5
MOVE_DELTAS = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

WIN_BONUS = 10.0
DAMAGE_REWARD = 0.1

VIEWS = ("partial", "perfect")


@dataclass(frozen=True)
class EnvConfig:
    grid_size: int = 15
    n_agents: int = 5
    hit_points: int = 3
    attack_range: int = 1
    max_steps: int = 40
    sight_range: float = 2
    perfect_sight_range: float = 4
    # None means the same size as the learner team
    n_opponents: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.grid_size < 2:
            raise ConfigurationError("env.grid_size must be >= 2")
        if self.n_agents < 1:
            raise ConfigurationError("env.n_agents must be >= 1")
        if self.n_opponents is not None and self.n_opponents < 0:
            raise ConfigurationError("env.n_opponents must be >= 0")
        if self.hit_points < 1:
            raise ConfigurationError("env.hit_points must be >= 1")
        if self.attack_range < 0:
            raise ConfigurationError("env.attack_range must be >= 0")
        if self.max_steps < 1:
            raise ConfigurationError("env.max_steps must be >= 1")
        if self.sight_range < 0:
            raise ConfigurationError("env.sight_range must be >= 0")
        if self.sight_range > self.perfect_sight_range:
            raise ConfigurationError(
                f"env.sight_range ({self.sight_range}) must not exceed "
                f"env.perfect_sight_range ({self.perfect_sight_range})"
            )

    @property
    def opponents(self) -> int:
        return self.n_agents if self.n_opponents is None else self.n_opponents


@dataclass
class EnvState:
    positions: np.ndarray  # (units, 2) int row/col; learners first, then opponents
    hit_points: np.ndarray  # (units,) int
    last_actions: np.ndarray  # (n_agents,) int, -1 before the first step
    t: int
    rng: np.random.Generator = field(repr=False)

    @property
    def alive(self) -> np.ndarray:
        return self.hit_points > 0

    def same_as(self, other: EnvState) -> bool:
        return (
            self.t == other.t
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.hit_points, other.hit_points)
            and np.array_equal(self.last_actions, other.last_actions)
            and self.rng.bit_generator.state == other.rng.bit_generator.state
        )


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    terminated: bool
    win: bool
    avail: np.ndarray  # (n_agents, n_actions) bool, for the next step
    damage_dealt: int = 0
    damage_received: int = 0


def chebyshev(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(np.asarray(a) - np.asarray(b)).max(axis=-1)


class Combat:
    """Two-team grid battle with per-agent sight masking."""

    def __init__(self, config: EnvConfig) -> None:
        self.config = config
        self.n_agents = config.n_agents
        self.n_opponents = config.opponents
        self.n_units = self.n_agents + self.n_opponents
        if max(self.n_agents, self.n_opponents) > config.grid_size:
            raise ConfigurationError(
                f"a team of {max(self.n_agents, self.n_opponents)} does not fit on a "
                f"{config.grid_size}x{config.grid_size} grid"
            )
        self.n_actions = N_MOVES + self.n_opponents
        self.obs_dim = 3 + 4 * (self.n_units - 1) + self.n_actions + self.n_agents
        self.state_dim = 3 * self.n_units + 1
        self.episode_limit = config.max_steps
        self.central_reads = 0
        # slot order of the other units seen by each agent: allies, then enemies
        self._others = np.array(
            [[j for j in range(self.n_units) if j != i] for i in range(self.n_agents)], dtype=np.int64
        ).reshape(self.n_agents, self.n_units - 1)
        self.state: EnvState | None = None
        self.reset(config.seed)

    # ------------------------------------------------------------------

    def reset(self, seed: int | None = None) -> EnvState:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        side = cfg.grid_size
        team = max(self.n_agents, self.n_opponents)
        rows = np.sort(rng.choice(side, size=team, replace=False))
        # learners on the left half, opponents mirrored on the right
        max_col = max(0, (side - 1) // 2 - 2)
        col = int(rng.integers(max(0, max_col - 2), max_col + 1))
        positions = np.zeros((self.n_units, 2), dtype=np.int64)
        positions[: self.n_agents, 0] = rows[: self.n_agents]
        positions[: self.n_agents, 1] = col
        positions[self.n_agents :, 0] = rows[: self.n_opponents]
        positions[self.n_agents :, 1] = side - 1 - col
        self.state = EnvState(
            positions=positions,
            hit_points=np.full(self.n_units, cfg.hit_points, dtype=np.int64),
            last_actions=np.full(self.n_agents, -1, dtype=np.int64),
            t=0,
            rng=rng,
        )
        return self.state

    # ------------------------------------------------------------------

    def available_actions(self, agent: int) -> np.ndarray:
        return self.available_actions_all()[agent]

    def available_actions_all(self) -> np.ndarray:
        st = self.state
        n, side = self.n_agents, self.config.grid_size
        mask = np.zeros((n, self.n_actions), dtype=bool)
        mask[:, NOOP] = True
        alive = st.alive
        pos = st.positions[:n]
        mask[:, UP] = pos[:, 0] > 0
        mask[:, DOWN] = pos[:, 0] < side - 1
        mask[:, LEFT] = pos[:, 1] > 0
        mask[:, RIGHT] = pos[:, 1] < side - 1
        if self.n_opponents:
            opp = st.positions[n:]
            dist = np.abs(pos[:, None, :] - opp[None, :, :]).max(axis=-1)
            mask[:, N_MOVES:] = (dist <= self.config.attack_range) & alive[None, n:]
        mask[~alive[:n], 1:] = False
        return mask

    # ------------------------------------------------------------------

    def opponent_policy(self, state: EnvState | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
        """Scripted opponent: attack a random learner in range, else chase the nearest one."""
        st = self.state if state is None else state
        rng = st.rng if rng is None else rng
        n = self.n_agents
        side = self.config.grid_size
        actions = np.zeros(self.n_opponents, dtype=np.int64)
        alive = st.alive
        learners = np.flatnonzero(alive[:n])
        for k in range(self.n_opponents):
            unit = n + k
            if not alive[unit] or learners.size == 0:
                continue
            here = st.positions[unit]
            dist = chebyshev(st.positions[learners], here)
            in_range = learners[dist <= self.config.attack_range]
            if in_range.size:
                actions[k] = N_MOVES + int(in_range[rng.integers(in_range.size)])
                continue
            manhattan = np.abs(st.positions[learners] - here).sum(axis=1)
            target = st.positions[learners[int(np.argmin(manhattan))]]
            best = int(manhattan.min())
            for move in (UP, DOWN, LEFT, RIGHT):
                dr, dc = MOVE_DELTAS[move]
                r, c = here[0] + dr, here[1] + dc
                if 0 <= r < side and 0 <= c < side and abs(target[0] - r) + abs(target[1] - c) < best:
                    actions[k] = move
                    break
        return actions

    def _move(self, unit: int, action: int) -> None:
        if action not in MOVE_DELTAS:
            return
        st = self.state
        dr, dc = MOVE_DELTAS[action]
        r, c = st.positions[unit, 0] + dr, st.positions[unit, 1] + dc
        side = self.config.grid_size
        if not (0 <= r < side and 0 <= c < side):
            return
        alive = st.alive
        occupied = alive & (st.positions[:, 0] == r) & (st.positions[:, 1] == c)
        if occupied.any():
            return
        st.positions[unit] = (r, c)

    def step(self, actions) -> StepOutcome:
        st = self.state
        cfg = self.config
        n = self.n_agents
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (n,):
            raise ContractViolation(f"expected {n} actions, got shape {actions.shape}")
        avail = self.available_actions_all()
        for i, a in enumerate(actions):
            if not (0 <= a < self.n_actions) or not avail[i, a]:
                raise ContractViolation(f"agent {i}: action {int(a)} is not available")

        alive_before = st.alive.copy()
        for i in range(n):
            if alive_before[i]:
                self._move(i, int(actions[i]))
        opp_actions = self.opponent_policy()
        for k in range(self.n_opponents):
            if alive_before[n + k]:
                self._move(n + k, int(opp_actions[k]))

        hits = np.zeros(self.n_units, dtype=np.int64)
        for i in range(n):
            a = int(actions[i])
            if alive_before[i] and a >= N_MOVES:
                target = n + a - N_MOVES
                if alive_before[target] and chebyshev(st.positions[i], st.positions[target]) <= cfg.attack_range:
                    hits[target] += 1
        for k in range(self.n_opponents):
            a = int(opp_actions[k])
            if alive_before[n + k] and a >= N_MOVES:
                target = a - N_MOVES
                if alive_before[target] and chebyshev(st.positions[n + k], st.positions[target]) <= cfg.attack_range:
                    hits[target] += 1
        applied = np.minimum(hits, st.hit_points)
        st.hit_points = st.hit_points - applied
        dealt = int(applied[n:].sum())
        received = int(applied[:n].sum())

        st.last_actions = actions.copy()
        st.t += 1

        alive = st.alive
        learners_left = bool(alive[:n].any())
        opponents_left = bool(alive[n:].any())
        win = not opponents_left and learners_left
        lost = not learners_left and opponents_left
        terminated = win or lost or not (learners_left or opponents_left) or st.t >= cfg.max_steps
        reward = DAMAGE_REWARD * (dealt - received)
        if win:
            reward += WIN_BONUS
        elif lost:
            reward -= WIN_BONUS
        return StepOutcome(
            reward=float(reward),
            terminated=terminated,
            win=win,
            avail=self.available_actions_all(),
            damage_dealt=dealt,
            damage_received=received,
        )

    # ------------------------------------------------------------------

    def observe(self, sight_range: float) -> np.ndarray:
        """Observations of every learner at the given sight range, shape ``(n_agents, obs_dim)``."""
        st = self.state
        cfg = self.config
        n = self.n_agents
        scale = float(cfg.grid_size - 1)
        hp_frac = st.hit_points / cfg.hit_points
        alive = st.alive
        obs = np.zeros((n, self.obs_dim))

        own = np.concatenate([st.positions[:n] / scale, hp_frac[:n, None]], axis=1)
        obs[:, :3] = own * alive[:n, None]

        if self.n_units > 1:
            others = self._others
            rel = st.positions[others] - st.positions[:n, None, :]
            dist = np.abs(rel).max(axis=-1)
            visible = alive[:n, None] & alive[others] & (dist <= sight_range)
            slots = np.concatenate(
                [np.ones(others.shape + (1,)), rel / scale, hp_frac[others][..., None]], axis=-1
            )
            slots *= visible[..., None]
            obs[:, 3 : 3 + 4 * (self.n_units - 1)] = slots.reshape(n, -1)

        base = 3 + 4 * (self.n_units - 1)
        for i in range(n):
            a = st.last_actions[i]
            if alive[i] and a >= 0:
                obs[i, base + a] = 1.0
            obs[i, base + self.n_actions + i] = 1.0
        return obs

    def build_observation(self, agent: int, sight_range: float) -> np.ndarray:
        return self.observe(sight_range)[agent]

    def observations(self, view: str) -> np.ndarray:
        if view == "partial":
            return self.observe(self.config.sight_range)
        if view == "perfect":
            self.central_reads += 1
            return self.observe(self.config.perfect_sight_range)
        raise ConfigurationError(f"unknown observation view {view!r}; expected one of {VIEWS}")

    def state_vector(self) -> np.ndarray:
        st = self.state
        cfg = self.config
        alive = st.alive
        feats = np.concatenate(
            [st.positions / float(cfg.grid_size - 1), (st.hit_points / cfg.hit_points)[:, None]], axis=1
        )
        feats *= alive[:, None]
        return np.concatenate([feats.reshape(-1), [st.t / cfg.max_steps]])

    def total_hit_points(self) -> int:
        return int(self.state.hit_points.sum())


# ----------------------------------------------------------------------


@dataclass(frozen=True)
class MatrixGameConfig:
    payoff: tuple[tuple[float, ...], ...] = ((8.0, 3.0, 2.0), (3.0, 1.0, 0.0), (2.0, 0.0, -1.0))
    seed: int = 0

    def __post_init__(self) -> None:
        table = self.table
        if table.ndim != 2 or table.size == 0:
            raise ConfigurationError("matrix payoff must be a non-empty rectangular table")
        if not np.all(np.isfinite(table)):
            raise ConfigurationError("matrix payoff must be finite")

    @property
    def table(self) -> np.ndarray:
        try:
            return np.array(self.payoff, dtype=np.float64)
        except ValueError as exc:
            raise ConfigurationError("matrix payoff must be a rectangular table") from exc


class MatrixGame:
    """One-step two-agent cooperative game; reward is ``payoff[a1][a2]``."""

    n_agents = 2
    episode_limit = 1

    def __init__(self, config: MatrixGameConfig) -> None:
        self.config = config
        self.table = config.table
        rows, cols = self.table.shape
        self.n_actions = max(rows, cols)
        self.obs_dim = self.n_agents
        self.state_dim = 1
        self.central_reads = 0
        self._avail = np.zeros((2, self.n_actions), dtype=bool)
        self._avail[0, :rows] = True
        self._avail[1, :cols] = True
        self.t = 0

    def reset(self, seed: int | None = None) -> None:
        self.t = 0

    def available_actions_all(self) -> np.ndarray:
        if self.t >= 1:
            out = np.zeros_like(self._avail)
            out[:, 0] = True
            return out
        return self._avail.copy()

    def available_actions(self, agent: int) -> np.ndarray:
        return self.available_actions_all()[agent]

    def step(self, actions) -> StepOutcome:
        a1, a2 = (int(a) for a in actions)
        if self.t >= 1:
            raise ContractViolation("matrix game episode already terminated")
        if not (self._avail[0, a1] if 0 <= a1 < self.n_actions else False) or not (
            self._avail[1, a2] if 0 <= a2 < self.n_actions else False
        ):
            raise ContractViolation(f"joint action ({a1}, {a2}) is not available")
        reward = float(self.table[a1, a2])
        self.t = 1
        return StepOutcome(
            reward=reward,
            terminated=True,
            win=reward == float(self.table.max()),
            avail=self.available_actions_all(),
        )

    def observations(self, view: str) -> np.ndarray:
        if view not in VIEWS:
            raise ConfigurationError(f"unknown observation view {view!r}")
        if view == "perfect":
            self.central_reads += 1
        return np.eye(self.n_agents)

    def state_vector(self) -> np.ndarray:
        return np.ones(1)


def matrix_game(config: MatrixGameConfig) -> MatrixGame:
    return MatrixGame(config)


def make_env(config: EnvConfig | MatrixGameConfig):
    if isinstance(config, MatrixGameConfig):
        return MatrixGame(config)
    return Combat(config)
