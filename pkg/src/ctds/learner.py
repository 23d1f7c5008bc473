"""Teacher/student training loop.

The teacher (agent network plus mixer) sees perfect observations and is
trained by double-Q TD learning on the mixed joint value. The student, an
agent network of the same shape with its own parameters, sees partial
observations and regresses onto the teacher's per-agent Q-values for every
available action. The teacher alone collects experience; only the student is
used for decentralized execution.

In ``ctde`` mode there is no student: the TD-trained agent network consumes
partial observations directly, which gives the usual value-decomposition
baseline.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from .agent import AgentNetwork, masked_argmax
from .envs import make_env
from .errors import ConfigurationError, ContractViolation, NumericError
from .mixers import MIXERS, Mixer, make_mixer, one_hot_joint
from .numeric import (
    ParameterSet,
    RmspropState,
    Tensor,
    clip_grad_norm,
    concat,
    gather,
    no_grad,
    rmsprop_update,
    stack,
)

log = logging.getLogger(__name__)

MODES = ("ctds", "ctde")

# execution-time audit shared by every greedy_execute call in the process
EXECUTION_AUDIT: Counter = Counter()


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    lr: float = 5e-4
    batch_size: int = 32
    buffer_capacity: int = 5000
    target_update_interval: int = 200
    epsilon_start: float = 1.0
    epsilon_finish: float = 0.05
    epsilon_anneal_time: int = 50_000
    t_max: int = 500_000
    eval_interval: int = 2_000
    eval_episodes: int = 32
    mixer: str = "qmix"
    mode: str = "ctds"
    hidden_dim: int = 64
    mixer_embed_dim: int = 32
    hypernet_dim: int = 64
    grad_clip: float = 10.0
    rms_alpha: float = 0.99
    rms_eps: float = 1e-5
    # "all" sums the distillation loss over every available action, "taken" only over the executed one
    distill_actions: str = "all"

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError("train.gamma must lie in [0, 1)")
        if not 0.0 <= self.epsilon_finish <= self.epsilon_start <= 1.0:
            raise ConfigurationError("train.epsilon_finish <= train.epsilon_start must both lie in [0, 1]")
        for name in ("batch_size", "buffer_capacity", "target_update_interval", "epsilon_anneal_time",
                     "eval_interval", "eval_episodes", "hidden_dim", "mixer_embed_dim", "hypernet_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"train.{name} must be positive")
        if self.t_max < 0:
            raise ConfigurationError("train.t_max must be >= 0")
        if self.lr <= 0 or self.grad_clip <= 0:
            raise ConfigurationError("train.lr and train.grad_clip must be positive")
        if self.mixer not in MIXERS:
            raise ConfigurationError(f"train.mixer must be one of {MIXERS}, got {self.mixer!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"train.mode must be one of {MODES}, got {self.mode!r}")
        if self.distill_actions not in ("all", "taken"):
            raise ConfigurationError("train.distill_actions must be 'all' or 'taken'")


def epsilon_at(t_step: int, start: float = 1.0, end: float = 0.05, anneal: int = 50_000) -> float:
    frac = min(1.0, t_step / anneal)
    return start + (end - start) * frac


# ----------------------------------------------------------------------------
# episodes and replay


@dataclass
class EpisodeRecord:
    obs_central: np.ndarray  # (L + 1, N, D)
    obs_local: np.ndarray  # (L + 1, N, D)
    state: np.ndarray  # (L + 1, S)
    avail: np.ndarray  # (L + 1, N, A) bool
    actions: np.ndarray  # (L, N) int
    rewards: np.ndarray  # (L,)
    terminated: np.ndarray  # (L,) bool
    win: bool = False
    # reset seed; with the actions it determines the whole episode
    seed: int | None = None

    @property
    def filled(self) -> int:
        return len(self.rewards)

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    ARRAY_FIELDS = ("obs_central", "obs_local", "state", "avail", "actions", "rewards", "terminated")


@dataclass
class EpisodeBatch:
    obs_central: np.ndarray  # (B, T + 1, N, D)
    obs_local: np.ndarray
    state: np.ndarray  # (B, T + 1, S)
    avail: np.ndarray  # (B, T + 1, N, A)
    actions: np.ndarray  # (B, T, N)
    rewards: np.ndarray  # (B, T)
    terminated: np.ndarray  # (B, T)
    mask: np.ndarray  # (B, T), 1 on filled steps

    @classmethod
    def from_episodes(cls, episodes: list[EpisodeRecord]) -> EpisodeBatch:
        # longest first, so the episodes still running at any step form a prefix
        episodes = sorted(episodes, key=lambda ep: -ep.filled)
        B = len(episodes)
        T = max(ep.filled for ep in episodes)
        if all(ep.filled == T for ep in episodes):
            return cls(
                obs_central=np.stack([ep.obs_central for ep in episodes]),
                obs_local=np.stack([ep.obs_local for ep in episodes]),
                state=np.stack([ep.state for ep in episodes]),
                avail=np.stack([ep.avail for ep in episodes]),
                actions=np.stack([ep.actions for ep in episodes]),
                rewards=np.stack([ep.rewards for ep in episodes]),
                terminated=np.stack([ep.terminated for ep in episodes]),
                mask=np.ones((B, T)),
            )
        first = episodes[0]
        N, D = first.obs_central.shape[1:]
        A = first.avail.shape[-1]
        S = first.state.shape[-1]
        out = cls(
            obs_central=np.zeros((B, T + 1, N, D)),
            obs_local=np.zeros((B, T + 1, N, D)),
            state=np.zeros((B, T + 1, S)),
            avail=np.zeros((B, T + 1, N, A), dtype=bool),
            actions=np.zeros((B, T, N), dtype=np.int64),
            rewards=np.zeros((B, T)),
            terminated=np.zeros((B, T), dtype=bool),
            mask=np.zeros((B, T)),
        )
        out.avail[..., 0] = True
        for b, ep in enumerate(episodes):
            L = ep.filled
            out.obs_central[b, : L + 1] = ep.obs_central
            out.obs_local[b, : L + 1] = ep.obs_local
            out.state[b, : L + 1] = ep.state
            out.avail[b, : L + 1] = ep.avail
            out.actions[b, :L] = ep.actions
            out.rewards[b, :L] = ep.rewards
            out.terminated[b, :L] = ep.terminated
            out.mask[b, :L] = 1.0
        return out

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.actions.shape


class ReplayBuffer:
    """FIFO ring of whole episodes."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ConfigurationError("buffer capacity must be positive")
        self.capacity = capacity
        self.episodes: list[EpisodeRecord] = []
        self.inserted = 0

    def __len__(self) -> int:
        return len(self.episodes)

    def insert(self, episode: EpisodeRecord) -> None:
        if len(self.episodes) < self.capacity:
            self.episodes.append(episode)
        else:
            self.episodes[self.inserted % self.capacity] = episode
        self.inserted += 1

    def oldest_first(self) -> list[EpisodeRecord]:
        if len(self.episodes) < self.capacity:
            return list(self.episodes)
        k = self.inserted % self.capacity
        return self.episodes[k:] + self.episodes[:k]

    def can_sample(self, n: int) -> bool:
        return len(self.episodes) >= n

    def sample(self, n: int, rng: np.random.Generator) -> list[EpisodeRecord]:
        idx = rng.choice(len(self.episodes), size=n, replace=False)
        return [self.episodes[i] for i in idx]


# ----------------------------------------------------------------------------
# learner state


@dataclass
class LearnerState:
    teacher: AgentNetwork
    mixer: Mixer
    target_teacher: AgentNetwork
    target_mixer: Mixer
    student: AgentNetwork | None
    teacher_opt: RmspropState
    student_opt: RmspropState | None
    t_env: int = 0
    episodes: int = 0
    updates: int = 0
    syncs: int = 0

    @property
    def teacher_params(self) -> ParameterSet:
        return self.teacher.params.merged(self.mixer.params, "mixer.")

    @classmethod
    def create(cls, env, config: TrainConfig, rng: np.random.Generator) -> LearnerState:
        teacher = AgentNetwork(env.obs_dim, env.n_actions, config.hidden_dim, rng=rng)
        kwargs = {}
        if config.mixer == "qmix":
            kwargs = {"embed_dim": config.mixer_embed_dim, "hyper_dim": config.hypernet_dim}
        elif config.mixer == "qplex":
            kwargs = {"hyper_dim": config.hypernet_dim}
        mixer = make_mixer(config.mixer, env.n_agents, env.state_dim, env.n_actions, rng=rng, **kwargs)
        student = None
        student_opt = None
        if config.mode == "ctds":
            student = AgentNetwork(env.obs_dim, env.n_actions, config.hidden_dim, rng=rng)
            student_opt = RmspropState.for_params(
                student.params, alpha=config.rms_alpha, eps=config.rms_eps, lr=config.lr
            )
        state = cls(
            teacher=teacher,
            mixer=mixer,
            target_teacher=teacher.copy(),
            target_mixer=mixer.copy(),
            student=student,
            teacher_opt=None,  # type: ignore[arg-type]
            student_opt=student_opt,
        )
        state.teacher_opt = RmspropState.for_params(
            state.teacher_params, alpha=config.rms_alpha, eps=config.rms_eps, lr=config.lr
        )
        return state


def _acting_view(config: TrainConfig) -> str:
    return "perfect" if config.mode == "ctds" else "partial"


def _td_obs(batch: EpisodeBatch, config: TrainConfig) -> np.ndarray:
    return batch.obs_central if config.mode == "ctds" else batch.obs_local


def collect_episode(
    env,
    learner: LearnerState,
    epsilon: float,
    seed: int,
    rng: np.random.Generator,
    view: str = "perfect",
) -> EpisodeRecord:
    """Run one epsilon-greedy episode of the TD-trained agents and record both observation streams."""
    env.reset(seed)
    net = learner.teacher
    n = env.n_agents
    obs_c, obs_l, states, avails, actions, rewards, terms = [], [], [], [], [], [], []
    oc, ol = env.observations("perfect"), env.observations("partial")
    avail = env.available_actions_all()
    s = env.state_vector()
    hidden = net.init_hidden(n)
    win = False
    with no_grad():
        while True:
            obs_c.append(oc)
            obs_l.append(ol)
            states.append(s)
            avails.append(avail)
            q, h = net.forward(oc if view == "perfect" else ol, hidden)
            hidden = h.data
            act = masked_argmax(q.data, avail)
            explore = rng.random(n) < epsilon
            for i in np.flatnonzero(explore):
                choices = np.flatnonzero(avail[i])
                act[i] = choices[rng.integers(choices.size)]
            outcome = env.step(act)
            actions.append(act)
            rewards.append(outcome.reward)
            terms.append(outcome.terminated)
            oc, ol = env.observations("perfect"), env.observations("partial")
            avail = outcome.avail
            s = env.state_vector()
            if outcome.terminated:
                win = outcome.win
                break
    obs_c.append(oc)
    obs_l.append(ol)
    states.append(s)
    avails.append(avail)
    return EpisodeRecord(
        obs_central=np.array(obs_c),
        obs_local=np.array(obs_l),
        state=np.array(states),
        avail=np.array(avails),
        actions=np.array(actions, dtype=np.int64),
        rewards=np.array(rewards),
        terminated=np.array(terms, dtype=bool),
        win=win,
        seed=seed,
    )


def replay_episode(env, seed: int, actions: np.ndarray) -> EpisodeRecord:
    """Rebuild a recorded episode from its reset seed and joint actions."""
    actions = np.asarray(actions, dtype=np.int64)
    env.reset(seed)
    obs_c, obs_l = [env.observations("perfect")], [env.observations("partial")]
    states, avails = [env.state_vector()], [env.available_actions_all()]
    rewards, terms = [], []
    win = False
    for t, act in enumerate(actions):
        outcome = env.step(act)
        rewards.append(outcome.reward)
        terms.append(outcome.terminated)
        obs_c.append(env.observations("perfect"))
        obs_l.append(env.observations("partial"))
        states.append(env.state_vector())
        avails.append(outcome.avail)
        if outcome.terminated:
            if t != len(actions) - 1:
                raise ContractViolation(f"replayed episode ended after {t + 1} of {len(actions)} steps")
            win = outcome.win
    return EpisodeRecord(
        obs_central=np.array(obs_c),
        obs_local=np.array(obs_l),
        state=np.array(states),
        avail=np.array(avails),
        actions=actions.copy(),
        rewards=np.array(rewards),
        terminated=np.array(terms, dtype=bool),
        win=win,
        seed=seed,
    )


# ----------------------------------------------------------------------------
# losses


def unroll(net: AgentNetwork, obs: np.ndarray, active: np.ndarray | None = None) -> list[Tensor]:
    """Per-step Q tensors ``(B, N, A)`` for observations ``(B, T, N, D)``, from zero hidden state.

    ``active[b]`` is the number of leading steps of episode ``b`` that are
    needed; it must be non-increasing in ``b``. Rows past their count are
    skipped and their Q-values are constant zeros.
    """
    B, T, N, D = obs.shape
    A = net.n_actions
    if active is not None and np.any(np.diff(active) > 0):
        raise ContractViolation("unroll: active step counts must be non-increasing")
    hidden = net.init_hidden(B * N)
    out = []
    for t in range(T):
        k = B if active is None else int(np.count_nonzero(active > t))
        if k == 0:
            out.append(Tensor(np.zeros((B, N, A))))
            continue
        if k * N < hidden.shape[0]:
            hidden = hidden[: k * N]
        q, hidden = net.forward(obs[:k, t].reshape(k * N, D), hidden)
        q = q.reshape(k, N, A)
        if k < B:
            q = concat([q, Tensor(np.zeros((B - k, N, A)))], axis=0)
        out.append(q)
    return out


def _masked_max(q: np.ndarray, avail: np.ndarray) -> np.ndarray:
    return np.where(avail, q, -np.inf).max(axis=-1)


def _mix(mixer: Mixer, chosen: Tensor, states: np.ndarray, actions: np.ndarray, greedy=None) -> Tensor:
    B, T, N = actions.shape
    onehot = one_hot_joint(actions, mixer.n_actions).reshape(B * T, -1) if mixer.needs_greedy else None
    v = greedy.reshape(B * T, N) if greedy is not None else None
    out = mixer.mix(chosen.reshape(B * T, N), states.reshape(B * T, -1), v=v, actions=onehot)
    return out.reshape(B, T)


def _horizon(batch: EpisodeBatch) -> int:
    """Observation steps the TD pass needs.

    The value after an episode's final step is only used when that step is
    not terminal, so batches of complete episodes skip the trailing step.
    """
    B, T, _ = batch.shape
    lengths = batch.mask.sum(axis=1).astype(np.int64)
    ends_terminal = np.all(batch.terminated[np.arange(B), lengths - 1])
    return T if ends_terminal else T + 1


def _active_steps(batch: EpisodeBatch, steps: int) -> np.ndarray | None:
    """Per-episode step counts for :func:`unroll`, or None when the batch is not length-sorted."""
    T = batch.shape[1]
    lengths = batch.mask.sum(axis=1).astype(np.int64)
    if np.any(np.diff(lengths) > 0):
        return None
    return np.minimum(lengths + (steps - T), steps)


def compute_td_targets(
    batch: EpisodeBatch,
    learner: LearnerState,
    gamma: float,
    obs: np.ndarray | None = None,
    online_q: np.ndarray | None = None,
) -> np.ndarray:
    """Double-Q targets ``r + gamma * Q_tot^-(tau', a_hat)``, with ``a_hat`` from the online agents."""
    obs = batch.obs_central if obs is None else obs
    B, T, N = batch.shape
    horizon = _horizon(batch)
    active = _active_steps(batch, horizon)
    q_next = np.zeros((B, T))
    if horizon > 1:
        next_avail = batch.avail[:, 1:horizon]
        with no_grad():
            if online_q is None:
                online_q = np.stack([q.data for q in unroll(learner.teacher, obs[:, :horizon], active)], axis=1)
            a_hat = masked_argmax(online_q[:, 1:horizon], next_avail)
            target_q = np.stack([q.data for q in unroll(learner.target_teacher, obs[:, :horizon], active)], axis=1)
            target_q = target_q[:, 1:]
            chosen = np.take_along_axis(target_q, a_hat[..., None], axis=-1)[..., 0]
            greedy = _masked_max(target_q, next_avail) if learner.target_mixer.needs_greedy else None
            q_tot = _mix(learner.target_mixer, Tensor(chosen), batch.state[:, 1:horizon], a_hat, greedy)
        q_next[:, : horizon - 1] = q_tot.data
    return batch.rewards + gamma * (1.0 - batch.terminated) * q_next


def _check_finite(value: float, what: str, learner: LearnerState) -> None:
    if not math.isfinite(value):
        raise NumericError(
            f"{what} became non-finite at t_env={learner.t_env}, episode={learner.episodes}, "
            f"update={learner.updates}"
        )


def td_loss(
    batch: EpisodeBatch,
    learner: LearnerState,
    targets: np.ndarray | None = None,
    gamma: float = 0.99,
    obs: np.ndarray | None = None,
):
    """Masked mean squared TD error (a graph node) and the online Q-values as plain arrays.

    When ``targets`` is None they are computed from this same online forward pass.
    """
    obs = batch.obs_central if obs is None else obs
    B, T, N = batch.shape
    horizon = _horizon(batch)
    qs = unroll(learner.teacher, obs[:, :horizon], _active_steps(batch, horizon))
    online = np.stack([q.data for q in qs], axis=1)
    if targets is None:
        targets = compute_td_targets(batch, learner, gamma, obs=obs, online_q=online)
    q_seq = stack(qs[:T], axis=1)
    chosen = gather(q_seq, batch.actions[..., None], axis=-1).reshape(B, T, N)
    greedy = None
    if learner.mixer.needs_greedy:
        greedy_idx = masked_argmax(q_seq.data, batch.avail[:, :T])
        greedy = gather(q_seq, greedy_idx[..., None], axis=-1).reshape(B, T, N)
    q_tot = _mix(learner.mixer, chosen, batch.state[:, :T], batch.actions, greedy)
    err = (q_tot - targets) * batch.mask
    loss = (err * err).sum() * (1.0 / batch.mask.sum())
    return loss, online


def teacher_update(
    batch: EpisodeBatch, learner: LearnerState, config: TrainConfig, targets: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """One TD step on the teacher (agents and mixer). Returns the loss and the pre-update online Q."""
    params = learner.teacher_params
    params.zero_grad()
    loss, online = td_loss(batch, learner, targets, config.gamma, obs=_td_obs(batch, config))
    value = loss.item()
    _check_finite(value, "TD loss", learner)
    loss.backward()
    clip_grad_norm(params, config.grad_clip)
    rmsprop_update(params, learner.teacher_opt)
    return value, online


def distillation_loss(
    teacher_q: np.ndarray,
    student_q: Tensor,
    weights: np.ndarray,
) -> Tensor:
    """Weighted mean of squared teacher/student differences; ``weights`` selects the summed entries."""
    diff = (student_q - teacher_q) * weights
    return (diff * diff).sum() * (1.0 / weights.sum())


def distillation_weights(batch: EpisodeBatch, n_actions: int, actions: str = "all") -> np.ndarray:
    T = batch.shape[1]
    if actions == "all":
        w = batch.avail[:, :T].astype(np.float64)
    else:
        w = np.zeros(batch.actions.shape + (n_actions,))
        np.put_along_axis(w, batch.actions[..., None], 1.0, axis=-1)
    return w * batch.mask[:, :, None, None]


def student_update(
    batch: EpisodeBatch,
    learner: LearnerState,
    config: TrainConfig,
    teacher_q: np.ndarray | None = None,
) -> float:
    """One distillation step on the student; the teacher's Q-values are constants."""
    if learner.student is None:
        raise ConfigurationError("student_update needs a learner built in ctds mode")
    T = batch.shape[1]
    active = _active_steps(batch, T)
    if teacher_q is None:
        with no_grad():
            teacher_q = np.stack([q.data for q in unroll(learner.teacher, batch.obs_central[:, :T], active)], axis=1)
    teacher_q = teacher_q[:, :T]
    params = learner.student.params
    params.zero_grad()
    student_q = stack(unroll(learner.student, batch.obs_local[:, :T], active), axis=1)
    loss = distillation_loss(teacher_q, student_q, distillation_weights(batch, learner.student.n_actions, config.distill_actions))
    value = loss.item()
    _check_finite(value, "distillation loss", learner)
    loss.backward()
    clip_grad_norm(params, config.grad_clip)
    rmsprop_update(params, learner.student_opt)
    return value


def sync_due(episodes: int, period: int) -> bool:
    return episodes > 0 and episodes % period == 0


def sync_targets(learner: LearnerState) -> None:
    learner.target_teacher.params.load_values(learner.teacher.params.values())
    learner.target_mixer.params.load_values(learner.mixer.params.values())
    learner.syncs += 1


# ----------------------------------------------------------------------------
# execution and evaluation


class DecentralizedView:
    """Execution facade over an environment that only hands out partial observations."""

    def __init__(self, env) -> None:
        self._env = env
        self.n_agents = env.n_agents

    def reset(self, seed: int) -> None:
        self._env.reset(seed)

    def observations(self) -> np.ndarray:
        return self._env.observations("partial")

    def available_actions_all(self) -> np.ndarray:
        return self._env.available_actions_all()

    def step(self, actions):
        return self._env.step(actions)

    @property
    def central_reads(self) -> int:
        return self._env.central_reads


def greedy_execute(env, student: AgentNetwork, seed: int) -> tuple[float, bool]:
    """One greedy episode driven by ``student`` on partial observations only."""
    view = env if isinstance(env, DecentralizedView) else DecentralizedView(env)
    before = view.central_reads
    view.reset(seed)
    hidden = student.init_hidden(view.n_agents)
    total, win = 0.0, False
    with no_grad():
        while True:
            q, h = student.forward(view.observations(), hidden)
            hidden = h.data
            outcome = view.step(masked_argmax(q.data, view.available_actions_all()))
            total += outcome.reward
            if outcome.terminated:
                win = outcome.win
                break
    EXECUTION_AUDIT["executions"] += 1
    EXECUTION_AUDIT["central_reads"] += view.central_reads - before
    return total, win


def greedy_teacher_episode(env, teacher: AgentNetwork, seed: int, view: str = "perfect") -> tuple[float, bool]:
    """Greedy episode of the TD-trained agents on the given observation view (metrics only)."""
    env.reset(seed)
    hidden = teacher.init_hidden(env.n_agents)
    total, win = 0.0, False
    with no_grad():
        while True:
            q, h = teacher.forward(env.observations(view), hidden)
            hidden = h.data
            outcome = env.step(masked_argmax(q.data, env.available_actions_all()))
            total += outcome.reward
            if outcome.terminated:
                win = outcome.win
                break
    return total, win


def evaluation_seeds(seed: int, index: int, episodes: int) -> list[int]:
    ss = np.random.SeedSequence([seed, 0xE7A1, index])
    return [int(s) for s in ss.generate_state(episodes, dtype=np.uint32)]


def evaluate_policy(env, net: AgentNetwork, view: str, seeds: list[int]) -> tuple[float, float]:
    """Win rate and mean return of greedy episodes; ``view="partial"`` goes through greedy_execute."""
    wins, total = 0, 0.0
    for s in seeds:
        if view == "partial":
            ret, win = greedy_execute(env, net, s)
        else:
            ret, win = greedy_teacher_episode(env, net, s, view)
        wins += int(win)
        total += ret
    return wins / len(seeds), total / len(seeds)


# ----------------------------------------------------------------------------
# training loop


@dataclass
class MetricsRow:
    t_env: int
    episodes: int
    td_loss: float | None
    distill_loss: float | None
    win_rate_teacher: float | None
    win_rate_student: float | None
    win_rate_baseline: float | None
    epsilon: float
    # mean greedy returns; not part of the CSV schema
    return_teacher: float | None = field(default=None, compare=False)
    return_student: float | None = field(default=None, compare=False)
    return_baseline: float | None = field(default=None, compare=False)

    CSV_FIELDS = (
        "t_env", "episodes", "td_loss", "distill_loss",
        "win_rate_teacher", "win_rate_student", "win_rate_baseline", "epsilon",
    )

    def to_dict(self) -> dict:
        return asdict(self)


class Trainer:
    """Owns the environment, learner, buffer and RNG streams of one seeded run."""

    def __init__(self, env_config, config: TrainConfig, seed: int) -> None:
        self.env_config = env_config
        self.config = config
        self.seed = seed
        self.env = make_env(env_config)
        self.eval_env = make_env(env_config)
        init_ss, collect_ss, sample_ss = np.random.SeedSequence(seed).spawn(3)
        self.learner = LearnerState.create(self.env, config, np.random.default_rng(init_ss))
        self.collect_rng = np.random.default_rng(collect_ss)
        self.sample_rng = np.random.default_rng(sample_ss)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.next_eval = config.eval_interval
        self.eval_index = 0
        self.loss_sums = {"td": 0.0, "td_n": 0, "dl": 0.0, "dl_n": 0}
        self.rows: list[MetricsRow] = []

    @property
    def epsilon(self) -> float:
        c = self.config
        return epsilon_at(self.learner.t_env, c.epsilon_start, c.epsilon_finish, c.epsilon_anneal_time)

    def train_step(self) -> None:
        """Alg. loop body: collect, store, update teacher and student, maybe sync."""
        c = self.config
        L = self.learner
        seed = int(self.collect_rng.integers(2**63 - 1))
        episode = collect_episode(self.env, L, self.epsilon, seed, self.collect_rng, _acting_view(c))
        self.buffer.insert(episode)
        L.t_env += episode.filled
        L.episodes += 1
        if self.buffer.can_sample(c.batch_size):
            batch = EpisodeBatch.from_episodes(self.buffer.sample(c.batch_size, self.sample_rng))
            td, online = teacher_update(batch, L, c)
            self.loss_sums["td"] += td
            self.loss_sums["td_n"] += 1
            if c.mode == "ctds":
                dl = student_update(batch, L, c, teacher_q=online)
                self.loss_sums["dl"] += dl
                self.loss_sums["dl_n"] += 1
            L.updates += 1
        if sync_due(L.episodes, c.target_update_interval):
            sync_targets(L)

    def evaluate_now(self) -> MetricsRow:
        c = self.config
        L = self.learner
        seeds = evaluation_seeds(self.seed, self.eval_index, c.eval_episodes)
        self.eval_index += 1
        wt = ws = wb = rt = rs = rb = None
        if c.mode == "ctds":
            wt, rt = evaluate_policy(self.eval_env, L.teacher, "perfect", seeds)
            ws, rs = evaluate_policy(self.eval_env, L.student, "partial", seeds)
        else:
            wb, rb = evaluate_policy(self.eval_env, L.teacher, "partial", seeds)
        sums = self.loss_sums
        row = MetricsRow(
            t_env=L.t_env,
            episodes=L.episodes,
            td_loss=sums["td"] / sums["td_n"] if sums["td_n"] else None,
            distill_loss=sums["dl"] / sums["dl_n"] if sums["dl_n"] else None,
            win_rate_teacher=wt,
            win_rate_student=ws,
            win_rate_baseline=wb,
            epsilon=self.epsilon,
            return_teacher=rt,
            return_student=rs,
            return_baseline=rb,
        )
        self.loss_sums = {"td": 0.0, "td_n": 0, "dl": 0.0, "dl_n": 0}
        self.rows.append(row)
        return row

    def run(self, t_max: int | None = None, final_eval: bool = True) -> Iterator[MetricsRow]:
        """Train until ``t_env >= t_max``, yielding a row at every evaluation point."""
        t_max = self.config.t_max if t_max is None else t_max
        L = self.learner
        while L.t_env < t_max:
            self.train_step()
            if L.t_env >= self.next_eval:
                while self.next_eval <= L.t_env:
                    self.next_eval += self.config.eval_interval
                yield self.evaluate_now()
        if final_eval and L.t_env > 0 and (not self.rows or self.rows[-1].t_env != L.t_env):
            yield self.evaluate_now()


def train(env_config, config: TrainConfig, seed: int) -> list[MetricsRow]:
    return list(Trainer(env_config, config, seed).run())
