"""Finite-difference checks for every differentiable component, on small random instances."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .agent import AgentNetwork
from .envs import EnvConfig, make_env
from .errors import NumericError
from .learner import EpisodeBatch, LearnerState, TrainConfig, collect_episode, td_loss, unroll
from .mixers import QMixMixer, QPlexMixer, VDNMixer, one_hot_joint
from .numeric import ACTIVATIONS, ParameterSet, Tensor, activation, affine, grad_check, gru_cell, init_uniform, no_grad, watch_kinks

Case = tuple[Callable[[ParameterSet], Tensor], ParameterSet]


def _weighted_sum(out: Tensor, c: np.ndarray) -> Tensor:
    return (out * c).sum()


def _random_biases(params: ParameterSet, rng: np.random.Generator) -> None:
    """Zero biases hide their own gradient paths; draw them at the weight scale instead."""
    for name, t in params.items():
        if name.endswith(".b"):
            t.data[...] = rng.uniform(-0.3, 0.3, size=t.shape)


def affine_case(rng: np.random.Generator) -> Case:
    p = ParameterSet()
    p.add("x", rng.normal(size=3))
    p.add("w", rng.normal(size=(2, 3)))
    p.add("b", rng.normal(size=2))
    c = rng.normal(size=2)
    return (lambda q: _weighted_sum(affine(q["x"], q["w"], q["b"]), c)), p


def activation_case(kind: str) -> Callable[[np.random.Generator], Case]:
    def build(rng: np.random.Generator) -> Case:
        p = ParameterSet()
        p.add("x", rng.normal(size=6))
        c = rng.normal(size=6)
        return (lambda q: _weighted_sum(activation(kind, q["x"]), c)), p

    return build


def gru_case(rng: np.random.Generator, d_in: int = 3, d_h: int = 4) -> Case:
    p = ParameterSet()
    p.add("x", rng.normal(size=d_in))
    p.add("h", rng.uniform(-1.0, 1.0, size=d_h))
    p.add("gru.w_x", init_uniform(rng, (3 * d_h, d_in), d_in))
    p.add("gru.w_h", init_uniform(rng, (3 * d_h, d_h), d_h))
    p.add("gru.b", init_uniform(rng, (3 * d_h,), d_h))
    c = rng.normal(size=d_h)
    return (lambda q: _weighted_sum(gru_cell(q["x"], q["h"], q), c)), p


def agent_unroll_case(rng: np.random.Generator, steps: int = 3) -> Case:
    net = AgentNetwork(5, 3, hidden_dim=4, rng=rng)
    _random_biases(net.params, rng)
    obs = rng.normal(size=(2, steps, 2, 5))
    c = rng.normal(size=(steps, 2, 2, 3))

    def f(_: ParameterSet) -> Tensor:
        total = None
        for t, q in enumerate(unroll(net, obs)):
            term = _weighted_sum(q, c[t])
            total = term if total is None else total + term
        return total

    return f, net.params


def qmix_case(rng: np.random.Generator) -> Case:
    mixer = QMixMixer(3, 4, 5, embed_dim=3, hyper_dim=5, rng=rng)
    p = mixer.params.merged(ParameterSet(), "")
    p.add("q", rng.normal(size=(2, 3)))
    s = rng.normal(size=(2, 4))
    c = rng.normal(size=2)
    return (lambda q: _weighted_sum(mixer.mix(q["q"], s), c)), p


def qplex_case(rng: np.random.Generator) -> Case:
    n, a = 3, 4
    mixer = QPlexMixer(n, 4, a, hyper_dim=5, rng=rng)
    p = mixer.params.merged(ParameterSet(), "")
    v = rng.normal(size=(2, n))
    p.add("v", v)
    p.add("gap", rng.uniform(0.1, 1.0, size=(2, n)))
    s = rng.normal(size=(2, 4))
    actions = one_hot_joint(rng.integers(a, size=(2, n)), a)
    c = rng.normal(size=2)

    def f(q: ParameterSet) -> Tensor:
        chosen = q["v"] - q["gap"]
        return _weighted_sum(mixer.mix(chosen, s, v=q["v"], actions=actions), c)

    return f, p


def vdn_case(rng: np.random.Generator) -> Case:
    p = ParameterSet()
    p.add("q", rng.normal(size=(2, 3)))
    c = rng.normal(size=2)
    return (lambda q: _weighted_sum(VDNMixer(3, 0, 0).mix(q["q"]), c)), p


def td_loss_case(rng: np.random.Generator, mixer: str = "qmix") -> Case:
    env = make_env(EnvConfig(grid_size=4, n_agents=2, max_steps=4, sight_range=1, perfect_sight_range=2))
    config = TrainConfig(mixer=mixer, hidden_dim=4, mixer_embed_dim=3, hypernet_dim=4)
    learner = LearnerState.create(env, config, rng)
    _random_biases(learner.teacher_params, rng)
    # a different target network makes the bootstrapped values nontrivial
    targets = learner.target_teacher.params.merged(learner.target_mixer.params, "mixer.")
    for _, t in targets.items():
        t.data[...] += rng.normal(scale=0.3, size=t.shape)
    episode = collect_episode(env, learner, 1.0, int(rng.integers(2**31)), rng)
    batch = EpisodeBatch.from_episodes([episode])
    return (lambda _: td_loss(batch, learner, gamma=config.gamma)[0]), learner.teacher_params


CASES: dict[str, Callable[[np.random.Generator], Case]] = {
    "affine": affine_case,
    **{f"activation.{k}": activation_case(k) for k in ACTIVATIONS},
    "gru_cell": gru_case,
    "agent_unroll_3": agent_unroll_case,
    "vdn": vdn_case,
    "qmix": qmix_case,
    "qplex": qplex_case,
    "td_loss": td_loss_case,
}
# composites are checked on a random subset of entries per draw
ENTRY_LIMITS = {"agent_unroll_3": 40, "qmix": 40, "qplex": 40, "td_loss": 40}


KINK_MARGIN = 100.0
MAX_REDRAWS = 20


def draw_case(name: str, seed: int, step: float = 1e-5) -> tuple[Case, np.random.Generator]:
    """Instance of ``name`` whose relu/abs inputs all stay ``KINK_MARGIN * step`` away from 0.

    Central differences straddling a kink measure neither one-sided slope, so
    such draws are replaced by the next one from the same stream.
    """
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    for _ in range(MAX_REDRAWS):
        f, params = CASES[name](rng)
        with watch_kinks() as monitor, no_grad():
            f(params)
        if monitor.closest > KINK_MARGIN * step:
            return (f, params), rng
    raise NumericError(f"{name}: no kink-free draw in {MAX_REDRAWS} attempts")


def check_case(name: str, seed: int, step: float = 1e-5) -> float:
    (f, params), rng = draw_case(name, seed, step)
    return grad_check(f, params, step=step, entries=ENTRY_LIMITS.get(name), rng=rng)


def run_gradchecks(draws: int = 100, seed: int = 0, names=None) -> dict[str, float]:
    """Worst relative error per component over ``draws`` random instances."""
    worst = {}
    for name in names or CASES:
        worst[name] = max(check_case(name, seed * 1_000_003 + k) for k in range(draws))
    return worst

