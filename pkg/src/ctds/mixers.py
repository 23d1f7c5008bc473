"""Mixing networks that combine per-agent Q-values into a joint value.

All mixers take a batch of chosen-action values ``q`` of shape ``(B, N)`` and
global states of shape ``(B, S)`` and return ``(B,)``. QPLEX additionally
needs each agent's greedy value ``v`` and the one-hot joint action.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .numeric import (
    ParameterSet,
    Tensor,
    activation,
    affine,
    as_tensor,
    concat,
    einsum,
    init_uniform,
    no_grad,
)

MIXERS = ("vdn", "qmix", "qplex")
POSITIVE_FLOOR = 1e-6
IGM_ENUMERATION_LIMIT = 10**6


def _layer(p: ParameterSet, rng: np.random.Generator, name: str, n_out: int, n_in: int) -> None:
    p.add(f"{name}.w", init_uniform(rng, (n_out, n_in), n_in))
    p.add(f"{name}.b", np.zeros(n_out))


def _apply(p: ParameterSet, name: str, x: Tensor) -> Tensor:
    return affine(x, p[f"{name}.w"], p[f"{name}.b"])


def _mlp2(p: ParameterSet, name: str, x: Tensor) -> Tensor:
    return _apply(p, f"{name}.1", activation("relu", _apply(p, f"{name}.0", x)))


class Mixer:
    kind = "base"
    needs_greedy = False

    def __init__(self, n_agents: int, state_dim: int, n_actions: int) -> None:
        self.n_agents = n_agents
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.params = ParameterSet()

    def mix(self, q, state, v=None, actions=None) -> Tensor:
        raise NotImplementedError

    def __call__(self, q, state, v=None, actions=None) -> Tensor:
        return self.mix(q, state, v=v, actions=actions)

    def copy(self) -> Mixer:
        other = object.__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.params = self.params.copy()
        return other


class VDNMixer(Mixer):
    kind = "vdn"

    def mix(self, q, state=None, v=None, actions=None) -> Tensor:
        return as_tensor(q).sum(axis=-1)


class QMixMixer(Mixer):
    """Monotonic mixer whose weights come from state-conditioned hypernetworks."""

    kind = "qmix"

    def __init__(
        self,
        n_agents: int,
        state_dim: int,
        n_actions: int,
        embed_dim: int = 32,
        hyper_dim: int = 64,
        rng: np.random.Generator | None = None,
    ) -> None:
        super().__init__(n_agents, state_dim, n_actions)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.embed_dim = embed_dim
        p = self.params
        _layer(p, rng, "hyper_w1.0", hyper_dim, state_dim)
        _layer(p, rng, "hyper_w1.1", n_agents * embed_dim, hyper_dim)
        _layer(p, rng, "hyper_b1", embed_dim, state_dim)
        _layer(p, rng, "hyper_w2.0", hyper_dim, state_dim)
        _layer(p, rng, "hyper_w2.1", embed_dim, hyper_dim)
        _layer(p, rng, "value.0", embed_dim, state_dim)
        _layer(p, rng, "value.1", 1, embed_dim)

    def mix(self, q, state, v=None, actions=None) -> Tensor:
        q, s = as_tensor(q), as_tensor(state)
        batch = q.shape[0]
        p = self.params
        w1 = activation("abs", _mlp2(p, "hyper_w1", s)).reshape(batch, self.n_agents, self.embed_dim)
        b1 = _apply(p, "hyper_b1", s)
        hidden = activation("elu", einsum("bn,bne->be", q, w1) + b1)
        w2 = activation("abs", _mlp2(p, "hyper_w2", s))
        value = _mlp2(p, "value", s).reshape(batch)
        return (hidden * w2).sum(axis=-1) + value


class QPlexMixer(Mixer):
    """Transformed values plus a non-positive, positively weighted advantage sum.

    ``Q_tot = sum_i [w_i(s) v_i + b_i(s)] + sum_i lam_i(s, a) w_i(s) (q_i - v_i)``
    with ``w`` and ``lam`` kept strictly positive by ``abs(.) + 1e-6``.
    """

    kind = "qplex"
    needs_greedy = True

    def __init__(
        self,
        n_agents: int,
        state_dim: int,
        n_actions: int,
        hyper_dim: int = 64,
        rng: np.random.Generator | None = None,
    ) -> None:
        super().__init__(n_agents, state_dim, n_actions)
        rng = rng if rng is not None else np.random.default_rng(0)
        p = self.params
        _layer(p, rng, "weight.0", hyper_dim, state_dim)
        _layer(p, rng, "weight.1", n_agents, hyper_dim)
        _layer(p, rng, "bias.0", hyper_dim, state_dim)
        _layer(p, rng, "bias.1", n_agents, hyper_dim)
        _layer(p, rng, "lambda.0", hyper_dim, state_dim + n_agents * n_actions)
        _layer(p, rng, "lambda.1", n_agents, hyper_dim)

    def components(self, state, actions) -> tuple[Tensor, Tensor, Tensor]:
        s = as_tensor(state)
        p = self.params
        w = activation("abs", _mlp2(p, "weight", s)) + POSITIVE_FLOOR
        b = _mlp2(p, "bias", s)
        lam = activation("abs", _mlp2(p, "lambda", concat([s, as_tensor(actions)], axis=-1))) + POSITIVE_FLOOR
        return w, b, lam

    def advantage(self, q, state, v, actions) -> Tensor:
        q, v = as_tensor(q), as_tensor(v)
        w, _, lam = self.components(state, actions)
        return (lam * w * (q - v)).sum(axis=-1)

    def mix(self, q, state, v=None, actions=None) -> Tensor:
        if v is None or actions is None:
            raise ContractViolation("qplex mixing needs greedy values v and the joint action")
        q, v = as_tensor(q), as_tensor(v)
        if np.any(q.data > v.data):
            raise ContractViolation("qplex: chosen-action value exceeds the greedy value")
        w, b, lam = self.components(state, actions)
        return (w * v + b).sum(axis=-1) + (lam * w * (q - v)).sum(axis=-1)


def make_mixer(kind: str, n_agents: int, state_dim: int, n_actions: int, rng=None, **kwargs) -> Mixer:
    if kind == "vdn":
        return VDNMixer(n_agents, state_dim, n_actions)
    if kind == "qmix":
        return QMixMixer(n_agents, state_dim, n_actions, rng=rng, **kwargs)
    if kind == "qplex":
        return QPlexMixer(n_agents, state_dim, n_actions, rng=rng, **kwargs)
    raise ConfigurationError(f"unknown mixer {kind!r}; expected one of {MIXERS}")


def one_hot_joint(actions: np.ndarray, n_actions: int) -> np.ndarray:
    """``(..., N)`` integer actions to ``(..., N * n_actions)`` concatenated one-hots."""
    actions = np.asarray(actions, dtype=np.int64)
    out = np.zeros(actions.shape + (n_actions,))
    np.put_along_axis(out, actions[..., None], 1.0, axis=-1)
    return out.reshape(actions.shape[:-1] + (actions.shape[-1] * n_actions,))


def _batch(x) -> Tensor:
    x = as_tensor(x)
    return x.reshape(1, -1) if x.data.ndim == 1 else x


def vdn_mix(q, state=None) -> Tensor:
    return VDNMixer(np.shape(as_tensor(q).data)[-1], 0, 0).mix(q, state)


def qmix_mix(q, state, mixer: QMixMixer) -> Tensor:
    out = mixer.mix(_batch(q), _batch(state))
    return out if as_tensor(q).data.ndim > 1 else out.reshape(())


def qplex_mix(q, v, state, joint_action, mixer: QPlexMixer) -> Tensor:
    q = as_tensor(q)
    actions = one_hot_joint(np.asarray(joint_action), mixer.n_actions)
    out = mixer.mix(_batch(q), _batch(state), v=_batch(v), actions=_batch(actions))
    return out if q.data.ndim > 1 else out.reshape(())


def joint_q_values(mixer: Mixer, tables: np.ndarray, state: np.ndarray, chunk: int = 1 << 15) -> np.ndarray:
    """Q_tot for every joint action in lexicographic order."""
    tables = np.asarray(tables, dtype=np.float64)
    n_agents, n_actions = tables.shape
    if n_actions**n_agents > IGM_ENUMERATION_LIMIT:
        raise ConfigurationError(
            f"joint action space {n_actions}^{n_agents} exceeds the enumeration limit {IGM_ENUMERATION_LIMIT}"
        )
    joint = np.array(list(itertools.product(range(n_actions), repeat=n_agents)), dtype=np.int64)
    greedy = tables.max(axis=1)
    state = np.asarray(state, dtype=np.float64).reshape(-1)
    out = np.empty(len(joint))
    with no_grad():
        for start in range(0, len(joint), chunk):
            a = joint[start : start + chunk]
            q = tables[np.arange(n_agents), a]
            s = np.broadcast_to(state, (len(a), state.size))
            v = np.broadcast_to(greedy, q.shape)
            out[start : start + len(a)] = mixer.mix(q, s, v=v, actions=one_hot_joint(a, n_actions)).data
    return out


def igm_check(mixer: Mixer, agent_q_tables, state) -> bool:
    """True when the joint argmax of Q_tot equals the tuple of per-agent argmaxes."""
    tables = np.asarray(agent_q_tables, dtype=np.float64)
    values = joint_q_values(mixer, tables, state)
    n_agents, n_actions = tables.shape
    best = int(np.argmax(values))
    joint_best = np.unravel_index(best, (n_actions,) * n_agents)
    return tuple(int(a) for a in joint_best) == tuple(int(a) for a in tables.argmax(axis=1))
