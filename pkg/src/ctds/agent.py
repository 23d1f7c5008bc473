"""Recurrent per-agent Q-network: fc1 -> relu -> GRU -> fc2.

One network object is shared by all agents of a module; agents are batched
along the leading axis and told apart by the identity one-hot that the
environment appends to every observation.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .numeric import ParameterSet, Tensor, activation, affine, as_tensor, gru_cell, init_uniform


class AgentNetwork:
    def __init__(
        self,
        input_dim: int,
        n_actions: int,
        hidden_dim: int = 64,
        rng: np.random.Generator | None = None,
        params: ParameterSet | None = None,
    ) -> None:
        self.input_dim = input_dim
        self.n_actions = n_actions
        self.hidden_dim = hidden_dim
        if params is not None:
            self.params = params
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        h = hidden_dim
        p = ParameterSet()
        p.add("fc1.w", init_uniform(rng, (h, input_dim), input_dim))
        p.add("fc1.b", np.zeros(h))
        p.add("gru.w_x", init_uniform(rng, (3 * h, h), h))
        p.add("gru.w_h", init_uniform(rng, (3 * h, h), h))
        p.add("gru.b", np.zeros(3 * h))
        p.add("fc2.w", init_uniform(rng, (n_actions, h), h))
        p.add("fc2.b", np.zeros(n_actions))
        self.params = p

    def init_hidden(self, n_agents: int) -> np.ndarray:
        return np.zeros((n_agents, self.hidden_dim))

    def forward(self, inputs, hidden) -> tuple[Tensor, Tensor]:
        """Q-values for every action and the next hidden state."""
        x = as_tensor(inputs)
        if x.shape[-1] != self.input_dim:
            raise ConfigurationError(f"agent input width {x.shape[-1]} != {self.input_dim}")
        p = self.params
        x = activation("relu", affine(x, p["fc1.w"], p["fc1.b"]))
        h = gru_cell(x, as_tensor(hidden), p)
        q = affine(h, p["fc2.w"], p["fc2.b"])
        return q, h

    def copy(self) -> AgentNetwork:
        return AgentNetwork(self.input_dim, self.n_actions, self.hidden_dim, params=self.params.copy())


def agent_forward(obs_input, hidden, net: AgentNetwork) -> tuple[Tensor, Tensor]:
    return net.forward(obs_input, hidden)


def init_hidden(n_agents: int, hidden_dim: int = 64) -> np.ndarray:
    return np.zeros((n_agents, hidden_dim))


def masked_argmax(q_values, mask) -> np.ndarray | int:
    """Greedy action over available entries of the last axis; ties go to the lowest index."""
    q = np.asarray(q_values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if q.shape != mask.shape:
        raise ConfigurationError(f"q {q.shape} and mask {mask.shape} differ in shape")
    if not mask.any(axis=-1).all():
        raise ContractViolation("masked_argmax: no available action")
    out = np.where(mask, q, -np.inf).argmax(axis=-1)
    return int(out) if out.ndim == 0 else out
