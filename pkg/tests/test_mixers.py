import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctds.errors import ConfigurationError, ContractViolation
from ctds.gradcheck import check_case
from ctds.mixers import (
    Mixer,
    QMixMixer,
    QPlexMixer,
    VDNMixer,
    igm_check,
    joint_q_values,
    make_mixer,
    one_hot_joint,
    qmix_mix,
    qplex_mix,
    vdn_mix,
)
from ctds.numeric import ParameterSet, Tensor

finite = st.floats(-100, 100, allow_nan=False)


class NegatedSum(Mixer):
    """Non-monotone mixer used as a counterexample."""

    kind = "negated"

    def mix(self, q, state, v=None, actions=None):
        q = q if isinstance(q, Tensor) else Tensor(q)
        return q[:, 0] - q[:, 1]


def test_vdn_examples():
    assert vdn_mix(Tensor(np.zeros((1, 3)))).data[0] == 0.0
    assert vdn_mix(Tensor([[1.5, -0.5, 2.0]])).data[0] == 3.0


def test_vdn_gradient_is_one():
    p = ParameterSet()
    q = p.add("q", [[0.3, -1.0, 4.0]])
    vdn_mix(q).sum().backward()
    np.testing.assert_array_equal(q.grad, np.ones((1, 3)))


def test_vdn_igm_exhaustive():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert igm_check(VDNMixer(3, 0, 4), rng.normal(size=(3, 4)), np.zeros(1))


def test_qmix_zero_params_give_zero():
    m = QMixMixer(3, 4, 5, embed_dim=8, hyper_dim=16)
    for _, t in m.params.items():
        t.data[...] = 0.0
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert qmix_mix(rng.normal(size=3), rng.normal(size=4), m).item() == 0.0


def test_qmix_monotone_in_each_agent_value():
    rng = np.random.default_rng(1)
    m = QMixMixer(3, 4, 5, rng=rng)
    q = rng.normal(size=(200, 3))
    s = rng.normal(size=(200, 4))
    h = 1e-5
    for i in range(3):
        up, down = q.copy(), q.copy()
        up[:, i] += h
        down[:, i] -= h
        slope = (m.mix(up, s).data - m.mix(down, s).data) / (2 * h)
        assert slope.min() >= -1e-9


@pytest.mark.parametrize("n,a", [(2, 3), (2, 4), (3, 3), (3, 4)])
@pytest.mark.parametrize("kind", ["qmix", "qplex"])
def test_igm_random_params(kind, n, a):
    rng = np.random.default_rng([n, a, len(kind)])
    for _ in range(10):
        m = make_mixer(kind, n, 4, a, rng=rng)
        assert igm_check(m, rng.normal(size=(n, a)), rng.normal(size=4))


def test_igm_detects_non_monotone_mixer():
    tables = np.array([[0.0, 1.0], [1.0, 0.0]])
    values = joint_q_values(NegatedSum(2, 0, 2), tables, np.zeros(1))
    # Q_tot is q1 - q2: the best joint action is (1, 1), the per-agent argmaxes are (1, 0)
    assert int(np.argmax(values)) == 3
    assert not igm_check(NegatedSum(2, 0, 2), tables, np.zeros(1))


def test_igm_enumeration_guard():
    with pytest.raises(ConfigurationError):
        igm_check(VDNMixer(7, 0, 8), np.zeros((7, 8)), np.zeros(1))


def test_qplex_greedy_reduces_to_transformed_values():
    rng = np.random.default_rng(2)
    m = QPlexMixer(3, 4, 3, rng=rng)
    v = rng.normal(size=3)
    s = rng.normal(size=4)
    a = np.array([0, 2, 1])
    w, b, _ = m.components(s[None], one_hot_joint(a[None], 3))
    expected = float((w.data * v + b.data).sum())
    assert qplex_mix(v, v, s, a, m).item() == pytest.approx(expected, abs=1e-12)


def test_qplex_single_agent_identity():
    m = QPlexMixer(1, 2, 3, hyper_dim=4)
    for _, t in m.params.items():
        t.data[...] = 0.0
    # weight head output 1, lambda head output 1, bias 0 (the 1e-6 floor aside)
    m.params["weight.1.b"].data[...] = 1.0 - 1e-6
    m.params["lambda.1.b"].data[...] = 1.0 - 1e-6
    out = qplex_mix(np.array([-0.7]), np.array([0.4]), np.zeros(2), np.array([1]), m).item()
    assert out == pytest.approx(-0.7, abs=1e-12)


def test_qplex_rejects_q_above_v():
    m = QPlexMixer(2, 2, 3)
    with pytest.raises(ContractViolation):
        qplex_mix(np.array([1.0, 0.0]), np.array([0.5, 0.0]), np.zeros(2), np.array([0, 0]), m)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, 4, elements=finite), st.integers(0, 2**31))
def test_qplex_advantage_nonpositive_and_zero_at_greedy(tables, state, seed):
    m = QPlexMixer(2, 4, 3, rng=np.random.default_rng(seed))
    v = tables.max(axis=1)
    for joint in itertools.product(range(3), repeat=2):
        a = np.array(joint)
        q = tables[np.arange(2), a]
        adv = m.advantage(q[None], state[None], v[None], one_hot_joint(a[None], 3)).item()
        assert adv <= 1e-12
    greedy = tables.argmax(axis=1)
    adv = m.advantage(v[None], state[None], v[None], one_hot_joint(greedy[None], 3)).item()
    assert adv == 0.0


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite))
def test_vdn_linearity(x, y):
    s = vdn_mix(Tensor((x + y)[None])).item()
    assert s == pytest.approx(vdn_mix(Tensor(x[None])).item() + vdn_mix(Tensor(y[None])).item(), abs=1e-9)


@pytest.mark.parametrize("name", ["vdn", "qmix", "qplex"])
def test_mixer_gradients(name):
    assert max(check_case(name, k) for k in range(20)) < 1e-4


def test_unknown_mixer_rejected():
    with pytest.raises(ConfigurationError):
        make_mixer("qtran", 2, 2, 2)


def test_mixer_copy_is_independent():
    m = QMixMixer(2, 3, 4, rng=np.random.default_rng(0))
    c = m.copy()
    c.params["hyper_b1.b"].data[...] += 1.0
    assert not np.array_equal(m.params["hyper_b1.b"].data, c.params["hyper_b1.b"].data)
