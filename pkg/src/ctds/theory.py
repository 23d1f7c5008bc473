"""Finite-domain check that distillation targets the conditional mean of the teacher.

A problem is a table ``f_T[tau, tau_star]`` together with a distribution
``p(tau_star)`` independent of ``tau``. The student is a free table
``f_S[tau]``. Minimising ``E[(f_S(tau) - f_T(tau, tau_star))^2]`` drives each
entry to ``sum_j p_j f_T(tau, j)``, which :func:`exact_expectation` computes
directly.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class FiniteDistillationProblem:
    teacher: np.ndarray  # (n_tau, n_star)
    p_star: np.ndarray  # (n_star,)

    def __post_init__(self) -> None:
        t = np.asarray(self.teacher, dtype=np.float64)
        p = np.asarray(self.p_star, dtype=np.float64)
        object.__setattr__(self, "teacher", t)
        object.__setattr__(self, "p_star", p)
        if t.ndim != 2 or p.ndim != 1 or t.shape[1] != p.size or p.size == 0 or t.shape[0] == 0:
            raise ConfigurationError(f"teacher table {t.shape} does not match distribution {p.shape}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigurationError("p_star must be nonnegative and sum to 1")
        if not np.all(np.isfinite(t)):
            raise ConfigurationError("teacher table must be finite")

    @property
    def n_tau(self) -> int:
        return self.teacher.shape[0]

    @property
    def n_star(self) -> int:
        return self.teacher.shape[1]

    @classmethod
    def random(cls, rng: np.random.Generator, n_tau: int, n_star: int, scale: float = 1.0):
        p = rng.dirichlet(np.ones(n_star))
        p = p / p.sum()
        return cls(rng.uniform(-scale, scale, size=(n_tau, n_star)), p)


def exact_expectation(problem: FiniteDistillationProblem) -> np.ndarray:
    """``E_{tau_star}[f_T(tau, tau_star)]`` for every ``tau``."""
    return problem.teacher @ problem.p_star


def objective(problem: FiniteDistillationProblem, student: np.ndarray) -> float:
    """``E_{tau ~ U, tau_star ~ p}[(f_S(tau) - f_T(tau, tau_star))^2]``."""
    diff = np.asarray(student)[:, None] - problem.teacher
    return float(np.mean((diff * diff) @ problem.p_star))


def objective_decomposition(problem: FiniteDistillationProblem, student: np.ndarray) -> tuple[float, float]:
    """Split the objective into the distance to the conditional mean and the irreducible variance."""
    mean = exact_expectation(problem)
    var = ((problem.teacher - mean[:, None]) ** 2) @ problem.p_star
    return float(np.mean((np.asarray(student) - mean) ** 2)), float(np.mean(var))


def sgd_distill(
    problem: FiniteDistillationProblem,
    student: np.ndarray | None = None,
    steps: int = 200_000,
    lr_scale: float = 0.5,
    seed: int = 0,
    sampler: str = "quasi",
) -> np.ndarray:
    """Tabular SGD on the squared distillation error.

    Each step draws ``tau`` uniformly and ``tau_star ~ p``, then moves the
    ``tau`` entry by ``-lr * 2 * (f_S(tau) - f_T(tau, tau_star))`` with
    ``lr = lr_scale / (k + 1)``, ``k`` being the number of earlier updates
    of that entry. With ``lr_scale = 0.5`` the entry is the running mean of
    its samples.

    ``sampler="iid"`` draws ``tau_star`` independently. ``sampler="quasi"``
    feeds each entry a randomly shifted golden-ratio sequence through the
    inverse CDF of ``p``: every draw is still distributed as ``p``, but the
    empirical frequencies track ``p`` at rate ~1/n instead of 1/sqrt(n).
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    if lr_scale <= 0:
        raise ConfigurationError("lr_scale must be positive")
    if sampler not in ("iid", "quasi"):
        raise ConfigurationError(f"unknown sampler {sampler!r}")
    rng = np.random.default_rng(seed)
    f = [0.0] * problem.n_tau if student is None else [float(x) for x in student]
    cdf = np.cumsum(problem.p_star).tolist()
    last = problem.n_star - 1
    taus = rng.integers(problem.n_tau, size=steps).tolist()
    if sampler == "iid":
        draws = rng.random(steps).tolist()
    else:
        offsets = rng.random(problem.n_tau).tolist()
    visits = [0] * problem.n_tau
    teacher = problem.teacher.tolist()
    golden = float(GOLDEN)
    for step in range(steps):
        tau = taus[step]
        k = visits[tau]
        u = (offsets[tau] + golden * k) % 1.0 if sampler == "quasi" else draws[step]
        star = min(bisect.bisect_right(cdf, u), last)
        lr = lr_scale / (k + 1)
        f[tau] -= lr * 2.0 * (f[tau] - teacher[tau][star])
        visits[tau] = k + 1
    return np.array(f)


def gradient_identity_check(problem: FiniteDistillationProblem, student_point: np.ndarray) -> float:
    """Largest gap between the two sides of the gradient identity, over all ``tau``.

    Left: the expectation over ``tau_star`` of the per-sample gradient
    ``2 (f_S(tau) - f_T(tau, tau_star))``, summed sample by sample. Right:
    the gradient of ``(f_S(tau) - E f_T(tau, .))^2``.
    """
    f = np.asarray(student_point, dtype=np.float64)
    lhs = np.zeros(problem.n_tau)
    for j, pj in enumerate(problem.p_star):
        lhs += pj * 2.0 * (f - problem.teacher[:, j])
    rhs = 2.0 * (f - exact_expectation(problem))
    return float(np.max(np.abs(lhs - rhs)))


def sup_error(problem: FiniteDistillationProblem, student: np.ndarray) -> float:
    return float(np.max(np.abs(np.asarray(student) - exact_expectation(problem))))


def theorem_report(n_problems: int = 100, max_size: int = 20, steps: int = 200_000, seed: int = 0) -> dict:
    """Run the identity check and the SGD convergence check on random problems."""
    rng = np.random.default_rng(seed)
    worst_identity = 0.0
    worst_sup = 0.0
    for k in range(n_problems):
        prob = FiniteDistillationProblem.random(
            rng, int(rng.integers(1, max_size + 1)), int(rng.integers(1, max_size + 1))
        )
        worst_identity = max(worst_identity, gradient_identity_check(prob, rng.normal(size=prob.n_tau)))
        fitted = sgd_distill(prob, steps=steps, seed=int(rng.integers(2**31)))
        worst_sup = max(worst_sup, sup_error(prob, fitted))
    return {
        "problems": n_problems,
        "max_identity_discrepancy": worst_identity,
        "max_sup_error": worst_sup,
        "steps": steps,
    }
