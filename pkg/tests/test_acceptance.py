"""Acceptance criteria at their pinned tolerances, one PASS/FAIL line each.

The Combat studies train for real and take roughly an hour and a half on a
single core; everything else finishes in a few minutes.
"""

import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from ctds.checkpoint import resume_trainer, save_checkpoint
from ctds.config import parse_config
from ctds.gradcheck import CASES, run_gradchecks
from ctds.harness import metrics_csv, run_experiment, sight_sweep
from ctds.learner import EXECUTION_AUDIT, Trainer
from ctds.mixers import QMixMixer, QPlexMixer, VDNMixer, igm_check, one_hot_joint
from ctds.theory import theorem_report

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
# final win rates of the Combat study, shared with the audit check
COMBAT: dict[str, dict] = {}


def line(report, number: int, ok: bool, detail: str) -> None:
    report(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")


# ---------------------------------------------------------------------------
# 1. gradients


def test_criterion_1_gradients(report):
    start = time.perf_counter()
    worst = run_gradchecks(draws=100, seed=0)
    elapsed = time.perf_counter() - start
    expected = {"affine", "gru_cell", "agent_unroll_3", "qmix", "qplex", "td_loss"} | {
        k for k in CASES if k.startswith("activation.")
    }
    ok = expected <= worst.keys() and max(worst.values()) < 1e-4 and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    line(report, 1, ok, f"max rel. error < 1e-4 over 100 draws each ({detail}); {elapsed:.0f}s < 120s")
    assert ok


# ---------------------------------------------------------------------------
# 2. IGM and monotonicity


def qmix_min_slope(mixer: QMixMixer, rng: np.random.Generator, points: int = 1000, h: float = 1e-5) -> float:
    q = rng.normal(size=(points, mixer.n_agents))
    s = rng.normal(size=(points, mixer.state_dim))
    worst = np.inf
    for i in range(mixer.n_agents):
        up, down = q.copy(), q.copy()
        up[:, i] += h
        down[:, i] -= h
        worst = min(worst, float(((mixer.mix(up, s).data - mixer.mix(down, s).data) / (2 * h)).min()))
    return worst


def qplex_advantage_extremes(mixer: QPlexMixer, tables: np.ndarray, state: np.ndarray) -> tuple[float, float]:
    n, a = tables.shape
    joint = np.array(list(itertools.product(range(a), repeat=n)))
    q = tables[np.arange(n), joint]
    v = np.broadcast_to(tables.max(axis=1), q.shape)
    s = np.broadcast_to(state, (len(joint), state.size))
    adv = mixer.advantage(q, s, v, one_hot_joint(joint, a)).data
    greedy = tables.argmax(axis=1)
    at_greedy = mixer.advantage(v[:1], s[:1], v[:1], one_hot_joint(greedy[None], a)).data[0]
    return float(adv.max()), float(at_greedy)


def test_criterion_2_igm(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    state_dim, draws = 6, 100
    min_slope = np.inf
    igm_failures = {"vdn": 0, "qmix": 0, "qplex": 0}
    adv_max, greedy_adv = -np.inf, 0.0
    for _ in range(draws):
        min_slope = min(min_slope, qmix_min_slope(QMixMixer(3, state_dim, 4, rng=rng), rng))
    for n, a in itertools.product((2, 3), (3, 4)):
        for _ in range(draws):
            tables = rng.normal(size=(n, a))
            s = rng.normal(size=state_dim)
            qplex = QPlexMixer(n, state_dim, a, rng=rng)
            mixers = {"vdn": VDNMixer(n, state_dim, a), "qmix": QMixMixer(n, state_dim, a, rng=rng), "qplex": qplex}
            for kind, m in mixers.items():
                igm_failures[kind] += not igm_check(m, tables, s)
            hi, at_greedy = qplex_advantage_extremes(qplex, tables, s)
            adv_max = max(adv_max, hi)
            greedy_adv = max(greedy_adv, abs(at_greedy))
    elapsed = time.perf_counter() - start
    ok = (
        min_slope >= -1e-9
        and not any(igm_failures.values())
        and adv_max <= 1e-12
        and greedy_adv == 0.0
        and elapsed < 120
    )
    line(
        report, 2, ok,
        f"min dQtot/dq_i {min_slope:.2e} >= -1e-9; IGM failures {igm_failures}; "
        f"QPLEX max advantage {adv_max:.1e} <= 1e-12, |advantage at greedy| {greedy_adv}; {elapsed:.0f}s < 120s",
    )
    assert ok


# ---------------------------------------------------------------------------
# 3. distillation theorem


def test_criterion_3_theorem(report):
    start = time.perf_counter()
    rep = theorem_report(n_problems=100, max_size=20, steps=200_000, seed=0)
    elapsed = time.perf_counter() - start
    ok = rep["max_identity_discrepancy"] <= 1e-12 and rep["max_sup_error"] < 1e-3 and elapsed < 60
    line(
        report, 3, ok,
        f"identity {rep['max_identity_discrepancy']:.1e} <= 1e-12; SGD sup error {rep['max_sup_error']:.1e} "
        f"< 1e-3 with 2e5 samples, lr 0.5/(k+1); {elapsed:.0f}s < 60s",
    )
    assert ok


# ---------------------------------------------------------------------------
# 4. matrix game oracle


def test_criterion_4_matrix_game(report, tmp_path):
    config = parse_config(CONFIGS / "matrix.toml", {"experiment.out_dir": str(tmp_path)})
    start = time.perf_counter()
    res = run_experiment(config)
    elapsed = time.perf_counter() - start
    optimal = [
        s for s, row in res.final_rows().items() if row.return_teacher == 8.0 and row.return_student == 8.0
    ]
    finite = all(
        r.td_loss is None or math.isfinite(r.td_loss) for rows in res.rows.values() for r in rows
    ) and not res.failures
    ok = len(optimal) >= 4 and finite and elapsed < 300
    line(
        report, 4, ok,
        f"greedy teacher and student return 8.0 in {len(optimal)}/5 seeds (need 4); losses finite {finite}; "
        f"{elapsed:.0f}s < 300s",
    )
    assert ok


# ---------------------------------------------------------------------------
# 5. Combat desk-scale study


def final_mean(res, column: str) -> float:
    return float(np.mean([getattr(r, column) for r in res.final_rows().values()]))


def all_finite(res) -> bool:
    values = [v for rows in res.rows.values() for r in rows for v in (r.td_loss, r.distill_loss) if v is not None]
    return not res.failures and all(math.isfinite(v) for v in values)


def test_criterion_5_combat(report, tmp_path):
    base = parse_config(CONFIGS / "combat_desk.toml", {"experiment.out_dir": str(tmp_path)})
    start = time.perf_counter()
    ctds = run_experiment(base.with_train(mode="ctds"), tmp_path / "ctds")
    ctde = run_experiment(base.with_train(mode="ctde"), tmp_path / "ctde")
    elapsed = time.perf_counter() - start
    teacher = final_mean(ctds, "win_rate_teacher")
    student = final_mean(ctds, "win_rate_student")
    baseline = final_mean(ctde, "win_rate_baseline")
    COMBAT.update(teacher=teacher, student=student, baseline=baseline)
    checks = {
        "i": teacher >= student - 0.05,
        "ii": student >= baseline - 0.05,
        "iii": all_finite(ctds) and all_finite(ctde),
    }
    ok = all(checks.values()) and elapsed <= 3 * 3600
    line(
        report, 5, ok,
        f"mean final win rates teacher {teacher:.3f}, student {student:.3f}, baseline {baseline:.3f}; "
        f"(i) teacher >= student - 0.05 {checks['i']}; (ii) student >= baseline - 0.05 {checks['ii']}; "
        f"(iii) losses finite {checks['iii']}; {elapsed / 60:.0f} min <= 180 min",
    )
    report(f"       criterion 5 expectation (reported only): student strictly above baseline: {student > baseline}")
    for mode, res in (("ctds", ctds), ("ctde", ctde)):
        for seed, rows in res.rows.items():
            curve = " ".join(
                f"{r.t_env}:{r.win_rate_teacher if mode == 'ctds' else r.win_rate_baseline}/"
                f"{r.win_rate_student if mode == 'ctds' else '-'}" for r in rows
            )
            report(f"       {mode} seed {seed} t_env:win(teacher or baseline)/win(student) {curve}")
    assert ok


# ---------------------------------------------------------------------------
# 6. sight-range ablation


def test_criterion_6_sight_sweep(report, tmp_path):
    base = parse_config(
        CONFIGS / "combat_desk.toml",
        {"experiment.out_dir": str(tmp_path), "experiment.seeds": [0, 1], "train.t_max": 50_000},
    )
    start = time.perf_counter()
    table = sight_sweep(base, [1, 2, 4])
    elapsed = time.perf_counter() - start
    med = {(r["sight_range"], r["method"]): r["final_win_rate_median"] for r in table}
    base_curve = [med[(r, "baseline")] for r in (1, 2, 4)]
    gaps = {r: med[(r, "student")] - med[(r, "baseline")] for r in (1, 2, 4)}
    non_decreasing = all(b >= a - 0.05 for a, b in zip(base_curve, base_curve[1:]))
    gap_largest_at_1 = gaps[1] >= max(gaps[2], gaps[4])
    ok = len(table) == 9
    line(
        report, 6, ok,
        f"sweep over sight {{1, 2, 4}}, 50k steps, 2 seeds produced {len(table)} rows in {elapsed / 60:.0f} min; "
        f"trend (reported): baseline non-decreasing within 0.05 {non_decreasing}, "
        f"student - baseline gap largest at sight 1 {gap_largest_at_1}",
    )
    for r in table:
        report(
            f"       sight {r['sight_range']} {r['method']:8s} median {r['final_win_rate_median']:.3f} "
            f"[{r['final_win_rate_min']:.3f}, {r['final_win_rate_max']:.3f}]"
        )
    assert ok


# ---------------------------------------------------------------------------
# 7. reproducibility and persistence


def test_criterion_7_reproducibility(report, tmp_path):
    base = parse_config(
        CONFIGS / "combat_desk.toml",
        {"experiment.out_dir": str(tmp_path), "experiment.seeds": [7], "train.t_max": 10_000,
         "train.eval_interval": 2_000},
    )
    start = time.perf_counter()
    run_experiment(base, tmp_path / "a")
    run_experiment(base, tmp_path / "b")
    identical = (tmp_path / "a" / "seed_7.csv").read_bytes() == (tmp_path / "b" / "seed_7.csv").read_bytes()

    straight = (tmp_path / "a" / "seed_7.csv").read_text()
    first = Trainer(base.env_config, base.train, 7)
    list(first.run(t_max=5_000, final_eval=False))
    save_checkpoint(first, tmp_path / "half.ckpt")
    second = resume_trainer(tmp_path / "half.ckpt")
    list(second.run())
    resumed = metrics_csv(second.rows)
    same_final = resumed.splitlines()[-1] == straight.splitlines()[-1]
    elapsed = time.perf_counter() - start
    ok = identical and same_final and resumed == straight and elapsed < 600
    line(
        report, 7, ok,
        f"rerun CSV byte-identical {identical}; 5k + resume + 5k final row equals the 10k run {same_final} "
        f"(whole CSV equal {resumed == straight}); {elapsed:.0f}s < 600s",
    )
    assert ok


# ---------------------------------------------------------------------------
# 8. decentralization audit


def test_criterion_8_execution_audit(report):
    reads, runs = EXECUTION_AUDIT["central_reads"], EXECUTION_AUDIT["executions"]
    ok = reads == 0 and runs > 0
    line(report, 8, ok, f"{runs} greedy executions across the acceptance runs read {reads} centralized observations")
    assert ok
