"""End-to-end acceptance checks, one test per criterion.

Each test appends a ``[PASS]``/``[FAIL]`` line that is printed in the
terminal summary.
"""

import time
import warnings

import numpy as np
import pytest

import conftest
from shoutcomp.compensation import (CompensationWarning, Gating, Technique, train_compensation,
                                    train_memlin, train_ratz, train_splice)
from shoutcomp.data import StereoPairs
from shoutcomp.evaluation import (ALL_CONDITIONS, Condition, ExperimentSettings, compute_eer,
                                  loso_evaluate, make_trials)
from shoutcomp.gmm import fit_em
from shoutcomp.synthgen import generate

from oracles import eer_sweep, gmm_posteriors, memlin_tables, ratz_or_splice_biases


def record(n, title, ok, detail=""):
    conftest.ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")
    assert ok, detail


def _pairs(x, y):
    return StereoPairs(x, y, tuple((f"s{i}", "c") for i in range(len(x))), (None,) * len(x))


def _post(g, z):
    return [gmm_posteriors(g.means.tolist(), g.variances.tolist(), g.weights.tolist(), zi)
            for zi in z.tolist()]


@pytest.fixture(scope="module")
def benchmark():
    ds = generate()
    t0 = time.perf_counter()
    report = loso_evaluate(ds, settings=ExperimentSettings())
    elapsed = time.perf_counter() - t0
    eers = {(run, c): report[run].eer(c) for run in report for c in ALL_CONDITIONS}
    return ds, report, eers, elapsed


def test_criterion_01_trial_counts(corpus):
    t0 = time.perf_counter()
    counts = {c.label: len(make_trials(corpus, c)) for c in ALL_CONDITIONS}
    elapsed = time.perf_counter() - t0
    expected = {"A-A": 557040, "N-N": 139128, "S-S": 139128, "N-S": 278784}
    record(1, "trial counts", counts == expected and elapsed < 5.0,
           f"{counts} in {elapsed:.2f}s")


def test_criterion_02_bias_oracles():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, d = rng.integers(20, 40), rng.integers(1, 4)
        x = rng.standard_normal((n, d)) * 2
        y = x + rng.standard_normal((n, d)) + rng.standard_normal(d)
        gx, gy = fit_em(x, int(rng.integers(1, 4)), seed=seed), fit_em(y, int(rng.integers(1, 4)), seed=seed)
        diffs = (y - x).tolist()
        px, py = _post(gx, x), _post(gy, y)
        ratz = train_ratz(_pairs(x, y), gx).biases
        splice = train_splice(_pairs(x, y), gy).biases
        memlin = train_memlin(_pairs(x, y), gx, gy)
        mb, mc = memlin_tables(px, py, diffs)
        worst = max(worst,
                    np.max(np.abs(ratz - np.array(ratz_or_splice_biases(px, diffs)))),
                    np.max(np.abs(splice - np.array(ratz_or_splice_biases(py, diffs)))),
                    np.max(np.abs(memlin.biases - np.array(mb))),
                    np.max(np.abs(memlin.cross_probs - np.array(mc))))
    record(2, "bias-formula oracles (20 seeds)", worst < 1e-10, f"max abs error {worst:.2e}")


def test_criterion_03_k1_collapse():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((200, 6))
    y = x + rng.standard_normal((200, 6)) + 2.0
    test = rng.standard_normal((50, 6)) + 2.0
    outs = [train_compensation(_pairs(x, y), t, 1).apply(test) for t in Technique]
    target = test - (y - x).mean(axis=0)
    spread = max(np.max(np.abs(o - outs[0])) for o in outs)
    dev = max(np.max(np.abs(o - target)) for o in outs)
    record(3, "K=1 collapse", spread < 1e-12 and dev < 1e-12,
           f"technique spread {spread:.1e}, deviation from y-mean(y-x) {dev:.1e}")


def test_criterion_04_global_shift():
    worst = 0.0
    for k in range(1, 9):
        rng = np.random.default_rng(100 + k)
        x = rng.standard_normal((160, 4)) * 3
        c = rng.standard_normal(4) * 4
        test = rng.standard_normal((40, 4)) * 3 + c
        for tech in Technique:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", CompensationWarning)
                m = train_compensation(_pairs(x, x + c), tech, k, seed=k)
            worst = max(worst, np.max(np.abs(m.apply(test) - (test - c))))
    record(4, "global-shift recovery (K=1..8)", worst < 1e-9, f"max abs error {worst:.1e}")


def test_criterion_05_em_soundness():
    worst_drop, worst_post = 0.0, 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.standard_normal((80, 3)) + rng.standard_normal(3) * 3 for _ in range(3)])
        res = fit_em(X, 4, seed=seed, return_history=True)
        worst_drop = max(worst_drop, -np.min(np.diff(res.loglik), initial=0.0))
        worst_post = max(worst_post, np.max(np.abs(res.gmm.posteriors(X).sum(axis=1) - 1)))
    rng = np.random.default_rng(7)
    X = np.concatenate([rng.normal(-10, 0.5, 100), rng.normal(10, 0.5, 100)])[:, None]
    means = np.sort(fit_em(X, 2, seed=1).means[:, 0])
    mean_err = float(np.max(np.abs(means - [-10.0, 10.0])))
    ok = worst_drop <= 1e-9 and worst_post <= 1e-9 and mean_err < 0.2
    record(5, "EM soundness", ok, f"max loglik drop {worst_drop:.1e}, posterior sum error "
           f"{worst_post:.1e}, two-cluster mean error {mean_err:.3f}")


def test_criterion_06_eer_oracle():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ns, nd = rng.integers(1, 60, 2)
        same, diff = rng.normal(1, 1, ns), rng.normal(0, 1, nd)
        if seed % 4 == 0:
            same, diff = np.round(same, 1), np.round(diff, 1)
        labels = np.r_[np.ones(ns, bool), np.zeros(nd, bool)]
        eer = compute_eer(np.r_[same, diff], labels)[0]
        worst = max(worst, abs(eer - eer_sweep(same.tolist(), diff.tolist())))
    sep = compute_eer(np.r_[np.arange(5) + 10.0, np.arange(5.0)], np.r_[np.ones(5, bool), np.zeros(5, bool)])[0]
    rng = np.random.default_rng(0)
    chance = compute_eer(rng.standard_normal(10000), rng.random(10000) < 0.5)[0]
    ok = worst < 1e-12 and sep == 0.0 and abs(chance - 0.5) < 0.05
    record(6, "EER oracle", ok, f"max sweep error {worst:.1e} over 100 sets, separated {sep}, "
           f"chance {chance:.4f}")


def test_criterion_07_detector_quality():
    ds = generate()
    t0 = time.perf_counter()
    m = loso_evaluate(ds, [], [Gating.DETECTED]).detector
    elapsed = time.perf_counter() - t0
    ok = (m.accuracy >= 0.99 and m.shouted_miss_rate <= 0.02 and m.normal_miss_rate <= 0.02
          and elapsed < 30.0)
    record(7, "LOSO detector quality", ok,
           f"accuracy {100 * m.accuracy:.2f}%, shouted miss {100 * m.shouted_miss_rate:.2f}%, "
           f"normal miss {100 * m.normal_miss_rate:.2f}% in {elapsed:.1f}s")


def test_criterion_08_relative_improvement(benchmark):
    _, _, eers, elapsed = benchmark
    base = {c: eers[((None, Gating.NONE), c)] for c in ALL_CONDITIONS}
    parts, ok = [], elapsed < 300.0
    for tech in (Technique.MEMLIN, Technique.SPLICE):
        run = (tech, Gating.DETECTED)
        for cond in (Condition.AA, Condition.NS):
            rel = 1 - eers[(run, cond)] / base[cond]
            ok &= rel >= 0.10
            parts.append(f"{tech.label} {cond.label} -{100 * rel:.1f}%")
        dnn = abs(eers[(run, Condition.NN)] - base[Condition.NN]) * 100
        ok &= dnn < 1.0
        parts.append(f"{tech.label} N-N delta {dnn:.2f}pt")
    record(8, "relative improvement vs baseline", bool(ok),
           ", ".join(parts) + f"; LOSO run {elapsed:.1f}s")


def test_criterion_09_oracle_vs_detected(benchmark):
    _, _, eers, _ = benchmark
    worst, where = 0.0, ""
    for tech in Technique:
        for cond in ALL_CONDITIONS:
            gap = abs(eers[((tech, Gating.DETECTED), cond)] - eers[((tech, Gating.ORACLE), cond)]) * 100
            if gap >= worst:
                worst, where = gap, f"{tech.label} {cond.label}"
    record(9, "oracle vs detected gating", worst < 0.5, f"max gap {worst:.3f}pt ({where})")


def test_criterion_10_determinism(benchmark):
    ds, _, eers, _ = benchmark
    again = loso_evaluate(generate(), settings=ExperimentSettings())
    mismatches = [key for key, v in eers.items() if repr(again[key[0]].eer(key[1])) != repr(v)]
    record(10, "determinism", not mismatches and generate().equals(ds),
           f"{len(eers)} EERs compared, {len(mismatches)} mismatches")
