import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shoutcomp.compensation import Gating, Technique
from shoutcomp.data import Dataset, Domain, EmbeddingRecord, Gender
from shoutcomp.errors import DataError
from shoutcomp.evaluation import (ALL_CONDITIONS, Condition, ExperimentSettings, ScoredTrials,
                                  compute_eer, det_points, detector_metrics, evaluate_condition,
                                  length_normalize, loso_evaluate, loso_folds, make_trials,
                                  results_table, score_trials, write_det_csv, write_table_csv)
from shoutcomp.synthgen import SynthConfig, generate

from oracles import eer_sweep


def _ds(vectors, domains=None, speakers=None):
    n = len(vectors)
    domains = domains or ["normal"] * n
    speakers = speakers or [f"s{i}" for i in range(n)]
    return Dataset([EmbeddingRecord(f"{speakers[i]}_c{i}_{domains[i]}", speakers[i], domains[i],
                                    None, v) for i, v in enumerate(vectors)])


# ---- trials ----------------------------------------------------------------

def test_corpus_trial_counts(corpus):
    counts = {c: len(make_trials(corpus, c)) for c in ALL_CONDITIONS}
    assert counts == {Condition.AA: 557040, Condition.NN: 139128,
                      Condition.SS: 139128, Condition.NS: 278784}


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.sampled_from(["normal", "shouted"])),
                min_size=2, max_size=30))
def test_trial_counts_closed_form(layout):
    recs = [EmbeddingRecord(f"s{s}_c{i}_{d}", f"s{s}", d, None, [float(i), 1.0])
            for i, (s, d) in enumerate(layout)]
    ds = Dataset(recs)
    n = len(recs)
    nn = sum(d == "normal" for _, d in layout)
    ns = n - nn
    expected = {Condition.AA: n * (n - 1) // 2, Condition.NN: nn * (nn - 1) // 2,
                Condition.SS: ns * (ns - 1) // 2, Condition.NS: nn * ns}
    for cond, count in expected.items():
        if count == 0:
            with pytest.raises(DataError):
                make_trials(ds, cond)
            continue
        t = make_trials(ds, cond)
        assert len(t) == count
        assert np.all(t.enroll != t.test)
        same = [layout[a][0] == layout[b][0] for a, b in zip(t.enroll, t.test)]
        assert t.same.tolist() == same
        if cond is Condition.NS:
            assert all(layout[a][1] == "normal" and layout[b][1] == "shouted"
                       for a, b in zip(t.enroll, t.test))
        else:
            assert len(set(zip(t.enroll.tolist(), t.test.tolist()))) == count


def test_unknown_domain_rejected():
    ds = _ds([[1.0], [2.0]], domains=["normal", "unknown"])
    with pytest.raises(DataError):
        make_trials(ds, "AA")


def test_condition_parse():
    assert Condition.parse("n-s") is Condition.NS
    assert Condition.parse("AA") is Condition.AA
    assert Condition.NN.label == "N-N"
    with pytest.raises(DataError):
        Condition.parse("XZ")


# ---- scoring ---------------------------------------------------------------

def _pair_score(u, v):
    ds = _ds([u, v], speakers=["a", "b"])
    return score_trials(make_trials(ds, "AA"), ds).scores[0]


def test_cosine_examples():
    assert _pair_score([3.0, 4.0], [3.0, 4.0]) == pytest.approx(1.0, abs=1e-15)
    assert _pair_score([1.0, 0.0], [0.0, 2.0]) == 0.0
    assert _pair_score([1.0, 2.0, 2.0], [2.0, 1.0, 2.0]) == pytest.approx(8 / 9, abs=1e-15)


def test_centering_applied():
    ds = _ds([[2.0, 1.0], [1.0, 2.0]], speakers=["a", "b"])
    s = score_trials(make_trials(ds, "AA"), ds, center=[1.0, 1.0]).scores[0]
    assert s == 0.0


def test_score_remaps_ids_and_rejects_missing():
    ds = _ds([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], speakers=["a", "b", "c"])
    t = make_trials(ds, "AA")
    reordered = ds.subset([2, 0, 1])
    np.testing.assert_allclose(score_trials(t, reordered).scores, score_trials(t, ds).scores)
    with pytest.raises(DataError):
        score_trials(t, ds.subset([0, 1]))


def test_length_normalize_zero_vector():
    out = length_normalize([[0.0, 0.0], [3.0, 4.0]])
    np.testing.assert_array_equal(out, [[0.0, 0.0], [0.6, 0.8]])


# ---- EER and DET -----------------------------------------------------------

def _eer(same, diff):
    scores = np.concatenate([same, diff])
    labels = np.r_[np.ones(len(same), bool), np.zeros(len(diff), bool)]
    return compute_eer(scores, labels)


def test_hand_list_matches_sweep():
    same, diff = [0.9, 0.8, 0.4], [0.7, 0.3, 0.2]
    eer, thr = _eer(same, diff)
    assert eer == pytest.approx(eer_sweep(same, diff), abs=1e-12)
    assert eer == pytest.approx(1 / 3, abs=1e-12)
    assert thr == pytest.approx(0.7)


@pytest.mark.parametrize("seed", range(120))
def test_eer_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    ns, nd = rng.integers(1, 40, 2)
    same = rng.normal(rng.uniform(0, 2), 1, ns)
    diff = rng.normal(0, 1, nd)
    if seed % 3 == 0:  # exercise ties
        same, diff = np.round(same, 1), np.round(diff, 1)
    assert _eer(same, diff)[0] == pytest.approx(eer_sweep(same.tolist(), diff.tolist()), abs=1e-12)


def test_perfect_separation():
    eer, thr = _eer([2.0, 3.0, 5.0], [-1.0, 0.0, 1.0])
    assert eer == 0.0
    assert 1.0 < thr <= 2.0


def test_chance_level():
    rng = np.random.default_rng(0)
    eer, _ = _eer(rng.standard_normal(5000), rng.standard_normal(5000))
    assert abs(eer - 0.5) < 0.05


def test_eer_shift_and_monotone_invariance():
    rng = np.random.default_rng(4)
    same, diff = rng.normal(1, 1, 300), rng.normal(0, 1, 500)
    base = _eer(same, diff)[0]
    assert _eer(same + 17.5, diff + 17.5)[0] == pytest.approx(base, abs=1e-12)
    assert _eer(np.exp(same), np.exp(diff))[0] == pytest.approx(base, abs=1e-12)
    assert _eer(np.tanh(same / 3), np.tanh(diff / 3))[0] == pytest.approx(base, abs=1e-12)


def test_eer_single_class_error():
    with pytest.raises(DataError):
        compute_eer(np.array([0.1, 0.2]), np.array([True, True]))
    with pytest.raises(DataError):
        compute_eer(np.array([0.1, 0.2]), np.array([False, False]))


def test_scored_trials_reject_nonfinite(corpus):
    t = make_trials(corpus.subset(np.arange(3)), "AA")
    with pytest.raises(DataError):
        ScoredTrials(t, np.array([0.0, np.nan, 1.0]))


def test_det_single_pair():
    assert det_points(np.array([0.9, 0.1]), np.array([True, False])) == [(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]


def test_det_is_monotone(tmp_path):
    rng = np.random.default_rng(2)
    scores = rng.standard_normal(200)
    labels = rng.random(200) < 0.3
    pts = det_points(scores, labels)
    far, frr = np.array(pts).T
    assert np.all(np.diff(far) <= 0) and np.all(np.diff(frr) >= 0)
    assert pts[0][1] == 0.0 and pts[-1] == (0.0, 1.0)
    write_det_csv(pts, tmp_path / "det.csv")
    lines = (tmp_path / "det.csv").read_text().splitlines()
    assert lines[0] == "far,frr" and len(lines) == len(pts) + 1


# ---- detector metrics ------------------------------------------------------

def test_detector_metrics_example():
    true = np.r_[np.ones(100, bool), np.zeros(100, bool)]
    pred = true.copy()
    pred[:2] = False
    pred[100:103] = True
    m = detector_metrics(pred, true)
    assert m.accuracy == pytest.approx(0.975)
    assert m.shouted_miss_rate == pytest.approx(0.02)
    assert m.normal_miss_rate == pytest.approx(0.03)


def test_detector_metrics_shape_error():
    with pytest.raises(DataError):
        detector_metrics([True], [True, False])


# ---- LOSO ------------------------------------------------------------------

SMALL = SynthConfig(n_speakers=4, n_contents=6, dim=4, n_shift_clusters=2, seed=3)
SMALL_SETTINGS = ExperimentSettings(k=2)


@pytest.fixture(scope="module")
def small():
    return generate(SMALL)


def test_folds_partition_by_speaker(small):
    folds = list(loso_folds(small))
    assert [f[0] for f in folds] == small.speakers
    for spk, tr, te in folds:
        assert set(small.speaker_labels[te]) == {spk}
        assert np.intersect1d(tr, te).size == 0 and tr.size + te.size == len(small)
    two = small.subset(np.isin(small.speaker_labels, small.speakers[:2]))
    assert len(list(loso_folds(two))) == 2
    with pytest.raises(DataError):
        list(loso_folds(small.subset(small.speaker_labels == small.speakers[0])))


def test_baseline_matches_direct_fold_centering(small):
    report = loso_evaluate(small, [], [], SMALL_SETTINGS)
    assert list(report) == [(None, Gating.NONE)]
    manual = np.empty((len(small), small.dim))
    for _, tr, te in loso_folds(small):
        train = small.subset(tr)
        center = train.matrix[train.domain_mask(Domain.NORMAL)].mean(axis=0)
        manual[te] = length_normalize(small.matrix[te], center)
    np.testing.assert_allclose(report.baseline.pooled.matrix, manual, atol=1e-15)
    for cond in ALL_CONDITIONS:
        direct = compute_eer(score_trials(make_trials(small, cond), small.with_vectors(manual)))[0]
        assert report.baseline.eer(cond) == direct


def test_loso_report_structure_and_determinism(small):
    a = loso_evaluate(small, settings=SMALL_SETTINGS)
    b = loso_evaluate(small, settings=SMALL_SETTINGS)
    keys = {(None, Gating.NONE)} | {(t, g) for t in Technique for g in (Gating.ORACLE, Gating.DETECTED)}
    assert set(a) == keys
    assert a.detector is not None and a.detector_predictions.shape == (len(small),)
    for key in keys:
        for cond in ALL_CONDITIONS:
            assert a[key].eer(cond) == b[key].eer(cond)
    # oracle gating marks exactly the shouted utterances
    oracle = a[(Technique.SPLICE, Gating.ORACLE)]
    np.testing.assert_array_equal(oracle.gated, small.domain_mask(Domain.SHOUTED))


def test_gender_average(small):
    report = loso_evaluate(small, [], [], SMALL_SETTINGS)
    pooled = report.baseline.pooled
    per = []
    for g in Gender:
        sub = pooled.subset(np.array([r.gender is g for r in pooled]))
        per.append(compute_eer(score_trials(make_trials(sub, "AA"), sub))[0])
    assert evaluate_condition(pooled, "AA", by_gender=True) == pytest.approx(np.mean(per), abs=1e-15)
    unl = pooled.subset(np.arange(4))
    unl = Dataset([EmbeddingRecord(r.id, r.speaker, r.domain, None, r.vector) for r in unl])
    with pytest.raises(DataError):
        evaluate_condition(unl, "AA", by_gender=True)


def test_results_table_layout(small, tmp_path):
    report = loso_evaluate(small, ["splice"], ["oracle"], SMALL_SETTINGS)
    table = results_table(report, "oracle")
    assert list(table) == list(ALL_CONDITIONS)
    assert all(set(row) == {"Baseline", "SPLICE"} for row in table.values())
    write_table_csv(table, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "condition,Baseline,SPLICE"
    assert [l.split(",")[0] for l in lines[1:]] == ["A-A", "N-N", "S-S", "N-S"]
    assert float(lines[1].split(",")[1]) == pytest.approx(100 * table[Condition.AA]["Baseline"])


def test_trial_generation_is_fast(corpus):
    t0 = time.perf_counter()
    for c in ALL_CONDITIONS:
        make_trials(corpus, c)
    assert time.perf_counter() - t0 < 5.0
