"""Verification trials, cosine scoring, EER/DET metrics and the LOSO protocol."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .compensation import (CompensationModel, Gating, Technique, compensate_dataset,
                           shouted_mask, train_compensation)
from .data import DEFAULT_DELIMITER, Dataset, Domain, Gender, align_stereo
from .detector import DEFAULT_L2, LogisticModel, train_detector
from .errors import DataError
from .gmm import DEFAULT_COMPONENTS, EMConfig

logger = logging.getLogger(__name__)


class Condition(str, enum.Enum):
    AA = "AA"
    NN = "NN"
    SS = "SS"
    NS = "NS"

    @classmethod
    def parse(cls, value) -> "Condition":
        if isinstance(value, Condition):
            return value
        key = str(value).upper().replace("-", "").replace("_", "")
        try:
            return cls(key)
        except ValueError:
            raise DataError(f"unknown trial condition {value!r}; "
                            "expected one of A-A, N-N, S-S, N-S") from None

    @property
    def label(self) -> str:
        return f"{self.value[0]}-{self.value[1]}"


ALL_CONDITIONS = tuple(Condition)


@dataclass(frozen=True, eq=False)
class TrialSet:
    """Index pairs into a dataset; ``same`` marks same-speaker trials."""

    ids: Sequence[str]
    enroll: np.ndarray
    test: np.ndarray
    same: np.ndarray
    condition: Condition | None = None

    def __len__(self):
        return self.enroll.shape[0]

    @property
    def n_same(self) -> int:
        return int(self.same.sum())

    def subset(self, mask) -> "TrialSet":
        return TrialSet(self.ids, self.enroll[mask], self.test[mask], self.same[mask], self.condition)

    def write_csv(self, path, scores=None) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["enroll_id", "test_id", "label"] + (["score"] if scores is not None else []))
            for t in range(len(self)):
                row = [self.ids[self.enroll[t]], self.ids[self.test[t]],
                       "same" if self.same[t] else "different"]
                if scores is not None:
                    row.append(repr(float(scores[t])))
                w.writerow(row)


@dataclass(frozen=True, eq=False)
class ScoredTrials:
    trials: TrialSet
    scores: np.ndarray

    def __post_init__(self):
        if self.scores.shape != (len(self.trials),):
            raise DataError("one score per trial is required")
        if not np.all(np.isfinite(self.scores)):
            raise DataError("trial scores must be finite")

    def __len__(self):
        return len(self.trials)

    @property
    def labels(self) -> np.ndarray:
        return self.trials.same


def make_trials(dataset: Dataset, condition) -> TrialSet:
    """Enumerate verification trials for one condition.

    A-A, N-N and S-S use every unordered pair of distinct utterances in the
    relevant subset; N-S pairs every normal utterance with every shouted one.
    """
    condition = Condition.parse(condition)
    if np.any(dataset.domain_mask(Domain.UNKNOWN)):
        raise DataError("trial generation needs domain labels on every record")
    normal = np.flatnonzero(dataset.domain_mask(Domain.NORMAL))
    shouted = np.flatnonzero(dataset.domain_mask(Domain.SHOUTED))
    if condition is Condition.NS:
        if normal.size == 0 or shouted.size == 0:
            raise DataError("N-S trials need both normal and shouted utterances")
        enroll = np.repeat(normal, shouted.size)
        test = np.tile(shouted, normal.size)
    else:
        pool = {Condition.AA: np.arange(len(dataset)), Condition.NN: normal,
                Condition.SS: shouted}[condition]
        if pool.size < 2:
            raise DataError(f"{condition.label} trials need at least two utterances")
        iu, ju = np.triu_indices(pool.size, k=1)
        enroll, test = pool[iu], pool[ju]
    spk = np.unique(dataset.speaker_labels, return_inverse=True)[1]
    return TrialSet(dataset.ids, enroll.astype(np.intp), test.astype(np.intp),
                    spk[enroll] == spk[test], condition)


def length_normalize(matrix, center=None) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if center is not None:
        m = m - np.asarray(center, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.where(norms > 0, norms, 1.0)


def score_trials(trials: TrialSet, dataset: Dataset, center=None) -> ScoredTrials:
    """Cosine similarity after optional centering and length normalization."""
    if list(trials.ids) != dataset.ids:
        index = dataset.index
        try:
            remap = np.array([index[i] for i in trials.ids], dtype=np.intp)
        except KeyError as exc:
            raise DataError(f"trial id {exc.args[0]!r} not found in dataset") from None
        enroll, test = remap[trials.enroll], remap[trials.test]
    else:
        enroll, test = trials.enroll, trials.test
    unit = length_normalize(dataset.matrix, center)
    return ScoredTrials(trials, kernels.pair_dot(unit, enroll, test))


def _split_scores(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise DataError("scores and labels must have the same length")
    n_same = int(labels.sum())
    n_diff = labels.size - n_same
    if n_same == 0 or n_diff == 0:
        raise DataError("EER needs at least one same-speaker and one different-speaker trial")
    return scores, labels, n_same, n_diff


def _roc(scores, labels):
    """(thresholds, far, frr) for "accept if score >= threshold".

    One point per distinct score, ascending, plus a final accept-nothing
    point with threshold +inf.
    """
    scores, labels, n_same, n_diff = _split_scores(scores, labels)
    order = np.argsort(scores, kind="stable")
    s, lab = scores[order], labels[order]
    uniq, start = np.unique(s, return_index=True)
    # trials strictly below each distinct score
    same_below = np.concatenate([[0], np.cumsum(lab)])[start]
    diff_below = np.concatenate([[0], np.cumsum(~lab)])[start]
    far = np.append((n_diff - diff_below) / n_diff, 0.0)
    frr = np.append(same_below / n_same, 1.0)
    thr = np.append(uniq, np.inf)
    return thr, far, frr


def _interpolate_crossing(thr, far, frr):
    gap = far - frr
    i = int(np.argmax(gap <= 0))  # FAR falls and FRR rises along the sweep
    if gap[i] == 0 or i == 0:
        return float(far[i]), float(thr[i])
    g0, g1 = gap[i - 1], gap[i]
    alpha = g0 / (g0 - g1)
    eer = far[i - 1] + alpha * (far[i] - far[i - 1])
    t0, t1 = thr[i - 1], thr[i]
    threshold = t0 + alpha * (t1 - t0) if np.isfinite(t1) else t0
    return float(eer), float(threshold)


def compute_eer(scored, labels=None) -> tuple[float, float]:
    """Equal error rate and the threshold where FAR meets FRR.

    Accepts a :class:`ScoredTrials` or raw ``(scores, labels)`` arrays. The
    crossing is linearly interpolated between the two ROC points that
    bracket it.
    """
    if isinstance(scored, ScoredTrials):
        scores, labels = scored.scores, scored.labels
    else:
        scores = scored
    return _interpolate_crossing(*_roc(scores, labels))


def det_points(scored, labels=None) -> list[tuple[float, float]]:
    """(FAR, FRR) staircase over all thresholds, FAR non-increasing."""
    if isinstance(scored, ScoredTrials):
        scores, labels = scored.scores, scored.labels
    else:
        scores = scored
    _, far, frr = _roc(scores, labels)
    return list(zip(far.tolist(), frr.tolist()))


def write_det_csv(points, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["far", "frr"])
        for far, frr in points:
            w.writerow([repr(far), repr(frr)])


@dataclass(frozen=True)
class DetectorMetrics:
    accuracy: float
    shouted_miss_rate: float
    normal_miss_rate: float
    n_shouted: int = 0
    n_normal: int = 0


def detector_metrics(predicted_shouted, true_shouted) -> DetectorMetrics:
    pred = np.asarray(predicted_shouted, dtype=bool)
    true = np.asarray(true_shouted, dtype=bool)
    if pred.size == 0 or pred.shape != true.shape:
        raise DataError("detector metrics need equally sized, non-empty inputs")
    n_s, n_n = int(true.sum()), int((~true).sum())
    miss_s = int(np.sum(true & ~pred))
    miss_n = int(np.sum(~true & pred))
    return DetectorMetrics(
        accuracy=1.0 - (miss_s + miss_n) / pred.size,
        shouted_miss_rate=miss_s / n_s if n_s else 0.0,
        normal_miss_rate=miss_n / n_n if n_n else 0.0,
        n_shouted=n_s, n_normal=n_n)


# ------------------------------------------------------------------ LOSO

@dataclass(frozen=True)
class ExperimentSettings:
    k: int = DEFAULT_COMPONENTS
    l2: float = DEFAULT_L2
    seed: int = 0
    gender_dependent: bool = False
    delimiter: str = DEFAULT_DELIMITER
    memlin_cross: str = "prior"
    em: EMConfig = field(default_factory=EMConfig)


@dataclass
class LosoResult:
    """Pooled held-out vectors for one (technique, gating) run."""

    technique: Technique | None
    gating: Gating
    pooled: Dataset
    detector: DetectorMetrics | None = None
    gated: np.ndarray | None = None

    def eer(self, condition, by_gender: bool = False) -> float:
        return evaluate_condition(self.pooled, condition, by_gender)


def evaluate_condition(pooled: Dataset, condition, by_gender: bool = False) -> float:
    """EER over the pooled, already-centered vectors.

    With ``by_gender`` the EER is computed separately inside each gender's
    utterances and averaged across genders.
    """
    if not by_gender:
        return compute_eer(score_trials(make_trials(pooled, condition), pooled))[0]
    eers = []
    for g in Gender:
        mask = np.array([r.gender is g for r in pooled])
        if mask.sum() < 2:
            continue
        sub = pooled.subset(mask)
        eers.append(compute_eer(score_trials(make_trials(sub, condition), sub))[0])
    if not eers:
        raise DataError("gender-averaged evaluation needs gender labels")
    return float(np.mean(eers))


def loso_folds(dataset: Dataset):
    speakers = dataset.speakers
    if len(speakers) < 2:
        raise DataError("leave-one-speaker-out needs at least two speakers")
    labels = dataset.speaker_labels
    for spk in speakers:
        held = labels == spk
        yield spk, np.flatnonzero(~held), np.flatnonzero(held)


def train_fold(train: Dataset, techniques: Sequence[Technique], settings: ExperimentSettings,
               need_detector: bool) -> tuple[dict, LogisticModel | None]:
    detector = None
    if need_detector:
        detector = train_detector(train.matrix[train.domain_mask(Domain.SHOUTED)],
                                  train.matrix[train.domain_mask(Domain.NORMAL)],
                                  l2=settings.l2)
    models = {}
    if techniques:
        pairs = align_stereo(train, settings.delimiter)
        for tech in techniques:
            models[tech] = train_compensation(pairs, tech, settings.k, settings.em,
                                              settings.seed, settings.gender_dependent,
                                              settings.memlin_cross)
    return models, detector


def loso_evaluate(dataset: Dataset, techniques: Sequence = (Technique.MEMLIN, Technique.RATZ,
                                                            Technique.SPLICE),
                  gatings: Sequence = (Gating.ORACLE, Gating.DETECTED),
                  settings: ExperimentSettings | None = None) -> dict:
    """Leave-one-speaker-out experiment.

    For every held-out speaker the detector, GMMs and bias tables are trained
    on the remaining speakers; the held-out utterances are gated and
    compensated, then centered with the mean of the training fold's normal
    utterances (shared by every column) and length-normalized. Held-out vectors of all folds are
    pooled before trials are built.

    Returns a :class:`LosoReport` whose runs are keyed by
    ``(technique_or_None, gating)``; the baseline is under
    ``(None, Gating.NONE)``.
    """
    settings = settings or ExperimentSettings()
    techniques = [Technique(t) for t in techniques]
    gatings = [Gating(g) for g in gatings if Gating(g) is not Gating.NONE]
    need_detector = Gating.DETECTED in gatings
    runs = [(None, Gating.NONE)] + [(t, g) for t in techniques for g in gatings]
    pooled = {run: np.empty((len(dataset), dataset.dim)) for run in runs}
    gated = {run: np.zeros(len(dataset), dtype=bool) for run in runs}
    det_pred = np.zeros(len(dataset), dtype=bool)

    for spk, tr_idx, te_idx in loso_folds(dataset):
        train, test = dataset.subset(tr_idx), dataset.subset(te_idx)
        if len(train) == 0:
            raise DataError(f"fold {spk!r} has no training data")
        models, detector = train_fold(train, techniques if gatings else [], settings, need_detector)
        normal_rows = train.matrix[train.domain_mask(Domain.NORMAL)]
        center = (normal_rows if len(normal_rows) else train.matrix).mean(axis=0)
        if detector is not None:
            det_pred[te_idx] = detector.logit(test.matrix) > 0
        for tech, gating in runs:
            model = models.get(tech)
            comp_test = compensate_dataset(model, detector, test, gating)
            pooled[(tech, gating)][te_idx] = length_normalize(comp_test.matrix, center)
            gated[(tech, gating)][te_idx] = shouted_mask(test, gating, detector)
        logger.debug("fold %s done", spk)

    metrics = None
    if need_detector:
        metrics = detector_metrics(det_pred, dataset.domain_mask(Domain.SHOUTED))
    return LosoReport({run: LosoResult(run[0], run[1], dataset.with_vectors(pooled[run]),
                                       metrics if run[1] is Gating.DETECTED else None, gated[run])
                       for run in runs},
                      metrics, det_pred if need_detector else None)


@dataclass
class LosoReport:
    runs: dict
    detector: DetectorMetrics | None = None
    detector_predictions: np.ndarray | None = None

    def __getitem__(self, key) -> LosoResult:
        return self.runs[key]

    def __contains__(self, key):
        return key in self.runs

    def __iter__(self):
        return iter(self.runs)

    @property
    def baseline(self) -> LosoResult:
        return self.runs[(None, Gating.NONE)]


TABLE_COLUMNS = ("Baseline", "MEMLIN", "RATZ", "SPLICE")


def results_table(results: "LosoReport", gating, conditions=ALL_CONDITIONS,
                  by_gender: bool = False) -> dict:
    """{condition: {column: EER}} in the Baseline/MEMLIN/RATZ/SPLICE layout."""
    gating = Gating(gating)
    table = {}
    for cond in conditions:
        cond = Condition.parse(cond)
        row = {"Baseline": results[(None, Gating.NONE)].eer(cond, by_gender)}
        for tech in Technique:
            if (tech, gating) in results:
                row[tech.label] = results[(tech, gating)].eer(cond, by_gender)
        table[cond] = row
    return table


def write_table_csv(table: dict, path) -> None:
    cols = [c for c in TABLE_COLUMNS if any(c in row for row in table.values())]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition"] + cols)
        for cond, row in table.items():
            w.writerow([cond.label] + [repr(100.0 * row[c]) if c in row else "" for c in cols])


def format_table(table: dict, title: str = "") -> str:
    cols = [c for c in TABLE_COLUMNS if any(c in row for row in table.values())]
    lines = [title] if title else []
    lines.append(f"{'Condition':<10}" + "".join(f"{c:>10}" for c in cols))
    for cond, row in table.items():
        lines.append(f"{cond.label:<10}" + "".join(
            f"{100.0 * row[c]:>10.2f}" if c in row else f"{'':>10}" for c in cols))
    return "\n".join(lines)
