"""Seeded synthetic stereo corpora with a piecewise-constant domain shift.

Each speaker has a random mean (plus a gender offset). A normal utterance is
the speaker mean plus isotropic noise. Its shouted twin adds the offset of
the shift cluster whose latent anchor is nearest to the normal vector, plus
fresh noise. Offsets share a common direction (weighted by
``shift_coherence``) so that a linear detector can separate the domains,
while their cluster-specific parts reward multi-component compensation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import Dataset, Domain, EmbeddingRecord, Gender
from .errors import DataError


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 22
    n_contents: int = 24
    dim: int = 16
    speaker_spread: float = 1.0
    within_speaker_noise: float = 0.8
    n_shift_clusters: int = 4
    shift_magnitude: float = 8.0
    gender_offset_magnitude: float = 0.8
    shift_coherence: float = 0.7
    seed: int = 0

    def __post_init__(self):
        for name in ("n_speakers", "n_contents", "dim", "n_shift_clusters"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be at least 1")
        for name in ("speaker_spread", "within_speaker_noise", "shift_magnitude",
                     "gender_offset_magnitude"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be non-negative")
        if not 0.0 <= self.shift_coherence <= 1.0:
            raise DataError("shift_coherence must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SynthTruth:
    """Latent quantities behind a generated corpus, for tests."""

    speaker_means: np.ndarray
    anchors: np.ndarray
    offsets: np.ndarray
    clusters: np.ndarray  # shift cluster per (speaker, content), row-major


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def generate(config: SynthConfig | None = None, return_truth: bool = False):
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    S, C, D, K = cfg.n_speakers, cfg.n_contents, cfg.dim, cfg.n_shift_clusters

    means = rng.standard_normal((S, D)) * cfg.speaker_spread
    gender_dir = _unit(rng.standard_normal(D))
    genders = [Gender.MALE if s % 2 == 0 else Gender.FEMALE for s in range(S)]
    sign = np.array([1.0 if g is Gender.MALE else -1.0 for g in genders])
    means = means + cfg.gender_offset_magnitude * sign[:, None] * gender_dir

    anchors = rng.standard_normal((K, D)) * cfg.speaker_spread
    common = _unit(rng.standard_normal(D))
    spread = _unit(rng.standard_normal((K, D)))
    offsets = cfg.shift_magnitude * _unit(cfg.shift_coherence * common
                                          + (1.0 - cfg.shift_coherence) * spread)
    if K == 1:
        offsets = cfg.shift_magnitude * common[None, :]

    noise_x = rng.standard_normal((S, C, D)) * cfg.within_speaker_noise
    noise_y = rng.standard_normal((S, C, D)) * cfg.within_speaker_noise
    x = means[:, None, :] + noise_x
    dist = np.sum((x[:, :, None, :] - anchors[None, None]) ** 2, axis=-1)
    cluster = np.argmin(dist, axis=-1)
    y = x + offsets[cluster] + noise_y

    records = []
    for s in range(S):
        spk = f"spk{s:02d}"
        for domain, vecs in ((Domain.NORMAL, x[s]), (Domain.SHOUTED, y[s])):
            for c in range(C):
                records.append(EmbeddingRecord(f"{spk}_c{c:02d}_{domain.value}", spk,
                                               domain, genders[s], vecs[c]))
    ds = Dataset(records)
    if return_truth:
        return ds, SynthTruth(means, anchors, offsets, cluster.reshape(-1))
    return ds
