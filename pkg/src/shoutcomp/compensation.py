"""Stereo-trained linear compensation of shouted embeddings.

All three techniques estimate the normal-domain vector as the shouted vector
minus a posterior-weighted sum of learned bias vectors:

* RATZ indexes biases by the normal-domain GMM components,
* SPLICE indexes them by the shouted-domain GMM components,
* MEMLIN indexes them by (normal, shouted) component pairs and weights each
  pair by p(s_y|y) times a cross probability P(s_x|s_y) learned from the
  stereo posteriors.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import Dataset, Domain, Gender, StereoPairs
from .detector import LogisticModel
from .errors import DataError
from .gmm import DEFAULT_COMPONENTS, DiagonalGmm, EMConfig, fit_em, logsumexp

logger = logging.getLogger(__name__)

MIN_PAIR_MASS = 1e-12


class Technique(str, enum.Enum):
    MEMLIN = "memlin"
    RATZ = "ratz"
    SPLICE = "splice"

    @property
    def label(self) -> str:
        return self.name


class Gating(str, enum.Enum):
    ORACLE = "oracle"
    DETECTED = "detected"
    NONE = "none"


class MemlinCross(str, enum.Enum):
    PRIOR = "prior"  # fixed P(s_x|s_y) from stereo co-occurrence
    POSTERIOR = "posterior"  # y-dependent p(s_x|y, s_y)


class CompensationWarning(UserWarning):
    pass


def _finite(a: np.ndarray, what: str) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise DataError(f"{what} must be finite")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class RatzBiasTable:
    biases: np.ndarray  # (K_x, D)

    def __post_init__(self):
        object.__setattr__(self, "biases", _finite(np.atleast_2d(self.biases), "RATZ biases"))

    def __eq__(self, other):
        return isinstance(other, RatzBiasTable) and np.array_equal(self.biases, other.biases)


@dataclass(frozen=True, eq=False)
class SpliceBiasTable:
    biases: np.ndarray  # (K_y, D)

    def __post_init__(self):
        object.__setattr__(self, "biases", _finite(np.atleast_2d(self.biases), "SPLICE biases"))

    def __eq__(self, other):
        return isinstance(other, SpliceBiasTable) and np.array_equal(self.biases, other.biases)


@dataclass(frozen=True, eq=False)
class MemlinBiasTable:
    """``biases[sx, sy]`` is a D-vector; ``cross_probs[sy, sx]`` estimates P(s_x|s_y)."""

    biases: np.ndarray  # (K_x, K_y, D)
    cross_probs: np.ndarray  # (K_y, K_x)

    def __post_init__(self):
        b = _finite(self.biases, "MEMLIN biases")
        c = _finite(self.cross_probs, "MEMLIN cross probabilities")
        if b.ndim != 3 or c.shape != (b.shape[1], b.shape[0]):
            raise DataError(f"MEMLIN table shapes disagree: biases {b.shape}, cross_probs {c.shape}")
        if np.any(c < 0) or np.any(np.abs(c.sum(axis=1) - 1.0) > 1e-9):
            raise DataError("MEMLIN cross_probs rows must be probability vectors")
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "cross_probs", c)

    def __eq__(self, other):
        return (isinstance(other, MemlinBiasTable)
                and np.array_equal(self.biases, other.biases)
                and np.array_equal(self.cross_probs, other.cross_probs))


BiasTable = RatzBiasTable | SpliceBiasTable | MemlinBiasTable


def _check_pairs(pairs: StereoPairs, *gmms: DiagonalGmm) -> np.ndarray:
    if len(pairs) == 0:
        raise DataError("no stereo pairs to train on")
    for g in gmms:
        if g.dim != pairs.dim:
            raise DataError(f"GMM dimension {g.dim} does not match pair dimension {pairs.dim}")
    return pairs.y - pairs.x


def _weighted_biases(post: np.ndarray, diff: np.ndarray, what: str | None) -> np.ndarray:
    mass = post.sum(axis=0)
    biases = (post.T @ diff) / np.where(mass > 0, mass, 1.0)[:, None]
    empty = mass < MIN_PAIR_MASS
    if np.any(empty) and what:
        warnings.warn(f"{what}: {int(empty.sum())} Gaussian(s) without posterior mass; "
                      "using the global mean difference", CompensationWarning, stacklevel=3)
    if np.any(empty):
        biases[empty] = diff.mean(axis=0)
    return biases


def train_ratz(pairs: StereoPairs, normal_gmm: DiagonalGmm) -> RatzBiasTable:
    """r_sx = sum_i p(s_x|x_i)(y_i - x_i) / sum_i p(s_x|x_i)."""
    diff = _check_pairs(pairs, normal_gmm)
    return RatzBiasTable(_weighted_biases(normal_gmm.posteriors(pairs.x), diff, "train_ratz"))


def train_splice(pairs: StereoPairs, shouted_gmm: DiagonalGmm) -> SpliceBiasTable:
    """r_sy = sum_i p(s_y|y_i)(y_i - x_i) / sum_i p(s_y|y_i)."""
    diff = _check_pairs(pairs, shouted_gmm)
    return SpliceBiasTable(_weighted_biases(shouted_gmm.posteriors(pairs.y), diff, "train_splice"))


def train_memlin(pairs: StereoPairs, normal_gmm: DiagonalGmm,
                 shouted_gmm: DiagonalGmm) -> MemlinBiasTable:
    """Pairwise biases weighted by p(s_y|y_i) p(s_x|x_i).

    Component pairs whose joint mass is below ``MIN_PAIR_MASS`` fall back to
    the RATZ bias of their normal component.
    """
    diff = _check_pairs(pairs, normal_gmm, shouted_gmm)
    px = normal_gmm.posteriors(pairs.x)  # (N, Kx)
    py = shouted_gmm.posteriors(pairs.y)  # (N, Ky)
    kx, ky = px.shape[1], py.shape[1]
    joint = px[:, :, None] * py[:, None, :]  # (N, Kx, Ky)
    mass = joint.sum(axis=0)
    num = np.einsum("nab,nd->abd", joint, diff)
    biases = num / np.where(mass > 0, mass, 1.0)[:, :, None]
    empty = mass < MIN_PAIR_MASS
    if np.any(empty):
        warnings.warn(f"train_memlin: {int(empty.sum())} of {kx * ky} Gaussian pairs "
                      "without mass; using RATZ marginal biases", CompensationWarning, stacklevel=2)
        marginal = _weighted_biases(px, diff, None)
        for a, b in zip(*np.nonzero(empty)):
            biases[a, b] = marginal[a]
    ymass = py.sum(axis=0)
    cross = np.empty((ky, kx))
    for b in range(ky):
        if ymass[b] > 0 and mass[:, b].sum() > 0:
            cross[b] = mass[:, b] / ymass[b]
            cross[b] /= cross[b].sum()
        else:
            cross[b] = px.mean(axis=0)
    return MemlinBiasTable(biases, cross)


def _batch(y, dim: int):
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y2 = y.reshape(1, -1) if single else y
    if y2.shape[1] != dim:
        raise DataError(f"vector dimension {y2.shape[1]} does not match model dimension {dim}")
    return y2, single


def apply_ratz(table: RatzBiasTable, normal_gmm: DiagonalGmm, y) -> np.ndarray:
    """y - sum_sx r_sx p(s_x|y), with the posterior taken on the normal-domain GMM."""
    y2, single = _batch(y, table.biases.shape[1])
    out = y2 - normal_gmm.posteriors(y2) @ table.biases
    return out[0] if single else out


def apply_splice(table: SpliceBiasTable, shouted_gmm: DiagonalGmm, y) -> np.ndarray:
    """y - sum_sy r_sy p(s_y|y)."""
    y2, single = _batch(y, table.biases.shape[1])
    out = y2 - shouted_gmm.posteriors(y2) @ table.biases
    return out[0] if single else out


def memlin_pair_posteriors(table: MemlinBiasTable, normal_gmm: DiagonalGmm, y) -> np.ndarray:
    """y-dependent p(s_x|y, s_y), shape (N, K_y, K_x).

    Given the pair (s_x, s_y), y is modelled as N(mu_sx + r_{sx,sy}, Sigma_sx),
    with P(s_x|s_y) from ``cross_probs`` as the prior over s_x.
    """
    y2, _ = _batch(y, table.biases.shape[2])
    ky = table.cross_probs.shape[0]
    out = np.empty((y2.shape[0], ky, table.cross_probs.shape[1]))
    with np.errstate(divide="ignore"):
        log_prior = np.log(table.cross_probs)
    for b in range(ky):
        lj = kernels.log_joint(y2, normal_gmm.means + table.biases[:, b, :],
                               normal_gmm.variances, log_prior[b])
        out[:, b, :] = np.exp(lj - logsumexp(lj, axis=1)[:, None])
    return out


def apply_memlin(table: MemlinBiasTable, shouted_gmm: DiagonalGmm, y,
                 normal_gmm: DiagonalGmm | None = None) -> np.ndarray:
    """y - sum_sy sum_sx r_{sx,sy} p(s_y|y) P(s_x|s_y).

    When ``normal_gmm`` is given, P(s_x|s_y) is replaced by the y-dependent
    :func:`memlin_pair_posteriors`. With the fixed cross probabilities the
    result coincides with SPLICE on the same shouted GMM, since
    sum_sx P(s_x|s_y) r_{sx,sy} reduces to the SPLICE bias of s_y.
    """
    y2, single = _batch(y, table.biases.shape[2])
    py = shouted_gmm.posteriors(y2)
    if normal_gmm is None:
        # effective per-shouted-Gaussian bias: sum_sx P(sx|sy) r_{sx,sy}
        eff = np.einsum("ba,abd->bd", table.cross_probs, table.biases)
        out = y2 - py @ eff
    else:
        pxy = memlin_pair_posteriors(table, normal_gmm, y2)
        out = y2 - np.einsum("nb,nba,abd->nd", py, pxy, table.biases)
    return out[0] if single else out


@dataclass(frozen=True, eq=False)
class CompensationModel:
    technique: Technique
    table: BiasTable
    normal_gmm: DiagonalGmm | None = None
    shouted_gmm: DiagonalGmm | None = None
    gender_partition: dict[Gender, "CompensationModel"] | None = field(default=None)
    memlin_cross: MemlinCross = MemlinCross.PRIOR

    def __post_init__(self):
        tech = Technique(self.technique)
        object.__setattr__(self, "technique", tech)
        object.__setattr__(self, "memlin_cross", MemlinCross(self.memlin_cross))
        need_x = tech in (Technique.RATZ, Technique.MEMLIN)
        need_y = tech in (Technique.SPLICE, Technique.MEMLIN)
        if need_x != (self.normal_gmm is not None) or need_y != (self.shouted_gmm is not None):
            raise DataError(f"{tech.label} requires "
                            f"{'normal ' if need_x else ''}{'shouted ' if need_y else ''}GMM(s) only")
        expected = {Technique.RATZ: RatzBiasTable, Technique.SPLICE: SpliceBiasTable,
                    Technique.MEMLIN: MemlinBiasTable}[tech]
        if not isinstance(self.table, expected):
            raise DataError(f"{tech.label} needs a {expected.__name__}")

    @property
    def dim(self) -> int:
        return self.table.biases.shape[-1]

    def for_gender(self, gender: Gender | None) -> "CompensationModel":
        if self.gender_partition and gender in self.gender_partition:
            return self.gender_partition[gender]
        return self

    def apply(self, y, gender: Gender | None = None) -> np.ndarray:
        m = self.for_gender(gender)
        if m.technique is Technique.RATZ:
            return apply_ratz(m.table, m.normal_gmm, y)
        if m.technique is Technique.SPLICE:
            return apply_splice(m.table, m.shouted_gmm, y)
        return apply_memlin(m.table, m.shouted_gmm, y,
                            m.normal_gmm if m.memlin_cross is MemlinCross.POSTERIOR else None)


def _fit_single(pairs: StereoPairs, technique: Technique, k: int,
                em_config: EMConfig | None, seed: int, memlin_cross) -> CompensationModel:
    normal_gmm = shouted_gmm = None
    if technique in (Technique.RATZ, Technique.MEMLIN):
        normal_gmm = fit_em(pairs.x, k, em_config, seed=seed)
    if technique in (Technique.SPLICE, Technique.MEMLIN):
        shouted_gmm = fit_em(pairs.y, k, em_config, seed=seed + 1)
    if technique is Technique.RATZ:
        table = train_ratz(pairs, normal_gmm)
    elif technique is Technique.SPLICE:
        table = train_splice(pairs, shouted_gmm)
    else:
        table = train_memlin(pairs, normal_gmm, shouted_gmm)
    return CompensationModel(technique, table, normal_gmm, shouted_gmm, memlin_cross=memlin_cross)


def train_compensation(pairs: StereoPairs, technique, k: int = DEFAULT_COMPONENTS,
                       em_config: EMConfig | None = None, seed: int = 0,
                       gender_dependent: bool = False,
                       memlin_cross=MemlinCross.PRIOR) -> CompensationModel:
    """Fit the domain GMM(s) a technique needs and learn its bias table.

    With ``gender_dependent`` an extra model is trained per gender from the
    gender-filtered pairs; the gender-independent model remains the fallback
    for records without a gender label.
    """
    technique = Technique(technique)
    model = _fit_single(pairs, technique, k, em_config, seed, memlin_cross)
    if not gender_dependent:
        return model
    partition = {}
    for gender in Gender:
        mask = np.array([g is gender for g in pairs.genders])
        if not mask.any():
            continue
        sub = pairs.select(mask)
        if len(sub) < k:
            raise DataError(f"gender {gender.value}: {len(sub)} pairs cannot support K={k}")
        partition[gender] = _fit_single(sub, technique, k, em_config, seed, memlin_cross)
    return CompensationModel(technique, model.table, model.normal_gmm, model.shouted_gmm,
                             partition or None, model.memlin_cross)


def shouted_mask(data: Dataset, gating, detector: LogisticModel | None = None) -> np.ndarray:
    """Which records the gating rule hands to compensation."""
    gating = Gating(gating)
    if gating is Gating.NONE:
        return np.zeros(len(data), dtype=bool)
    if gating is Gating.ORACLE:
        if np.any(data.domain_mask(Domain.UNKNOWN)):
            raise DataError("oracle gating needs domain labels on every record")
        return data.domain_mask(Domain.SHOUTED)
    if detector is None:
        raise DataError("detected gating needs a trained detector")
    return detector.logit(data.matrix) > 0


def compensate_dataset(model: CompensationModel | None, detector: LogisticModel | None,
                       data: Dataset, gating) -> Dataset:
    """Replace the vectors of records gated as shouted by their compensated version."""
    mask = shouted_mask(data, gating, detector)
    if not mask.any():
        return data
    if model is None:
        raise DataError("a compensation model is required unless gating is 'none'")
    if model.dim != data.dim:
        raise DataError(f"model dimension {model.dim} does not match dataset dimension {data.dim}")
    out = np.array(data.matrix)
    genders = [r.gender for r in data]
    groups: dict = {}
    for i in np.flatnonzero(mask):
        key = genders[i] if model.gender_partition and genders[i] in model.gender_partition else None
        groups.setdefault(key, []).append(i)
    for gender, idx in groups.items():
        out[idx] = model.apply(out[idx], gender)
    return data.with_vectors(out)
