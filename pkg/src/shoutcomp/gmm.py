"""Diagonal-covariance Gaussian mixtures: density, posteriors and EM training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_COMPONENTS = 8


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    return np.squeeze(out, axis=axis)


@dataclass(frozen=True, eq=False)
class DiagonalGmm:
    """K weighted Gaussians with per-dimension variances.

    ``means`` and ``variances`` have shape (K, D); ``weights`` has shape (K,).
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64, ndmin=2)
        variances = np.array(self.variances, dtype=np.float64, ndmin=2)
        weights = np.array(self.weights, dtype=np.float64, ndmin=1)
        if means.shape != variances.shape or weights.shape != (means.shape[0],):
            raise DataError(f"inconsistent GMM shapes: means {means.shape}, "
                            f"variances {variances.shape}, weights {weights.shape}")
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(variances))):
            raise DataError("GMM parameters must be finite")
        if np.any(variances <= 0):
            raise DataError("GMM variances must be strictly positive")
        if np.any(weights <= 0) or np.any(weights > 1):
            raise DataError("GMM weights must lie in (0, 1]")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise DataError(f"GMM weights sum to {weights.sum()!r}, not 1")
        for a in (means, variances, weights):
            a.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, DiagonalGmm):
            return NotImplemented
        return (np.array_equal(self.means, other.means)
                and np.array_equal(self.variances, other.variances)
                and np.array_equal(self.weights, other.weights))

    def _as_batch(self, z) -> tuple[np.ndarray, bool]:
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        z2 = z.reshape(1, -1) if single else z
        if z2.ndim != 2 or z2.shape[1] != self.dim:
            raise DataError(f"input of dimension {z2.shape[-1]} does not match GMM dimension {self.dim}")
        return z2, single

    def log_joint(self, z) -> np.ndarray:
        """log p(z|s) + log P(s), shape (N, K) (or (K,) for a single vector)."""
        z2, single = self._as_batch(z)
        out = kernels.log_joint(z2, self.means, self.variances, np.log(self.weights))
        return out[0] if single else out

    def log_density(self, z):
        """log p(z) via log-sum-exp over components."""
        z2, single = self._as_batch(z)
        out = logsumexp(kernels.log_joint(z2, self.means, self.variances,
                                          np.log(self.weights)), axis=1)
        return float(out[0]) if single else out

    def posteriors(self, z) -> np.ndarray:
        """p(s|z) for every component; rows sum to one."""
        z2, single = self._as_batch(z)
        lj = kernels.log_joint(z2, self.means, self.variances, np.log(self.weights))
        post = np.exp(lj - logsumexp(lj, axis=1)[:, None])
        return post[0] if single else post


def log_density(gmm: DiagonalGmm, z):
    return gmm.log_density(z)


def posteriors(gmm: DiagonalGmm, z) -> np.ndarray:
    return gmm.posteriors(z)


@dataclass(frozen=True)
class EMConfig:
    max_iter: int = 200
    tol: float = 1e-6
    variance_floor_rel: float = 1e-6
    variance_floor_abs: float = 1e-10
    min_mass: float = 1e-8


@dataclass(frozen=True, eq=False)
class FitResult:
    gmm: DiagonalGmm
    loglik: list[float] = field(default_factory=list)
    """Total training log-likelihood at each evaluated parameter set."""
    converged: bool = False
    reseeded: int = 0


def _farthest_point_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    scale = data.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    scaled = data / scale
    chosen = [int(rng.integers(len(data)))]
    dist = np.sum((scaled - scaled[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((scaled - scaled[nxt]) ** 2, axis=1))
    return data[chosen].copy()


def fit_em(data, k: int = DEFAULT_COMPONENTS, config: EMConfig | None = None,
           seed: int = 0, return_history: bool = False):
    """Maximum-likelihood diagonal GMM by expectation-maximization.

    Initial means come from farthest-point seeding (first point drawn with
    ``seed``); initial variances are the global per-dimension variance and
    initial weights are uniform. Iteration stops once the relative
    log-likelihood gain drops below ``config.tol`` or after ``max_iter``
    M-steps. With ``return_history`` a :class:`FitResult` is returned.
    """
    config = config or EMConfig()
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError("fit_em needs a non-empty (N, D) array")
    n, d = data.shape
    if k < 1:
        raise DataError("number of components must be at least 1")
    if k > n:
        raise DataError(f"cannot fit {k} components to {n} vectors")
    if not np.all(np.isfinite(data)):
        raise DataError("training data contains non-finite values")

    rng = np.random.default_rng(seed)
    global_var = data.var(axis=0)
    floor = np.maximum(config.variance_floor_rel * global_var, config.variance_floor_abs)
    means = _farthest_point_init(data, k, rng)
    variances = np.tile(np.maximum(global_var, floor), (k, 1))
    weights = np.full(k, 1.0 / k)

    history: list[float] = []
    converged = False
    reseeded = 0
    for it in range(config.max_iter + 1):
        lj = kernels.log_joint(data, means, variances, np.log(weights))
        norm = logsumexp(lj, axis=1)
        ll = float(np.sum(norm))
        if not np.isfinite(ll):
            raise NumericalError("EM log-likelihood became non-finite")
        history.append(ll)
        if it > 0 and ll - history[-2] < config.tol * abs(history[-2]):
            converged = True
            break
        if it == config.max_iter:
            break
        resp = np.exp(lj - norm[:, None])
        mass = resp.sum(axis=0)
        empty = mass < config.min_mass
        if np.any(empty):
            # re-seed starved components at the worst-explained points
            worst = np.argsort(norm, kind="stable")
            for j, c in enumerate(np.flatnonzero(empty)):
                resp[:, c] = 0.0
                resp[worst[j], c] = 1.0
            mass = resp.sum(axis=0)
            reseeded += int(empty.sum())
        weights = mass / n
        means = (resp.T @ data) / mass[:, None]
        sq = np.empty_like(means)
        for c in range(k):
            diff = data - means[c]
            sq[c] = resp[:, c] @ (diff * diff) / mass[c]
        variances = np.maximum(sq, floor)
        weights = weights / weights.sum()

    gmm = DiagonalGmm(means, variances, weights)
    logger.debug("fit_em: K=%d iters=%d loglik=%.6f converged=%s",
                 k, len(history) - 1, history[-1], converged)
    if return_history:
        return FitResult(gmm, history, converged, reseeded)
    return gmm
