"""Logistic-regression detector for shouted vs. normal embeddings."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Domain
from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)

DEFAULT_L2 = 1e-4


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class LogisticModel:
    """P(shouted | z) = sigmoid(intercept + weights . z)."""

    intercept: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        b = float(self.intercept)
        if w.size < 1 or not np.all(np.isfinite(w)) or not np.isfinite(b):
            raise DataError("logistic model parameters must be finite and non-empty")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "intercept", b)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LogisticModel):
            return NotImplemented
        return self.intercept == other.intercept and np.array_equal(self.weights, other.weights)

    def logit(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.dim:
            raise DataError(f"input of dimension {z.shape[-1]} does not match detector dimension {self.dim}")
        return self.intercept + z @ self.weights


def predict_shouted_prob(model: LogisticModel, z):
    """P(H0|z), the probability that ``z`` comes from shouted speech."""
    return sigmoid(model.logit(z))


def predict_normal_prob(model: LogisticModel, z):
    return 1.0 - predict_shouted_prob(model, z)


def classify(model: LogisticModel, z):
    """Shouted iff the logit is strictly positive; ties go to Normal."""
    t = model.logit(z)
    if np.ndim(t) == 0:
        return Domain.SHOUTED if t > 0 else Domain.NORMAL
    return np.where(t > 0, Domain.SHOUTED.value, Domain.NORMAL.value)


def penalized_loglik(params, X, labels, l2):
    """Mean log-likelihood minus (l2/2)|w|^2; ``params[0]`` is the intercept."""
    t = params[0] + X @ params[1:]
    # log sigmoid(t) = -log(1+exp(-t)), written stably
    ll = labels * -np.logaddexp(0.0, -t) + (1 - labels) * -np.logaddexp(0.0, t)
    return float(np.mean(ll) - 0.5 * l2 * params[1:] @ params[1:])


def train_detector(shouted, normal, l2: float = DEFAULT_L2, seed: int | None = None,
                   max_iter: int = 200, gtol: float = 1e-6, init=None) -> LogisticModel:
    """Fit the detector by damped Newton ascent.

    The objective is the per-datum mean log-likelihood with an L2 penalty on
    the weights (the intercept is not penalized). Iteration stops when the
    gradient max-norm falls below ``gtol``. The start point is zero unless
    ``init`` is given or ``seed`` requests a small random start.
    """
    shouted = np.atleast_2d(np.asarray(shouted, dtype=np.float64))
    normal = np.atleast_2d(np.asarray(normal, dtype=np.float64))
    if shouted.size == 0 or normal.size == 0:
        raise DataError("detector training needs both shouted and normal examples")
    if shouted.shape[1] != normal.shape[1]:
        raise DataError("shouted and normal vectors differ in dimension")
    if l2 < 0:
        raise DataError("l2 must be non-negative")
    X = np.vstack([shouted, normal])
    labels = np.concatenate([np.ones(len(shouted)), np.zeros(len(normal))])
    n, d = X.shape
    Xa = np.hstack([np.ones((n, 1)), X])
    pen = np.full(d + 1, l2)
    pen[0] = 0.0

    if init is not None:
        params = np.array(init, dtype=np.float64).reshape(d + 1)
    elif seed is not None:
        params = np.random.default_rng(seed).normal(scale=0.1, size=d + 1)
    else:
        params = np.zeros(d + 1)

    obj = penalized_loglik(params, X, labels, l2)
    for it in range(max_iter):
        p = sigmoid(Xa @ params)
        grad = Xa.T @ (labels - p) / n - pen * params
        if np.max(np.abs(grad)) < gtol:
            break
        s = p * (1 - p)
        hess = (Xa.T * s) @ Xa / n + np.diag(pen)
        # tiny ridge keeps the solve well-posed when l2 == 0 and data saturate
        hess[np.diag_indices_from(hess)] += 1e-12
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"detector Hessian is singular: {exc}") from exc
        t = 1.0
        while True:
            cand = params + t * step
            cand_obj = penalized_loglik(cand, X, labels, l2)
            if cand_obj >= obj or t < 1e-10:
                break
            t *= 0.5
        if cand_obj < obj:
            break
        params, obj = cand, cand_obj
    else:
        logger.warning("train_detector: iteration cap %d reached", max_iter)
    if not np.all(np.isfinite(params)):
        raise NumericalError("detector training diverged")
    return LogisticModel(params[0], params[1:])


def training_accuracy(model: LogisticModel, shouted, normal) -> float:
    hits = np.sum(model.logit(np.atleast_2d(shouted)) > 0)
    hits += np.sum(model.logit(np.atleast_2d(normal)) <= 0)
    return float(hits) / (len(np.atleast_2d(shouted)) + len(np.atleast_2d(normal)))
