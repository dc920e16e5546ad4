"""Pure numpy implementations of the compiled kernels."""

import numpy as np

_CHUNK = 65536


def log_joint(X, means, variances, log_weights):
    """log P(s) + log N(x | mu_s, diag(var_s)) for every row x and component s."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    inv = 1.0 / variances
    const = log_weights - 0.5 * np.sum(np.log(2.0 * np.pi * variances), axis=1)
    out = np.empty((X.shape[0], means.shape[0]))
    for c in range(means.shape[0]):
        diff = X - means[c]
        out[:, c] = const[c] - 0.5 * np.sum(diff * diff * inv[c], axis=1)
    return out


def pair_dot(U, a, b):
    """Row-wise dot products U[a[t]] . U[b[t]]."""
    out = np.empty(len(a))
    for start in range(0, len(a), _CHUNK):
        sl = slice(start, start + _CHUNK)
        out[sl] = np.einsum("ij,ij->i", U[a[sl]], U[b[sl]])
    return out
