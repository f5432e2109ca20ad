"""Boys function F_n(T) = ∫_0^1 t^(2n) exp(-T t^2) dt

Small arguments use the convergent series
    F_n(T) = exp(-T) Σ_k (2T)^k / ((2n+1)(2n+3)...(2n+2k+1))
for the highest order followed by downward recursion; large arguments use the
asymptotic F_0 = ½ sqrt(π/T) followed by upward recursion, which is stable there.
"""

import numpy as np

SERIES_LIMIT = 30.0
_SERIES_TERMS = 200


def boys(n_max: int, T) -> np.ndarray:
    """Returns F_0..F_{n_max} at T, shape (n_max + 1, *T.shape)"""
    T = np.asarray(T, dtype=np.float64)
    shape = T.shape
    T = T.reshape(-1)
    out = np.empty((n_max + 1, T.size))
    small = T < SERIES_LIMIT
    if np.any(small):
        out[:, small] = _series(n_max, T[small])
    if np.any(~small):
        out[:, ~small] = _asymptotic(n_max, T[~small])
    return out.reshape((n_max + 1,) + shape)


def _series(n_max: int, T: np.ndarray) -> np.ndarray:
    term = np.full(T.shape, 1.0 / (2 * n_max + 1))
    total = term.copy()
    for k in range(1, _SERIES_TERMS):
        term = term * (2 * T) / (2 * n_max + 2 * k + 1)
        total += term
        if np.all(term <= 1e-17 * total):
            break
    exp_t = np.exp(-T)
    out = np.empty((n_max + 1,) + T.shape)
    out[n_max] = exp_t * total
    for n in range(n_max - 1, -1, -1):
        out[n] = (2 * T * out[n + 1] + exp_t) / (2 * n + 1)
    return out


def _asymptotic(n_max: int, T: np.ndarray) -> np.ndarray:
    exp_t = np.exp(-T)
    out = np.empty((n_max + 1,) + T.shape)
    out[0] = 0.5 * np.sqrt(np.pi / T)
    for n in range(n_max):
        out[n + 1] = ((2 * n + 1) * out[n] - exp_t) / (2 * T)
    return out
