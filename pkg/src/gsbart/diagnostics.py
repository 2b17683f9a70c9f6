"""Posterior summaries: highest-density intervals, effective sample size, coverage."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["hdi", "effective_sample_size", "coverage", "mspe"]


def hdi(draws, level: float = 0.95):
    """Shortest interval holding ``ceil(level * m)`` of the ``m`` draws, per column.

    ``draws`` is ``(m,)`` or ``(m, k)``; returns ``(lower, upper)`` arrays of
    length ``k`` (scalars for 1-d input).
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    a = np.asarray(draws, dtype=float)
    flat = a.ndim == 1
    if flat:
        a = a[:, None]
    m = a.shape[0]
    if m == 0:
        raise ValueError("no draws")
    s = np.sort(a, axis=0)
    k = min(max(int(math.ceil(level * m)), 1), m)
    widths = s[k - 1:] - s[:m - k + 1]
    start = np.argmin(widths, axis=0)
    cols = np.arange(a.shape[1])
    lo, hi = s[start, cols], s[start + k - 1, cols]
    return (lo[0], hi[0]) if flat else (lo, hi)


def _autocorr(x):
    n = x.size
    x = x - x.mean()
    f = np.fft.rfft(x, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    return acov / acov[0]


def effective_sample_size(chain) -> tuple[float, bool]:
    """Initial-positive-sequence ESS of a scalar chain.

    Autocorrelations are summed in adjacent pairs until a pair sum turns
    non-positive.  Returns ``(ess, constant)``; a constant chain reports
    its length with ``constant=True``.  Strongly antithetic chains are
    capped at ``n * log10(n)``.
    """
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 2 or np.all(x == x[0]):
        return float(n), True
    rho = _autocorr(x)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    tau = max(tau, 1.0 / math.log10(max(n, 10)))
    return float(n / tau), False


def coverage(lower, upper, truth) -> float:
    truth = np.asarray(truth, dtype=float)
    return float(np.mean((truth >= lower) & (truth <= upper)))


def mspe(pred, truth) -> float:
    return float(np.mean((np.asarray(pred) - np.asarray(truth)) ** 2))
