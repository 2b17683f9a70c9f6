"""Response models, quadratic marginal likelihoods and conjugate updates.

The per-sample log-likelihood is expanded to second order around the
current fit; with that surrogate every leaf has a closed-form marginal
likelihood depending on two sufficient statistics

    J = sum(ldot - phi_t * lddot),   H = -sum(lddot)

over the leaf's training samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special, stats

__all__ = [
    "ResponseModel",
    "GradientTable",
    "LeafStats",
    "PriorConfig",
    "gradients",
    "gradient_table",
    "leaf_stats",
    "log_m_hat",
    "split_log_ratio",
    "merge_log_ratio",
    "split_log_ratio_arrays",
    "sample_leaf_weight",
    "sample_sigma_mu",
    "sample_sigma_normal",
    "calibrate_lambda",
    "exact_log_likelihood",
    "MODEL_KINDS",
]

MODEL_KINDS = ("normal", "count", "binary")
_LOG2PI = math.log(2 * math.pi)
PHI_CLAMP = 30.0


@dataclass
class ResponseModel:
    """Per-sample likelihood of the response given the latent ``phi``.

    ``kind`` is one of ``normal`` (Gaussian, noise scale ``sigma``),
    ``count`` (variance model ``y ~ N(e^phi, e^phi)``, with an additive
    ``offset`` inside ``phi``) or ``binary`` (logistic).
    """

    kind: str = "normal"
    sigma: float = 1.0
    offset: np.ndarray | float | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.kind == "normal" and not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def _eta(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.kind == "count":
            if self.offset is not None:
                phi = phi + self.offset
            return np.clip(phi, -PHI_CLAMP, PHI_CLAMP)
        return phi

    def loglik(self, y, phi) -> np.ndarray:
        """Exact per-sample log density or mass."""
        y = np.asarray(y, dtype=float)
        eta = self._eta(phi)
        if self.kind == "normal":
            s2 = self.sigma ** 2
            return -0.5 * (_LOG2PI + math.log(s2)) - (y - eta) ** 2 / (2 * s2)
        if self.kind == "count":
            lam = np.exp(eta)
            return -0.5 * _LOG2PI - 0.5 * eta - (y - lam) ** 2 / (2 * lam)
        return y * eta - np.logaddexp(0.0, eta)

    def derivatives(self, y, phi) -> tuple[np.ndarray, np.ndarray]:
        """First and second derivatives of ``loglik`` with respect to ``phi``."""
        y = np.asarray(y, dtype=float)
        eta = self._eta(phi)
        if self.kind == "normal":
            s2 = self.sigma ** 2
            return (y - eta) / s2, np.full(np.broadcast(y, eta).shape, -1.0 / s2)
        if self.kind == "count":
            lam = np.exp(eta)
            q = (y - lam) ** 2 / (2 * lam)
            return -0.5 + q + y - lam, -y - q
        p, q = special.expit(eta), special.expit(-eta)
        # y - p written so neither branch subtracts nearly equal numbers
        return y * q - (1 - y) * p, -p * q


def gradients(model: ResponseModel, y, phi_hat):
    ldot, lddot = model.derivatives(y, phi_hat)
    if not (np.all(np.isfinite(ldot)) and np.all(np.isfinite(lddot))):
        raise FloatingPointError("non-finite likelihood derivatives")
    return ldot, lddot


def exact_log_likelihood(model: ResponseModel, y, phi) -> float:
    return float(np.sum(model.loglik(y, phi)))


@dataclass
class GradientTable:
    """Derivatives at the current fit for the tree being updated.

    All arrays are indexed by sample; only training entries are consulted
    when forming leaf statistics.
    """

    ldot: np.ndarray
    lddot: np.ndarray
    phi_hat: np.ndarray
    phi_t_hat: np.ndarray
    j: np.ndarray = field(init=False, repr=False)
    h: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if np.any(self.lddot > 0):
            raise ValueError("second derivatives must be non-positive")
        self.j = self.ldot - self.phi_t_hat * self.lddot
        self.h = -self.lddot


def gradient_table(model: ResponseModel, y, phi_hat, phi_t_hat) -> GradientTable:
    ldot, lddot = gradients(model, y, phi_hat)
    return GradientTable(ldot, lddot, np.asarray(phi_hat, float), np.asarray(phi_t_hat, float))


class LeafStats(NamedTuple):
    J: float = 0.0
    H: float = 0.0
    count: int = 0

    def __add__(self, other):
        return LeafStats(self.J + other.J, self.H + other.H, self.count + other.count)

    def __sub__(self, other):
        return LeafStats(self.J - other.J, self.H - other.H, self.count - other.count)


def leaf_stats(indices, table: GradientTable) -> LeafStats:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return LeafStats()
    return LeafStats(float(table.j[idx].sum()), float(table.h[idx].sum()), int(idx.size))


@dataclass
class PriorConfig:
    """Hyperparameters of the tree, leaf-weight and variance priors."""

    alpha: float = 0.95
    beta: float = 2.0
    mu0: float = 0.0
    sigma_mu2: float = 0.0625
    a: float = 3.0
    b: float = 0.01
    nu: float = 3.0
    lam: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not (self.sigma_mu2 > 0 and self.a > 0 and self.b > 0):
            raise ValueError("sigma_mu2, a and b must be positive")

    def p_split(self, depth):
        return self.alpha * (1.0 + np.asarray(depth, dtype=float)) ** (-self.beta)


def log_m_hat(stats: LeafStats, const_term: float, prior: PriorConfig) -> float:
    """Log marginal likelihood of one leaf under the quadratic surrogate.

    ``const_term`` is the leaf sum of ``L - phi_t * ldot + phi_t**2 * lddot / 2``;
    it cancels in every split or merge ratio.
    """
    s2 = prior.sigma_mu2
    prec = stats.H + 1.0 / s2
    lin = stats.J + prior.mu0 / s2
    return (-prior.mu0 ** 2 / (2 * s2) + const_term + lin * lin / (2 * prec)
            - 0.5 * math.log(s2) - 0.5 * math.log(prec))


def split_log_ratio_arrays(jp, hp, jl, hl, jr, hr, mu0: float, sigma_mu2: float):
    """Vectorised split log-ratio ``log m(L) + log m(R) - log m(parent)``."""
    inv = 1.0 / sigma_mu2
    m = mu0 * inv
    pl, pr, pp = hl + inv, hr + inv, hp + inv
    quad = (jl + m) ** 2 / pl + (jr + m) ** 2 / pr - (jp + m) ** 2 / pp - mu0 * m
    return 0.5 * quad - 0.5 * (np.log(pl) + np.log(pr) - np.log(pp)) - 0.5 * math.log(sigma_mu2)


def _check_additive(parent, left, right):
    scale = 1.0 + abs(parent.J) + abs(parent.H)
    if (abs(left.J + right.J - parent.J) > 1e-9 * scale
            or abs(left.H + right.H - parent.H) > 1e-9 * scale
            or left.count + right.count != parent.count):
        raise ValueError("child statistics do not add up to the parent")


def split_log_ratio(parent: LeafStats, left: LeafStats, right: LeafStats, prior: PriorConfig) -> float:
    _check_additive(parent, left, right)
    return float(split_log_ratio_arrays(parent.J, parent.H, left.J, left.H, right.J, right.H,
                                        prior.mu0, prior.sigma_mu2))


def merge_log_ratio(left: LeafStats, right: LeafStats, prior: PriorConfig) -> float:
    """Log marginal ratio of merging two sibling leaves into one."""
    s2 = prior.sigma_mu2
    inv = 1.0 / s2
    m = prior.mu0 * inv
    merged = left + right
    pm, pl, pr = merged.H + inv, left.H + inv, right.H + inv
    quad = (merged.J + m) ** 2 / pm - (left.J + m) ** 2 / pl - (right.J + m) ** 2 / pr + prior.mu0 * m
    return 0.5 * quad - 0.5 * (math.log(pm) - math.log(pl) - math.log(pr)) + 0.5 * math.log(s2)


def leaf_posterior(stats: LeafStats, prior: PriorConfig) -> tuple[float, float]:
    """Mean and variance of the conditional normal posterior of a leaf weight."""
    prec = stats.H + 1.0 / prior.sigma_mu2
    return (stats.J + prior.mu0 / prior.sigma_mu2) / prec, 1.0 / prec


def sample_leaf_weight(stats: LeafStats, prior: PriorConfig, seed=None) -> float:
    rng = np.random.default_rng(seed)
    mean, var = leaf_posterior(stats, prior)
    return float(mean + math.sqrt(var) * rng.standard_normal())


def _inv_gamma(rng, shape, scale):
    return scale / rng.gamma(shape)


def sample_sigma_mu(leaf_weights, prior: PriorConfig, seed=None) -> float:
    """Draw ``sigma_mu**2`` given every leaf weight of the ensemble."""
    rng = np.random.default_rng(seed)
    w = np.asarray(leaf_weights, dtype=float).ravel()
    shape = (w.size + prior.a) / 2
    scale = (np.sum((w - prior.mu0) ** 2) + prior.b) / 2
    return float(_inv_gamma(rng, shape, scale))


def sample_sigma_normal(residuals, nu: float, lam: float, seed=None, model: ResponseModel | None = None) -> float:
    """Draw the Gaussian noise variance from its inverse-gamma posterior."""
    if model is not None and model.kind != "normal":
        raise ValueError("sigma is only sampled for the normal model")
    rng = np.random.default_rng(seed)
    r = np.asarray(residuals, dtype=float).ravel()
    shape = (nu + r.size) / 2
    scale = (nu * lam + np.sum(r * r)) / 2
    return float(_inv_gamma(rng, shape, scale))


def calibrate_lambda(sigma_hat: float, nu: float = 3.0, q: float = 0.9) -> float:
    """Scale of the ``sigma**2`` prior such that ``P(sigma < sigma_hat) = q``."""
    return float(sigma_hat ** 2 * stats.chi2.ppf(1 - q, nu) / nu)
