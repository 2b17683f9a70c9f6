"""Backfitting Gibbs sweeps over an additive ensemble of graph-split trees."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .iit import Forest, sample_tree
from .likelihood import (
    PriorConfig,
    ResponseModel,
    calibrate_lambda,
    gradient_table,
    sample_sigma_mu,
    sample_sigma_normal,
)
from .tree import CompactTree, DecisionTree

__all__ = ["SamplerConfig", "SamplerState", "initial_state", "gibbs_sweep", "run_sampler", "initial_setup",
           "SIGMA_MU_SCALE"]

# half-range of the latent function each model is expected to cover
SIGMA_MU_SCALE = {"normal": 0.5, "count": 6.0, "binary": 3.0}


@dataclass
class SamplerConfig:
    """Schedule and prior settings of one fit."""

    n_trees: int = 50
    n_sweeps: int = 215
    burn_in: int = 15
    K: int = 20
    alpha: float = 0.95
    beta: float = 2.0
    a: float = 3.0
    b: float | None = None  # None: var(y) / n_trees for the normal model, see initial_setup
    nu: float = 3.0
    sigma_quantile: float = 0.9
    max_depth: int = 10
    seed: int = 0

    def validate(self):
        errors = []
        for name in ("n_trees", "n_sweeps", "K", "max_depth"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be at least 1")
        if not 0 <= self.burn_in <= self.n_sweeps:
            errors.append("burn_in must lie in [0, n_sweeps]")
        if not 0 < self.alpha < 1:
            errors.append("alpha must lie in (0, 1)")
        if self.beta < 0:
            errors.append("beta must be non-negative")
        if self.a <= 0 or self.nu <= 0:
            errors.append("a and nu must be positive")
        if self.b is not None and not self.b > 0:
            errors.append("b must be positive")
        if errors:
            raise ValueError("; ".join(errors))
        return self


@dataclass
class SamplerState:
    """Per-tree contributions, their total and the variance parameters.

    ``phi_hat`` always equals ``contributions.sum(axis=0)`` at the end of a
    sweep.  Quantities live on the model scale (rescaled response for the
    normal model).
    """

    model: ResponseModel
    prior: PriorConfig
    contributions: np.ndarray
    phi_hat: np.ndarray
    trees: list
    sweep: int = 0
    sigma_mu2_draws: list = field(default_factory=list)


def initial_state(model: ResponseModel, n: int, n_trees: int, prior: PriorConfig) -> SamplerState:
    contributions = np.zeros((n_trees, n))
    return SamplerState(model, prior, contributions, np.zeros(n), [None] * n_trees)


def gibbs_sweep(state: SamplerState, y, train_mask, forests: Sequence[Forest], K: int, seed=None,
                max_depth: int = 10, nu: float = 3.0, lam: float = 1.0) -> SamplerState:
    """One deterministic sweep: every tree in turn, then ``sigma_mu**2`` and ``sigma``."""
    rng = np.random.default_rng(seed)
    model, prior = state.model, state.prior
    train = np.asarray(train_mask, dtype=bool)
    for t in range(state.contributions.shape[0]):
        old = state.contributions[t]
        table = gradient_table(model, y, state.phi_hat, old)
        tree, new = sample_tree(forests[t], table, prior, train, K, rng, model, y, max_depth)
        state.phi_hat += new - old
        state.contributions[t] = new
        state.trees[t] = tree
    state.phi_hat = state.contributions.sum(axis=0)
    weights = np.concatenate([[nd.leaf_weight for nd in tr.nodes if nd.kind == "leaf"] for tr in state.trees])
    state.prior = replace(prior, sigma_mu2=sample_sigma_mu(weights, prior, rng))
    if model.kind == "normal":
        resid = y[train] - state.phi_hat[train]
        state.model = replace(model, sigma=math.sqrt(sample_sigma_normal(resid, nu, lam, rng)))
    state.sweep += 1
    return state


def initial_setup(y, train_mask, model: ResponseModel, cfg: SamplerConfig, sigma_hat: float | None = None):
    """Starting ``(model, prior)``: leaf scale from the model kind, noise scale from the data."""
    s_mu2 = (SIGMA_MU_SCALE[model.kind] / (2 * math.sqrt(cfg.n_trees))) ** 2
    y_train = np.asarray(y, dtype=float)[np.asarray(train_mask, bool)]
    if cfg.b is not None:
        b = cfg.b
    elif model.kind == "normal" and y_train.size > 1 and np.var(y_train) > 0:
        b = float(np.var(y_train)) / cfg.n_trees
    else:
        # y is not on the latent scale here; centre the sigma_mu**2 prior on its initial value
        b = s_mu2 * max(cfg.a - 2, 1.0)
    prior = PriorConfig(alpha=cfg.alpha, beta=cfg.beta, mu0=0.0, sigma_mu2=s_mu2, a=cfg.a, b=b, nu=cfg.nu)
    if model.kind == "normal":
        if sigma_hat is None:
            sigma_hat = float(np.std(y_train, ddof=1))
        lam = calibrate_lambda(sigma_hat, cfg.nu, cfg.sigma_quantile)
        model = replace(model, sigma=sigma_hat)
        prior = replace(prior, lam=lam)
    return model, prior


@dataclass
class SweepRecord:
    sweep: int
    trees: list  # CompactTree per weak learner
    sigma: float
    sigma_mu2: float
    phi: np.ndarray


def run_sampler(y, train_mask, forests: Sequence[Forest], model: ResponseModel, cfg: SamplerConfig,
                sigma_hat: float | None = None, on_sweep: Callable | None = None):
    """Run the full schedule; returns ``(state, records)``.

    ``records`` holds one :class:`SweepRecord` per post-burn-in sweep.
    ``on_sweep(state)`` is called after every sweep (for traces).
    """
    cfg.validate()
    if len(forests) != cfg.n_trees:
        raise ValueError("need one candidate forest per tree")
    rng = np.random.default_rng(cfg.seed)
    model, prior = initial_setup(y, train_mask, model, cfg, sigma_hat)
    lam = prior.lam
    state = initial_state(model, len(y), cfg.n_trees, prior)
    records = []
    for sweep in range(cfg.n_sweeps):
        gibbs_sweep(state, y, train_mask, forests, cfg.K, rng, cfg.max_depth, cfg.nu, lam)
        if sweep >= cfg.burn_in:
            records.append(SweepRecord(sweep, [CompactTree.from_tree(tr) for tr in state.trees],
                                       state.model.sigma, state.prior.sigma_mu2, state.phi_hat.copy()))
        if on_sweep is not None:
            on_sweep(state)
    return state, records
