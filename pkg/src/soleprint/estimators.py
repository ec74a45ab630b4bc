"""Estimator-style wrappers around the model and the baselines.

Inputs are sequences of ``Shoe``. ``score_samples`` returns per-shoe log
densities; ``score`` is the geometric mean of the per-accidental metric, so
larger is better for every model.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import contact_log_density, contact_mle, kde_fit, kde_log_density, uniform_log_density
from .core import ModelVariant, Shoe
from .grid import default_coarse_map
from .heldout import geo_mean_metric, heldout_density, per_accidental_metric_log
from .mcmc import ChainConfig, run_chain


def check_shoes(X, cm=None, allow_empty=False) -> list:
    """Validate a sequence of shoes: every element a ``Shoe`` on the grid of ``cm``."""
    if isinstance(X, Shoe):
        raise TypeError("expected a sequence of Shoe, got a single Shoe")
    shoes = list(X)
    if not shoes and not allow_empty:
        raise ValueError("need at least one shoe")
    for k, s in enumerate(shoes):
        if not isinstance(s, Shoe):
            raise TypeError(f"element {k} is {type(s).__name__}, not Shoe")
        if cm is not None and s.surface.shape != cm.shape:
            raise ValueError(f"shoe {s.shoe_id!r}: mask shape {s.surface.shape} != grid {cm.shape}")
    return shoes


class _DensityModel(BaseEstimator):
    coarse = None

    def _cm(self):
        return self.coarse if self.coarse is not None else default_coarse_map()

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self)
        shoes = check_shoes(X, self.coarse_, allow_empty=True)
        return np.array([self._log_density(s) for s in shoes])

    def metric_samples(self, X) -> np.ndarray:
        shoes = check_shoes(X, self.coarse_, allow_empty=True)
        lp = self.score_samples(shoes)
        return np.array([per_accidental_metric_log(v, s.n) for v, s in zip(lp, shoes)])

    def score(self, X, y=None) -> float:
        return geo_mean_metric(self.metric_samples(X))


class AccidentalModel(_DensityModel):
    """The hierarchical accidental model fitted by MCMC; held-out densities
    by importance sampling over the retained draws."""

    def __init__(self, n_sweeps=30000, warmup=10000, thin=1, variant="full", coarse=None,
                 importance_samples=1, random_state=None):
        self.n_sweeps = n_sweeps
        self.warmup = warmup
        self.thin = thin
        self.variant = variant
        self.coarse = coarse
        self.importance_samples = importance_samples
        self.random_state = random_state

    def fit(self, X, y=None):
        self.coarse_ = self._cm()
        shoes = check_shoes(X, self.coarse_)
        self.variant_ = ModelVariant.from_name(self.variant)
        self._rng = np.random.default_rng(self.random_state)
        cfg = ChainConfig(n_sweeps=self.n_sweeps, warmup=self.warmup, thin=self.thin, variant=self.variant_)
        self.draws_ = run_chain(shoes, self.coarse_, cfg, self._rng)
        return self

    def _log_density(self, s):
        if s.n == 0:
            return 0.0
        r = heldout_density(self.draws_, s, self.coarse_, self._rng, self.variant_, self.importance_samples)
        return r.estimate_log


class UniformModel(_DensityModel):
    """Uniform over the active set; ``fit`` only records the grid."""

    def __init__(self, coarse=None):
        self.coarse = coarse

    def fit(self, X=None, y=None):
        self.coarse_ = self._cm()
        if X is not None:
            check_shoes(X, self.coarse_, allow_empty=True)
        return self

    def _log_density(self, s):
        return uniform_log_density(self.coarse_.active, s.points)


class KDEModel(_DensityModel):
    """Pooled grid KDE of the training accidentals."""

    def __init__(self, coarse=None, restrict_to_active=False):
        self.coarse = coarse
        self.restrict_to_active = restrict_to_active

    def fit(self, X, y=None):
        self.coarse_ = self._cm()
        shoes = check_shoes(X, self.coarse_)
        pts = np.concatenate([s.points for s in shoes])
        self.kde_ = kde_fit(pts, self.coarse_.shape, self.coarse_.active if self.restrict_to_active else None)
        return self

    def _log_density(self, s):
        return kde_log_density(self.kde_, s.points)


class ContactModel(_DensityModel):
    """Log-linear shape-code model fitted by maximum likelihood."""

    def __init__(self, coarse=None, tol=1e-6, max_iter=10000):
        self.coarse = coarse
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        self.coarse_ = self._cm()
        shoes = check_shoes(X, self.coarse_)
        self.params_, self.info_ = contact_mle(shoes, self.coarse_.active, self.tol, self.max_iter)
        return self

    def _log_density(self, s):
        return contact_log_density(self.params_, s.surface, self.coarse_.active, s.points)


__all__ = ["AccidentalModel", "ContactModel", "KDEModel", "UniformModel", "check_shoes"]
