"""Scikit-learn style wrappers around the suppression pipeline.

``RibSuppressor`` is a stateless transformer: construct with
hyperparameters, call ``transform(image, masks)``.  ``TunedRibSuppressor``
is fit/transform shaped like a search estimator: ``fit(image, masks)``
runs the per-image random grid search and stores ``best_params_``,
``best_score_`` and ``trace_``.  Both expose get_params/set_params so
they compose with the wider scikit-learn ecosystem.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .suppression import SuppressionParams, suppress_all
from .tuner import (
    DEFAULT_SEED,
    DEFAULT_SPACE,
    random_grid_search,
    supervised_objective,
    unsupervised_objective,
)


class RibSuppressor(BaseEstimator):
    """Rib suppression with fixed hyperparameters."""

    def __init__(self, kappa_t=15.0, tau=0.5, k_center=5, s_b=3.0,
                 k_border=5, dt=1.0, ds=1.0):
        self.kappa_t = kappa_t
        self.tau = tau
        self.k_center = k_center
        self.s_b = s_b
        self.k_border = k_border
        self.dt = dt
        self.ds = ds

    def _suppression_params(self):
        return SuppressionParams(
            kappa_t=self.kappa_t,
            tau=self.tau,
            k_center=self.k_center,
            s_b=self.s_b,
            k_border=self.k_border,
        )

    def fit(self, image=None, masks=None):
        """Stateless; present for pipeline compatibility."""
        return self

    def suppress(self, image, masks, keep_fields=False):
        """Full result object (soft image, bone patches, debug fields)."""
        return suppress_all(
            image, masks, self._suppression_params(),
            dt=self.dt, ds=self.ds, keep_fields=keep_fields,
        )

    def transform(self, image, masks):
        """Soft-tissue image after suppressing every rib in ``masks``."""
        return self.suppress(image, masks).soft


class TunedRibSuppressor(BaseEstimator):
    """Per-image hyperparameter search wrapped as a fit/transform estimator.

    ``objective`` is 'unsupervised', a callable(soft, masks) -> value, or
    'supervised' together with ``gt_soft``.
    """

    def __init__(self, space=DEFAULT_SPACE, budget=50, seed=DEFAULT_SEED,
                 objective="unsupervised", gt_soft=None, n_threads=1,
                 dt=1.0, ds=1.0):
        self.space = space
        self.budget = budget
        self.seed = seed
        self.objective = objective
        self.gt_soft = gt_soft
        self.n_threads = n_threads
        self.dt = dt
        self.ds = ds

    def _objective_fn(self):
        if callable(self.objective):
            return self.objective
        if self.objective == "unsupervised":
            return unsupervised_objective
        if self.objective == "supervised":
            if self.gt_soft is None:
                raise ValueError("supervised objective needs gt_soft")
            return supervised_objective(self.gt_soft)
        raise ValueError(f"unknown objective {self.objective!r}")

    def fit(self, image, masks):
        best, trace = random_grid_search(
            image,
            masks,
            space=self.space,
            budget=self.budget,
            objective=self._objective_fn(),
            seed=self.seed,
            n_threads=self.n_threads,
            dt=self.dt,
            ds=self.ds,
        )
        self.best_params_ = best
        self.best_score_ = trace.best.objective
        self.trace_ = trace
        return self

    def transform(self, image, masks):
        if not hasattr(self, "best_params_"):
            raise NotFittedError("call fit before transform")
        return suppress_all(
            image, masks, self.best_params_, dt=self.dt, ds=self.ds
        ).soft
