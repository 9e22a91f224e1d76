"""scikit-learn style wrappers.

:class:`GFKEnergyEstimator` runs an ensemble in ``fit`` and exposes the
energy as fitted attributes; :class:`TransientExtrapolator` is a regressor
over ``(t, E(t))`` whose ``predict`` evaluates the fitted transient.  Both
follow the usual ``get_params`` / ``set_params`` contract, so they can be
cloned and swept with standard tools.  The underlying functions in
:mod:`gfkqmc.walk` and :mod:`gfkqmc.estimate` remain the primary API.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import estimate as est
from .trial import lambda_T_estimate
from .walk import WalkParams, run_ensemble


def _model_curve(extrapolation, t):
    t = np.asarray(t, dtype=float)
    p = extrapolation.params
    if extrapolation.model == "exponential":
        return p["E_inf"] + p["a"] * np.exp(-p["b"] * t)
    if extrapolation.model == "inverse_t":
        return p["E_inf"] + p["a"] / t
    return np.full_like(t, extrapolation.E_inf)


class TransientExtrapolator(RegressorMixin, BaseEstimator):
    """Regressor for ``E(t)``; ``E_inf_`` is the infinite-time limit.

    Args:
        model: ``"inverse_t"`` or ``"exponential"`` (see :func:`gfkqmc.estimate.extrapolate`).
        min_points: Minimum number of horizons.
    """

    def __init__(self, model="inverse_t", min_points=4):
        self.model = model
        self.min_points = min_points

    def fit(self, X, y, sigma=None):
        t = np.asarray(X, dtype=float).reshape(-1)
        E = np.asarray(y, dtype=float).reshape(-1)
        s = np.ones_like(E) if sigma is None else np.asarray(sigma, dtype=float).reshape(-1)
        self.result_ = est.extrapolate(est.EnergySeries(t, E, s), model=self.model, min_points=self.min_points)
        self.E_inf_ = self.result_.E_inf
        self.sigma_ = self.result_.sigma
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return _model_curve(self.result_, np.asarray(X, dtype=float).reshape(-1))


class GFKEnergyEstimator(BaseEstimator):
    """Ground-state energy of ``system`` by a generalized Feynman-Kac run.

    ``fit`` takes no data: the "training set" is the ensemble of paths the
    estimator generates itself.  After fitting, ``energy_`` and ``sigma_``
    hold the extrapolated energy, ``ensemble_`` the raw per-path records and
    ``series_`` the per-horizon energies.  ``predict(t)`` evaluates the
    fitted transient ``E(t)``.

    Args:
        system: :class:`~gfkqmc.system.SystemSpec`.
        trial: Guide function, or ``None`` for the plain Feynman-Kac walk.
        n: Steps per unit time.
        horizons: Report times; the last one is ``t_max``.
        n_rep: Number of paths.
        seed: Master seed.
        lambda_T: Reference energy; ``None`` estimates it from the trial.
        model: Extrapolation model.
        burn_in: Burn-in duration of the start sampler.
        start_spread: Jitter of the start positions.
        workers: Worker processes.
    """

    def __init__(
        self, system=None, trial=None, n=30, horizons=(8, 16, 24, 32, 40, 48), n_rep=1000, seed=0,
        lambda_T=None, model="inverse_t", burn_in=2.0, start_spread=0.5, workers=1,
    ):
        self.system = system
        self.trial = trial
        self.n = n
        self.horizons = horizons
        self.n_rep = n_rep
        self.seed = seed
        self.lambda_T = lambda_T
        self.model = model
        self.burn_in = burn_in
        self.start_spread = start_spread
        self.workers = workers

    def fit(self, X=None, y=None):
        if self.system is None:
            raise ValueError("system must be set before fit")
        horizons = [float(t) for t in self.horizons]
        params = WalkParams(
            n=self.n, t_max=horizons[-1], horizons=horizons, n_rep=self.n_rep, seed=self.seed,
            burn_in=self.burn_in, start_spread=self.start_spread,
        )
        lam = self.lambda_T
        if lam is None:
            lam = 0.0 if self.trial is None else lambda_T_estimate(
                self.trial, self.system, n=self.n, burn_in=self.burn_in, seed=self.seed,
                start_spread=self.start_spread,
            )[0]
        self.lambda_T_ = float(lam)
        self.ensemble_ = run_ensemble(self.system, self.trial, params, lambda_T=self.lambda_T_, workers=self.workers)
        self.series_ = est.energy_series(self.ensemble_)
        if len(horizons) >= 4:
            self.extrapolation_ = est.extrapolate_ensemble(self.ensemble_, model=self.model)
        else:
            E, s = self.series_.E[-1], self.series_.sigma[-1]
            self.extrapolation_ = est.Extrapolation(float(E), float(s), "last_horizon", {"E_inf": float(E)})
        self.energy_ = self.extrapolation_.E_inf
        self.sigma_ = self.extrapolation_.sigma
        return self

    def predict(self, X):
        """Fitted ``E(t)`` at the times ``X``."""
        check_is_fitted(self, "extrapolation_")
        return _model_curve(self.extrapolation_, np.asarray(X, dtype=float).reshape(-1))

    def property(self, name, t=None):
        """Weighted expectation of a recorded property (``"V"``, ``"E_L"``, ...)."""
        if not hasattr(self, "ensemble_"):
            raise NotFittedError("call fit first")
        return est.property_expectation(self.ensemble_, name, t)
