"""Energies, properties and error bars from ensemble weights.

The energy at horizon ``t`` follows from the mean path weight
``Z(t) = mean(exp(-int V_p))`` as ``E(t) = lambda_T - ln Z(t) / t``.  Errors
come from the delta method and are cross-checked with a delete-one
jackknife over replications.  :func:`extrapolate` turns the per-horizon
series into an infinite-time estimate.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .exceptions import DegenerateEnsemble, FitFailed

logger = logging.getLogger(__name__)


@dataclass
class EnsembleResult:
    """Per-path records of an ensemble run.

    Attributes:
        horizons: Report times, strictly increasing.
        log_weights: ``(n_rep, H)`` values of ``-int_0^t V_p ds`` per path.
        properties: Name -> ``(n_rep, H)`` values recorded at each horizon.
        lambda_T: Reference energy used in ``V_p``.
        aborted: Paths dropped because they ran out of retries.
        singular_hits: Redraws per path.
    """

    horizons: np.ndarray
    log_weights: np.ndarray
    properties: dict
    lambda_T: float
    aborted: Optional[np.ndarray] = None
    singular_hits: Optional[np.ndarray] = None
    seed: Optional[int] = None
    n: Optional[int] = None

    def __post_init__(self):
        self.horizons = np.asarray(self.horizons, dtype=float)
        self.log_weights = np.atleast_2d(np.asarray(self.log_weights, dtype=float))
        if self.log_weights.shape[1] != self.horizons.size:
            raise ValueError("log_weights must have one column per horizon")
        if np.any(np.diff(self.horizons) <= 0):
            raise ValueError("horizons must be strictly increasing")
        N = self.log_weights.shape[0]
        if self.aborted is None:
            self.aborted = np.zeros(N, dtype=bool)
        if self.singular_hits is None:
            self.singular_hits = np.zeros(N, dtype=np.int64)
        self.properties = {k: np.atleast_2d(np.asarray(v, dtype=float)) for k, v in self.properties.items()}

    @property
    def n_paths(self):
        return int((~self.aborted).sum())

    @property
    def n_aborted(self):
        return int(self.aborted.sum())

    def horizon_index(self, t):
        idx = np.nonzero(np.isclose(self.horizons, t, rtol=1e-12, atol=1e-12))[0]
        if idx.size == 0:
            raise KeyError(f"t = {t} is not a recorded horizon")
        return int(idx[0])

    def log_weights_at(self, t):
        return self.log_weights[~self.aborted, self.horizon_index(t)]

    def mean_Z(self, t):
        return float(np.mean(np.exp(self.log_weights_at(t))))

    def sigma_Z(self, t):
        """Standard error of the mean weight."""
        z = np.exp(self.log_weights_at(t))
        return float(np.std(z, ddof=1) / math.sqrt(z.size))

    def effective_sample_size(self, t):
        lw = self.log_weights_at(t)
        w = np.exp(lw - lw.max())
        return float(w.sum() ** 2 / np.sum(w * w))


def _scaled_weights(lw):
    # exp(lw - shift) keeps the arithmetic finite for large |lw|
    shift = float(np.max(lw))
    return np.exp(lw - shift), shift


def energy_at_t(ens: EnsembleResult, t: float):
    """``(E, sigma_E)`` at horizon ``t`` with ``sigma_E = sigma_Z / (Z t)``.

    Raises:
        DegenerateEnsemble: if the mean weight is not positive or the error is not finite.
    """
    lw = ens.log_weights_at(t)
    if lw.size < 2 or not np.all(np.isfinite(lw)):
        raise DegenerateEnsemble(f"non-finite or too few weights at t = {t}")
    w, shift = _scaled_weights(lw)
    mean = w.mean()
    if not mean > 0:
        raise DegenerateEnsemble(f"mean weight is not positive at t = {t}")
    sig = w.std(ddof=1) / math.sqrt(w.size)
    E = ens.lambda_T - (math.log(mean) + shift) / t
    sigma = sig / (mean * t)
    if not math.isfinite(sigma) or not math.isfinite(E):
        raise DegenerateEnsemble(f"non-finite energy estimate at t = {t}")
    return E, sigma


def energy_at_t_jackknife(ens: EnsembleResult, t: float):
    """Delete-one jackknife estimate ``(E, sigma_E)`` of the same quantity."""
    lw = ens.log_weights_at(t)
    w, shift = _scaled_weights(lw)
    N = w.size
    loo = (w.sum() - w) / (N - 1)
    if np.any(loo <= 0):
        raise DegenerateEnsemble("a leave-one-out mean weight vanished")
    E_i = ens.lambda_T - (np.log(loo) + shift) / t
    E_full = ens.lambda_T - (math.log(w.mean()) + shift) / t
    E_bar = E_i.mean()
    var = (N - 1) / N * np.sum((E_i - E_bar) ** 2)
    return N * E_full - (N - 1) * E_bar, float(math.sqrt(var))


def property_expectation(ens: EnsembleResult, name: str, t: Optional[float] = None):
    """Weighted average ``sum Z_i A_i / sum Z_i`` at horizon ``t`` (default: last).

    Returns the jackknife bias-corrected ratio and its jackknife error.
    """
    if name not in ens.properties:
        raise KeyError(f"property {name!r} was not recorded")
    t = ens.horizons[-1] if t is None else t
    h = ens.horizon_index(t)
    keep = ~ens.aborted
    lw = ens.log_weights[keep, h]
    A = ens.properties[name][keep, h]
    if not np.all(np.isfinite(lw)) or not np.all(np.isfinite(A)):
        raise DegenerateEnsemble(f"non-finite records for {name!r} at t = {t}")
    w, _ = _scaled_weights(lw)
    N = w.size
    sw, swa = w.sum(), (w * A).sum()
    if not sw > 0:
        raise DegenerateEnsemble("weights sum to zero")
    full = swa / sw
    den = sw - w
    if np.any(den <= 0):
        raise DegenerateEnsemble("a leave-one-out weight sum vanished")
    loo = (swa - w * A) / den
    bar = loo.mean()
    sigma = math.sqrt((N - 1) / N * np.sum((loo - bar) ** 2))
    return float(N * full - (N - 1) * bar), float(sigma)


def virial_ratio(V: float, E: float) -> float:
    """``-<V>/<T>`` with ``<T> = E - <V>``; NaN when ``|<T>| < 1e-12``."""
    T = E - V
    if abs(T) < 1e-12:
        return float("nan")
    return -V / T


# -- series and extrapolation -------------------------------------------------


@dataclass
class EnergySeries:
    t: np.ndarray
    E: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.E = np.asarray(self.E, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not (self.t.shape == self.E.shape == self.sigma.shape):
            raise ValueError("t, E and sigma must have the same shape")


def energy_series(ens: EnsembleResult) -> EnergySeries:
    rows = [energy_at_t(ens, t) for t in ens.horizons]
    return EnergySeries(ens.horizons.copy(), np.array([r[0] for r in rows]), np.array([r[1] for r in rows]))


@dataclass
class Extrapolation:
    """Result of :func:`extrapolate`; unpacks as ``(E_inf, sigma)``."""

    E_inf: float
    sigma: float
    model: str
    params: dict = field(default_factory=dict)
    covariance: Optional[list] = None
    chi2: float = float("nan")
    dof: int = 0
    fallback: bool = False
    note: str = ""

    def __iter__(self):
        yield self.E_inf
        yield self.sigma

    def to_dict(self):
        return {
            "E_inf": self.E_inf,
            "sigma": self.sigma,
            "model": self.model,
            "params": self.params,
            "covariance": self.covariance,
            "chi2": self.chi2,
            "dof": self.dof,
            "fallback": self.fallback,
            "note": self.note,
        }


def _floor_sigma(series):
    s = np.asarray(series.sigma, dtype=float)
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise FitFailed("sigma values must be finite and non-negative")
    # zero-variance runs: use a tiny floor so the weighting stays defined
    floor = max(1e-300, 1e-12 * max(1.0, float(np.max(np.abs(series.E)))))
    return np.maximum(s, floor), bool(np.all(s == 0))


def plateau(series: EnergySeries, note="") -> Extrapolation:
    """Weighted mean of the last half of the horizons."""
    sig, exact = _floor_sigma(series)
    k = len(series.t) // 2
    E, s = series.E[k:], sig[k:]
    w = 1.0 / (s * s)
    mean = float(np.sum(w * E) / np.sum(w))
    err = 0.0 if exact else float(1.0 / math.sqrt(np.sum(w)))
    chi2 = float(np.sum(w * (E - mean) ** 2))
    if not math.isfinite(mean):
        raise FitFailed("plateau average is not finite")
    birge = _birge_ratio(chi2, E.size - 1)
    return Extrapolation(
        mean, err * birge, "plateau", {"n_points": int(E.size), "birge_ratio": birge}, None, chi2, int(E.size - 1),
        True, note,
    )


def _birge_ratio(chi2, dof):
    """``sqrt(chi2/dof)`` when the scatter exceeds the quoted errors, else 1."""
    if dof <= 0 or not chi2 > dof:
        return 1.0
    return math.sqrt(chi2 / dof)


def _fit_exponential(series, sig):
    t, E = series.t, series.E

    def model(t, E_inf, a, b):
        return E_inf + a * np.exp(-b * t)

    span = float(t[-1] - t[0]) or 1.0
    p0 = [float(E[-1]), float(E[0] - E[-1]), 3.0 / span]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        popt, pcov = curve_fit(
            model, t, E, p0=p0, sigma=sig, absolute_sigma=True, bounds=([-np.inf, -np.inf, 0.0], np.inf),
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000,
        )
    resid = (E - model(t, *popt)) / sig
    return popt, pcov, float(resid @ resid)


def _fit_inverse_t(series, sig):
    t, E = series.t, series.E
    A = np.column_stack([np.ones_like(t), 1.0 / t]) / sig[:, None]
    y = E / sig
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    resid = y - A @ coef
    return coef, cov, float(resid @ resid)


def extrapolate(series: EnergySeries, model: str = "exponential", min_points: int = 4) -> Extrapolation:
    """Infinite-time energy from a per-horizon series.

    ``model="exponential"`` fits ``E(t) = E_inf + a exp(-b t)`` by weighted
    nonlinear least squares (weights ``1/sigma^2``, ``b >= 0``).
    ``model="inverse_t"`` fits ``E(t) = E_inf + a / t`` by weighted linear
    least squares; this is the asymptotic form of ``lambda_T - ln Z(t)/t``
    when the transient is dominated by the overlap of the start
    distribution with the ground state.

    When the residual scatter exceeds the quoted errors (``chi2 > dof``)
    the parameter error is multiplied by the Birge ratio
    ``sqrt(chi2/dof)``, as for a fit with unknown overall error scale.

    If the fit is ill-conditioned (non-finite covariance, or an
    unidentifiable rate) the weighted mean of the last half of the horizons
    is returned with ``fallback=True``.

    Raises:
        FitFailed: if neither the fit nor the fallback yields finite numbers.
    """
    if len(series.t) < min_points:
        raise FitFailed(f"need at least {min_points} horizons, got {len(series.t)}")
    if not np.all(np.isfinite(series.E)):
        raise FitFailed("energy series has non-finite values")
    sig, exact = _floor_sigma(series)
    try:
        if model == "exponential":
            popt, pcov, chi2 = _fit_exponential(series, sig)
            names = ("E_inf", "a", "b")
        elif model == "inverse_t":
            popt, pcov, chi2 = _fit_inverse_t(series, sig)
            names = ("E_inf", "a")
        else:
            raise ValueError(f"unknown extrapolation model {model!r}")
    except (RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
        if isinstance(exc, ValueError) and "unknown extrapolation model" in str(exc):
            raise
        logger.info("fit failed (%s); using plateau", exc)
        return plateau(series, note=f"{model} fit failed: {exc}")

    var = float(pcov[0, 0])
    ill = not np.all(np.isfinite(pcov)) or not np.all(np.isfinite(popt)) or var < 0
    if model == "exponential" and not ill:
        b = float(popt[2])
        span = float(series.t[-1] - series.t[0]) or 1.0
        a_err = math.sqrt(abs(pcov[1, 1])) if np.isfinite(pcov[1, 1]) else float("inf")
        # rate unresolved: amplitude consistent with zero or decay invisible over the window
        if b <= 0 or b * span < 1e-3 or abs(popt[1]) <= a_err:
            ill = True
    if ill:
        return plateau(series, note=f"{model} fit ill-conditioned")
    dof = int(len(series.t) - len(names))
    birge = _birge_ratio(chi2, dof)
    err = 0.0 if exact else math.sqrt(var) * birge
    params = {k: float(v) for k, v in zip(names, popt)}
    params["birge_ratio"] = birge
    return Extrapolation(float(popt[0]), err, model, params, np.asarray(pcov).tolist(), chi2, dof, False)


# -- reporting ------------------------------------------------------------------


def horizon_table(ens: EnsembleResult):
    """Rows ``(t, E, sigma_E, <V>, <T>, virial)`` for every horizon."""
    rows = []
    for t in ens.horizons:
        E, s = energy_at_t(ens, t)
        V, _ = property_expectation(ens, "V", t) if "V" in ens.properties else (float("nan"), 0.0)
        rows.append({"t": float(t), "E": E, "sigma_E": s, "V": V, "T": E - V, "virial_ratio": virial_ratio(V, E)})
    return rows


CSV_COLUMNS = ("t", "E", "sigma_E", "V", "T", "virial_ratio")


def table_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(float(row[k])) for k in CSV_COLUMNS})
    return buf.getvalue()


def series_from_csv(text: str) -> EnergySeries:
    reader = csv.DictReader(io.StringIO(text))
    missing = {"t", "E", "sigma_E"} - set(reader.fieldnames or ())
    if missing:
        raise FitFailed(f"CSV lacks columns {sorted(missing)}")
    t, E, s = [], [], []
    for row in reader:
        t.append(float(row["t"]))
        E.append(float(row["E"]))
        s.append(float(row["sigma_E"]))
    return EnergySeries(np.array(t), np.array(E), np.array(s))


def extrapolate_ensemble(ens: EnsembleResult, model: str = "inverse_t", n_blocks: int = 20) -> Extrapolation:
    """Extrapolate an ensemble with a block-jackknife error bar.

    Energies at different horizons come from the same paths and are
    strongly correlated, so the covariance of a weighted least-squares fit
    that treats them as independent misstates the error.  The fit is
    repeated with each of ``n_blocks`` contiguous path blocks left out and
    the spread of those refits gives ``sigma``.  The central value is the
    fit on the full ensemble.
    """
    full = extrapolate(energy_series(ens), model=model)
    keep = np.nonzero(~ens.aborted)[0]
    n_blocks = int(min(n_blocks, keep.size))
    if n_blocks < 2 or full.sigma == 0.0:
        return full
    blocks = np.array_split(keep, n_blocks)
    estimates = []
    for b in blocks:
        mask = ens.aborted.copy()
        mask[b] = True
        sub = EnsembleResult(ens.horizons, ens.log_weights, ens.properties, ens.lambda_T, mask, ens.singular_hits)
        estimates.append(extrapolate(energy_series(sub), model=model).E_inf)
    estimates = np.array(estimates)
    sigma = float(math.sqrt((n_blocks - 1) / n_blocks * np.sum((estimates - estimates.mean()) ** 2)))
    full.note = (full.note + "; " if full.note else "") + f"sigma from {n_blocks}-block jackknife"
    full.params["fit_sigma"] = full.sigma
    full.sigma = sigma
    return full


def timestep_extrapolate(dt, E, sigma) -> Extrapolation:
    """Linear ``dt -> 0`` extrapolation of energies computed at several step sizes.

    The Euler drift step carries an error of first order in ``dt``, so
    ``E(dt) = E_0 + k dt`` is fitted by weighted least squares.  With a
    single step size the value is returned unchanged.
    """
    dt = np.asarray(dt, dtype=float)
    E = np.asarray(E, dtype=float)
    s = np.asarray(sigma, dtype=float)
    if not (dt.shape == E.shape == s.shape) or dt.size == 0:
        raise FitFailed("dt, E and sigma must be non-empty and of equal length")
    if dt.size == 1:
        return Extrapolation(float(E[0]), float(s[0]), "single_dt", {"dt": float(dt[0])})
    if np.unique(dt).size < 2:
        raise FitFailed("timestep extrapolation needs at least two distinct step sizes")
    s = np.maximum(s, 1e-300)
    A = np.column_stack([np.ones_like(dt), dt]) / s[:, None]
    coef, *_ = np.linalg.lstsq(A, E / s, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    resid = E / s - A @ coef
    exact = bool(np.all(np.asarray(sigma) == 0))
    chi2 = float(resid @ resid)
    birge = _birge_ratio(chi2, dt.size - 2)
    return Extrapolation(
        float(coef[0]), 0.0 if exact else float(math.sqrt(cov[0, 0])) * birge, "linear_dt",
        {"E_0": float(coef[0]), "slope": float(coef[1]), "birge_ratio": birge}, cov.tolist(), chi2, int(dt.size - 2),
    )
