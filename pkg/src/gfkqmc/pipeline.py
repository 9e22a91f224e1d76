"""End-to-end run: configuration in, energies and tables out.

Shared by the command line front end and the estimator facade.
"""

from __future__ import annotations

import logging
import math
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import estimate as est
from .config import RunConfig
from .exceptions import FitFailed
from .quantities import EnergyValue, Unit, apply_offset, to_wavenumber
from .trial import lambda_T_estimate
from .walk import run_ensemble

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


def resolve_lambda_T(cfg: RunConfig, spec, trial, seed):
    """Reference energy: fixed in the config, or the variational estimate."""
    if cfg.lambda_T is not None:
        return cfg.lambda_T, 0.0, "config"
    if trial is None:
        return 0.0, 0.0, "default"
    params = cfg.walk_params(cfg.n_values[0], seed)
    budget = cfg.lambda_T_budget
    mean, err = lambda_T_estimate(
        trial, spec, n_walkers=budget["n_walkers"], n=params.n, burn_in=params.burn_in,
        sample_time=budget["sample_time"], seed=seed, start=params.start_guess, start_spread=params.start_spread,
    )
    return mean, err, "estimate"


def summarize_ensemble(ens, model="inverse_t", n_blocks=20):
    """Table, fit and properties of one ensemble."""
    rows = est.horizon_table(ens)
    if len(ens.horizons) >= 4:
        try:
            fit = est.extrapolate_ensemble(ens, model=model, n_blocks=n_blocks)
        except FitFailed as exc:
            logger.warning("extrapolation failed: %s", exc)
            fit = None
    else:
        fit = None
    if fit is not None:
        E, sigma = fit.E_inf, fit.sigma
    else:
        E, sigma = rows[-1]["E"], rows[-1]["sigma_E"]
    V, sV = est.property_expectation(ens, "V")
    EL, sEL = est.property_expectation(ens, "E_L")
    return {
        "n": ens.n,
        "table": rows,
        "fit": fit.to_dict() if fit is not None else None,
        "energy": {"value": E, "sigma": sigma, "unit": "hartree"},
        "properties": {
            "V": {"value": V, "sigma": sV},
            "E_L_mixed": {"value": EL, "sigma": sEL},
            "T": {"value": E - V},
            "virial_ratio": est.virial_ratio(V, E),
        },
        "counters": {
            "n_rep": int(ens.log_weights.shape[0]),
            "n_paths": ens.n_paths,
            "aborted": ens.n_aborted,
            "singular_hits": int(np.sum(ens.singular_hits)),
            "effective_sample_size": ens.effective_sample_size(ens.horizons[-1]),
        },
    }


def execute(cfg: RunConfig, spec=None, seed: Optional[int] = None, workers: int = 1,
            checkpoint_dir: Optional[str] = None, keep_ensembles: bool = False):
    """Run every step size of a configuration and combine the results.

    Returns:
        A JSON-serialisable summary; with ``keep_ensembles`` the raw
        :class:`~gfkqmc.estimate.EnsembleResult` objects are added under
        ``"_ensembles"``.
    """
    spec = cfg.spec if spec is None else spec
    seed = cfg.seed if seed is None else seed
    trial = cfg.build_trial(spec)
    t0 = time.perf_counter()
    lam, lam_err, lam_src = resolve_lambda_T(cfg, spec, trial, seed)
    runs, ensembles = [], []
    for n in cfg.n_values:
        params = cfg.walk_params(n, seed)
        ckpt = None
        if checkpoint_dir is not None:
            ckpt = str(Path(checkpoint_dir) / f"{cfg.prefix}_n{n}.ckpt")
        ens = run_ensemble(spec, trial, params, lambda_T=lam, workers=workers, checkpoint=ckpt)
        runs.append(summarize_ensemble(ens, cfg.model, cfg.n_blocks))
        if keep_ensembles:
            ensembles.append(ens)
    if len(runs) > 1:
        fit = est.timestep_extrapolate(
            [1.0 / r["n"] for r in runs], [r["energy"]["value"] for r in runs], [r["energy"]["sigma"] for r in runs]
        )
        energy = {"value": fit.E_inf, "sigma": fit.sigma, "unit": "hartree", "method": "linear_dt"}
        timestep = fit.to_dict()
    else:
        energy = dict(runs[0]["energy"], method=cfg.model if runs[0]["fit"] else "last_horizon")
        timestep = None
    out = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "lambda_T": {"value": lam, "sigma": lam_err, "source": lam_src},
        "system": {"mode": spec.mode.value, "scaling": spec.scaling.value, "dim": spec.dim},
        "runs": runs,
        "timestep_extrapolation": timestep,
        "energy": energy,
        "elapsed_seconds": time.perf_counter() - t0,
    }
    if cfg.offsets:
        out["energy_corrected"] = corrected_energies(energy, cfg.offsets)
    if keep_ensembles:
        out["_ensembles"] = ensembles
    return out


def corrected_energies(energy, offsets):
    """Energy plus each configured offset, expressed in the offset's unit."""
    base = EnergyValue(energy["value"], Unit.HARTREE, energy["sigma"])
    out = {}
    for name, (offset, citation) in offsets.items():
        value = base if offset.unit is Unit.HARTREE else to_wavenumber(base)
        out[name] = apply_offset(value, offset, citation).to_dict()
    return out


def energy_from_summary(summary, key="energy") -> EnergyValue:
    """Read an ``{"value", "sigma", "unit"}`` record back into an :class:`EnergyValue`."""
    rec = summary[key]
    return EnergyValue(rec["value"], Unit(rec.get("unit", "hartree")), rec.get("sigma", 0.0))


def is_finite_summary(summary):
    e = summary["energy"]
    return math.isfinite(e["value"]) and math.isfinite(e["sigma"])
