"""Command line front end.

Subcommands::

    gfkqmc run CONFIG            energies for one configuration
    gfkqmc scan CONFIG --R ...   BO potential curve over internuclear distances
    gfkqmc extrapolate CSV       re-fit an existing per-horizon table
    gfkqmc derive --mol A --ion B   ionization potential and dissociation energy
    gfkqmc check-trial CONFIG    finite-difference check of the trial derivatives

``CONFIG`` is a TOML file or the name of a bundled configuration (see
``gfkqmc list``).  Results are written as CSV and JSON to ``--out-dir``.
Failures print a JSON error record on stderr; configuration errors exit
with status 2, other failures with status 1.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import estimate as est
from . import pipeline
from .constants import HYDROGEN_ATOM_ENERGY, HYDROGEN_ATOM_REDUCED_MASS_ENERGY
from .exceptions import ConfigError, GFKError
from .quantities import EnergyValue, Unit, apply_offset, dissociation_energy, ionization_potential, to_wavenumber
from .trial import finite_difference_check
from .walk import default_start

logger = logging.getLogger("gfkqmc")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

FD_TOLERANCE = 1e-6


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message, key="arguments")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _dump(obj):
    return json.dumps(obj, indent=2, default=_json_default, allow_nan=True)


def _write(out_dir, name, text):
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return str(path)


def _overrides(args):
    return {"walk.seed": args.seed} if getattr(args, "seed", None) is not None else {}


def _workers(args):
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1", key="workers")
    return args.workers


# -- run --------------------------------------------------------------------


def cmd_run(args):
    cfg = C.load(args.config, _overrides(args))
    out_dir = args.out_dir or cfg.out_dir
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    summary = pipeline.execute(
        cfg, workers=_workers(args), checkpoint_dir=out_dir if cfg.checkpoint else None
    )
    summary = {"command": "run", "config": cfg.raw, "config_source": cfg.source, **summary}
    files = []
    for r in summary["runs"]:
        name = f"{cfg.prefix}.csv" if len(summary["runs"]) == 1 else f"{cfg.prefix}_n{r['n']}.csv"
        files.append(_write(out_dir, name, est.table_to_csv(r["table"])))
    summary["files"] = files + [str(Path(out_dir) / f"{cfg.prefix}.json")]
    _write(out_dir, f"{cfg.prefix}.json", _dump(summary))
    e = summary["energy"]
    print(_dump({"energy": e, "files": summary["files"]}))
    return EXIT_OK


# -- scan -------------------------------------------------------------------

SCAN_COLUMNS = ("R", "E_inf", "sigma", "status")


def cmd_scan(args):
    cfg = C.load(args.config, _overrides(args))
    R_values = args.R if args.R is not None else cfg.scan_R
    if not R_values:
        raise ConfigError("the list of internuclear distances is empty", key="scan.R")
    if cfg.spec.mode.value != "BO":
        raise ConfigError("scan needs a BO system", key="system.mode")
    out_dir = args.out_dir or cfg.out_dir
    workers = _workers(args)
    rows, runs = [], []
    for R in R_values:
        try:
            spec = cfg.with_R(R)
            s = pipeline.execute(cfg, spec=spec, workers=workers)
            rows.append({"R": R, "E_inf": s["energy"]["value"], "sigma": s["energy"]["sigma"], "status": "ok"})
            runs.append({"R": R, **s})
        except (GFKError, ArithmeticError) as exc:
            logger.warning("R = %g failed: %s", R, exc)
            rows.append({"R": R, "E_inf": float("nan"), "sigma": float("nan"), "status": f"error: {exc}"})
            runs.append({"R": R, "error": _error_record(exc)})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SCAN_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if k != "status" else v) for k, v in row.items()})
    csv_path = _write(out_dir, f"{cfg.prefix}_scan.csv", buf.getvalue())
    summary = {
        "schema_version": pipeline.SCHEMA_VERSION, "command": "scan", "config": cfg.raw,
        "config_source": cfg.source, "seed": cfg.seed if args.seed is None else args.seed,
        "R": list(R_values), "rows": rows, "runs": runs,
    }
    json_path = _write(out_dir, f"{cfg.prefix}_scan.json", _dump(summary))
    print(_dump({"rows": rows, "files": [csv_path, json_path]}))
    return EXIT_OK if any(r["status"] == "ok" for r in rows) else EXIT_FAILURE


# -- extrapolate --------------------------------------------------------------


def cmd_extrapolate(args):
    try:
        text = Path(args.csv).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {args.csv}: {exc}", key="csv") from exc
    series = est.series_from_csv(text)
    fit = est.extrapolate(series, model=args.model)
    out = {
        "schema_version": pipeline.SCHEMA_VERSION, "command": "extrapolate", "source": args.csv,
        "fit": fit.to_dict(),
        "energy": {"value": fit.E_inf, "sigma": fit.sigma, "unit": "hartree", "method": fit.model},
    }
    if args.out_dir:
        _write(args.out_dir, Path(args.csv).stem + "_fit.json", _dump(out))
    print(_dump(out))
    return EXIT_OK


# -- derive -----------------------------------------------------------------

DERIVE_COLUMNS = ("method", "E_p_hartree", "E_p_cm", "E_d_hartree", "E_d_cm", "E_d_corrected_cm")


def _read_energy(path, key):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}", key=key) from exc
    rec = data.get("energy") if isinstance(data, dict) else None
    if not isinstance(rec, dict) or "value" not in rec:
        raise ConfigError(f"{path} has no energy.value field", key=f"{key}.energy.value")
    try:
        return EnergyValue(rec["value"], Unit(rec.get("unit", "hartree")), rec.get("sigma", 0.0))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}", key=f"{key}.energy") from exc


def _atom_energy(flag):
    if flag == "bo":
        return EnergyValue(HYDROGEN_ATOM_ENERGY), "clamped-nucleus hydrogen atom, -0.5 hartree"
    if flag == "reduced-mass":
        return EnergyValue(HYDROGEN_ATOM_REDUCED_MASS_ENERGY), "hydrogen atom with reduced-mass correction"
    try:
        return EnergyValue(float(flag)), "user supplied"
    except ValueError:
        raise ConfigError(f"--atom-energy must be 'bo', 'reduced-mass' or a number, got {flag!r}", key="atom-energy")


def derive(E_mol, E_ion, E_atom, offset_cm=None, citation="", label="GFK"):
    """Table row with ionization potential and dissociation energy."""
    Ep = ionization_potential(E_ion, E_mol)
    Ed = dissociation_energy(E_atom, E_mol)
    Ep_cm, Ed_cm = to_wavenumber(Ep), to_wavenumber(Ed)
    out = {
        "method": label,
        "E_p": {"hartree": Ep.to_dict(), "wavenumber": Ep_cm.to_dict()},
        "E_d": {"hartree": Ed.to_dict(), "wavenumber": Ed_cm.to_dict()},
        "inputs": {"molecule": E_mol.to_dict(), "ion": E_ion.to_dict(), "atom": E_atom.to_dict()},
    }
    row = {
        "method": label, "E_p_hartree": Ep.value, "E_p_cm": Ep_cm.value, "E_d_hartree": Ed.value,
        "E_d_cm": Ed_cm.value, "E_d_corrected_cm": float("nan"),
    }
    if offset_cm is not None:
        corrected = apply_offset(Ed_cm, EnergyValue(offset_cm, Unit.WAVENUMBER), citation)
        out["E_d_corrected"] = {"wavenumber": corrected.to_dict()}
        row["E_d_corrected_cm"] = corrected.value
    out["row"] = row
    return out


def cmd_derive(args):
    E_mol = _read_energy(args.mol, "mol")
    E_ion = _read_energy(args.ion, "ion")
    E_atom, atom_note = _atom_energy(args.atom_energy)
    out = derive(E_mol, E_ion, E_atom, args.offset_cm, args.citation or "", args.label)
    out = {"schema_version": pipeline.SCHEMA_VERSION, "command": "derive", **out}
    out["meta"] = {
        "atom_energy": atom_note,
        "note": "the atom energy is combined with the molecular energy as given; a clamped-nucleus atom "
        "energy mixed with a non-BO molecular energy is not a consistent treatment",
        "sources": {"mol": args.mol, "ion": args.ion},
    }
    if args.out_dir:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=DERIVE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow({k: (v if k == "method" else repr(float(v))) for k, v in out["row"].items()})
        _write(args.out_dir, f"{args.prefix}.csv", buf.getvalue())
        _write(args.out_dir, f"{args.prefix}.json", _dump(out))
    print(_dump(out))
    return EXIT_OK


# -- check-trial --------------------------------------------------------------


def check_trial_report(cfg, points=100, seed=0, spread=0.7):
    """Finite-difference consistency of the configured trial at random points."""
    spec = cfg.spec
    trial = cfg.build_trial(spec)
    if trial is None:
        raise ConfigError("trial form 'none' has no derivatives to check", key="trial.form")
    rng = np.random.default_rng(seed)
    centre = default_start(spec)
    X = spec.from_physical(centre + spread * rng.standard_normal((points, spec.dim)))
    errors = finite_difference_check(trial, X)
    return {
        "trial": type(trial).__name__,
        "parameters": trial.parameters(),
        "points": points,
        "tolerance": FD_TOLERANCE,
        "max_relative_error": errors,
        "passed": bool(max(errors.values()) <= FD_TOLERANCE),
    }


def cmd_check_trial(args):
    cfg = C.load(args.config, _overrides(args))
    report = check_trial_report(cfg, args.points, 0 if args.seed is None else args.seed)
    report = {"schema_version": pipeline.SCHEMA_VERSION, "command": "check-trial", **report}
    if args.out_dir:
        _write(args.out_dir, f"{cfg.prefix}_check.json", _dump(report))
    print(_dump(report))
    return EXIT_OK if report["passed"] else EXIT_FAILURE


def cmd_list(args):
    print("\n".join(C.bundled_configs()))
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override walk.seed")
    common.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    common.add_argument("--out-dir", default=None, help="directory for CSV/JSON outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="gfkqmc", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", parents=[common], help="run one configuration")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("scan", parents=[common], help="scan the internuclear distance (BO)")
    p.add_argument("config")
    p.add_argument("--R", type=float, nargs="*", default=None, help="distances in bohr (default: scan.R)")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("extrapolate", parents=[common], help="re-fit a per-horizon CSV")
    p.add_argument("csv")
    p.add_argument("--model", choices=("exponential", "inverse_t"), default="inverse_t")
    p.set_defaults(func=cmd_extrapolate)

    p = sub.add_parser("derive", parents=[common], help="ionization potential and dissociation energy")
    p.add_argument("--mol", required=True, help="JSON with the molecular energy")
    p.add_argument("--ion", required=True, help="JSON with the molecular ion energy")
    p.add_argument("--atom-energy", default="bo", help="'bo' (-0.5), 'reduced-mass' or a value in hartree")
    p.add_argument("--offset-cm", type=float, default=None, help="additive correction to E_d in cm^-1")
    p.add_argument("--citation", default=None, help="provenance of the offset")
    p.add_argument("--label", default="GFK", help="method label of the output row")
    p.add_argument("--prefix", default="derived")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("check-trial", parents=[common], help="finite-difference check of the trial")
    p.add_argument("config")
    p.add_argument("--points", type=int, default=100)
    p.set_defaults(func=cmd_check_trial)

    p = sub.add_parser("list", help="list bundled configurations")
    p.set_defaults(func=cmd_list)
    return parser


def _error_record(exc):
    rec = {"type": type(exc).__name__, "code": getattr(exc, "code", "error"), "message": str(exc)}
    if isinstance(exc, ConfigError):
        rec["key"] = exc.key
    return rec


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": _error_record(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except (GFKError, ArithmeticError) as exc:
        print(json.dumps({"error": _error_record(exc)}), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
