"""Run configuration files.

A run is described by a TOML document with the blocks ``[system]``,
``[trial]``, ``[walk]``, ``[estimate]``, ``[output]``, ``[offsets]`` and
``[scan]``.  Every key is checked against a fixed schema; anything unknown
is rejected with a :class:`~gfkqmc.exceptions.ConfigError` whose ``key`` is
the dotted path of the entry (``"walk.n_rep"``, ``"system.particles[1].mass"``).

Example::

    [system]
    preset = "h2"
    mode = "BO"
    R = 1.4

    [trial]
    form = "atomic_product"
    alpha = 1.0

    [walk]
    n = 30
    t_max = 48
    horizons = [8, 16, 24, 32, 40, 48]
    n_rep = 10000
    seed = 1
"""

from __future__ import annotations

import copy
import json
import numbers
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import tomli

from . import system as S
from . import trial as T
from .constants import PROTON_ELECTRON_MASS_RATIO
from .exceptions import ConfigError
from .quantities import EnergyValue, Unit
from .walk import WalkParams

_SCHEMA = {
    "meta": {"description", "reference"},
    "system": {
        "preset", "mode", "scaling", "R", "mass_ratio", "reference_mass", "trap_omega", "spatial_dim",
        "mass", "singular_floor", "particles",
    },
    "trial": {
        "form", "alpha", "symmetrize", "sigma", "blocks", "terms", "c", "chi", "delta",
        "symmetrize_electrons", "symmetrize_nuclei", "n_max", "lambda_T", "lambda_T_walkers",
        "lambda_T_time",
    },
    "walk": {
        "n", "t_max", "horizons", "n_rep", "seed", "start", "start_guess", "start_spread", "burn_in",
        "chunk_size", "max_retries", "max_abort_fraction",
    },
    "estimate": {"model", "n_blocks"},
    "output": {"dir", "prefix", "checkpoint"},
    "offsets": None,  # free names, each an offset record
    "scan": {"R"},
}
_PARTICLE_KEYS = {"label", "mass", "charge", "clamped", "fixed_position"}
_OFFSET_KEYS = {"value", "sigma", "unit", "citation"}
_PRESETS = ("hydrogen_atom", "h2_plus", "h2", "harmonic_oscillator")
_TRIAL_FORMS = ("none", "gaussian", "atomic_product", "correlated_exponential")
_MODELS = ("exponential", "inverse_t")

CONFIG_DIR = "data/configs"


def _fail(key, message):
    raise ConfigError(f"{key}: {message}", key=key)


def _check_keys(block, allowed, prefix):
    if not isinstance(block, dict):
        _fail(prefix, "must be a table")
    for key in block:
        if key not in allowed:
            _fail(f"{prefix}.{key}" if prefix else key, "unknown key")


def _number(block, key, prefix, default=None, positive=False, integer=False, required=False):
    if key not in block:
        if required:
            _fail(f"{prefix}.{key}", "missing required key")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, numbers.Real):
        _fail(f"{prefix}.{key}", f"expected a number, got {v!r}")
    if integer and int(v) != v:
        _fail(f"{prefix}.{key}", f"expected an integer, got {v!r}")
    if positive and not v > 0:
        _fail(f"{prefix}.{key}", "must be positive")
    return int(v) if integer else float(v)


def _choice(block, key, prefix, options, default):
    v = block.get(key, default)
    if v not in options:
        _fail(f"{prefix}.{key}", f"expected one of {list(options)}, got {v!r}")
    return v


def _bool(block, key, prefix, default):
    v = block.get(key, default)
    if not isinstance(v, bool):
        _fail(f"{prefix}.{key}", f"expected true or false, got {v!r}")
    return v


def _vector(block, key, prefix, default=None):
    if key not in block:
        return default
    v = block[key]
    if not isinstance(v, list) or not all(isinstance(x, numbers.Real) and not isinstance(x, bool) for x in v):
        _fail(f"{prefix}.{key}", "expected a list of numbers")
    return [float(x) for x in v]


@dataclass
class RunConfig:
    """Parsed configuration.

    ``raw`` keeps the document as read (after command-line overrides) and is
    echoed into every JSON summary so a run can be repeated exactly.
    """

    raw: dict
    source: Optional[str] = None
    spec: S.SystemSpec = field(init=False)

    def __post_init__(self):
        raw = self.raw
        _check_keys(raw, _SCHEMA, "")
        for name, allowed in _SCHEMA.items():
            if name in raw and allowed is not None:
                _check_keys(raw[name], allowed, name)
        if "system" not in raw:
            _fail("system", "missing required block")
        self.spec = build_system(raw["system"])
        # trial and walk are validated eagerly so errors surface before any work
        self.build_trial(self.spec)
        self._walk_block = raw.get("walk", {})
        self.n_values = self._parse_n()
        self.walk_params(self.n_values[0])
        est = raw.get("estimate", {})
        self.model = _choice(est, "model", "estimate", _MODELS, "inverse_t")
        self.n_blocks = _number(est, "n_blocks", "estimate", 20, positive=True, integer=True)
        out = raw.get("output", {})
        self.out_dir = str(out.get("dir", "."))
        self.prefix = str(out.get("prefix", Path(self.source).stem if self.source else "run"))
        self.checkpoint = _bool(out, "checkpoint", "output", False)
        self.offsets = parse_offsets(raw.get("offsets", {}))
        self.scan_R = self._parse_scan()
        self.lambda_T = self._parse_lambda()

    # -- walk ------------------------------------------------------------

    def _parse_n(self):
        w = self._walk_block
        n = w.get("n", 30)
        values = n if isinstance(n, list) else [n]
        if not values:
            _fail("walk.n", "must not be an empty list")
        out = []
        for v in values:
            if isinstance(v, bool) or not isinstance(v, numbers.Real) or int(v) != v or v < 1:
                _fail("walk.n", f"expected positive integer(s), got {n!r}")
            out.append(int(v))
        if len(set(out)) != len(out):
            _fail("walk.n", "step counts must be distinct")
        return out

    def walk_params(self, n: int, seed: Optional[int] = None) -> WalkParams:
        w = self._walk_block
        p = "walk"
        t_max = _number(w, "t_max", p, 8.0, positive=True)
        horizons = _vector(w, "horizons", p)
        start = w.get("start", "sample-from-trial")
        if start == "sample-from-trial":
            start = None
        else:
            start = _vector(w, "start", p)
        kwargs = dict(
            n=n,
            t_max=t_max,
            horizons=horizons,
            n_rep=_number(w, "n_rep", p, 1000, integer=True),
            seed=self.seed if seed is None else seed,
            start=start,
            start_guess=_vector(w, "start_guess", p),
            start_spread=w.get("start_spread", 0.5),
            burn_in=_number(w, "burn_in", p, 2.0),
            chunk_size=_number(w, "chunk_size", p, 1024, positive=True, integer=True),
            max_retries=_number(w, "max_retries", p, 100, integer=True),
            max_abort_fraction=_number(w, "max_abort_fraction", p, 1e-3),
        )
        if isinstance(kwargs["start_spread"], list):
            kwargs["start_spread"] = _vector(w, "start_spread", p)
        elif isinstance(kwargs["start_spread"], bool) or not isinstance(kwargs["start_spread"], numbers.Real):
            _fail("walk.start_spread", "expected a number or a list of numbers")
        try:
            return WalkParams(**kwargs)
        except ConfigError as exc:
            key = f"walk.{exc.key}" if exc.key else "walk"
            raise ConfigError(str(exc), key=key) from exc

    @property
    def seed(self) -> int:
        v = self._walk_block.get("seed", 0)
        if isinstance(v, bool) or not isinstance(v, int):
            _fail("walk.seed", f"expected an integer, got {v!r}")
        return v

    # -- trial -------------------------------------------------------------

    def build_trial(self, spec: S.SystemSpec):
        return build_trial(self.raw.get("trial", {}), spec)

    def _parse_lambda(self):
        tb = self.raw.get("trial", {})
        lam = tb.get("lambda_T", "estimate")
        if lam == "estimate":
            return None
        if isinstance(lam, bool) or not isinstance(lam, numbers.Real):
            _fail("trial.lambda_T", f"expected a number or \"estimate\", got {lam!r}")
        return float(lam)

    @property
    def lambda_T_budget(self):
        tb = self.raw.get("trial", {})
        return {
            "n_walkers": _number(tb, "lambda_T_walkers", "trial", 1000, positive=True, integer=True),
            "sample_time": _number(tb, "lambda_T_time", "trial", 4.0, positive=True),
        }

    # -- scan ------------------------------------------------------------

    def _parse_scan(self):
        scan = self.raw.get("scan", {})
        if "R" not in scan:
            return None
        R = _vector(scan, "R", "scan")
        for r in R:
            if not r > 0:
                _fail("scan.R", "distances must be positive")
        return R

    def with_R(self, R) -> S.SystemSpec:
        try:
            return S.with_internuclear_distance(self.spec, R)
        except ConfigError as exc:
            raise ConfigError(str(exc), key="system.R") from exc


def build_system(block: dict) -> S.SystemSpec:
    p = "system"
    mode = _choice(block, "mode", p, ("BO", "nBO"), "BO")
    scaling = _choice(block, "scaling", p, ("ScaledCoordinates", "PhysicalCoordinates"), "PhysicalCoordinates")
    ratio = _number(block, "mass_ratio", p, PROTON_ELECTRON_MASS_RATIO, positive=True)
    preset = block.get("preset")
    has_particles = "particles" in block
    if (preset is None) == (not has_particles):
        _fail("system.preset", "give exactly one of 'preset' or 'particles'")
    extra = {}
    if "reference_mass" in block:
        extra["reference_mass"] = _number(block, "reference_mass", p, positive=True)
    if "singular_floor" in block:
        extra["singular_floor"] = _number(block, "singular_floor", p, positive=True)
    try:
        if preset is not None:
            if preset not in _PRESETS:
                _fail("system.preset", f"expected one of {list(_PRESETS)}, got {preset!r}")
            if "R" in block and preset not in ("h2_plus", "h2"):
                _fail("system.R", f"preset {preset!r} has no internuclear distance")
            if preset != "harmonic_oscillator":
                for key in ("mass", "spatial_dim", "trap_omega"):
                    if key in block:
                        _fail(f"system.{key}", f"not a parameter of preset {preset!r}")
            if preset == "hydrogen_atom":
                spec = S.hydrogen_atom(mode, scaling, ratio)
            elif preset == "h2_plus":
                spec = S.h2_plus(_number(block, "R", p, 2.0, positive=True), mode, scaling, ratio)
            elif preset == "h2":
                spec = S.h2(_number(block, "R", p, 1.4, positive=True), mode, scaling, ratio)
            else:
                spec = S.harmonic_oscillator(
                    _number(block, "spatial_dim", p, 3, positive=True, integer=True),
                    _number(block, "trap_omega", p, 1.0, positive=True),
                    _number(block, "mass", p, 1.0, positive=True),
                )
                if mode != "nBO" and "mode" in block:
                    _fail("system.mode", "the oscillator preset has no clamped particles; use mode = \"nBO\"")
            if extra or scaling != spec.scaling.value:
                spec = S.SystemSpec(
                    spec.particles, mode=spec.mode, scaling=scaling, trap_omega=spec.trap_omega,
                    spatial_dim=spec.spatial_dim, **extra,
                )
            return spec
        for key in ("R", "mass"):
            if key in block:
                _fail(f"system.{key}", "only valid together with a preset")
        parts_raw = block["particles"]
        if not isinstance(parts_raw, list) or not parts_raw:
            _fail("system.particles", "expected a non-empty array of tables")
        particles = []
        for i, pr in enumerate(parts_raw):
            pp = f"system.particles[{i}]"
            _check_keys(pr, _PARTICLE_KEYS, pp)
            label = pr.get("label", f"p{i}")
            clamped = _bool(pr, "clamped", pp, False)
            pos = _vector(pr, "fixed_position", pp)
            try:
                particles.append(
                    S.Particle(
                        str(label), _number(pr, "mass", pp, required=True), _number(pr, "charge", pp, required=True),
                        clamped, tuple(pos) if pos is not None else None,
                    )
                )
            except ConfigError as exc:
                raise ConfigError(str(exc), key=f"{pp}.{exc.key}") from exc
        return S.SystemSpec(
            tuple(particles), mode=mode, scaling=scaling,
            trap_omega=_number(block, "trap_omega", p, 0.0),
            spatial_dim=_number(block, "spatial_dim", p, 3, positive=True, integer=True), **extra,
        )
    except ConfigError as exc:
        if exc.key and exc.key.startswith("system"):
            raise
        raise ConfigError(str(exc), key=f"system.{exc.key}" if exc.key else "system") from exc


def build_trial(block: dict, spec: S.SystemSpec):
    """Trial function described by a ``[trial]`` block, or ``None`` for plain Feynman-Kac."""
    p = "trial"
    form = _choice(block, "form", p, _TRIAL_FORMS, "atomic_product")
    allowed = {
        "none": set(),
        "gaussian": {"sigma", "blocks"},
        "atomic_product": {"alpha", "symmetrize"},
        "correlated_exponential": {
            "terms", "c", "chi", "delta", "symmetrize_electrons", "symmetrize_nuclei", "n_max",
        },
    }[form] | {"form", "lambda_T", "lambda_T_walkers", "lambda_T_time"}
    for key in block:
        if key not in allowed:
            _fail(f"trial.{key}", f"not a parameter of form {form!r}")
    try:
        if form == "none":
            return None
        if form == "gaussian":
            blocks = block.get("blocks")
            if blocks is not None and (
                not isinstance(blocks, list) or not all(isinstance(b, int) and not isinstance(b, bool) for b in blocks)
            ):
                _fail("trial.blocks", "expected a list of particle indices")
            return T.GaussianTrial.for_system(spec, _number(block, "sigma", p, required=True, positive=True), blocks)
        if form == "atomic_product":
            return T.AtomicProductTrial(
                spec, _number(block, "alpha", p, 1.0, positive=True), _bool(block, "symmetrize", p, True)
            )
        terms = block.get("terms", [])
        if not isinstance(terms, list):
            _fail("trial.terms", "expected an array of tables")
        for i, t in enumerate(terms):
            _check_keys(t, {"a", "u", "v", "w", "n", "g", "h"}, f"trial.terms[{i}]")
            if "a" not in t:
                _fail(f"trial.terms[{i}].a", "missing required key")
        c = block.get("c", 1.0)
        if isinstance(c, dict):
            for k, v in c.items():
                if isinstance(v, bool) or not isinstance(v, numbers.Real):
                    _fail(f"trial.c.{k}", "expected a number")
        elif isinstance(c, bool) or not isinstance(c, numbers.Real):
            _fail("trial.c", "expected a number or a table of per-pair values")
        chi = _number(block, "chi", p, 1.0)
        delta_default = chi if len([q for q in spec.particles if q.charge < 0]) > 1 else 0.0
        return T.CorrelatedExponentialTrial(
            spec, terms, c, chi, _number(block, "delta", p, delta_default),
            _bool(block, "symmetrize_electrons", p, True), _bool(block, "symmetrize_nuclei", p, True),
            _number(block, "n_max", p, 6, integer=True),
        )
    except ConfigError as exc:
        if exc.key and exc.key.startswith("trial"):
            raise
        raise ConfigError(str(exc), key=f"trial.{exc.key}" if exc.key else "trial") from exc


def parse_offsets(block: dict):
    """``{name: (EnergyValue, citation)}`` from an ``[offsets]`` block."""
    out = {}
    for name, rec in block.items():
        pp = f"offsets.{name}"
        _check_keys(rec, _OFFSET_KEYS, pp)
        unit = _choice(rec, "unit", pp, ("hartree", "wavenumber"), "wavenumber")
        value = EnergyValue(
            _number(rec, "value", pp, required=True), Unit(unit), _number(rec, "sigma", pp, 0.0)
        )
        out[name] = (value, str(rec.get("citation", "")))
    return out


def bundled_configs():
    """Names of the configurations shipped with the package."""
    root = resources.files("gfkqmc").joinpath(CONFIG_DIR)
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_path(name_or_path: str):
    """A filesystem path, or the name of a bundled configuration."""
    path = Path(name_or_path)
    if path.exists():
        return path.read_text(encoding="utf-8"), str(path)
    stem = name_or_path[:-5] if name_or_path.endswith(".toml") else name_or_path
    res = resources.files("gfkqmc").joinpath(CONFIG_DIR, stem + ".toml")
    if res.is_file():
        return res.read_text(encoding="utf-8"), stem
    raise ConfigError(f"no such config file or bundled config: {name_or_path}", key="config")


def loads(text: str, source: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Parse TOML text.  ``overrides`` maps dotted keys to replacement values."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}", key="config") from exc
    raw = copy.deepcopy(raw)
    for dotted, value in (overrides or {}).items():
        block, key = dotted.split(".", 1)
        raw.setdefault(block, {})[key] = value
    return RunConfig(raw, source)


def load(name_or_path: str, overrides: Optional[dict] = None) -> RunConfig:
    """Load a TOML file, a bundled configuration, or the ``config`` echo of a JSON run summary."""
    if name_or_path.endswith(".json"):
        return _load_echo(name_or_path, overrides)
    text, source = resolve_path(name_or_path)
    return loads(text, source, overrides)


def _load_echo(path, overrides):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}", key="config") from exc
    raw = doc.get("config") if isinstance(doc, dict) else None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} has no config echo", key="config")
    raw = copy.deepcopy(raw)
    for dotted, value in (overrides or {}).items():
        block, key = dotted.split(".", 1)
        raw.setdefault(block, {})[key] = value
    return RunConfig(raw, doc.get("config_source") or path)
