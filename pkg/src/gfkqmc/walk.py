"""Drifted binomial random walks and the Feynman-Kac path functional.

Each path is an independent unit of work with its own random streams,
derived from ``(seed, stream label, path index)`` through
:class:`numpy.random.SeedSequence`.  Paths are processed in fixed-size
chunks, vectorised over the chunk; a path's trajectory depends only on its
own streams, so results do not depend on how chunks are spread over
workers.

Binomial kicks are taken from the raw 64-bit output of the path's walk
stream, one bit per coordinate and step.  Because the raw stream is
consumed strictly in step order, extending ``t_max`` only appends steps and
never changes the earlier part of a path.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .estimate import EnsembleResult
from .exceptions import ConfigError, NonFiniteDrift, PathAborted, SingularConfiguration
from .system import SystemSpec, potential_batch
from .trial import TrialFunction, local_energy_batch

logger = logging.getLogger(__name__)

STREAM_WALK = 0
STREAM_BURN_IN = 1
STREAM_RETRY = 2
STREAM_START = 3
STREAM_BURN_IN_RETRY = 4

#: property names recorded at every horizon
PROPERTY_NAMES = ("V", "E_L", "V_path", "E_L_path")

_BLOCK = 256
_MASK64 = (1 << 64) - 1


@dataclass
class WalkParams:
    """Discretisation and ensemble controls.

    Attributes:
        n: Steps per unit time (``dt = 1/n``).
        t_max: Longest horizon.
        horizons: Increasing report times, each a multiple of ``dt``.
        n_rep: Number of independent paths.
        seed: Master seed; all streams derive from it.
        start: Starting configuration in bohr, or ``None`` to sample from
            ``psi_T^2`` with a burn-in walk.
        start_guess: Centre of the pre-burn-in positions in bohr (``None``
            picks a default from the system).
        start_spread: Gaussian jitter (bohr) of the pre-burn-in positions;
            scalar or one value per configuration entry.  Scaled by
            ``sqrt(reference_mass / m)`` per particle when scalar.
        burn_in: Burn-in duration in time units.
        chunk_size: Paths per work unit.
        max_retries: Redraws allowed for a singular step before a path aborts.
        max_abort_fraction: Largest tolerated fraction of aborted paths.
    """

    n: int = 30
    t_max: float = 8.0
    horizons: Optional[Sequence[float]] = None
    n_rep: int = 1000
    seed: int = 0
    start: Optional[Sequence[float]] = None
    start_guess: Optional[Sequence[float]] = None
    start_spread: object = 0.5
    burn_in: float = 2.0
    chunk_size: int = 1024
    max_retries: int = 100
    max_abort_fraction: float = 1e-3
    horizon_steps: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError("n must be a positive integer", key="n")
        self.n = int(self.n)
        if not self.t_max > 0:
            raise ConfigError("t_max must be positive", key="t_max")
        if int(self.n_rep) != self.n_rep or self.n_rep < 2:
            raise ConfigError("n_rep must be an integer >= 2", key="n_rep")
        self.n_rep = int(self.n_rep)
        self.seed = int(self.seed)
        horizons = [self.t_max] if self.horizons is None else [float(t) for t in self.horizons]
        if not horizons:
            raise ConfigError("horizons must not be empty", key="horizons")
        if any(b <= a for a, b in zip(horizons, horizons[1:])):
            raise ConfigError("horizons must be strictly increasing", key="horizons")
        if horizons[0] <= 0 or horizons[-1] > self.t_max * (1 + 1e-12):
            raise ConfigError("horizons must lie in (0, t_max]", key="horizons")
        steps = []
        for t in horizons:
            s = round(t * self.n)
            if abs(s - t * self.n) > 1e-9 * max(1.0, t * self.n):
                raise ConfigError(f"horizon {t} is not a multiple of dt = 1/{self.n}", key="horizons")
            steps.append(int(s))
        self.horizons = tuple(horizons)
        self.horizon_steps = tuple(steps)
        if self.burn_in < 0:
            raise ConfigError("burn_in must be non-negative", key="burn_in")
        if int(self.chunk_size) < 1:
            raise ConfigError("chunk_size must be positive", key="chunk_size")
        self.chunk_size = int(self.chunk_size)
        if self.max_retries < 0:
            raise ConfigError("max_retries must be non-negative", key="max_retries")
        if not 0 <= self.max_abort_fraction <= 1:
            raise ConfigError("max_abort_fraction must lie in [0, 1]", key="max_abort_fraction")

    @property
    def dt(self):
        return 1.0 / self.n

    @property
    def n_steps(self):
        return self.horizon_steps[-1]


@dataclass
class PathState:
    """Position and accumulated path functional of one walker."""

    position: np.ndarray
    elapsed: float = 0.0
    action_sum: float = 0.0
    property_sums: dict = field(default_factory=dict)
    singular_hits: int = 0
    steps: int = 0


# -- random streams -------------------------------------------------------------


def path_generator(seed: int, label: int, path: int) -> np.random.Generator:
    """Independent generator for ``(seed, stream label, path index)``."""
    ss = np.random.SeedSequence(seed & _MASK64, spawn_key=(label, path))
    return np.random.Generator(np.random.PCG64(ss))


def binomial_increment(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """``d`` independent kicks, each ``+1/sqrt(n)`` or ``-1/sqrt(n)`` with probability 1/2."""
    if n < 1:
        raise ConfigError("n must be >= 1", key="n")
    return (2.0 * rng.integers(0, 2, size=d) - 1.0) / math.sqrt(n)


class _SignSource:
    """Per-path sign bits drawn from raw 64-bit words, block by block."""

    def __init__(self, seed, label, paths, d):
        self.gens = [path_generator(seed, label, int(p)) for p in paths]
        self.words_per_step = (d + 63) // 64
        self.word_index = np.arange(d) // 64
        self.shift = (np.arange(d) % 64).astype(np.uint64)
        self._buf = None
        self._pos = 0

    def _refill(self, count):
        w = self.words_per_step
        raw = np.stack([g.bit_generator.random_raw(count * w) for g in self.gens])
        self._buf = raw.reshape(len(self.gens), count, w)
        self._pos = 0

    def next(self):
        """Signs ``(B, d)`` in {-1, +1} for the next step."""
        if self._buf is None or self._pos >= self._buf.shape[1]:
            self._refill(_BLOCK)
        words = self._buf[:, self._pos, :][:, self.word_index]
        self._pos += 1
        bits = (words >> self.shift) & np.uint64(1)
        return 2.0 * bits.astype(float) - 1.0


class _RetrySource:
    def __init__(self, seed, label, paths, d):
        self.seed = seed
        self.label = label
        self.paths = paths
        self.d = d
        self.gens = {}

    def signs(self, row):
        g = self.gens.get(row)
        if g is None:
            g = self.gens[row] = path_generator(self.seed, self.label, int(self.paths[row]))
        return 2.0 * g.integers(0, 2, size=self.d) - 1.0


# -- guide evaluation ---------------------------------------------------------------


class _Guide:
    """Local energy and drift in walk coordinates, with or without a trial function."""

    def __init__(self, spec: SystemSpec, trial: Optional[TrialFunction]):
        self.spec = spec
        self.trial = trial

    def __call__(self, X):
        if self.trial is None:
            V, bad = potential_batch(self.spec, X)
            return V, V, np.zeros_like(X), bad
        return local_energy_batch(self.trial, self.spec, X)


def default_start(spec: SystemSpec) -> np.ndarray:
    """Pre-burn-in centre in bohr.

    Free nuclei (positive charges) are spaced 1.4 bohr apart along the last
    axis; electrons sit on the nuclei (clamped or free) in turn; anything
    else starts at the origin.
    """
    n = spec.spatial_dim
    free = spec.free_particles
    nuclei_free = [i for i, p in enumerate(free) if p.charge > 0]
    centres = {}
    for k, i in enumerate(nuclei_free):
        pos = np.zeros(n)
        pos[-1] = 1.4 * (k - 0.5 * (len(nuclei_free) - 1))
        centres[i] = pos
    anchors = [np.asarray(p.fixed_position) for p in spec.clamped_particles if p.charge > 0]
    anchors += [centres[i] for i in nuclei_free]
    out = np.zeros(spec.dim)
    e = 0
    for i, p in enumerate(free):
        if i in centres:
            out[spec.block(i)] = centres[i]
        elif p.charge < 0 and anchors:
            out[spec.block(i)] = anchors[e % len(anchors)]
            e += 1
    return out


def _spread_vector(spec, spread):
    s = np.asarray(spread, dtype=float)
    if s.ndim == 0:
        return float(s) * np.repeat(spec.particle_scales, spec.spatial_dim)
    if s.shape != (spec.dim,):
        raise ConfigError(f"start_spread must be a scalar or have length {spec.dim}", key="start_spread")
    return s


def _step(y, grad, signs, spec, guide, diff, kick, dt, retry, active):
    """One drifted move for all rows; redraws kicks of rows landing on bad points.

    Returns ``(y_new, E_L, V, grad, hits, aborted)`` where ``aborted`` flags
    rows that used up their retries (they keep their old position).
    """
    drift_move = diff * grad * dt
    y_new = y + drift_move + signs * kick
    E_L, V, g_new, bad = guide(y_new)
    bad &= active
    hits = np.zeros(y.shape[0], dtype=np.int64)
    aborted = np.zeros(y.shape[0], dtype=bool)
    if bad.any():
        for row in np.nonzero(bad)[0]:
            ok = False
            for _ in range(retry.max_retries):
                hits[row] += 1
                cand = y[row] + drift_move[row] + retry.signs(row) * kick
                e, v, g, b = guide(cand[None, :])
                if not b[0]:
                    y_new[row], E_L[row], V[row], g_new[row] = cand, e[0], v[0], g[0]
                    ok = True
                    break
            if not ok:
                aborted[row] = True
                y_new[row] = y[row]
                E_L[row] = V[row] = 0.0
                g_new[row] = grad[row]
    return y_new, E_L, V, g_new, hits, aborted


class _Retry:
    def __init__(self, source, max_retries):
        self.source = source
        self.max_retries = max_retries

    def signs(self, row):
        return self.source.signs(row)


def _initial_positions(spec, trial, params, paths, guide):
    """Starting walk coordinates for ``paths``: fixed start or burnt-in sample of psi_T^2."""
    B = len(paths)
    d = spec.dim
    if params.start is not None:
        start = np.asarray(params.start, dtype=float)
        if start.shape != (d,):
            raise ConfigError(f"start must have length {d}", key="start")
        y = np.tile(spec.from_physical(start), (B, 1))
        E_L, V, grad, bad = guide(y)
        if bad.any():
            raise SingularConfiguration("start configuration is singular")
        return y, np.zeros(B, dtype=np.int64), np.zeros(B, dtype=bool)

    centre = default_start(spec) if params.start_guess is None else np.asarray(params.start_guess, dtype=float)
    if centre.shape != (d,):
        raise ConfigError(f"start_guess must have length {d}", key="start_guess")
    spread = _spread_vector(spec, params.start_spread)
    jitter = np.stack([path_generator(params.seed, STREAM_START, int(p)).standard_normal(d) for p in paths])
    y = spec.from_physical(centre + spread * jitter)
    return _burn_in(spec, trial, params, paths, guide, y, params.burn_in)


def _burn_in(spec, trial, params, paths, guide, y, duration):
    B = y.shape[0]
    hits = np.zeros(B, dtype=np.int64)
    aborted = np.zeros(B, dtype=bool)
    E_L, V, grad, bad = guide(y)
    if bad.any():
        # jittered start landed on a singular point; nudge deterministically
        y = y + bad[:, None] * 1e-3
        E_L, V, grad, bad = guide(y)
    steps = int(round(duration * params.n))
    if steps == 0 or trial is None:
        return y, hits, aborted
    dt = params.dt
    diff = spec.diffusion
    kick = np.sqrt(diff) / math.sqrt(params.n)
    signs = _SignSource(params.seed, STREAM_BURN_IN, paths, spec.dim)
    retry = _Retry(_RetrySource(params.seed, STREAM_BURN_IN_RETRY, paths, spec.dim), params.max_retries)
    active = np.ones(B, dtype=bool)
    for _ in range(steps):
        y, E_L, V, grad, h, ab = _step(y, grad, signs.next(), spec, guide, diff, kick, dt, retry, active)
        hits += h
        aborted |= ab
        active &= ~ab
    return y, hits, aborted


def _run_chunk(spec, trial, params, lambda_T, paths):
    """Propagate the given paths; returns per-path arrays for every horizon."""
    paths = np.asarray(paths)
    B = len(paths)
    H = len(params.horizons)
    guide = _Guide(spec, trial)
    y, hits, aborted = _initial_positions(spec, trial, params, paths, guide)
    E_L, V, grad, bad = guide(y)
    if bad.any():
        raise SingularConfiguration("walk starts on a singular configuration")

    dt = params.dt
    diff = spec.diffusion
    kick = np.sqrt(diff) / math.sqrt(params.n)
    signs = _SignSource(params.seed, STREAM_WALK, paths, spec.dim)
    retry = _Retry(_RetrySource(params.seed, STREAM_RETRY, paths, spec.dim), params.max_retries)

    action = np.zeros(B)
    v_sum = np.zeros(B)
    el_sum = np.zeros(B)
    log_w = np.empty((B, H))
    props = {name: np.empty((B, H)) for name in PROPERTY_NAMES}
    active = ~aborted
    h = 0
    for step in range(1, params.n_steps + 1):
        y, E_L, V, grad, hit, ab = _step(y, grad, signs.next(), spec, guide, diff, kick, dt, retry, active)
        hits += hit
        newly = ab & active
        active &= ~ab
        aborted |= newly
        live = active.astype(float)
        action += live * (E_L - lambda_T) * dt
        v_sum += live * V * dt
        el_sum += live * E_L * dt
        if step == params.horizon_steps[h]:
            t = step * dt
            log_w[:, h] = -action
            props["V"][:, h] = V
            props["E_L"][:, h] = E_L
            props["V_path"][:, h] = v_sum / t
            props["E_L_path"][:, h] = el_sum / t
            h += 1
    return {"paths": paths, "log_w": log_w, "props": props, "hits": hits, "aborted": aborted}


def _chunk_task(args):
    return _run_chunk(*args)


def _chunks(params):
    idx = np.arange(params.n_rep)
    return [idx[i : i + params.chunk_size] for i in range(0, params.n_rep, params.chunk_size)]


def run_ensemble(
    spec: SystemSpec,
    trial: Optional[TrialFunction],
    params: WalkParams,
    lambda_T: float = 0.0,
    workers: int = 1,
    checkpoint: Optional[str] = None,
) -> EnsembleResult:
    """Run ``params.n_rep`` independent paths and collect per-horizon records.

    With ``trial=None`` the walk is the plain Feynman-Kac walk: no drift, and
    the raw potential ``V`` (shifted by ``lambda_T``) enters the exponent.
    Otherwise the exponent accumulates ``V_p = E_L - lambda_T``.

    Args:
        spec: System.
        trial: Guide function, or ``None`` for plain Feynman-Kac.
        params: Walk controls.
        lambda_T: Reference energy subtracted in the exponent.
        workers: Process count; results are identical for every value.
        checkpoint: Optional path of a checkpoint file; completed chunks
            found there are reused and new ones are appended.

    Raises:
        PathAborted: if more than ``params.max_abort_fraction`` of the paths abort.
    """
    if trial is not None and trial.dim != spec.dim:
        raise ConfigError("trial dimension does not match the system", key="trial")
    chunks = _chunks(params)
    results = {}
    ckpt = None
    if checkpoint is not None:
        from .checkpoint import Checkpoint

        ckpt = Checkpoint.open(checkpoint, spec, trial, params, lambda_T)
        results.update(ckpt.completed_chunks())
    todo = [k for k in range(len(chunks)) if k not in results]
    tasks = [(spec, trial, params, float(lambda_T), chunks[k]) for k in todo]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for k, res in zip(todo, pool.map(_chunk_task, tasks)):
                results[k] = res
                if ckpt is not None:
                    ckpt.append(k, res)
    else:
        for k, task in zip(todo, tasks):
            results[k] = _chunk_task(task)
            if ckpt is not None:
                ckpt.append(k, results[k])
    if ckpt is not None:
        ckpt.close()

    ordered = [results[k] for k in range(len(chunks))]
    log_w = np.concatenate([r["log_w"] for r in ordered])
    props = {name: np.concatenate([r["props"][name] for r in ordered]) for name in PROPERTY_NAMES}
    hits = np.concatenate([r["hits"] for r in ordered])
    aborted = np.concatenate([r["aborted"] for r in ordered])
    n_abort = int(aborted.sum())
    if n_abort > params.max_abort_fraction * params.n_rep:
        raise PathAborted(f"{n_abort} of {params.n_rep} paths aborted (limit {params.max_abort_fraction:.2%})")
    if n_abort:
        logger.warning("%d paths aborted and were dropped", n_abort)
    return EnsembleResult(
        horizons=np.asarray(params.horizons),
        log_weights=log_w,
        properties=props,
        lambda_T=float(lambda_T),
        aborted=aborted,
        singular_hits=hits,
        seed=params.seed,
        n=params.n,
    )


def step(state: PathState, trial, spec: SystemSpec, params: WalkParams, rng: np.random.Generator, lambda_T=0.0):
    """Advance a single walker by one time step.

    Scalar counterpart of the vectorised ensemble kernel: Euler drift
    ``D * grad(log psi) * dt`` followed by a binomial kick scaled by
    :func:`~gfkqmc.system.walk_scales`, then ``V_p * dt`` evaluated at the new
    position is added to the action.  Kicks are redrawn from ``rng`` when the
    new point is singular.

    Raises:
        PathAborted: after ``params.max_retries`` failed redraws.
    """
    guide = _Guide(spec, trial)
    y = np.asarray(state.position, dtype=float)[None, :]
    _, _, grad, bad = guide(y)
    if bad[0]:
        raise NonFiniteDrift("current position is singular")
    dt = params.dt
    diff = spec.diffusion
    kick = np.sqrt(diff) / math.sqrt(params.n)
    hits = 0
    for _ in range(params.max_retries + 1):
        signs = 2.0 * rng.integers(0, 2, size=spec.dim) - 1.0
        cand = y + diff * grad * dt + signs * kick
        E_L, V, _, bad = guide(cand)
        if not bad[0]:
            break
        hits += 1
    else:
        raise PathAborted(f"no admissible step after {params.max_retries} redraws")
    sums = dict(state.property_sums)
    sums["V"] = sums.get("V", 0.0) + float(V[0]) * dt
    sums["E_L"] = sums.get("E_L", 0.0) + float(E_L[0]) * dt
    return PathState(
        position=cand[0],
        elapsed=(state.steps + 1) * dt,
        action_sum=state.action_sum + (float(E_L[0]) - lambda_T) * dt,
        property_sums=sums,
        singular_hits=state.singular_hits + hits,
        steps=state.steps + 1,
    )


def sample_local_energy(
    trial, spec, n_walkers=2000, n=30, burn_in=2.0, sample_time=4.0, seed=0, start=None, start_spread=0.5
):
    """Per-walker time averages of ``E_L`` along unweighted drifted walks.

    Used by :func:`gfkqmc.trial.lambda_T_estimate`.  The walkers sample
    ``psi_T^2`` after ``burn_in``.
    """
    params = WalkParams(
        n=n, t_max=max(sample_time, 1.0 / n), n_rep=n_walkers, seed=seed,
        start_guess=start, start_spread=start_spread, burn_in=burn_in,
    )
    paths = np.arange(n_walkers)
    guide = _Guide(spec, trial)
    y, _, aborted = _initial_positions(spec, trial, params, paths, guide)
    steps = int(round(sample_time * n))
    if steps == 0:
        E_L, _, _, _ = guide(y)
        return E_L[~aborted]
    signs = _SignSource(seed, STREAM_WALK, paths, spec.dim)
    retry = _Retry(_RetrySource(seed, STREAM_RETRY, paths, spec.dim), 100)
    diff = spec.diffusion
    kick = np.sqrt(diff) / math.sqrt(n)
    _, _, grad, _ = guide(y)
    active = ~aborted
    acc = np.zeros(n_walkers)
    for _ in range(steps):
        y, E_L, V, grad, h, ab = _step(y, grad, signs.next(), spec, guide, diff, kick, 1.0 / n, retry, active)
        active &= ~ab
        acc += E_L
    return acc[active] / steps


def default_workers():
    return max(1, os.cpu_count() or 1)
