"""Trial (guide) functions for importance sampling.

Every trial function is evaluated on *physical* free-particle coordinates
(bohr), batched as ``(B, d)`` arrays.  The core method is
:meth:`TrialFunction.derivatives`, which returns ``log psi``, the gradient of
``log psi`` and the per-coordinate ratios ``d^2 psi / dx_k^2 / psi``.  The
module-level helpers :func:`drift` and :func:`local_energy` translate these
to the coordinate scheme of a :class:`~gfkqmc.system.SystemSpec`.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConfigError, NonConverged, NonFiniteDrift, SingularConfiguration
from .system import SystemSpec, potential_batch

logger = logging.getLogger(__name__)


class TrialFunction:
    """Base class.  Subclasses implement :meth:`derivatives`."""

    #: configuration length the trial expects
    dim: int

    def derivatives(self, X):
        """Return ``(log_psi, grad_log_psi, second_ratio)``.

        ``second_ratio[:, k]`` is ``(d^2 psi / dx_k^2) / psi``; summing it
        over ``k`` gives the Laplacian ratio.
        """
        raise NotImplementedError

    def parameters(self) -> dict:
        raise NotImplementedError

    def _batch(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise ConfigError(f"trial expects configurations of length {self.dim}, got {X.shape[1]}", key="config")
        return X, single

    def log_value(self, X):
        X, single = self._batch(X)
        out = self._log_value(X)
        return float(out[0]) if single else out

    def _log_value(self, X):
        return self.derivatives(X)[0]

    def drift(self, X):
        """Gradient of ``log psi`` (``grad psi / psi``)."""
        X, single = self._batch(X)
        g = self.derivatives(X)[1]
        return g[0] if single else g

    def laplacian_ratio(self, X, weights=None):
        """``sum_k w_k (d^2 psi / dx_k^2) / psi``; plain Laplacian ratio when ``weights`` is None."""
        X, single = self._batch(X)
        s = self.derivatives(X)[2]
        out = s.sum(axis=1) if weights is None else s @ np.asarray(weights, dtype=float)
        return float(out[0]) if single else out


class GaussianTrial(TrialFunction):
    """``psi = exp(-sigma |x|^2)`` over the free coordinates.

    Args:
        sigma: Positive width parameter.
        dim: Configuration length.
        blocks: Optional free-particle indices restricting ``|x|^2`` to those
            particles' coordinates.
        spatial_dim: Block size used to interpret ``blocks``.
    """

    def __init__(self, sigma: float, dim: int, blocks: Optional[Sequence[int]] = None, spatial_dim: int = 3):
        if not sigma > 0:
            raise ConfigError("GaussianTrial: sigma must be positive", key="sigma")
        self.sigma = float(sigma)
        self.dim = int(dim)
        self.blocks = None if blocks is None else tuple(int(b) for b in blocks)
        mask = np.ones(self.dim)
        if self.blocks is not None:
            mask = np.zeros(self.dim)
            for b in self.blocks:
                if not 0 <= b * spatial_dim < self.dim:
                    raise ConfigError(f"GaussianTrial: block {b} out of range", key="blocks")
                mask[b * spatial_dim : (b + 1) * spatial_dim] = 1.0
        self._mask = mask

    @classmethod
    def for_system(cls, spec: SystemSpec, sigma, blocks=None):
        return cls(sigma, spec.dim, blocks=blocks, spatial_dim=spec.spatial_dim)

    def derivatives(self, X):
        X = np.atleast_2d(X)
        xm = X * self._mask
        s = self.sigma
        logpsi = -s * np.einsum("bk,bk->b", xm, xm)
        grad = -2.0 * s * xm
        second = (-2.0 * s + 4.0 * s * s * xm * xm) * self._mask
        return logpsi, grad, second

    def parameters(self):
        return {"sigma": self.sigma}


# -- distance-based trials ----------------------------------------------------


class _PairGeometry:
    """Distances, unit vectors and their coordinate derivatives for particle pairs."""

    def __init__(self, spec: SystemSpec, pairs):
        self.spec = spec
        self.pairs = tuple(pairs)
        # free index per particle (None for clamped)
        free_index = []
        k = 0
        for p in spec.particles:
            if p.clamped:
                free_index.append(None)
            else:
                free_index.append(k)
                k += 1
        self.free_index = free_index

    def evaluate(self, X):
        """Distances ``(B, P)`` and per-pair ``(J, K)`` with shapes ``(B, P, d)``.

        ``J[b, a, k] = d r_a / d x_k`` and ``K[b, a, k] = d^2 r_a / d x_k^2``.
        """
        spec = self.spec
        B = X.shape[0]
        n = spec.spatial_dim
        P = len(self.pairs)
        r = np.empty((B, P))
        J = np.zeros((B, P, spec.dim))
        K = np.zeros((B, P, spec.dim))
        pos = []
        k = 0
        for p in spec.particles:
            if p.clamped:
                pos.append(np.asarray(p.fixed_position)[None, :])
            else:
                pos.append(X[:, n * k : n * k + n])
                k += 1
        for a, (i, j) in enumerate(self.pairs):
            diff = pos[i] - pos[j]
            if diff.shape[0] != B:
                diff = np.broadcast_to(diff, (B, n))
            dist = np.sqrt(np.einsum("bk,bk->b", diff, diff))
            r[:, a] = dist
            with np.errstate(divide="ignore", invalid="ignore"):
                u = diff / dist[:, None]
                curv = (1.0 - u * u) / dist[:, None]
            fi, fj = self.free_index[i], self.free_index[j]
            if fi is not None:
                J[:, a, n * fi : n * fi + n] = u
                K[:, a, n * fi : n * fi + n] = curv
            if fj is not None:
                J[:, a, n * fj : n * fj + n] = -u
                K[:, a, n * fj : n * fj + n] = curv
        return r, J, K


class _DistanceTrial(TrialFunction):
    """``psi = sum_perm exp(f(r_perm))`` where ``f`` depends on pair distances.

    Subclasses set ``self.pairs`` (canonical particle-index pairs), a list of
    particle relabelings ``self.perms`` and implement :meth:`_exponent`.
    """

    def _setup(self, spec: SystemSpec, pairs, perms):
        self.spec = spec
        self.dim = spec.dim
        self.pairs = tuple(pairs)
        self.perms = tuple(tuple(p) for p in perms)
        needed = []
        self._pair_maps = []
        for perm in self.perms:
            idx = []
            for i, j in self.pairs:
                key = tuple(sorted((perm[i], perm[j])))
                if key not in needed:
                    needed.append(key)
                idx.append(needed.index(key))
            self._pair_maps.append(np.array(idx))
        self._geometry = _PairGeometry(spec, needed)

    def _exponent(self, r):
        """Return ``(f, df/dr, d2f/dr2)`` with shapes ``(B,)``, ``(B, P)``, ``(B, P, P)``."""
        raise NotImplementedError

    def _log_value(self, X):
        r_all, _, _ = self._geometry.evaluate(X)
        fs = np.stack([self._exponent(r_all[:, m])[0] for m in self._pair_maps])
        return logsumexp(fs, axis=0)

    def derivatives(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r_all, J_all, K_all = self._geometry.evaluate(X)
        fs, grads, seconds = [], [], []
        for m in self._pair_maps:
            J = J_all[:, m]
            f, df, d2f = self._exponent(r_all[:, m])
            g = np.einsum("ba,bak->bk", df, J)
            h = np.einsum("bxy,bxk,byk->bk", d2f, J, J) + np.einsum("ba,bak->bk", df, K_all[:, m])
            fs.append(f)
            grads.append(g)
            seconds.append(h + g * g)
        fs = np.stack(fs)
        logpsi = logsumexp(fs, axis=0)
        w = np.exp(fs - logpsi)
        grad = np.einsum("pb,pbk->bk", w, np.stack(grads))
        second = np.einsum("pb,pbk->bk", w, np.stack(seconds))
        return logpsi, grad, second


def _roles(spec: SystemSpec):
    electrons = [i for i, p in enumerate(spec.particles) if p.charge < 0]
    nuclei = [i for i, p in enumerate(spec.particles) if p.charge > 0]
    return electrons, nuclei


def _relabelings(n_particles, groups, enabled):
    """All particle permutations generated by swapping within each enabled group."""
    perms = [tuple(range(n_particles))]
    for group, on in zip(groups, enabled):
        if not on or len(group) < 2:
            continue
        new = []
        for base in perms:
            for order in itertools.permutations(group):
                perm = list(base)
                for src, dst in zip(group, order):
                    perm[src] = base[dst]
                new.append(tuple(perm))
        perms = new
    return perms


class AtomicProductTrial(_DistanceTrial):
    """Product of ``exp(-alpha r)`` electron-nucleus factors.

    Electron ``i`` is attached to nucleus ``i mod n_nuclei``.  With
    ``symmetrize`` the product is summed over electron and nucleus
    relabelings (distinct terms only), e.g. ``exp(-a r_A) + exp(-a r_B)`` for
    a one-electron diatomic and the Heitler-London form for H2.
    """

    def __init__(self, spec: SystemSpec, alpha: float = 1.0, symmetrize: bool = True):
        if not alpha > 0:
            raise ConfigError("AtomicProductTrial: alpha must be positive", key="alpha")
        electrons, nuclei = _roles(spec)
        if not electrons or not nuclei:
            raise ConfigError("AtomicProductTrial needs at least one electron and one nucleus", key="form")
        self.alpha = float(alpha)
        self.symmetrize = bool(symmetrize)
        pairs = [(e, nuclei[k % len(nuclei)]) for k, e in enumerate(electrons)]
        perms = _relabelings(len(spec.particles), [electrons, nuclei], [symmetrize, symmetrize])
        unique, seen = [], set()
        for perm in perms:
            key = frozenset(tuple(sorted((perm[i], perm[j]))) for i, j in pairs)
            if key not in seen:
                seen.add(key)
                unique.append(perm)
        self._setup(spec, pairs, unique)

    def _exponent(self, r):
        B, P = r.shape
        return -self.alpha * r.sum(axis=1), np.full((B, P), -self.alpha), np.zeros((B, P, P))

    def parameters(self):
        return {"alpha": self.alpha}


_PAIR_NAMES = ("1A", "1B", "2A", "2B", "12", "AB")
_EXPONENT_KEYS = ("u", "v", "w", "n", "g", "h")


@dataclass(frozen=True)
class CorrelatedTerm:
    """One ``a * q1A^u q1B^v q2A^w q2B^n q12^g qAB^h`` term of the exponent."""

    a: float
    u: int = 0
    v: int = 0
    w: int = 0
    n: int = 0
    g: int = 0
    h: int = 0

    @property
    def exponents(self):
        return (self.u, self.v, self.w, self.n, self.g, self.h)


class CorrelatedExponentialTrial(_DistanceTrial):
    """Explicitly correlated exponential trial for one- and two-electron diatomics.

    ``psi = (1 + P12)(1 + PAB) exp(sum_k a_k prod_x q_x^{e_kx} - chi r1A - delta r2B)``
    with ``q_x = r_x / (1 + c_x r_x)``.  Electrons 1 and 2 are the first two
    negatively charged particles, nuclei A and B the first two positive ones.
    Pairs that do not exist in the system (e.g. ``12`` for a one-electron
    ion) must carry zero exponents.

    Args:
        spec: System the trial is defined on.
        terms: :class:`CorrelatedTerm` records or mappings with keys
            ``a, u, v, w, n, g, h``.
        c: Transform constant, either one value or a mapping from pair name
            (``"1A"``, ..., ``"AB"``) to value; unlisted pairs use ``c["default"]``
            (1.0 if absent).
        chi, delta: Orbital exponents on ``r1A`` and ``r2B``.
        symmetrize_electrons, symmetrize_nuclei: Apply ``P12`` / ``PAB``.
        n_max: Upper bound on the total degree of every term.
    """

    def __init__(
        self,
        spec: SystemSpec,
        terms: Sequence = (),
        c=1.0,
        chi: float = 1.0,
        delta: float = 1.0,
        symmetrize_electrons: bool = True,
        symmetrize_nuclei: bool = True,
        n_max: int = 6,
    ):
        electrons, nuclei = _roles(spec)
        if not electrons or not nuclei:
            raise ConfigError("CorrelatedExponentialTrial needs electrons and nuclei", key="form")
        e = electrons[:2]
        nuc = nuclei[:2]
        index = {}
        if len(nuc) > 0:
            index["1A"] = (e[0], nuc[0])
        if len(nuc) > 1:
            index["1B"] = (e[0], nuc[1])
            index["AB"] = (nuc[0], nuc[1])
        if len(e) > 1:
            index["2A"] = (e[1], nuc[0])
            index["12"] = (e[0], e[1])
            if len(nuc) > 1:
                index["2B"] = (e[1], nuc[1])
        self.pair_names = tuple(name for name in _PAIR_NAMES if name in index)

        if chi < 0 or delta < 0:
            raise ConfigError("chi and delta must be non-negative", key="chi" if chi < 0 else "delta")
        if delta and "2B" not in index:
            raise ConfigError("delta needs a second electron and a second nucleus", key="delta")
        self.chi = float(chi)
        self.delta = float(delta)
        self.n_max = int(n_max)

        parsed = []
        for t in terms:
            if not isinstance(t, CorrelatedTerm):
                t = dict(t)
                unknown = set(t) - {"a", *_EXPONENT_KEYS}
                if unknown:
                    raise ConfigError(f"unknown term keys {sorted(unknown)}", key=sorted(unknown)[0])
                t = CorrelatedTerm(**{k: (float(v) if k == "a" else int(v)) for k, v in t.items()})
            if any(x < 0 for x in t.exponents):
                raise ConfigError("term exponents must be non-negative", key="terms")
            if sum(t.exponents) > self.n_max:
                raise ConfigError(f"term degree {sum(t.exponents)} exceeds n_max={self.n_max}", key="terms")
            for name, ex in zip(_PAIR_NAMES, t.exponents):
                if ex and name not in index:
                    raise ConfigError(f"term uses pair {name} which does not exist in this system", key="terms")
            parsed.append(t)
        self.terms = tuple(parsed)

        if isinstance(c, Mapping):
            unknown = set(c) - set(_PAIR_NAMES) - {"default"}
            if unknown:
                raise ConfigError(f"unknown pair names in c: {sorted(unknown)}", key="c")
            default = float(c.get("default", 1.0))
            cvals = {name: float(c.get(name, default)) for name in self.pair_names}
        else:
            cvals = {name: float(c) for name in self.pair_names}
        if any(v < 0 for v in cvals.values()):
            raise ConfigError("c must be non-negative", key="c")
        if isinstance(c, Mapping) or not cvals:
            self.c = dict(cvals)
        else:
            self.c = float(c)
        self._c = np.array([cvals[name] for name in self.pair_names])

        # exponent tuples restricted to existing pairs, in pair_names order
        pos = [_PAIR_NAMES.index(name) for name in self.pair_names]
        self._term_a = np.array([t.a for t in self.terms])
        self._term_ex = [np.array([t.exponents[p] for p in pos]) for t in self.terms]
        self._chi_col = self.pair_names.index("1A")
        self._delta_col = self.pair_names.index("2B") if "2B" in self.pair_names else None

        self.symmetrize_electrons = bool(symmetrize_electrons)
        self.symmetrize_nuclei = bool(symmetrize_nuclei)
        pairs = [index[name] for name in self.pair_names]
        perms = _relabelings(len(spec.particles), [e, nuc], [symmetrize_electrons, symmetrize_nuclei])
        self._setup(spec, pairs, perms)

    def _exponent(self, r):
        B, P = r.shape
        c = self._c
        den = 1.0 + c * r
        q = r / den
        dq = 1.0 / (den * den)
        d2q = -2.0 * c / (den * den * den)
        f = np.zeros(B)
        df = np.zeros((B, P))
        d2f = np.zeros((B, P, P))
        for a, ex in zip(self._term_a, self._term_ex):
            active = np.nonzero(ex)[0]
            if active.size == 0:
                f = f + a
                continue
            p0 = {}
            p1 = {}
            p2 = {}
            for x in active:
                e = ex[x]
                qx = q[:, x]
                p0[x] = qx**e
                p1[x] = e * qx ** (e - 1) * dq[:, x]
                p2[x] = e * qx ** (e - 1) * d2q[:, x]
                if e > 1:
                    p2[x] = p2[x] + e * (e - 1) * qx ** (e - 2) * dq[:, x] ** 2

            def prod_except(skip):
                out = np.ones(B)
                for y in active:
                    if y not in skip:
                        out = out * p0[y]
                return out

            f = f + a * prod_except(())
            for x in active:
                rest = prod_except((x,))
                df[:, x] += a * p1[x] * rest
                d2f[:, x, x] += a * p2[x] * rest
                for y in active:
                    if y != x:
                        d2f[:, x, y] += a * p1[x] * p1[y] * prod_except((x, y))
        f = f - self.chi * r[:, self._chi_col]
        df[:, self._chi_col] -= self.chi
        if self._delta_col is not None:
            f = f - self.delta * r[:, self._delta_col]
            df[:, self._delta_col] -= self.delta
        return f, df, d2f

    def parameters(self):
        params = {"chi": self.chi, "delta": self.delta}
        if isinstance(self.c, dict):
            params.update({f"c_{k}": v for k, v in self.c.items()})
        else:
            params["c"] = self.c
        for k, t in enumerate(self.terms):
            params[f"a_{k}"] = t.a
        return params


# -- operations in walk coordinates ---------------------------------------


def _check_config(spec, config):
    x = np.asarray(config, dtype=float)
    if x.shape != (spec.dim,):
        raise ConfigError(f"configuration must have length {spec.dim}", key="config")
    return x


def drift(trial: TrialFunction, config, spec: Optional[SystemSpec] = None):
    """``grad psi / psi`` with respect to the configuration coordinates.

    Without ``spec`` the configuration is taken to be in bohr.

    Raises:
        NonFiniteDrift: if any component is not finite.
    """
    x = np.asarray(config, dtype=float)
    if spec is None:
        g = trial.drift(x)
    else:
        x = _check_config(spec, x)
        c = spec.coordinate_scales
        g = c * trial.drift(c * x)
    if not np.all(np.isfinite(g)):
        raise NonFiniteDrift("trial drift is not finite")
    return g


def local_energy_batch(trial: TrialFunction, spec: SystemSpec, X):
    """Local energy and walk-coordinate drift for a batch of configurations.

    Returns:
        ``(E_L, V, grad, bad)`` where ``grad`` is ``grad log psi`` in the
        spec's coordinates and ``bad`` flags rows that are singular or have a
        non-finite local energy or drift.
    """
    c = spec.coordinate_scales
    V, singular = potential_batch(spec, X)
    _, g, second = trial.derivatives(X * c)
    E_L = -0.5 * (second @ spec.inverse_masses) + V
    grad = g * c
    bad = singular | ~np.isfinite(E_L) | ~np.all(np.isfinite(grad), axis=1)
    return E_L, V, grad, bad


def local_energy(trial: TrialFunction, spec: SystemSpec, config) -> float:
    """``E_L = (H psi)/psi`` in hartree at one configuration.

    The kinetic part weights each coordinate's second derivative by the
    particle's inverse mass, so the value is the same in both coordinate
    schemes for the same physical configuration.
    """
    x = _check_config(spec, config)
    E_L, _, _, bad = local_energy_batch(trial, spec, x[None, :])
    if bad[0]:
        _, singular = potential_batch(spec, x[None, :])
        if singular[0]:
            raise SingularConfiguration("two point charges coincide")
        raise NonFiniteDrift("local energy or drift is not finite")
    return float(E_L[0])


def finite_difference_check(trial: TrialFunction, X, step: float = 1e-5, second_step: float = 1e-3):
    """Compare analytic derivatives against finite differences of ``log_value``.

    The drift is checked against centered differences with ``step``.  The
    Laplacian ratio uses ``d^2 psi/psi = d^2 log psi + (d log psi)^2`` with
    both pieces taken from five-point stencils of ``log_value`` (step
    ``second_step``), so the oracle never touches the analytic derivatives.

    Returns:
        dict with the worst relative errors ``drift`` and ``laplacian``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _, grad, second = trial.derivatives(X)
    lap = second.sum(axis=1)
    f0 = trial._log_value(X)
    fd_grad = np.empty_like(grad)
    fd_lap = np.zeros(X.shape[0])
    h = second_step
    for k in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[k] = 1.0
        fd_grad[:, k] = (trial._log_value(X + step * e) - trial._log_value(X - step * e)) / (2 * step)
        f1p, f1m = trial._log_value(X + h * e), trial._log_value(X - h * e)
        f2p, f2m = trial._log_value(X + 2 * h * e), trial._log_value(X - 2 * h * e)
        d1 = (8 * (f1p - f1m) - (f2p - f2m)) / (12 * h)
        d2 = (16 * (f1p + f1m) - (f2p + f2m) - 30 * f0) / (12 * h * h)
        fd_lap += d2 + d1 * d1
    scale_g = np.maximum(np.abs(grad).max(axis=1, keepdims=True), 1.0)
    err_g = np.abs(grad - fd_grad) / scale_g
    err_l = np.abs(lap - fd_lap) / np.maximum(np.abs(lap), 1.0)
    return {"drift": float(err_g.max()), "laplacian": float(err_l.max())}


def lambda_T_estimate(
    trial: TrialFunction,
    spec: SystemSpec,
    n_walkers: int = 2000,
    n: int = 30,
    burn_in: float = 2.0,
    sample_time: float = 4.0,
    seed: int = 0,
    start=None,
    start_spread=0.5,
    max_sigma: Optional[float] = None,
):
    """Variational energy ``<E_L>`` under ``psi_T^2``.

    Walkers follow the drifted walk without reweighting; after ``burn_in``
    time units each walker averages ``E_L`` over ``sample_time``.  The
    per-walker averages are independent, which gives the standard error.

    Returns:
        ``(mean, standard_error)``.

    Raises:
        NonConverged: if ``max_sigma`` is given and the error exceeds it.
    """
    from .walk import sample_local_energy

    per_walker = sample_local_energy(
        trial, spec, n_walkers=n_walkers, n=n, burn_in=burn_in, sample_time=sample_time,
        seed=seed, start=start, start_spread=start_spread,
    )
    mean = float(per_walker.mean())
    err = float(per_walker.std(ddof=1) / np.sqrt(per_walker.size))
    if max_sigma is not None and not err <= max_sigma:
        raise NonConverged(f"lambda_T standard error {err:.3g} exceeds bound {max_sigma:.3g}")
    logger.debug("lambda_T estimate %.8f +/- %.2g from %d walkers", mean, err, per_walker.size)
    return mean, err
