import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gfkqmc import system as S
from gfkqmc import trial as T
from gfkqmc.exceptions import ConfigError, NonConverged, NonFiniteDrift, SingularConfiguration

from .conftest import random_configuration

H2_TERMS = [
    {"a": 0.5, "g": 1},
    {"a": 0.242, "u": 1},
    {"a": 0.242, "n": 1},
    {"a": -0.344, "v": 1},
    {"a": -0.344, "w": 1},
]


def h2_bo_trial(spec=None):
    spec = S.h2(1.4) if spec is None else spec
    return T.CorrelatedExponentialTrial(spec, H2_TERMS, c={"12": 0.971, "default": 0.938}, chi=1.242, delta=1.242)


def h2_nbo_trial(spec):
    terms = H2_TERMS + [{"a": 25.76, "h": 1}, {"a": -9.2, "h": 2}]
    return T.CorrelatedExponentialTrial(
        spec, terms, c={"12": 0.971, "AB": 0.0, "default": 0.938}, chi=1.242, delta=1.242
    )


def random_correlated_trial(spec, rng):
    # every pair that exists in the system gets a random term
    terms = [{"a": rng.uniform(-0.5, 0.5), key: int(rng.integers(1, 3))} for key in "uvwngh"]
    terms.append({"a": rng.uniform(-0.3, 0.3), "u": 1, "g": 1, "h": 1})
    c = {name: rng.uniform(0.3, 1.5) for name in ("1A", "1B", "2A", "2B", "12", "AB")}
    return T.CorrelatedExponentialTrial(spec, terms, c=c, chi=rng.uniform(0.8, 1.4), delta=rng.uniform(0.8, 1.4))


# -- drift ------------------------------------------------------------------


def test_gaussian_drift():
    trial = T.GaussianTrial(0.5, dim=6)
    x = np.zeros(6)
    x[0] = 1.0
    np.testing.assert_allclose(T.drift(trial, x), [-1, 0, 0, 0, 0, 0], atol=1e-15)


def test_atomic_product_drift_single_electron():
    spec = S.hydrogen_atom()
    trial = T.AtomicProductTrial(spec, alpha=1.0)
    np.testing.assert_allclose(T.drift(trial, [0.0, 0.0, 2.0], spec), [0, 0, -1], atol=1e-14)


def test_correlated_drift_matches_centered_differences(rng):
    spec = S.h2(mode="nBO")
    trial = random_correlated_trial(spec, rng)
    X = np.stack([random_configuration(spec, rng, 0.6) for _ in range(10)])
    h = 1e-5
    for x in X:
        g = T.drift(trial, x, spec)
        fd = np.array(
            [(trial.log_value(x + h * e) - trial.log_value(x - h * e)) / (2 * h) for e in np.eye(spec.dim)]
        )
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * np.abs(g).max())


def test_drift_nonfinite_raises():
    spec = S.hydrogen_atom()
    trial = T.AtomicProductTrial(spec)
    with pytest.raises(NonFiniteDrift):
        T.drift(trial, [0.0, 0.0, 0.0], spec)


# -- local energy --------------------------------------------------------------


def test_hydrogen_exact_trial_local_energy(rng):
    spec = S.hydrogen_atom()
    trial = T.AtomicProductTrial(spec, alpha=1.0)
    for _ in range(50):
        x = rng.normal(size=3) * rng.uniform(0.01, 10)
        assert T.local_energy(trial, spec, x) == pytest.approx(-0.5, abs=1e-12)


def test_oscillator_exact_gaussian(rng):
    spec = S.harmonic_oscillator(3)
    trial = T.GaussianTrial.for_system(spec, 0.5)
    for _ in range(20):
        assert T.local_energy(trial, spec, rng.normal(size=3) * 2) == pytest.approx(1.5, abs=1e-12)


def test_oscillator_sigma_03_value():
    spec = S.harmonic_oscillator(3)
    trial = T.GaussianTrial.for_system(spec, 0.3)
    assert T.local_energy(trial, spec, [1.0, 1.0, 1.0]) == pytest.approx(1.86, abs=1e-12)


@given(arrays(np.float64, 3, elements=st.floats(-4, 4, allow_nan=False)))
def test_oscillator_sigma_03_closed_form(x):
    spec = S.harmonic_oscillator(3)
    trial = T.GaussianTrial.for_system(spec, 0.3)
    expected = 3 * 0.3 + (x @ x) * (1 - 4 * 0.09) / 2
    assert T.local_energy(trial, spec, x) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_local_energy_singular():
    spec = S.hydrogen_atom()
    with pytest.raises(SingularConfiguration):
        T.local_energy(T.AtomicProductTrial(spec), spec, [0.0, 0.0, 0.0])


def test_local_energy_same_in_both_schemes(rng):
    phys = S.h2(mode="nBO", scaling="PhysicalCoordinates")
    scaled = S.h2(mode="nBO", scaling="ScaledCoordinates")
    trial = h2_nbo_trial(phys)
    for _ in range(10):
        x = random_configuration(phys, rng, 0.5)
        a = T.local_energy(trial, phys, x)
        b = T.local_energy(trial, scaled, scaled.from_physical(x))
        assert b == pytest.approx(a, rel=1e-10)


def test_zero_variance_principle(rng):
    spec = S.hydrogen_atom()
    trial = T.AtomicProductTrial(spec, alpha=1.0)
    X = rng.normal(size=(500, 3)) * 2
    E_L, _, _, bad = T.local_energy_batch(trial, spec, X)
    assert not bad.any()
    np.testing.assert_allclose(E_L - (-0.5), 0.0, atol=1e-10)


# -- lambda_T -------------------------------------------------------------------


def test_lambda_T_hydrogen_exact():
    spec = S.hydrogen_atom()
    mean, err = T.lambda_T_estimate(T.AtomicProductTrial(spec), spec, n_walkers=200, sample_time=1.0)
    assert mean == pytest.approx(-0.5, abs=1e-12)
    assert err < 1e-12


def test_lambda_T_oscillator_exact():
    spec = S.harmonic_oscillator(3)
    mean, err = T.lambda_T_estimate(T.GaussianTrial.for_system(spec, 0.5), spec, n_walkers=200, sample_time=1.0)
    assert mean == pytest.approx(1.5, abs=1e-12)
    assert err < 1e-12


def test_lambda_T_oscillator_rayleigh_quotient():
    spec = S.harmonic_oscillator(3)
    sigma = 0.3
    # <E_L> under psi^2 = exp(-2 sigma x^2): <x^2> = 3/(4 sigma)
    oracle = 3 * sigma + (3 / (4 * sigma)) * (1 - 4 * sigma**2) / 2
    assert oracle == pytest.approx(3 * sigma / 2 + 3 / (8 * sigma))
    mean, err = T.lambda_T_estimate(T.GaussianTrial.for_system(spec, sigma), spec, n_walkers=4000, seed=3)
    assert abs(mean - oracle) < 3 * err


def test_lambda_T_nonconverged():
    spec = S.harmonic_oscillator(3)
    with pytest.raises(NonConverged):
        T.lambda_T_estimate(T.GaussianTrial.for_system(spec, 0.3), spec, n_walkers=10, max_sigma=1e-9)


# -- symmetry and derivative checks -----------------------------------------------

coords12 = arrays(np.float64, 12, elements=st.floats(-2, 2, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(coords12)
def test_exchange_symmetry(x):
    spec = S.h2(mode="nBO")
    trial = h2_nbo_trial(spec)
    x = x + np.concatenate([np.zeros(6), [0, 0, -0.7, 0, 0, 0.7]])
    swap_e = np.concatenate([x[3:6], x[0:3], x[6:]])
    swap_n = np.concatenate([x[:6], x[9:12], x[6:9]])
    ref = trial.log_value(x)
    if not np.isfinite(ref):
        return
    assert trial.log_value(swap_e) == pytest.approx(ref, abs=1e-12, rel=1e-12)
    assert trial.log_value(swap_n) == pytest.approx(ref, abs=1e-12, rel=1e-12)


def test_atomic_product_symmetry(rng):
    spec = S.h2(1.4)
    trial = T.AtomicProductTrial(spec, alpha=1.1)
    for _ in range(20):
        x = rng.normal(size=6)
        assert trial.log_value(np.concatenate([x[3:], x[:3]])) == pytest.approx(trial.log_value(x), abs=1e-12)


def _fd_cases(rng):
    h2n = S.h2(mode="nBO")
    return [
        ("gaussian", S.harmonic_oscillator(3), T.GaussianTrial.for_system(S.harmonic_oscillator(3), 0.3)),
        ("gaussian-blocks", h2n, T.GaussianTrial.for_system(h2n, 0.4, blocks=[0, 1])),
        ("atomic-h", S.hydrogen_atom(), T.AtomicProductTrial(S.hydrogen_atom(), 1.0)),
        ("atomic-h2", S.h2(1.4), T.AtomicProductTrial(S.h2(1.4), 1.2)),
        ("atomic-h2plus-nbo", S.h2_plus(mode="nBO"), T.AtomicProductTrial(S.h2_plus(mode="nBO"), 1.24)),
        ("correlated-h2-bo", S.h2(1.4), h2_bo_trial()),
        ("correlated-h2-nbo", h2n, h2_nbo_trial(h2n)),
        ("correlated-random", h2n, random_correlated_trial(h2n, rng)),
        (
            "correlated-h2plus",
            S.h2_plus(mode="nBO"),
            T.CorrelatedExponentialTrial(
                S.h2_plus(mode="nBO"), [{"a": 19.2, "h": 1}, {"a": -4.8, "h": 2}, {"a": 0.1, "u": 2, "v": 1}],
                c={"AB": 0.0, "default": 1.0}, chi=1.24, delta=0.0,
            ),
        ),
    ]


def test_finite_difference_consistency_all_forms(rng):
    for name, spec, trial in _fd_cases(rng):
        X = np.stack([random_configuration(spec, rng, 0.7) for _ in range(100)])
        X = spec.to_physical(X)
        errors = T.finite_difference_check(trial, X)
        assert errors["drift"] < 1e-6, name
        assert errors["laplacian"] < 1e-6, name


# -- validation -------------------------------------------------------------------


def test_gaussian_invalid_sigma():
    with pytest.raises(ConfigError):
        T.GaussianTrial(0.0, dim=3)


def test_correlated_term_degree_limit():
    with pytest.raises(ConfigError):
        T.CorrelatedExponentialTrial(S.h2(), [{"a": 1.0, "u": 4, "v": 3}], n_max=6)


def test_correlated_pair_must_exist():
    with pytest.raises(ConfigError):
        T.CorrelatedExponentialTrial(S.h2_plus(), [{"a": 1.0, "g": 1}], delta=0.0)


def test_atomic_product_invalid_alpha():
    with pytest.raises(ConfigError):
        T.AtomicProductTrial(S.hydrogen_atom(), alpha=-1.0)
