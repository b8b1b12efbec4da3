import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopman_moments import DivergenceError, duffing_system, identity_system, rollout
from koopman_moments.dynamics import (
    DiscreteSystem,
    OdeSampledSystem,
    duffing_energy,
    polynomial_map_system,
)


def reference_rollout(x0, dt, steps, substeps):
    """Scalar RK4 written independently of the package (plain floats)."""
    def f(a, b):
        return b, a - a ** 3

    x, v = x0
    out = [(x, v)]
    h = dt / substeps
    for _ in range(steps):
        for _ in range(substeps):
            k1 = f(x, v)
            k2 = f(x + h / 2 * k1[0], v + h / 2 * k1[1])
            k3 = f(x + h / 2 * k2[0], v + h / 2 * k2[1])
            k4 = f(x + h * k3[0], v + h * k3[1])
            x += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            v += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        out.append((x, v))
    return np.array(out)


@pytest.mark.parametrize("x0", [(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0)])
@pytest.mark.parametrize("dt", [0.01, 0.1, 0.5])
def test_duffing_equilibria_are_fixed(x0, dt):
    np.testing.assert_array_equal(duffing_system(dt).step(np.array(x0)), x0)


@pytest.mark.parametrize("dt,substeps", [(0.0, 10), (-0.1, 10), (0.1, 0), (0.1, 2.5)])
def test_duffing_rejects_bad_arguments(dt, substeps):
    with pytest.raises(ValueError):
        duffing_system(dt, substeps)


def test_duffing_energy_drift_against_reference():
    # reference with 1024 substeps drifts ~1e-15; 16 substeps drifts ~3e-12
    x0 = np.array([0.5, 0.0])
    traj = rollout(duffing_system(0.1, 16), x0, 100)
    ref = reference_rollout((0.5, 0.0), 0.1, 100, 1024)
    h0 = duffing_energy(x0)
    assert abs(duffing_energy(ref[-1]) - h0) < 1e-13
    assert abs(duffing_energy(traj[-1]) - h0) < 1e-10


def test_rollout_matches_fine_reference_integrator():
    traj = rollout(duffing_system(0.1), [0.8, 0.1], 5)
    ref = reference_rollout((0.8, 0.1), 0.1, 5, 10000)
    np.testing.assert_allclose(traj, ref, rtol=0, atol=1e-8)


def test_energy_drift_over_grid():
    grid = np.round(np.arange(-10, 11) / 10, 10)
    X = np.array([(a, b) for a in grid for b in grid]).T
    traj = rollout(duffing_system(0.1), X, 5)
    h0 = duffing_energy(traj[0])
    drift = np.abs(duffing_energy(traj[-1]) - h0) / (1 + np.abs(h0))
    assert drift.max() < 1e-8


def test_identity_rollout():
    traj = rollout(identity_system(2), [1.0, 2.0], 3)
    np.testing.assert_array_equal(traj, [[1, 2]] * 4)


def test_duffing_rollout_from_origin():
    np.testing.assert_array_equal(rollout(duffing_system(), [0.0, 0.0], 5), np.zeros((6, 2)))


def test_rollout_is_deterministic():
    a = rollout(duffing_system(), [0.3, -0.7], 20)
    b = rollout(duffing_system(), [0.3, -0.7], 20)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(1, 6), st.integers(1, 6))
def test_rollout_semigroup(x1, x2, a, b):
    system = duffing_system()
    full = rollout(system, [x1, x2], a + b)
    tail = rollout(system, full[a], b)
    np.testing.assert_array_equal(full[a:], tail)


def test_batched_rollout_equals_single():
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, (2, 7))
    batch = rollout(duffing_system(), X, 4)
    for i in range(7):
        np.testing.assert_array_equal(batch[:, :, i], rollout(duffing_system(), X[:, i], 4))


def test_divergence_reports_step():
    system = DiscreteSystem(1, (-1.0,), (1.0,), transition=lambda x: 100.0 * x)
    with pytest.raises(DivergenceError) as info:
        rollout(system, [1.0], 10)
    assert info.value.step == 4  # 1e8 > 1e6 after four steps


def test_divergence_on_nan():
    system = DiscreteSystem(1, (-1.0,), (1.0,), transition=lambda x: x * np.nan)
    with pytest.raises(DivergenceError) as info:
        rollout(system, [1.0], 3)
    assert info.value.step == 1


def test_rollout_preconditions():
    with pytest.raises(ValueError):
        rollout(duffing_system(), [1.0, 0.0, 0.0], 2)
    with pytest.raises(ValueError):
        rollout(duffing_system(), [1.0, 0.0], 0)
    with pytest.raises(ValueError):
        rollout(duffing_system(), [np.inf, 0.0], 2)


def test_domain_dimension_must_match():
    with pytest.raises(ValueError):
        DiscreteSystem(2, (-1.0,), (1.0,), transition=lambda x: x)
    with pytest.raises(ValueError):
        OdeSampledSystem(2, (-1.0, -1.0), (1.0, 1.0))


def test_ode_step_is_substeps_of_rk4():
    system = duffing_system(0.2, 3)
    x = np.array([0.4, -0.3])
    manual = x
    for _ in range(3):
        manual = reference_rollout(tuple(manual), 0.2 / 3, 1, 1)[-1]
    np.testing.assert_allclose(system.step(x), manual, rtol=0, atol=1e-15)


def test_polynomial_map_default():
    system = polynomial_map_system()
    out = system.step(np.array([0.5, -0.2]))
    np.testing.assert_allclose(out, [0.45, -0.1 + 0.31 * 0.25], rtol=1e-15)
    assert math.isclose(system.step(np.array([1.0, 0.0]))[1], 0.31)
