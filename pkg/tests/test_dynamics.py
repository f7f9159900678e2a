import numpy as np
import pytest

from hessmatch.cg_model import QuadraticBaseline
from hessmatch.dynamics import SimConfig, simulate
from hessmatch.errors import NonFiniteState


def test_stationary_variance_isotropic():
    k = 2.0
    m = QuadraticBaseline(k * np.eye(2))
    traj = simulate(m, SimConfig(dt=0.01, steps=1_000_000, thinning=10, seed=1, beta=0.5))[0]
    var = traj[1000:].var(axis=0)
    # Euler-Maruyama bias is dt k / 2 = 1%
    np.testing.assert_allclose(var, 1.0 / (0.5 * k), rtol=0.05)


def test_zero_noise_descends_monotonically():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    m = QuadraticBaseline(A, [0.3, -0.2])
    traj = simulate(m, SimConfig(dt=0.01, steps=3000, thinning=1, beta=1e30,
                                 initial=[2.0, 1.0]))[0]
    E = m.energy(traj)
    assert np.all(np.diff(E) <= 0)
    np.testing.assert_allclose(traj[-1], m.R_ref, atol=1e-6)


def test_seeds_and_replicas():
    m = QuadraticBaseline(np.eye(1))
    cfg = SimConfig(dt=0.01, steps=100_000, thinning=10, seed=5)
    two = simulate(m, cfg, replicas=2)
    assert two.shape == (2, 10_000, 1)
    assert not np.array_equal(two[0], two[1])
    np.testing.assert_allclose(two[0].var(), two[1].var(), rtol=0.1)
    # replica i uses seed + i, independent of the replica count
    alone = simulate(m, SimConfig(dt=0.01, steps=100_000, thinning=10, seed=6))
    assert np.array_equal(alone[0], two[1])
    assert np.array_equal(simulate(m, cfg)[0], two[0])


def test_chunking_does_not_change_the_trajectory():
    m = QuadraticBaseline([[1.0, 0.2], [0.2, 1.5]])
    cfg = SimConfig(dt=0.01, steps=1000, thinning=7, seed=2)
    assert np.array_equal(simulate(m, cfg, chunk=64), simulate(m, cfg))


def test_increments_balance_in_stationary_segment():
    m = QuadraticBaseline(np.eye(1))
    traj = simulate(m, SimConfig(dt=0.01, steps=200_000, thinning=10, seed=8))[0, 500:, 0]
    fwd = np.diff(traj)
    rev = np.diff(traj[::-1])
    se = fwd.std() / np.sqrt(len(fwd))
    assert abs(fwd.mean()) < 4 * se
    assert abs(fwd.mean() + rev.mean()) < 1e-12
    # time-reversed increments have the same spread
    assert np.sort(np.abs(fwd)) == pytest.approx(np.sort(np.abs(rev)))


def test_non_finite_state_reports_last_states():
    m = QuadraticBaseline(np.eye(1) * 1e4)
    with pytest.raises(NonFiniteState) as info, np.errstate(over="ignore", invalid="ignore"):
        simulate(m, SimConfig(dt=1.0, steps=1000, seed=0, initial=[1.0]), replicas=2)
    err = info.value
    assert err.replica in (0, 1)
    assert err.last_states.shape == (10, 1)


def test_config_validation():
    for bad in (dict(dt=0.0), dict(friction=-1.0), dict(beta=0.0), dict(steps=0), dict(thinning=0)):
        with pytest.raises(ValueError):
            SimConfig(**bad)
