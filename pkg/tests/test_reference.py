"""Dense master-equation and trajectory solvers."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad

from tensorjump.mpo import X, Z
from tensorjump.noise import NoiseModel, RateSchedule
from tensorjump.reference import (
    SizeCapError,
    dense_trajectories,
    embed,
    integrate_master,
    local_expectations,
    tfi_dense,
)
from tensorjump.tjm import initial_state

OSCILLATORY = RateSchedule("damped_oscillatory", 8.24, 12.0, 7.5, 0.25)
PLUS = np.array([1.0, 1.0]) / np.sqrt(2)


def plus_rho(n: int) -> np.ndarray:
    v = initial_state(n, "plus").to_dense()
    return np.outer(v, v.conj())


def test_constant_dephasing_coherence():
    noise = NoiseModel.uniform(1, [("dephasing", RateSchedule("constant", 2.0))])
    res = integrate_master(np.zeros((2, 2)), noise, plus_rho(1), 0.01, 100)
    coherence = res.rhos[:, 0, 1].real
    np.testing.assert_allclose(coherence, 0.5 * np.exp(-2 * 2.0 * res.times), atol=1e-9)


def test_oscillatory_dephasing_coherence():
    noise = NoiseModel.uniform(1, [("dephasing", OSCILLATORY)])
    res = integrate_master(np.zeros((2, 2)), noise, plus_rho(1), 0.01, 100, sample_every=10)
    for t, c in zip(res.times, res.rhos[:, 0, 1].real):
        integral = quad(OSCILLATORY, 0, t)[0]
        assert c == pytest.approx(0.5 * np.exp(-2 * integral), abs=1e-8)


def test_closed_system_stays_pure():
    res = integrate_master(tfi_dense(3, 1.0, 0.5), NoiseModel.noiseless(3), plus_rho(3), 0.01, 100, sample_every=20)
    for rho in res.rhos:
        assert np.real(np.trace(rho @ rho)) == pytest.approx(1.0, abs=1e-9)


def test_trace_and_positivity_with_positive_rates():
    noise = NoiseModel.uniform(3, [("excitation", RateSchedule("constant", 0.4)), ("relaxation", RateSchedule("constant", 1.0))])
    res = integrate_master(tfi_dense(3, 1.0, 0.5), noise, plus_rho(3), 0.01, 100, sample_every=10)
    assert res.trace_drift <= 1e-10
    assert res.min_eigenvalues.min() >= -1e-10
    for rho in res.rhos:
        np.testing.assert_allclose(rho, rho.conj().T, atol=1e-12)


def test_local_expectations_match_embedding():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    out = local_expectations(rho[None], 3, Z)
    for site in range(3):
        assert out[0, site] == pytest.approx(np.real(np.trace(embed(Z, site, 3) @ rho)))


def test_master_cap():
    with pytest.raises(SizeCapError):
        integrate_master(np.eye(2**7), NoiseModel.noiseless(7), np.eye(2**7) / 2**7, 0.01, 1)


def test_trajectory_cap():
    with pytest.raises(SizeCapError):
        dense_trajectories(np.eye(2**13), NoiseModel.noiseless(13), np.eye(2**13)[0], 0.01, 1, 0, [0])


def test_tfi_dense_two_sites():
    expected = -np.kron(Z, Z) - 0.5 * (np.kron(X, np.eye(2)) + np.kron(np.eye(2), X))
    np.testing.assert_allclose(tfi_dense(2, 1.0, 0.5), expected)


def test_dense_trajectories_reproduce_master():
    n, dt, steps = 2, 0.005, 200
    noise = NoiseModel.uniform(n, [("dephasing", OSCILLATORY)])
    h = tfi_dense(n, 1.0, 0.5)
    psi0 = initial_state(n, "plus").to_dense()
    res = dense_trajectories(h, noise, psi0, dt, steps, 0, range(2000), sample_every=20)
    mu = np.array([r.mu for r in res])
    vals = np.array([r.values[:, 0, :] for r in res])
    prod = mu[:, :, None] * vals
    mean, se = prod.mean(0), prod.std(0, ddof=1) / np.sqrt(len(res))
    exact = integrate_master(h, noise, np.outer(psi0, psi0.conj()), dt, steps, sample_every=20).local(X)
    assert np.all(np.abs(mean - exact) <= np.maximum(0.05, 3 * se))
