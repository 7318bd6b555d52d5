"""Trajectory stepper: schedule, jump sampling, martingale and dense agreement."""

from __future__ import annotations

import warnings

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from tensorjump.mpo import X, build_tfi
from tensorjump.mps import MpsState
from tensorjump.noise import NoiseModel, RateSchedule
from tensorjump.reference import embed, tfi_dense
from tensorjump.tjm import (
    CoarseStepWarning,
    IntegratorFault,
    RandomStream,
    SimulationContext,
    apply_jump,
    initial_state,
    jump_probability,
    martingale_step,
    no_jump_step,
    propagate_no_jump,
    rates_at,
    run_trajectory,
    select_channel,
    step_schedule,
)

OSCILLATORY = RateSchedule("damped_oscillatory", 8.24, 12.0, 7.5, 0.25)
CONSTANT = RateSchedule("constant", 8.24)


def context(n=2, kinds=(("dephasing", CONSTANT),), dt=0.01, n_steps=10, chi=4, **kw) -> SimulationContext:
    noise = NoiseModel.uniform(n, list(kinds)) if kinds else NoiseModel.noiseless(n)
    return SimulationContext(build_tfi(n, 1.0, 0.5), noise, dt, n_steps, chi, **kw)


class TestSchedule:
    def test_symmetric_structure(self):
        steps = step_schedule(4, 0.1)
        assert [s.role for s in steps] == ["first", "bulk", "bulk", "bulk", "last"]
        assert [s.unitary for s in steps] == [False, True, True, True, True]
        np.testing.assert_allclose([s.tau for s in steps], [0.05, 0.1, 0.1, 0.1, 0.05])
        # total dissipator time equals total unitary time
        assert sum(s.tau for s in steps) == pytest.approx(0.4)

    def test_rate_times_are_interval_midpoints(self):
        steps = step_schedule(3, 0.1)
        np.testing.assert_allclose([s.rate_time for s in steps], [0.025, 0.1, 0.2, 0.275])

    def test_sampling(self):
        steps = step_schedule(5, 0.1, sample_every=2)
        assert [s.sample_time for s in steps] == [None, None, pytest.approx(0.2), None, pytest.approx(0.4), pytest.approx(0.5)]
        assert steps[-1].sample_after and not steps[2].sample_after

    def test_first_order(self):
        steps = step_schedule(3, 0.1, order=1)
        assert steps[0].tau == 0 and not steps[0].unitary
        assert all(s.unitary and s.tau == 0.1 and s.sample_after for s in steps[1:])

    @pytest.mark.parametrize(("n", "dt", "order"), [(0, 0.1, 2), (2, 0.0, 2), (2, 0.1, 3)])
    def test_invalid(self, n, dt, order):
        with pytest.raises(ValueError):
            step_schedule(n, dt, order)


class TestJumpProbability:
    def test_dephasing_step_value(self):
        ctx = context(n=1, dt=0.001, n_steps=2)
        rates = ctx.step_rates[1]
        after, _ = no_jump_step(MpsState.from_product_state([0]), ctx.steps[1], rates, ctx)
        assert jump_probability(1.0, after.norm_squared()) == pytest.approx(1 - np.exp(-0.00824), rel=1e-10)
        assert jump_probability(1.0, after.norm_squared()) == pytest.approx(0.00821, abs=1e-5)

    def test_relaxation_on_ground_state(self):
        kinds = (("excitation", RateSchedule("constant", 0.0)), ("relaxation", CONSTANT))
        ctx = context(n=3, kinds=kinds, n_steps=2)
        step = ctx.steps[0]
        after, _ = no_jump_step(MpsState.from_product_state([0, 0, 0]), step, ctx.step_rates[0], ctx)
        assert jump_probability(1.0, after.norm_squared()) == pytest.approx(0.0, abs=1e-15)

    def test_growth_is_fault(self):
        with pytest.raises(IntegratorFault):
            jump_probability(1.0, 1.001)

    def test_round_off_growth_tolerated(self):
        assert jump_probability(1.0, 1.0 + 1e-14) == 0.0

    def test_coarse_step_warns(self):
        with pytest.warns(CoarseStepWarning):
            jump_probability(1.0, 0.8)

    def test_fine_step_silent(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            jump_probability(1.0, 0.95)


class TestChannelChoice:
    @pytest.mark.parametrize(("u", "expected"), [(0.0, 0), (0.29, 0), (0.3, 1), (0.99, 1)])
    def test_inverse_cdf(self, u, expected):
        assert select_channel(np.array([0.3, 0.7]), u) == expected

    def test_zero_weights_skipped(self):
        assert select_channel(np.array([0.0, 1.0, 0.0]), 0.0) == 1

    def test_all_zero_is_fault(self):
        with pytest.raises(IntegratorFault):
            select_channel(np.zeros(3), 0.5)

    def test_even_split_frequency(self):
        u = np.random.default_rng(3).random(10_000)
        hits = sum(select_channel(np.array([1.0, 1.0]), x) for x in u)
        assert abs(hits - 5000) <= 4 * np.sqrt(10_000 * 0.25)


class TestMartingale:
    def test_constant_when_rates_positive(self):
        ctx = context(n=1)
        assert martingale_step(1.0, ctx.step_rates[1], 0.01, None, ctx) == 1.0
        assert martingale_step(1.0, ctx.step_rates[1], 0.01, 0, ctx) == 1.0

    def test_negative_rate_jump_flips_sign(self):
        ctx = context(n=1, kinds=(("dephasing", OSCILLATORY),), dt=0.01, n_steps=40)
        rates = rates_at(ctx.noise, 0.2, 0.01)
        assert rates.gamma[0] < 0
        # gamma / (gamma - 2 gamma) = -1
        jump = martingale_step(1.0, rates, 0.0, 0, ctx)
        assert jump == pytest.approx(-1.0)

    def test_continuous_factor(self):
        ctx = context(n=1, kinds=(("dephasing", OSCILLATORY),), dt=0.01, n_steps=40)
        rates = rates_at(ctx.noise, 0.2, 0.01)
        exact = martingale_step(1.0, rates, 0.01, None, ctx)
        assert exact == pytest.approx(np.exp(rates.shift * 0.01))
        euler = 1.0 + rates.shift * 0.01
        assert abs(exact - euler) <= (rates.shift * 0.01) ** 2

    def test_ratio_scale_hook(self):
        ctx = context(n=1, jump_ratio_scale=0.5)
        assert martingale_step(1.0, ctx.step_rates[1], 0.01, 0, ctx) == 0.5


class TestJumps:
    def test_excitation_flips_target_site(self):
        kinds = (("excitation", CONSTANT), ("relaxation", CONSTANT))
        ctx = context(n=3, kinds=kinds)
        # channel order is site-major: site 2 excitation is index 4
        out = apply_jump(MpsState.from_product_state([0, 0, 0]), 4, ctx)
        np.testing.assert_allclose(np.abs(out.to_dense()), np.eye(8)[1], atol=1e-15)

    def test_dephasing_keeps_populations(self):
        ctx = context(n=2)
        s = MpsState.from_local_vectors([np.array([0.6, 0.8]), np.array([0.8, 0.6])])
        out = apply_jump(s, 1, ctx)
        np.testing.assert_allclose(np.abs(out.to_dense()) ** 2, np.abs(s.to_dense()) ** 2, atol=1e-14)
        assert out.expect_local(1, X) == pytest.approx(-s.expect_local(1, X))

    def test_annihilation_is_fault(self):
        kinds = (("excitation", CONSTANT), ("relaxation", CONSTANT))
        ctx = context(n=1, kinds=kinds)
        with pytest.raises(IntegratorFault):
            apply_jump(MpsState.from_product_state([0]), 1, ctx)


class TestTrajectories:
    def test_noiseless_matches_unitary(self):
        ctx = context(n=2, kinds=(), dt=0.01, n_steps=200, observables=("x", "z"))
        res = run_trajectory(ctx, 0, 0)
        h = tfi_dense(2, 1.0, 0.5)
        psi = np.zeros(4, dtype=complex)
        psi[0] = 1.0
        for k, t in enumerate(res.times):
            v = scipy.linalg.expm(-1j * t * h) @ psi
            x0 = np.real(v.conj() @ np.kron(X, np.eye(2)) @ v)
            assert abs(res.values[k, 0, 0] - x0) <= 1e-6
        assert not res.jumps and np.all(res.mu == 1.0)

    def test_deterministic(self):
        ctx = context(n=3, kinds=(("dephasing", OSCILLATORY),), dt=0.005, n_steps=60)
        a = run_trajectory(ctx, 7, 3, initial_state(3, "plus"))
        b = run_trajectory(ctx, 7, 3, initial_state(3, "plus"))
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.mu, b.mu)
        assert a.jumps == b.jumps

    def test_streams_differ_by_index(self):
        a = RandomStream.for_trajectory(0, 0, 10)
        b = RandomStream.for_trajectory(0, 1, 10)
        assert not np.array_equal(a.decision, b.decision)
        assert a.decision.shape == (11,)

    def test_sample_layout(self):
        ctx = context(n=2, dt=0.01, n_steps=10, sample_every=3, observables=("x", "z"))
        res = run_trajectory(ctx, 0, 0)
        np.testing.assert_allclose(res.times, [0, 0.03, 0.06, 0.09, 0.10])
        assert res.values.shape == (5, 2, 2) and res.mu.shape == (5,)
        np.testing.assert_allclose(ctx.sample_times, res.times)

    def test_jumps_fire_and_log(self):
        ctx = context(n=3, dt=0.01, n_steps=100)
        res = run_trajectory(ctx, 1, 0, initial_state(3, "plus"))
        assert res.fault is None and len(res.jumps) > 0
        assert all(0 <= ev.channel < 3 for ev in res.jumps)

    def test_context_validation(self):
        with pytest.raises(ValueError):
            SimulationContext(build_tfi(2, 1, 0.5), NoiseModel.noiseless(3), 0.01, 10, 4)
        with pytest.raises(ValueError):
            context(observables=("y",))
        with pytest.raises(ValueError):
            context(sites=(5,))


class TestNoJumpPropagation:
    @staticmethod
    def error(dt: float) -> float:
        kinds = (("excitation", RateSchedule("constant", 0.6)), ("relaxation", RateSchedule("constant", 1.7)))
        ctx = context(n=2, kinds=kinds, dt=dt, n_steps=int(round(1 / dt)))
        psi0 = initial_state(2, "plus")
        h = tfi_dense(2, 1.0, 0.5).astype(complex)
        for ch in ctx.noise.channels:
            rate = 0.6 if ch.kind == "excitation" else 1.7
            h -= 0.5j * rate * embed(ch.op.conj().T @ ch.op, ch.site, 2)
        exact = scipy.linalg.expm(-1j * h) @ psi0.to_dense()
        return float(np.linalg.norm(propagate_no_jump(ctx, psi0).to_dense() - exact))

    def test_second_order(self):
        assert 3.0 <= self.error(0.05) / self.error(0.025) <= 5.0


@given(st.floats(0.0, 0.5))
def test_shift_free_steps_keep_mu(t):
    ctx = context(n=1, kinds=(("dephasing", CONSTANT),))
    rates = rates_at(ctx.noise, t, 0.01)
    assert martingale_step(1.3, rates, 0.01, None, ctx) == 1.3
