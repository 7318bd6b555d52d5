"""Rate schedules, the global shift, channel normalization and local dissipators."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from tensorjump.noise import (
    RAW_OPERATORS,
    ConfigurationError,
    NoiseModel,
    RateSchedule,
    dissipator_site_factor,
    gamma_at,
    make_channel,
    normalize_channels,
    shift_at,
)
from tensorjump.reference import embed

OSCILLATORY = RateSchedule("damped_oscillatory", 8.24, 12.0, 7.5, 0.25)
CONSTANT = RateSchedule("constant", 8.24)


class TestSchedules:
    def test_oscillatory_at_zero(self):
        assert gamma_at(OSCILLATORY, 0.0) == pytest.approx(8.24)

    def test_oscillatory_goes_negative_early(self):
        t = np.linspace(0, 2, 20001)
        g = gamma_at(OSCILLATORY, t)
        assert g.min() < 0
        assert 0.15 < t[np.argmin(g)] < 0.25

    def test_oscillatory_settles(self):
        assert gamma_at(OSCILLATORY, 10.0) == pytest.approx(8.24, abs=1e-12)

    def test_constant(self):
        np.testing.assert_array_equal(gamma_at(CONSTANT, np.array([0.0, 1.0, 5.0])), [8.24] * 3)

    def test_callable(self):
        assert OSCILLATORY(0.3) == gamma_at(OSCILLATORY, 0.3)

    def test_rejects_negative_constant(self):
        with pytest.raises(ValueError):
            RateSchedule("constant", -1.0)

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            RateSchedule("linear", 1.0)  # type: ignore[arg-type]


class TestShift:
    @pytest.mark.parametrize(("rates", "expected"), [([8.24, 8.24], 0.0), ([-3.0, 5.0], 6.0), ([0.0], 0.0), ([], 0.0)])
    def test_cases(self, rates, expected):
        assert shift_at(rates) == expected

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=6))
    def test_shifted_rates_nonnegative(self, rates):
        c = shift_at(rates)
        assert c >= 0
        assert min(r + c for r in rates) >= 0
        # a negative rate maps to its absolute value, never to zero
        if min(rates) < 0:
            assert min(r + c for r in rates) == pytest.approx(-min(rates))

    def test_model_shift_is_global(self):
        noise = NoiseModel.uniform(2, [("excitation", CONSTANT), ("relaxation", OSCILLATORY)])
        gamma, shifted, c = noise.shifted_rates(0.2)
        assert gamma[1] < 0 and c == pytest.approx(-2 * gamma[1])
        np.testing.assert_allclose(shifted, gamma + c)


class TestNormalization:
    @pytest.mark.parametrize(
        ("kinds", "factor"),
        [(["dephasing"], 1 / np.sqrt(5)), (["excitation", "relaxation"], 1 / np.sqrt(5)),
         (["dephasing", "excitation", "relaxation"], 1 / np.sqrt(10))],
    )
    def test_factors_for_five_sites(self, kinds, factor):
        noise = NoiseModel.uniform(5, [(k, CONSTANT) for k in kinds])
        assert all(ch.norm_factor == pytest.approx(factor) for ch in noise.channels)
        assert noise.completeness_residual() <= 1e-12

    @pytest.mark.parametrize("kind", ["excitation", "relaxation"])
    def test_incomplete_set_rejected(self, kind):
        with pytest.raises(ConfigurationError, match="complementary"):
            NoiseModel.uniform(3, [(kind, CONSTANT)])

    def test_repeated_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            NoiseModel.uniform(2, [("dephasing", CONSTANT), ("dephasing", CONSTANT)])

    def test_site_out_of_range(self):
        with pytest.raises(ConfigurationError):
            normalize_channels([make_channel("dephasing", 4, CONSTANT)], 3)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_channel("amplitude", 0, CONSTANT)  # type: ignore[arg-type]

    def test_chain_completeness_against_dense(self):
        n = 3
        noise = NoiseModel.uniform(n, [("dephasing", CONSTANT), ("excitation", CONSTANT), ("relaxation", CONSTANT)])
        total = sum(embed(ch.op.conj().T @ ch.op, ch.site, n) for ch in noise.channels)
        np.testing.assert_allclose(total, np.eye(2**n), atol=1e-12)

    def test_channel_order_site_major(self):
        noise = NoiseModel.uniform(2, [("excitation", CONSTANT), ("relaxation", CONSTANT)])
        assert [(c.site, c.kind) for c in noise.channels] == [
            (0, "excitation"), (0, "relaxation"), (1, "excitation"), (1, "relaxation"),
        ]


class TestSiteFactor:
    def test_dephasing_value(self):
        noise = NoiseModel.uniform(5, [("dephasing", CONSTANT)])
        f = noise.site_factor(np.array([8.24]), 0.001)
        # Z^dagger Z = I, so the factor is the scalar exp(-dt/2 * r / 5)
        np.testing.assert_allclose(f, np.exp(-0.5 * 0.001 * 8.24 / 5) * np.eye(2), atol=1e-15)

    def test_documented_magnitude(self):
        noise = NoiseModel.uniform(1, [("dephasing", CONSTANT)])
        f = noise.site_factor(np.array([8.24]), 0.01)
        assert f[0, 0].real == pytest.approx(np.exp(-0.0412), abs=1e-12)
        assert f[0, 0].real == pytest.approx(0.95964, abs=1e-5)

    def test_zero_dt_identity(self):
        noise = NoiseModel.uniform(2, [("excitation", CONSTANT), ("relaxation", CONSTANT)])
        np.testing.assert_allclose(noise.site_factor(np.array([1.0, 3.0]), 0.0), np.eye(2), atol=1e-15)

    def test_relaxation_damps_up_only(self):
        noise = NoiseModel.uniform(1, [("excitation", CONSTANT), ("relaxation", CONSTANT)])
        f = noise.site_factor(np.array([0.0, 2.0]), 0.1)
        # relaxation: L^dagger L projects on |1>; the pair is complete with c = 1
        np.testing.assert_allclose(f, np.diag([1.0, np.exp(-0.05 * 2.0)]), atol=1e-15)

    def test_negative_rate_rejected(self):
        ch = make_channel("dephasing", 0, CONSTANT)
        with pytest.raises(ValueError):
            dissipator_site_factor([ch], [-0.1], 0.01)

    @given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 20), st.floats(0, 0.1))
    def test_contraction(self, r1, r2, r3, dt):
        noise = NoiseModel.uniform(1, [("dephasing", CONSTANT), ("excitation", CONSTANT), ("relaxation", CONSTANT)])
        f = noise.site_factor(np.array([r1, r2, r3]), dt)
        np.testing.assert_allclose(f, f.conj().T, atol=1e-14)
        ev = np.linalg.eigvalsh(f)
        assert ev.min() >= 0 and ev.max() <= 1 + 1e-14

    def test_chain_product_equals_dense_exponential(self):
        n, dt = 3, 0.05
        noise = NoiseModel.uniform(n, [("excitation", CONSTANT), ("relaxation", OSCILLATORY)])
        _, shifted, _ = noise.shifted_rates(0.2)
        f = noise.site_factor(shifted, dt)
        chain = np.eye(1)
        for _ in range(n):
            chain = np.kron(chain, f)
        kind_idx = noise.channel_kind_index()
        gen = sum(shifted[kind_idx[k]] * embed(ch.op.conj().T @ ch.op, ch.site, n) for k, ch in enumerate(noise.channels))
        np.testing.assert_allclose(chain, scipy.linalg.expm(-0.5 * dt * gen), atol=1e-12)


def test_raw_operators():
    np.testing.assert_array_equal(RAW_OPERATORS["excitation"] @ np.array([1, 0]), [0, 1])
    np.testing.assert_array_equal(RAW_OPERATORS["relaxation"] @ np.array([0, 1]), [1, 0])
    np.testing.assert_array_equal(RAW_OPERATORS["dephasing"], np.diag([1, -1]))
