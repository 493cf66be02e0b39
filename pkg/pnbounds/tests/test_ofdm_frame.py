"""
Unit tests for the OFDM frame model.

Steering vectors, q(tau, nu) synthesis against a dense-matrix construction,
analytic derivatives against finite differences, and observation synthesis.
"""

import unittest

import numpy as np
import pytest

from pnbounds.errors import DimensionMismatchError, ModelValidityError
from pnbounds.ofdm_frame import (
    NoiseModel, OfdmConfig, SymbolGrid, TargetTruth, delay_steering, doppler_steering,
    noiseless_observation, q_derivatives, qpsk_symbols, snr_to_sigma_sq,
    synthesize_observation, synthesize_q
)
from pnbounds.phase_noise import PnRealization


def dense_q(cfg: OfdmConfig, symbols: SymbolGrid, delay_s: float, doppler: float) -> np.ndarray:
    """q built with an explicit unitary DFT matrix."""
    n = np.arange(cfg.num_subcarriers)
    dft = np.exp(-2j * np.pi * np.outer(n, n) / cfg.num_subcarriers) / np.sqrt(cfg.num_subcarriers)
    b = delay_steering(cfg, delay_s)
    c = doppler_steering(cfg, doppler)
    frame = dft.conj().T @ (symbols.entries * np.outer(b, c.conj()))
    return frame.reshape(-1, order="F")


class TestOfdmConfig(unittest.TestCase):
    """Test OfdmConfig dataclass."""

    def test_default_config_values(self):
        """Defaults match the 28 GHz / 120 kHz reference frame."""
        cfg = OfdmConfig()

        self.assertEqual(cfg.carrier_freq_hz, 28e9)
        self.assertEqual(cfg.subcarrier_spacing_hz, 120e3)
        self.assertEqual(cfg.num_subcarriers, 256)
        self.assertEqual(cfg.num_symbols, 10)
        self.assertEqual(cfg.cp_duration_s, 0.58e-6)

    def test_derived_durations(self):
        cfg = OfdmConfig()

        self.assertEqual(cfg.elementary_duration_s, 1.0 / 120e3)
        self.assertAlmostEqual(cfg.total_symbol_duration_s, 0.58e-6 + 1.0 / 120e3, places=18)
        self.assertAlmostEqual(cfg.sample_interval_s, cfg.elementary_duration_s / 256, places=18)
        self.assertEqual(cfg.bandwidth_hz, 256 * 120e3)
        self.assertEqual(cfg.num_samples, 2560)

    def test_scaled_keeps_numerology(self):
        cfg = OfdmConfig().scaled(64, 8)

        self.assertEqual((cfg.num_subcarriers, cfg.num_symbols), (64, 8))
        self.assertEqual(cfg.carrier_freq_hz, 28e9)
        self.assertEqual(cfg.cp_duration_s, 0.58e-6)

    def test_invalid_values_rejected(self):
        with self.assertRaises(ValueError):
            OfdmConfig(num_subcarriers=0)
        with self.assertRaises(ValueError):
            OfdmConfig(cp_duration_s=-1e-6)


class TestSteeringVectors:
    def test_zero_delay_is_all_ones(self):
        np.testing.assert_array_equal(delay_steering(OfdmConfig(), 0.0), np.ones(256))

    def test_delay_phase_example(self):
        b = delay_steering(OfdmConfig(), 333.33e-9)
        assert b[1] == pytest.approx(0.9686 - 0.2487j, abs=1e-4)

    def test_delay_periodicity(self):
        cfg = OfdmConfig()
        b = delay_steering(cfg, 1.0 / cfg.subcarrier_spacing_hz)
        np.testing.assert_allclose(b, np.ones(cfg.num_subcarriers), atol=1e-9)

    def test_zero_doppler_is_all_ones(self):
        np.testing.assert_array_equal(doppler_steering(OfdmConfig(), 0.0), np.ones(10))

    def test_doppler_phase_example(self):
        c = doppler_steering(OfdmConfig(), 1.3333e-7)
        assert c[1] == pytest.approx(0.9782 - 0.2075j, abs=1e-3)
        assert c[0] == 1.0


class TestSynthesizeQ:
    def test_degenerate_frame(self):
        cfg = OfdmConfig(num_subcarriers=1, num_symbols=1)
        q = synthesize_q(cfg, SymbolGrid(np.ones((1, 1))), 1.7e-7, 0.0)
        np.testing.assert_allclose(q, [1.0 + 0.0j], atol=1e-15)

    def test_matches_dense_construction(self):
        cfg = OfdmConfig(num_subcarriers=4, num_symbols=2)
        symbols = qpsk_symbols(cfg, seed=3)
        q = synthesize_q(cfg, symbols, 2.1e-7, 4.0e-7)
        np.testing.assert_allclose(q, dense_q(cfg, symbols, 2.1e-7, 4.0e-7), atol=1e-12)

    @pytest.mark.parametrize("n,m", [(1, 1), (2, 3), (8, 4), (16, 2)])
    def test_dense_agreement_small_frames(self, n, m):
        cfg = OfdmConfig(num_subcarriers=n, num_symbols=m)
        symbols = qpsk_symbols(cfg, seed=n * 10 + m)
        q = synthesize_q(cfg, symbols, 3.0e-7, -2.5e-7)
        np.testing.assert_allclose(q, dense_q(cfg, symbols, 3.0e-7, -2.5e-7), atol=1e-12)

    def test_norm_equals_frobenius_norm(self):
        cfg = OfdmConfig(num_subcarriers=32, num_symbols=4)
        symbols = qpsk_symbols(cfg, seed=1)
        rng = np.random.default_rng(0)
        for delay, doppler in zip(rng.uniform(0, 5e-7, 20), rng.uniform(-1e-6, 1e-6, 20)):
            q = synthesize_q(cfg, symbols, delay, doppler)
            assert np.vdot(q, q).real == pytest.approx(symbols.frobenius_sq, rel=1e-12)

    def test_wrong_symbol_shape_raises(self):
        cfg = OfdmConfig(num_subcarriers=8, num_symbols=2)
        with pytest.raises(DimensionMismatchError):
            synthesize_q(cfg, SymbolGrid(np.ones((4, 2))), 0.0, 0.0)

    def test_qpsk_symbols_unit_modulus(self):
        symbols = qpsk_symbols(OfdmConfig(), seed=7)
        assert symbols.shape == (256, 10)
        assert symbols.is_unit_modulus


class TestQDerivatives:
    cfg = OfdmConfig(num_subcarriers=16, num_symbols=4)
    delay = 2.9e-7
    doppler = 1.3e-7

    def _fd(self, fn, step):
        return (fn(step) - fn(-step)) / (2.0 * step)

    def test_delay_derivative_matches_finite_difference(self):
        symbols = qpsk_symbols(self.cfg, seed=2)
        analytic = q_derivatives(self.cfg, symbols, self.delay, self.doppler).d_tau
        numeric = self._fd(lambda h: synthesize_q(self.cfg, symbols, self.delay + h, self.doppler),
                           1e-12)
        assert np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic) < 1e-4

    def test_doppler_derivative_matches_finite_difference(self):
        symbols = qpsk_symbols(self.cfg, seed=2)
        analytic = q_derivatives(self.cfg, symbols, self.delay, self.doppler).d_nu
        numeric = self._fd(lambda h: synthesize_q(self.cfg, symbols, self.delay, self.doppler + h),
                           1e-12)
        assert np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic) < 1e-4

    def test_second_derivatives_match_finite_differences(self):
        symbols = qpsk_symbols(self.cfg, seed=5)
        second = q_derivatives(self.cfg, symbols, self.delay, self.doppler, order=2)

        def first(delay, doppler):
            return q_derivatives(self.cfg, symbols, delay, doppler)

        d_tau_tau = self._fd(lambda h: first(self.delay + h, self.doppler).d_tau, 1e-12)
        d_nu_nu = self._fd(lambda h: first(self.delay, self.doppler + h).d_nu, 1e-12)
        for numeric, analytic in ((d_tau_tau, second.d_tau_tau), (d_nu_nu, second.d_nu_nu)):
            assert np.linalg.norm(numeric - analytic) / np.linalg.norm(analytic) < 1e-4

    def test_mixed_derivative_symmetry(self):
        symbols = qpsk_symbols(self.cfg, seed=6)
        mixed = q_derivatives(self.cfg, symbols, self.delay, self.doppler, order=2).d_tau_nu

        def first(delay, doppler):
            return q_derivatives(self.cfg, symbols, delay, doppler)

        tau_then_nu = self._fd(lambda h: first(self.delay, self.doppler + h).d_tau, 1e-12)
        nu_then_tau = self._fd(lambda h: first(self.delay + h, self.doppler).d_nu, 1e-12)
        scale = np.linalg.norm(mixed)
        assert np.linalg.norm(tau_then_nu - mixed) / scale < 1e-4
        assert np.linalg.norm(nu_then_tau - mixed) / scale < 1e-4

    def test_single_subcarrier_has_no_delay_slope(self):
        cfg = OfdmConfig(num_subcarriers=1, num_symbols=3)
        symbols = qpsk_symbols(cfg, seed=0)
        d_tau = q_derivatives(cfg, symbols, 1e-7, 4e-7).d_tau
        np.testing.assert_array_equal(d_tau, np.zeros(3))

    def test_invalid_order(self):
        symbols = qpsk_symbols(self.cfg, seed=0)
        with pytest.raises(ValueError):
            q_derivatives(self.cfg, symbols, 0.0, 0.0, order=3)


class TestSnrToSigmaSq:
    def test_twenty_db(self):
        assert snr_to_sigma_sq(100.0, 1.0) == pytest.approx(0.005)

    def test_zero_db(self):
        assert snr_to_sigma_sq(1.0, 1.0) == pytest.approx(0.5)

    def test_gain_two(self):
        assert snr_to_sigma_sq(1.0, 2.0) == pytest.approx(2.0)

    def test_from_snr_db(self):
        assert NoiseModel.from_snr_db(20.0).sigma_sq == pytest.approx(0.005)

    @pytest.mark.parametrize("snr", [0.0, -1.0])
    def test_non_positive_snr_raises(self, snr):
        with pytest.raises(ValueError):
            snr_to_sigma_sq(snr, 1.0)


class TestSynthesizeObservation:
    cfg = OfdmConfig(num_subcarriers=16, num_symbols=4)
    truth = TargetTruth.from_range_velocity(50.0, 20.0, 0.8 + 0.3j)

    def test_noiseless_limit(self):
        symbols = qpsk_symbols(self.cfg, seed=1)
        y = synthesize_observation(self.cfg, symbols, self.truth, NoiseModel(1e-30), rng_seed=4)
        expected = self.truth.gain * synthesize_q(self.cfg, symbols, self.truth.delay_s,
                                                  self.truth.normalized_doppler)
        np.testing.assert_allclose(y, expected, atol=1e-12)

    def test_zero_pn_matches_pn_free(self):
        symbols = qpsk_symbols(self.cfg, seed=1)
        noise = NoiseModel.from_snr_db(10.0)
        with_pn = synthesize_observation(self.cfg, symbols, self.truth, noise,
                                         pn=PnRealization.zeros(self.cfg.num_samples), rng_seed=9)
        without = synthesize_observation(self.cfg, symbols, self.truth, noise, rng_seed=9)
        np.testing.assert_array_equal(with_pn, without)

    def test_noise_power(self):
        symbols = qpsk_symbols(self.cfg, seed=1)
        noise = NoiseModel(0.05)
        mean = noiseless_observation(self.cfg, symbols, self.truth)
        power = [
            np.mean(np.abs(synthesize_observation(self.cfg, symbols, self.truth, noise,
                                                  rng_seed=seed) - mean) ** 2)
            for seed in range(1000)
        ]
        assert np.mean(power) == pytest.approx(2 * noise.sigma_sq, rel=0.05)

    def test_delay_beyond_cp_rejected(self):
        symbols = qpsk_symbols(self.cfg, seed=1)
        far = TargetTruth.from_range_velocity(100.0, 20.0)
        with pytest.raises(ModelValidityError):
            synthesize_observation(self.cfg, symbols, far, NoiseModel(0.01), rng_seed=0)

    def test_large_doppler_rejected(self):
        symbols = qpsk_symbols(self.cfg, seed=1)
        fast = TargetTruth(delay_s=1e-7, normalized_doppler=1.0 / 16)
        with pytest.raises(ModelValidityError):
            synthesize_observation(self.cfg, symbols, fast, NoiseModel(0.01), rng_seed=0)

    def test_pn_length_mismatch(self):
        symbols = qpsk_symbols(self.cfg, seed=1)
        with pytest.raises(DimensionMismatchError):
            noiseless_observation(self.cfg, symbols, self.truth, np.zeros(5))

    def test_truth_validation(self):
        with pytest.raises(ModelValidityError):
            TargetTruth(delay_s=-1e-9, normalized_doppler=0.0)
        with pytest.raises(ModelValidityError):
            TargetTruth(delay_s=0.0, normalized_doppler=1.0)
