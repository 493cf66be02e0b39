"""
Unit tests for the mismatched ML estimator and RMSE campaigns.
"""

import logging

import numpy as np
import pandas as pd
import pytest

from pnbounds.bounds_crb import deterministic_crb, deterministic_fim
from pnbounds.errors import InvalidSymbolsError, NoPeakError
from pnbounds.estimator import (
    SymbolPolicy, coarse_objective, grid_delays, grid_dopplers, ml_estimate, rmse_campaign
)
from pnbounds.ofdm_frame import (
    NoiseModel, OfdmConfig, SymbolGrid, TargetTruth, qpsk_symbols, synthesize_q
)
from pnbounds.phase_noise import OscillatorKind, OscillatorModel

TRUTH = TargetTruth.from_range_velocity(50.0, 20.0)
FRO = OscillatorModel(OscillatorKind.FRO, f3db_hz=100e3)


def frame(n: int, m: int, seed: int = 0):
    cfg = OfdmConfig().scaled(n, m)
    return cfg, qpsk_symbols(cfg, seed)


class TestCoarseObjective:
    def test_matches_brute_force_correlation(self):
        cfg, symbols = frame(8, 4)
        rng = np.random.default_rng(1)
        y = rng.normal(size=cfg.num_samples) + 1j * rng.normal(size=cfg.num_samples)

        surface = coarse_objective(cfg, symbols, y)
        delays = grid_delays(cfg)
        dopplers = grid_dopplers(cfg)
        brute = np.array([[abs(np.vdot(y, synthesize_q(cfg, symbols, d, v))) ** 2
                           for v in dopplers] for d in delays])

        assert surface.shape == (32, 16)
        np.testing.assert_allclose(surface, brute, rtol=1e-9, atol=1e-9 * brute.max())

    def test_grid_axes(self):
        cfg, _ = frame(8, 4)
        delays = grid_delays(cfg)
        dopplers = grid_dopplers(cfg)

        assert delays[1] == pytest.approx(cfg.delay_resolution_s / 4)
        assert dopplers[1] == pytest.approx(cfg.doppler_resolution / 4)
        assert dopplers[-1] < 0


class TestMlEstimate:
    def test_recovers_grid_point(self):
        cfg, symbols = frame(16, 4)
        delay = grid_delays(cfg)[5]
        doppler = grid_dopplers(cfg)[3]
        gain = 0.7 - 0.4j
        estimate = ml_estimate(cfg, symbols, gain * synthesize_q(cfg, symbols, delay, doppler))

        assert estimate.coarse_delay_s == delay
        assert estimate.coarse_doppler == doppler
        assert abs(estimate.delay_s - delay) < 1e-3 * cfg.delay_resolution_s
        assert abs(estimate.normalized_doppler - doppler) < 1e-3 * cfg.doppler_resolution
        assert estimate.gain == pytest.approx(gain, abs=1e-3)

    def test_refines_off_grid_target(self):
        cfg, symbols = frame(16, 4)
        y = TRUTH.gain * synthesize_q(cfg, symbols, TRUTH.delay_s, TRUTH.normalized_doppler)
        estimate = ml_estimate(cfg, symbols, y)

        assert estimate.refined
        assert estimate.objective_value >= estimate.coarse_value
        assert abs(estimate.delay_s - TRUTH.delay_s) < 2e-3 * cfg.delay_resolution_s
        assert abs(estimate.normalized_doppler - TRUTH.normalized_doppler) < 2e-3 * cfg.doppler_resolution
        assert estimate.range_m == pytest.approx(TRUTH.range_m, abs=0.2)

    def test_common_phase_does_not_move_the_peak(self):
        cfg, symbols = frame(16, 4)
        y = synthesize_q(cfg, symbols, TRUTH.delay_s, TRUTH.normalized_doppler)
        plain = ml_estimate(cfg, symbols, y)
        rotated = ml_estimate(cfg, symbols, np.exp(1.3j) * y)

        assert abs(plain.delay_s - rotated.delay_s) < 1e-3 * cfg.delay_resolution_s
        assert abs(plain.normalized_doppler - rotated.normalized_doppler) < 1e-3 * cfg.doppler_resolution
        assert rotated.gain == pytest.approx(np.exp(1.3j) * plain.gain, abs=5e-3)

    def test_zero_observation_has_no_peak(self):
        cfg, symbols = frame(8, 2)
        with pytest.raises(NoPeakError):
            ml_estimate(cfg, symbols, np.zeros(cfg.num_samples, dtype=complex))

    def test_zero_symbol_is_rejected(self):
        cfg, symbols = frame(8, 2)
        entries = symbols.entries.copy()
        entries[3, 1] = 0.0
        y = synthesize_q(cfg, symbols, TRUTH.delay_s, TRUTH.normalized_doppler)

        with pytest.raises(InvalidSymbolsError, match="1 zero entries"):
            ml_estimate(cfg, SymbolGrid(entries), y)

    def test_qam_grid_point_is_recovered(self, caplog):
        cfg, _ = frame(16, 4)
        levels = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)
        rng = np.random.default_rng(4)
        symbols = SymbolGrid(rng.choice(levels, size=(16, 4)) + 1j * rng.choice(levels, size=(16, 4)))
        delay = grid_delays(cfg)[5]
        doppler = grid_dopplers(cfg)[3]

        with caplog.at_level(logging.WARNING, logger="pnbounds.estimator"):
            estimate = ml_estimate(cfg, symbols, 0.7 * synthesize_q(cfg, symbols, delay, doppler))

        assert "not unit-modulus" in caplog.text
        assert estimate.coarse_delay_s == delay
        assert estimate.coarse_doppler == doppler
        assert abs(estimate.delay_s - delay) < 1e-3 * cfg.delay_resolution_s
        assert abs(estimate.normalized_doppler - doppler) < 1e-3 * cfg.doppler_resolution


class TestRmseCampaign:
    cfg, symbols = frame(16, 4)
    noise = NoiseModel.from_snr_db(20.0)

    def test_rejects_zero_trials(self):
        with pytest.raises(ValueError):
            rmse_campaign(self.cfg, "fixed", TRUTH, self.noise, n_trials=0)

    def test_same_seed_same_trials(self):
        first = rmse_campaign(self.cfg, "fixed", TRUTH, self.noise, osc=FRO, n_trials=4, seed=3)
        second = rmse_campaign(self.cfg, "fixed", TRUTH, self.noise, osc=FRO, n_trials=4, seed=3)

        pd.testing.assert_frame_equal(first.trials, second.trials)
        assert first.seeds == second.seeds

    def test_different_seed_different_trials(self):
        first = rmse_campaign(self.cfg, "fixed", TRUTH, self.noise, n_trials=4, seed=3)
        second = rmse_campaign(self.cfg, "fixed", TRUTH, self.noise, n_trials=4, seed=4)

        assert not np.array_equal(first.trials["delay_s"], second.trials["delay_s"])

    def test_pseudo_true_columns_follow_oscillator(self):
        with_pn = rmse_campaign(self.cfg, SymbolPolicy.REDRAW, TRUTH, self.noise, osc=FRO,
                                n_trials=3, seed=1)
        without = rmse_campaign(self.cfg, SymbolPolicy.REDRAW, TRUTH, self.noise, n_trials=3, seed=1)

        assert with_pn.has_pseudo_true
        assert not without.has_pseudo_true
        assert with_pn.n_trials == 3
        assert set(with_pn.mean_offset_from_pseudo_true().columns) == {"mean", "stderr"}

    def test_summary(self):
        result = rmse_campaign(self.cfg, "fixed", TRUTH, self.noise, n_trials=3, seed=0)
        summary = result.summary()

        assert summary["n_trials"] == 3
        assert summary["symbols_policy"] == "fixed"
        assert summary["range_rmse_m"] >= 0

    @pytest.mark.slow
    def test_efficient_without_phase_noise(self):
        """Without PN the estimator reaches the CRB: RMSE within [0.9, 1.5] of the bound over 500 trials."""
        cfg, symbols = frame(64, 8)
        noise = NoiseModel.from_snr_db(30.0)
        crb = deterministic_crb(deterministic_fim(cfg, symbols, TRUTH, noise))
        result = rmse_campaign(cfg, "fixed", TRUTH, noise, n_trials=500, seed=0, symbols=symbols)

        assert 0.9 <= result.range_rmse_m / crb.range_rmse_m <= 1.5
        assert 0.9 <= result.velocity_rmse_mps / crb.velocity_rmse_mps <= 1.5

    @pytest.mark.slow
    def test_unbiased_about_pseudo_true(self):
        """Under PN the estimates centre on the per-realization pseudo-true parameters."""
        cfg, symbols = frame(64, 8)
        result = rmse_campaign(cfg, "fixed", TRUTH, NoiseModel.from_snr_db(40.0), osc=FRO,
                               n_trials=500, seed=0, symbols=symbols)
        offsets = result.mean_offset_from_pseudo_true()

        assert np.all(np.abs(offsets["mean"]) < 3 * offsets["stderr"])
