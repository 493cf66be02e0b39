"""
Delay-Doppler Search Module

Two-stage peak search shared by the pseudo-true parameter computation and the
mismatched ML estimator: |v^H q(tau, nu)|^2 is evaluated on a grid through one
FFT of v and two small matrix products, then refined with Nelder-Mead in
resolution-cell units.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Tuple

import numpy as np
from scipy.optimize import minimize

from pnbounds.ofdm_frame import (
    OfdmConfig, SignalVector, SymbolGrid, delay_steering, doppler_steering, to_frame
)

logger = logging.getLogger(__name__)

# simplex tolerance in resolution cells
REFINE_XATOL = 1e-4
REFINE_MAXITER = 500


def correlation_kernel(cfg: OfdmConfig, symbols: SymbolGrid,
                       vector: SignalVector) -> np.ndarray:
    """
    N x M kernel G such that v^H q(tau, nu) = b(tau)^T G conj(c(nu)).

    G = conj(F_N V) * X where V is the frame form of v.
    """
    symbols.check(cfg)
    spectrum = np.fft.fft(to_frame(vector, cfg), axis=0, norm="ortho")
    return np.conj(spectrum) * symbols.entries


def correlation_surface(cfg: OfdmConfig, kernel: np.ndarray, delays: np.ndarray,
                        dopplers: np.ndarray) -> np.ndarray:
    """|v^H q|^2 on the outer grid delays x dopplers, shape (len(delays), len(dopplers))."""
    n = np.arange(cfg.num_subcarriers)
    m = np.arange(cfg.num_symbols)
    delay_rows = np.exp(-2j * np.pi * cfg.subcarrier_spacing_hz * np.outer(delays, n))
    doppler_cols = np.exp(2j * np.pi * cfg.carrier_freq_hz * cfg.total_symbol_duration_s
                          * np.outer(m, dopplers))
    return np.abs(delay_rows @ kernel @ doppler_cols) ** 2


def correlation_value(cfg: OfdmConfig, kernel: np.ndarray, delay_s: float,
                      normalized_doppler: float) -> float:
    b = delay_steering(cfg, delay_s)
    c = doppler_steering(cfg, normalized_doppler)
    return float(np.abs(b @ kernel @ np.conj(c)) ** 2)


@dataclass(frozen=True)
class SearchWindow:
    """Coarse grid of +-half_width_cells resolution cells, points_per_cell samples per cell."""

    center_delay_s: float
    center_doppler: float
    half_width_cells: float = 3.0
    points_per_cell: int = 2

    def delays(self, cfg: OfdmConfig) -> np.ndarray:
        return self.center_delay_s + cfg.delay_resolution_s * self._offsets()

    def dopplers(self, cfg: OfdmConfig) -> np.ndarray:
        return self.center_doppler + cfg.doppler_resolution * self._offsets()

    def _offsets(self) -> np.ndarray:
        k = int(round(self.half_width_cells * self.points_per_cell))
        return np.arange(-k, k + 1) / self.points_per_cell


def coarse_peak(cfg: OfdmConfig, kernel: np.ndarray,
                window: SearchWindow) -> Tuple[float, float, float]:
    """Grid maximizer (delay, doppler, value) inside the window."""
    delays = window.delays(cfg)
    dopplers = window.dopplers(cfg)
    surface = correlation_surface(cfg, kernel, delays, dopplers)
    k, l = np.unravel_index(np.argmax(surface), surface.shape)
    return float(delays[k]), float(dopplers[l]), float(surface[k, l])


@dataclass
class RefinedPeak:
    delay_s: float
    normalized_doppler: float
    value: float
    converged: bool
    iterations: int
    trace: List[Tuple[float, float, float]] = field(default_factory=list)


def refine_peak(cfg: OfdmConfig, objective: Callable[[float, float], float],
                start_delay_s: float, start_doppler: float,
                xatol: float = REFINE_XATOL, maxiter: int = REFINE_MAXITER) -> RefinedPeak:
    """
    Maximize objective(delay, doppler) with Nelder-Mead started at a grid peak.

    The simplex works in resolution cells around the start point, so xatol is
    a fraction of a cell on both axes. The returned point is never worse than
    the start.

    Args:
        cfg: Frame geometry (sets the cell sizes)
        objective: Function to maximize
        start_delay_s: Starting delay, usually the coarse peak
        start_doppler: Starting normalized Doppler
        xatol: Simplex size tolerance in cells
        maxiter: Iteration cap

    Returns:
        RefinedPeak with the iteration trace
    """
    delay_cell = cfg.delay_resolution_s
    doppler_cell = cfg.doppler_resolution

    def to_params(u: np.ndarray) -> Tuple[float, float]:
        return start_delay_s + u[0] * delay_cell, start_doppler + u[1] * doppler_cell

    start_value = objective(start_delay_s, start_doppler)
    scale = start_value if start_value > 0 else 1.0

    def cost(u: np.ndarray) -> float:
        return -objective(*to_params(u)) / scale

    trace: List[Tuple[float, float, float]] = []

    def record(u: np.ndarray) -> None:
        delay, doppler = to_params(u)
        trace.append((delay, doppler, objective(delay, doppler)))

    result = minimize(
        cost,
        np.zeros(2),
        method="Nelder-Mead",
        callback=record,
        options={
            "xatol": xatol,
            "fatol": 1e-13,
            "maxiter": maxiter,
            "initial_simplex": np.array([[0.0, 0.0], [0.25, 0.0], [0.0, 0.25]]),
        },
    )

    delay, doppler = to_params(result.x)
    value = objective(delay, doppler)
    if value < start_value:
        delay, doppler, value = start_delay_s, start_doppler, start_value
    converged = bool(result.success) and result.nit < maxiter
    if not converged:
        logger.debug(f"Simplex stopped after {result.nit} iterations: {result.message}")
    return RefinedPeak(delay_s=delay, normalized_doppler=doppler, value=value,
                       converged=converged, iterations=int(result.nit), trace=trace)
