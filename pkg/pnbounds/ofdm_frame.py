"""
OFDM Frame Module

Discrete fast-time/slow-time model of a monostatic OFDM radar frame:
steering vectors, the noiseless signal vector q(tau, nu) with its analytic
derivatives, and synthetic observations with or without phase noise.

All signal vectors are the column-major vectorization of an N x M matrix
(fast-time index varies fastest, i = n + m*N).
"""

import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy import constants

from pnbounds.errors import DimensionMismatchError, ModelValidityError

if TYPE_CHECKING:
    from pnbounds.phase_noise import PnRealization

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = constants.c

# complex vector of length N*M, column-major over the N x M frame
SignalVector = np.ndarray

# fc*T*|nu| above this is logged; at 1 or more it is rejected
ICI_WARNING_LEVEL = 0.1


@dataclass(frozen=True)
class OfdmConfig:
    """Frame geometry. Defaults are the 5G NR FR2 numerology used throughout."""

    carrier_freq_hz: float = 28e9
    subcarrier_spacing_hz: float = 120e3
    num_subcarriers: int = 256
    num_symbols: int = 10
    cp_duration_s: float = 0.58e-6

    def __post_init__(self):
        if self.num_subcarriers < 1 or self.num_symbols < 1:
            raise ValueError(
                f"Frame needs at least one subcarrier and one symbol, got "
                f"N={self.num_subcarriers}, M={self.num_symbols}"
            )
        for name in ("carrier_freq_hz", "subcarrier_spacing_hz", "cp_duration_s"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be finite and strictly positive, got {value}")

    @property
    def elementary_duration_s(self) -> float:
        """Elementary symbol duration T = 1/delta_f."""
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def total_symbol_duration_s(self) -> float:
        """Total symbol duration Tsym = Tcp + T."""
        return self.cp_duration_s + self.elementary_duration_s

    @property
    def sample_interval_s(self) -> float:
        """Sampling interval Ts = T/N."""
        return self.elementary_duration_s / self.num_subcarriers

    @property
    def bandwidth_hz(self) -> float:
        """Total bandwidth B = N * delta_f."""
        return self.num_subcarriers * self.subcarrier_spacing_hz

    @property
    def num_samples(self) -> int:
        return self.num_subcarriers * self.num_symbols

    @property
    def delay_resolution_s(self) -> float:
        """One delay resolution cell, 1/B."""
        return 1.0 / self.bandwidth_hz

    @property
    def doppler_resolution(self) -> float:
        """One normalized-Doppler resolution cell, 1/(fc * M * Tsym)."""
        return 1.0 / (self.carrier_freq_hz * self.num_symbols * self.total_symbol_duration_s)

    def scaled(self, num_subcarriers: int, num_symbols: int) -> "OfdmConfig":
        """Same carrier, spacing and CP with a different frame size."""
        return replace(self, num_subcarriers=num_subcarriers, num_symbols=num_symbols)


@dataclass(frozen=True)
class SymbolGrid:
    """Data symbols X, one per subcarrier (rows) per OFDM symbol (columns)."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.complex128)
        if entries.ndim != 2:
            raise DimensionMismatchError(
                f"Symbol grid must be a 2-D matrix, got shape {entries.shape}"
            )
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def frobenius_sq(self) -> float:
        """Squared Frobenius norm ||X||_F^2."""
        return float(np.sum(np.abs(self.entries) ** 2))

    @property
    def is_unit_modulus(self) -> bool:
        return bool(np.allclose(np.abs(self.entries), 1.0, rtol=0, atol=1e-12))

    def check(self, cfg: OfdmConfig) -> None:
        """Raise DimensionMismatchError unless the grid is N x M for cfg."""
        expected = (cfg.num_subcarriers, cfg.num_symbols)
        if self.entries.shape != expected:
            raise DimensionMismatchError(
                f"Symbol grid has shape {self.entries.shape}, frame expects {expected}"
            )


@dataclass(frozen=True)
class TargetTruth:
    """True target parameters: round-trip delay, normalized Doppler, complex gain."""

    delay_s: float
    normalized_doppler: float
    gain: complex = 1.0 + 0.0j

    def __post_init__(self):
        if not np.isfinite(self.delay_s) or self.delay_s < 0:
            raise ModelValidityError(f"Target delay must be >= 0, got {self.delay_s}")
        if not abs(self.normalized_doppler) < 1:
            raise ModelValidityError(
                f"Normalized Doppler must satisfy |nu| < 1, got {self.normalized_doppler}"
            )
        object.__setattr__(self, "gain", complex(self.gain))

    @classmethod
    def from_range_velocity(cls, range_m: float, velocity_mps: float,
                            gain: complex = 1.0 + 0.0j) -> "TargetTruth":
        """Build from range and radial velocity (tau = 2R/c, nu = 2v/c)."""
        return cls(
            delay_s=2.0 * range_m / SPEED_OF_LIGHT,
            normalized_doppler=2.0 * velocity_mps / SPEED_OF_LIGHT,
            gain=gain,
        )

    @property
    def range_m(self) -> float:
        return self.delay_s * SPEED_OF_LIGHT / 2.0

    @property
    def velocity_mps(self) -> float:
        return self.normalized_doppler * SPEED_OF_LIGHT / 2.0

    @property
    def eta(self) -> np.ndarray:
        """Deterministic parameter vector [tau, nu, alpha_R, alpha_I]."""
        return np.array([self.delay_s, self.normalized_doppler,
                         self.gain.real, self.gain.imag])


@dataclass(frozen=True)
class NoiseModel:
    """
    Receiver noise. sigma_sq is the variance per real dimension, so each
    complex entry of z has variance 2*sigma_sq.
    """

    sigma_sq: float

    def __post_init__(self):
        if not np.isfinite(self.sigma_sq) or self.sigma_sq <= 0:
            raise ValueError(f"Noise variance must be > 0, got {self.sigma_sq}")

    @classmethod
    def from_snr_db(cls, snr_db: float, gain: complex = 1.0 + 0.0j) -> "NoiseModel":
        return cls(snr_to_sigma_sq(db_to_linear(snr_db), gain))


def db_to_linear(value_db: float) -> float:
    return float(10.0 ** (value_db / 10.0))


def snr_to_sigma_sq(snr_linear: float, gain: complex) -> float:
    """
    Invert SNR = |alpha|^2 / (2 sigma^2).

    Args:
        snr_linear: SNR as a power ratio
        gain: Complex target gain alpha

    Returns:
        Per-real-dimension noise variance sigma^2

    Raises:
        ValueError: If the SNR is not strictly positive
    """
    if not snr_linear > 0:
        raise ValueError(f"SNR must be strictly positive, got {snr_linear}")
    return float(abs(gain) ** 2 / (2.0 * snr_linear))


def qpsk_symbols(cfg: OfdmConfig, seed: Optional[int] = None) -> SymbolGrid:
    """Draw an N x M grid of unit-modulus QPSK symbols (+-1 +-j)/sqrt(2)."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(cfg.num_subcarriers, cfg.num_symbols, 2))
    signs = 2.0 * bits - 1.0
    return SymbolGrid((signs[..., 0] + 1j * signs[..., 1]) / np.sqrt(2.0))


def delay_steering(cfg: OfdmConfig, delay_s: float) -> np.ndarray:
    """Frequency-domain steering vector b(tau), entries exp(-j 2 pi n delta_f tau)."""
    n = np.arange(cfg.num_subcarriers)
    return np.exp(-2j * np.pi * n * cfg.subcarrier_spacing_hz * delay_s)


def doppler_steering(cfg: OfdmConfig, normalized_doppler: float) -> np.ndarray:
    """Slow-time steering vector c(nu), entries exp(-j 2 pi fc m Tsym nu)."""
    m = np.arange(cfg.num_symbols)
    return np.exp(-2j * np.pi * cfg.carrier_freq_hz * m
                  * cfg.total_symbol_duration_s * normalized_doppler)


def delay_phase_slope(cfg: OfdmConfig) -> np.ndarray:
    """d/dtau of log b(tau), per subcarrier."""
    return -2j * np.pi * np.arange(cfg.num_subcarriers) * cfg.subcarrier_spacing_hz


def doppler_phase_slope(cfg: OfdmConfig) -> np.ndarray:
    """d/dnu of log conj(c(nu)), per symbol."""
    return 2j * np.pi * cfg.carrier_freq_hz * np.arange(cfg.num_symbols) \
        * cfg.total_symbol_duration_s


def modulated_grid(cfg: OfdmConfig, symbols: SymbolGrid, delay_s: float,
                   normalized_doppler: float) -> np.ndarray:
    """Frequency-domain frame X * b(tau) c(nu)^H before the inverse DFT."""
    symbols.check(cfg)
    b = delay_steering(cfg, delay_s)
    c = doppler_steering(cfg, normalized_doppler)
    return symbols.entries * np.outer(b, np.conj(c))


def to_time_domain(grid: np.ndarray) -> SignalVector:
    """Unitary inverse DFT per symbol, then column-major vectorization."""
    return np.fft.ifft(grid, axis=0, norm="ortho").reshape(-1, order="F")


def to_frame(vector: SignalVector, cfg: OfdmConfig) -> np.ndarray:
    """Undo the vectorization: N x M fast-time/slow-time matrix."""
    vector = np.asarray(vector)
    if vector.shape != (cfg.num_samples,):
        raise DimensionMismatchError(
            f"Signal vector has shape {vector.shape}, frame expects ({cfg.num_samples},)"
        )
    return vector.reshape(cfg.num_subcarriers, cfg.num_symbols, order="F")


def synthesize_q(cfg: OfdmConfig, symbols: SymbolGrid, delay_s: float,
                 normalized_doppler: float) -> SignalVector:
    """
    Noiseless unit-gain signal q(tau, nu) = vec{F_N^H [X * b(tau) c(nu)^H]}.

    ||q||^2 equals ||X||_F^2 for every (tau, nu).

    Args:
        cfg: Frame geometry
        symbols: N x M data symbols
        delay_s: Round-trip delay tau
        normalized_doppler: Normalized Doppler nu

    Returns:
        Complex vector of length N*M
    """
    return to_time_domain(modulated_grid(cfg, symbols, delay_s, normalized_doppler))


@dataclass(frozen=True)
class QDerivatives:
    """Analytic partial derivatives of q(tau, nu); second order fields may be None."""

    d_tau: SignalVector
    d_nu: SignalVector
    d_tau_tau: Optional[SignalVector] = None
    d_nu_nu: Optional[SignalVector] = None
    d_tau_nu: Optional[SignalVector] = None


def q_derivatives(cfg: OfdmConfig, symbols: SymbolGrid, delay_s: float,
                  normalized_doppler: float, order: int = 1) -> QDerivatives:
    """
    Derivatives of q(tau, nu) obtained by weighting the frequency-domain frame
    with the phase slopes of b(tau) and conj(c(nu)).

    Args:
        cfg: Frame geometry
        symbols: N x M data symbols
        delay_s: Round-trip delay tau
        normalized_doppler: Normalized Doppler nu
        order: 1 for gradients only, 2 to add the Hessian terms

    Returns:
        QDerivatives with the requested terms filled
    """
    if order not in (1, 2):
        raise ValueError(f"Derivative order must be 1 or 2, got {order}")

    grid = modulated_grid(cfg, symbols, delay_s, normalized_doppler)
    slope_tau = delay_phase_slope(cfg)[:, None]
    slope_nu = doppler_phase_slope(cfg)[None, :]

    d_tau = to_time_domain(grid * slope_tau)
    d_nu = to_time_domain(grid * slope_nu)
    if order == 1:
        return QDerivatives(d_tau=d_tau, d_nu=d_nu)

    return QDerivatives(
        d_tau=d_tau,
        d_nu=d_nu,
        d_tau_tau=to_time_domain(grid * slope_tau ** 2),
        d_nu_nu=to_time_domain(grid * slope_nu ** 2),
        d_tau_nu=to_time_domain(grid * (slope_tau * slope_nu)),
    )


def check_model_validity(cfg: OfdmConfig, truth: TargetTruth) -> None:
    """
    Reject targets outside the region where the discrete model holds
    (Tcp >= tau, |nu| < 1/N, fc*T*|nu| << 1).

    Raises:
        ModelValidityError: On any violated assumption
    """
    if truth.delay_s > cfg.cp_duration_s:
        raise ModelValidityError(
            f"Target delay {truth.delay_s:.6e} s exceeds CP duration "
            f"{cfg.cp_duration_s:.6e} s (range {truth.range_m:.2f} m)"
        )
    if abs(truth.normalized_doppler) >= 1.0 / cfg.num_subcarriers:
        raise ModelValidityError(
            f"|nu| = {abs(truth.normalized_doppler):.3e} must stay below 1/N = "
            f"{1.0 / cfg.num_subcarriers:.3e}"
        )
    ici = cfg.carrier_freq_hz * cfg.elementary_duration_s * abs(truth.normalized_doppler)
    if ici >= 1.0:
        raise ModelValidityError(f"fc*T*|nu| = {ici:.3f} violates fc*T*|nu| << 1")
    if ici >= ICI_WARNING_LEVEL:
        logger.warning(f"fc*T*|nu| = {ici:.3f}; inter-carrier interference is not modeled")


def noiseless_observation(cfg: OfdmConfig, symbols: SymbolGrid, truth: TargetTruth,
                          xi: Optional[np.ndarray] = None) -> SignalVector:
    """Mean of the observation, alpha * diag(exp(-j xi)) * q(tau, nu)."""
    q = synthesize_q(cfg, symbols, truth.delay_s, truth.normalized_doppler)
    if xi is None:
        xi = np.zeros(cfg.num_samples)
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (cfg.num_samples,):
        raise DimensionMismatchError(
            f"PN vector has shape {xi.shape}, frame expects ({cfg.num_samples},)"
        )
    return truth.gain * np.exp(-1j * xi) * q


def synthesize_observation(cfg: OfdmConfig, symbols: SymbolGrid, truth: TargetTruth,
                           noise: NoiseModel, pn: Optional["PnRealization"] = None,
                           rng_seed: Optional[int] = None) -> SignalVector:
    """
    Draw y = alpha * Xi * q(tau, nu) + z.

    Args:
        cfg: Frame geometry
        symbols: N x M data symbols
        truth: True target parameters
        noise: Noise variance per real dimension
        pn: Optional PN realization; absent means Xi = I
        rng_seed: Seed of the noise generator

    Returns:
        Observation vector of length N*M

    Raises:
        ModelValidityError: If the target violates the model assumptions
    """
    check_model_validity(cfg, truth)
    mean = noiseless_observation(cfg, symbols, truth, None if pn is None else pn.xi)
    rng = np.random.default_rng(rng_seed)
    scale = np.sqrt(noise.sigma_sq)
    z = scale * (rng.standard_normal(cfg.num_samples)
                 + 1j * rng.standard_normal(cfg.num_samples))
    return mean + z
