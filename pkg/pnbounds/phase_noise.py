"""
Phase Noise Module

Oscillator phase noise seen by a monostatic receiver. The differential
process xi(t, tau) = phi(t) - phi(t - tau) is Gaussian with a delay-dependent
variance; this module evaluates that variance, the correlation function, the
N*M x N*M covariance matrix R(tau) with its delay derivative, and draws
realizations either from exact oscillator paths or from a factor of R(tau).
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
from scipy import linalg

from pnbounds.errors import DegenerateCovarianceError, UndefinedDerivativeError
from pnbounds.ofdm_frame import OfdmConfig

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# diagonal jitter tried in order, as multiples of sigma_xi^2(tau)
JITTER_LADDER = (1e-12, 1e-10, 1e-8)


class OscillatorKind(str, Enum):
    FRO = "fro"
    PLL = "pll"

    @classmethod
    def parse(cls, value: Union[str, "OscillatorKind"]) -> "OscillatorKind":
        """Case-insensitive lookup; raises ValueError naming the accepted variants."""
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            accepted = ", ".join(kind.value for kind in cls)
            raise ValueError(f"Unknown oscillator kind '{value}' (expected one of: {accepted})")


@dataclass(frozen=True)
class OscillatorModel:
    """
    Free-running oscillator (Wiener phase) or PLL-stabilized oscillator
    (stationary Gauss-Markov phase).

    Attributes:
        kind: FRO or PLL
        f3db_hz: 3-dB bandwidth of the Lorentzian oscillator spectrum
        floop_hz: PLL loop bandwidth, ignored for FRO
    """

    kind: OscillatorKind = OscillatorKind.FRO
    f3db_hz: float = 100e3
    floop_hz: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "kind", OscillatorKind.parse(self.kind))
        if not self.f3db_hz > 0:
            raise ValueError(f"f3db_hz must be > 0, got {self.f3db_hz}")
        if self.kind is OscillatorKind.PLL and not self.floop_hz > 0:
            raise ValueError(f"PLL needs floop_hz > 0, got {self.floop_hz}")

    @property
    def diffusion_rate(self) -> float:
        """4*pi*f3dB, the FRO variance growth per second of lag."""
        return 4.0 * np.pi * self.f3db_hz

    @property
    def stationary_variance(self) -> float:
        """Variance of the PLL phase process, f3dB/floop."""
        return self.f3db_hz / self.floop_hz

    @property
    def decay_rate(self) -> float:
        """PLL correlation decay 2*pi*floop (1/s)."""
        return 2.0 * np.pi * self.floop_hz

    def scaled(self, factor: float) -> "OscillatorModel":
        """Same oscillator with every PN variance multiplied by factor."""
        return replace(self, f3db_hz=self.f3db_hz * factor)


@dataclass(frozen=True)
class SampleTimeGrid:
    """Sample instants t_i = i*Ts + m*Tcp for i = n + m*N (CP intervals skipped)."""

    times_s: np.ndarray
    num_subcarriers: int

    def lags(self) -> np.ndarray:
        """Matrix of pairwise differences t_i1 - t_i2."""
        return self.times_s[:, None] - self.times_s[None, :]

    @property
    def size(self) -> int:
        return self.times_s.shape[0]


def sample_time_grid(cfg: OfdmConfig) -> SampleTimeGrid:
    i = np.arange(cfg.num_samples)
    m = i // cfg.num_subcarriers
    times = i * cfg.sample_interval_s + m * cfg.cp_duration_s
    times.setflags(write=False)
    return SampleTimeGrid(times_s=times, num_subcarriers=cfg.num_subcarriers)


class SamplerMethod(str, Enum):
    EXACT_PATH = "exact_path"
    COVARIANCE_FACTOR = "covariance_factor"


@dataclass(frozen=True)
class PnRealization:
    """One draw of the differential PN vector xi (length N*M)."""

    xi: np.ndarray
    seed: Optional[int]
    method: SamplerMethod

    @property
    def phase_matrix(self) -> np.ndarray:
        """vec(W) = exp(-j xi)."""
        return np.exp(-1j * self.xi)

    @classmethod
    def zeros(cls, size: int) -> "PnRealization":
        return cls(xi=np.zeros(size), seed=None, method=SamplerMethod.EXACT_PATH)

    @classmethod
    def constant(cls, size: int, theta: float) -> "PnRealization":
        return cls(xi=np.full(size, float(theta)), seed=None, method=SamplerMethod.EXACT_PATH)


@dataclass(frozen=True)
class PnCovariance:
    """
    R(tau) with its lower Cholesky factor.

    matrix holds R(tau) itself; factor is the factor of R + jitter_used * I.
    """

    matrix: np.ndarray
    delay_s: float
    variance: float
    jitter_used: float
    factor: np.ndarray

    @property
    def is_zero(self) -> bool:
        return self.variance == 0.0


def _scalar_or_array(values: np.ndarray, like: ArrayLike) -> ArrayLike:
    return float(values) if np.ndim(like) == 0 else values


def pn_variance(osc: OscillatorModel, lag_s: ArrayLike) -> ArrayLike:
    """
    Differential PN variance sigma_xi^2(lag).

    FRO: 4*pi*f3dB*|lag|.
    PLL: (2*f3dB/floop) * (1 - exp(-2*pi*floop*|lag|)).
    """
    lag = np.abs(np.asarray(lag_s, dtype=float))
    if osc.kind is OscillatorKind.FRO:
        values = osc.diffusion_rate * lag
    else:
        values = -2.0 * osc.stationary_variance * np.expm1(-osc.decay_rate * lag)
    return _scalar_or_array(values, lag_s)


def pn_variance_deriv(osc: OscillatorModel, lag_s: ArrayLike) -> ArrayLike:
    """
    d sigma_xi^2 / d lag.

    Raises:
        UndefinedDerivativeError: If any lag is exactly 0 (kink of |lag|)
    """
    lag = np.asarray(lag_s, dtype=float)
    if np.any(lag == 0.0):
        raise UndefinedDerivativeError(
            "PN variance derivative is undefined at lag 0; move the delay off the kink"
        )
    sign = np.sign(lag)
    if osc.kind is OscillatorKind.FRO:
        values = osc.diffusion_rate * sign
    else:
        values = osc.diffusion_rate * np.exp(-osc.decay_rate * np.abs(lag)) * sign
    return _scalar_or_array(values, lag_s)


def pn_correlation(osc: OscillatorModel, delta_t_s: ArrayLike, delay_s: float) -> ArrayLike:
    """R_xixi(dt, tau) = [s(tau + dt) + s(tau - dt)]/2 - s(dt), s = sigma_xi^2."""
    dt = np.asarray(delta_t_s, dtype=float)
    values = 0.5 * (pn_variance(osc, delay_s + dt) + pn_variance(osc, delay_s - dt)) \
        - pn_variance(osc, dt)
    return _scalar_or_array(np.asarray(values), delta_t_s)


def _factorize(matrix: np.ndarray, variance: float,
               jitter_policy: Sequence[float]):
    try:
        return linalg.cholesky(matrix, lower=True), 0.0
    except linalg.LinAlgError:
        pass

    identity = np.eye(matrix.shape[0])
    for eps in jitter_policy:
        jitter = eps * variance
        try:
            factor = linalg.cholesky(matrix + jitter * identity, lower=True)
        except linalg.LinAlgError:
            continue
        logger.warning(f"PN covariance needed diagonal jitter {eps:g} * sigma_xi^2 to factorize")
        return factor, jitter

    raise DegenerateCovarianceError(
        f"PN covariance of order {matrix.shape[0]} is not factorizable even with jitter "
        f"{max(jitter_policy):g} * sigma_xi^2 (sigma_xi^2 = {variance:.3e})"
    )


def build_covariance(osc: OscillatorModel, grid: SampleTimeGrid, delay_s: float,
                     jitter_policy: Sequence[float] = JITTER_LADDER) -> PnCovariance:
    """
    Covariance matrix [R(tau)]_{i1,i2} = R_xixi(t_i1 - t_i2, tau).

    Args:
        osc: Oscillator model
        grid: Sample instants of the frame
        delay_s: Target round-trip delay tau
        jitter_policy: Diagonal jitter multipliers tried when Cholesky fails

    Returns:
        PnCovariance with matrix, factor and the jitter actually used

    Raises:
        DegenerateCovarianceError: If factorization fails at the largest jitter
    """
    if delay_s < 0:
        raise ValueError(f"Delay must be >= 0, got {delay_s}")

    matrix = np.asarray(pn_correlation(osc, grid.lags(), delay_s))
    variance = float(pn_variance(osc, delay_s))
    if variance == 0.0:
        zeros = np.zeros_like(matrix)
        return PnCovariance(matrix=zeros, delay_s=delay_s, variance=0.0,
                            jitter_used=0.0, factor=zeros)

    factor, jitter = _factorize(matrix, variance, jitter_policy)
    return PnCovariance(matrix=matrix, delay_s=delay_s, variance=variance,
                        jitter_used=jitter, factor=factor)


def covariance_delay_deriv(osc: OscillatorModel, grid: SampleTimeGrid,
                           delay_s: float) -> np.ndarray:
    """
    dR(tau)/dtau, entries [s'(tau + dt) + s'(tau - dt)]/2.

    Raises:
        UndefinedDerivativeError: If tau +- dt hits 0 for any entry
    """
    lags = grid.lags()
    return 0.5 * (pn_variance_deriv(osc, delay_s + lags)
                  + pn_variance_deriv(osc, delay_s - lags))


def _sample_phase(osc: OscillatorModel, times: np.ndarray, n_draws: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Oscillator phase phi at sorted instants, shape (n_draws, len(times))."""
    steps = np.diff(times)
    if osc.kind is OscillatorKind.FRO:
        increments = np.sqrt(osc.diffusion_rate * steps) \
            * rng.standard_normal((n_draws, steps.size))
        return np.concatenate([np.zeros((n_draws, 1)), np.cumsum(increments, axis=1)], axis=1)

    innovations = rng.standard_normal((n_draws, times.size))
    rho = np.exp(-osc.decay_rate * steps)
    spread = np.sqrt(-osc.stationary_variance * np.expm1(-2.0 * osc.decay_rate * steps))
    phi = np.empty((n_draws, times.size))
    phi[:, 0] = np.sqrt(osc.stationary_variance) * innovations[:, 0]
    for k in range(1, times.size):
        phi[:, k] = rho[k - 1] * phi[:, k - 1] + spread[k - 1] * innovations[:, k]
    return phi


def sample_pn_paths(osc: OscillatorModel, grid: SampleTimeGrid, delay_s: float,
                    n_draws: int, seed: Optional[int] = None) -> np.ndarray:
    """
    Draw differential PN vectors from exact oscillator paths.

    phi is sampled jointly at {t_i} and {t_i - tau} with the exact Wiener (FRO)
    or Gauss-Markov (PLL) transition between consecutive sorted instants, and
    xi_i = phi(t_i) - phi(t_i - tau).

    Returns:
        Array of shape (n_draws, N*M)
    """
    if delay_s < 0:
        raise ValueError(f"Delay must be >= 0, got {delay_s}")
    if n_draws < 1:
        raise ValueError(f"n_draws must be >= 1, got {n_draws}")

    size = grid.size
    if delay_s == 0.0:
        return np.zeros((n_draws, size))

    rng = np.random.default_rng(seed)
    instants = np.concatenate([grid.times_s, grid.times_s - delay_s])
    unique, inverse = np.unique(instants, return_inverse=True)
    phi = _sample_phase(osc, unique, n_draws, rng)
    inverse = inverse.reshape(-1)
    return phi[:, inverse[:size]] - phi[:, inverse[size:]]


def sample_pn_exact(osc: OscillatorModel, grid: SampleTimeGrid, delay_s: float,
                    seed: Optional[int] = None) -> PnRealization:
    """Single exact-path realization; same seed gives the same vector."""
    xi = sample_pn_paths(osc, grid, delay_s, 1, seed)[0]
    return PnRealization(xi=xi, seed=seed, method=SamplerMethod.EXACT_PATH)


def sample_pn_covariance_factor(covariance: PnCovariance,
                                seed: Optional[int] = None) -> PnRealization:
    """Draw xi = L g with L the Cholesky factor of R(tau) and g standard normal."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(covariance.factor.shape[0])
    return PnRealization(xi=covariance.factor @ g, seed=seed,
                         method=SamplerMethod.COVARIANCE_FACTOR)
