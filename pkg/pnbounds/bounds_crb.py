"""
CRB Module

Deterministic (PN-free) Cramer-Rao bound and the hybrid CRB under phase
noise. Fisher matrices are built in closed form from the Slepian-Bangs
formula; bounds are read off the inverse with an equilibrated Cholesky solve
against the first identity columns only.

Parameter order: [tau, nu, alpha_R, alpha_I, xi_0 ... xi_{NM-1}].
"""

import logging
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from pnbounds.errors import DegenerateCovarianceError, UnidentifiableParameterError
from pnbounds.ofdm_frame import (
    SPEED_OF_LIGHT, NoiseModel, OfdmConfig, SymbolGrid, TargetTruth,
    q_derivatives, synthesize_q
)
from pnbounds.phase_noise import (
    OscillatorModel, PnCovariance, SampleTimeGrid, build_covariance, covariance_delay_deriv
)

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("delay", "doppler", "gain_real", "gain_imag")


class BoundFamily(str, Enum):
    CRB_PN_FREE = "crb_pn_free"
    CRB_HYBRID = "crb_hybrid"
    MCRB = "mcrb"
    LB = "lb"
    LB_AVERAGED = "lb_averaged"


def xi_names(size: int) -> Tuple[str, ...]:
    return tuple(f"xi_{k}" for k in range(size))


@dataclass(frozen=True)
class FimMatrix:
    """Real symmetric Fisher information matrix with named parameters."""

    matrix: np.ndarray
    parameter_names: Tuple[str, ...] = PARAMETER_NAMES

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"FIM must be square, got shape {matrix.shape}")
        if len(self.parameter_names) != matrix.shape[0]:
            raise ValueError(
                f"{len(self.parameter_names)} parameter names for a FIM of order {matrix.shape[0]}"
            )
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "parameter_names", tuple(self.parameter_names))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def __add__(self, other: "FimMatrix") -> "FimMatrix":
        if self.parameter_names != other.parameter_names:
            raise ValueError("Cannot add FIMs over different parameter vectors")
        return FimMatrix(self.matrix + other.matrix, self.parameter_names)


@dataclass(frozen=True)
class BoundReport:
    """
    Delay and Doppler variance bounds of one bound family.

    Attributes:
        bound_family: Which bound produced the values
        delay_var_s2: Bound on the delay variance (s^2)
        doppler_var: Bound on the normalized-Doppler variance
        metadata: Config snapshot, seeds and diagnostics
        realizations: Per-realization MCRB reports (averaged LB only)
    """

    bound_family: BoundFamily
    delay_var_s2: float
    doppler_var: float
    metadata: Dict[str, Any] = field(default_factory=dict)
    realizations: Tuple[Any, ...] = ()

    def __post_init__(self):
        for name in ("delay_var_s2", "doppler_var"):
            value = getattr(self, name)
            if not value >= 0:
                raise ValueError(f"{name} must be nonnegative, got {value}")

    @property
    def range_rmse_m(self) -> float:
        return SPEED_OF_LIGHT / 2.0 * float(np.sqrt(self.delay_var_s2))

    @property
    def velocity_rmse_mps(self) -> float:
        return SPEED_OF_LIGHT / 2.0 * float(np.sqrt(self.doppler_var))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bound_family": self.bound_family.value,
            "delay_var_s2": self.delay_var_s2,
            "doppler_var": self.doppler_var,
            "range_rmse_m": self.range_rmse_m,
            "velocity_rmse_mps": self.velocity_rmse_mps,
            "metadata": self.metadata,
        }


def snapshot(*items: Any) -> Dict[str, Any]:
    """Flatten dataclass inputs into a plain metadata dict."""
    meta: Dict[str, Any] = {}
    for item in items:
        if item is None or not is_dataclass(item):
            continue
        for key, value in asdict(item).items():
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, complex):
                value = [value.real, value.imag]
            elif isinstance(value, np.ndarray):
                continue
            meta[f"{type(item).__name__}.{key}"] = value
    return meta


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def pn_free_jacobian(cfg: OfdmConfig, symbols: SymbolGrid,
                     truth: TargetTruth) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    q and the columns d mu / d eta of mu = alpha q(tau, nu).

    Returns:
        Tuple of (q, dq/dtau, dq/dnu, D) with D of shape (N*M, 4)
    """
    q = synthesize_q(cfg, symbols, truth.delay_s, truth.normalized_doppler)
    derivs = q_derivatives(cfg, symbols, truth.delay_s, truth.normalized_doppler, order=1)
    alpha = truth.gain
    columns = np.column_stack([alpha * derivs.d_tau, alpha * derivs.d_nu, q, 1j * q])
    return q, derivs.d_tau, derivs.d_nu, columns


def deterministic_fim(cfg: OfdmConfig, symbols: SymbolGrid, truth: TargetTruth,
                      noise: NoiseModel) -> FimMatrix:
    """
    PN-free 4 x 4 FIM, [J]_ij = Re{dmu^H/deta_i dmu/deta_j} / sigma^2.

    Args:
        cfg: Frame geometry
        symbols: Data symbols
        truth: Parameter point where the FIM is evaluated
        noise: Noise variance per real dimension

    Returns:
        FimMatrix over [tau, nu, alpha_R, alpha_I]
    """
    _, _, _, columns = pn_free_jacobian(cfg, symbols, truth)
    gram = np.real(columns.conj().T @ columns) / noise.sigma_sq
    return FimMatrix(_symmetrize(gram), PARAMETER_NAMES)


def _raise_unidentifiable(fim: FimMatrix, scaled: np.ndarray) -> None:
    eigvals, eigvecs = linalg.eigh(scaled)
    direction = eigvecs[:, 0]
    parameter = fim.parameter_names[int(np.argmax(np.abs(direction)))]
    raise UnidentifiableParameterError(
        f"FIM of order {fim.size} is singular (smallest equilibrated eigenvalue "
        f"{eigvals[0]:.3e}); '{parameter}' is not identifiable",
        direction=direction,
        parameter=parameter,
    )


def fim_inverse_block(fim: FimMatrix, k: int = 2) -> np.ndarray:
    """
    Leading k x k block of the FIM inverse.

    The matrix is equilibrated by its diagonal, Cholesky-factorized and solved
    against the first k identity columns; no explicit inverse is formed.

    Raises:
        UnidentifiableParameterError: If the FIM is singular
    """
    matrix = fim.matrix
    diagonal = np.diag(matrix)
    if not np.all(np.isfinite(matrix)):
        raise UnidentifiableParameterError("FIM has non-finite entries")
    if np.any(diagonal <= 0):
        idx = int(np.argmin(diagonal))
        direction = np.zeros(fim.size)
        direction[idx] = 1.0
        raise UnidentifiableParameterError(
            f"FIM carries no information on '{fim.parameter_names[idx]}'",
            direction=direction,
            parameter=fim.parameter_names[idx],
        )

    scale = 1.0 / np.sqrt(diagonal)
    scaled = _symmetrize(matrix * np.outer(scale, scale))
    try:
        factor = linalg.cho_factor(scaled, lower=True)
    except linalg.LinAlgError:
        _raise_unidentifiable(fim, scaled)

    columns = linalg.cho_solve(factor, np.eye(fim.size)[:, :k])
    return columns[:k, :k] * np.outer(scale[:k], scale[:k])


def deterministic_crb(fim: FimMatrix, metadata: Optional[Dict[str, Any]] = None) -> BoundReport:
    """CRB_tau = [J^-1]_11 and CRB_nu = [J^-1]_22 of the PN-free FIM."""
    block = fim_inverse_block(fim, 2)
    return BoundReport(BoundFamily.CRB_PN_FREE, float(block[0, 0]), float(block[1, 1]),
                       dict(metadata or {}))


def hybrid_fim_observation(cfg: OfdmConfig, symbols: SymbolGrid, truth: TargetTruth,
                           noise: NoiseModel) -> FimMatrix:
    """
    Observation part J^(o) of the hybrid FIM for mu = alpha Xi q(tau, nu).

    Xi is unitary and diagonal, so every entry is free of xi and the expectation
    over the PN is the closed form itself. The deterministic 4 x 4 block is the
    PN-free FIM.
    """
    q, dq_tau, dq_nu, columns = pn_free_jacobian(cfg, symbols, truth)
    size = cfg.num_samples
    sigma_sq = noise.sigma_sq
    alpha = truth.gain
    power = abs(alpha) ** 2
    q_sq = np.abs(q) ** 2

    matrix = np.zeros((size + 4, size + 4))
    matrix[:4, :4] = _symmetrize(np.real(columns.conj().T @ columns) / sigma_sq)

    cross = np.column_stack([
        np.real(1j * power * np.conj(q) * dq_tau),
        np.real(1j * power * np.conj(q) * dq_nu),
        alpha.imag * q_sq,
        -alpha.real * q_sq,
    ]) / sigma_sq
    matrix[4:, :4] = cross
    matrix[:4, 4:] = cross.T
    matrix[4:, 4:][np.diag_indices(size)] = power * q_sq / sigma_sq
    return FimMatrix(matrix, PARAMETER_NAMES + xi_names(size))


def hybrid_fim_prior(osc: OscillatorModel, grid: SampleTimeGrid, delay_s: float,
                     covariance: Optional[PnCovariance] = None,
                     include_delay_prior: bool = True) -> FimMatrix:
    """
    Prior part J^(p) of the hybrid FIM for xi ~ N(0, R(tau)).

    Gaussian score identities give: xi-xi block R^-1, tau-tau entry
    tr[(R^-1 dR/dtau)^2] / 2, and zeros elsewhere.

    Args:
        osc: Oscillator model
        grid: Sample instants of the frame
        delay_s: Delay at which R(tau) is evaluated (off the kink set)
        covariance: Precomputed R(tau), built here when omitted
        include_delay_prior: Keep the tau-tau entry. It does not shrink with the PN
            level, so a bound that includes it can fall below the PN-free CRB

    Raises:
        DegenerateCovarianceError: If R(tau) is zero or not factorizable
    """
    if covariance is None:
        covariance = build_covariance(osc, grid, delay_s)
    if covariance.is_zero:
        raise DegenerateCovarianceError("PN prior is degenerate: R(tau) = 0 at zero delay")

    size = grid.size
    factor = (covariance.factor, True)
    matrix = np.zeros((size + 4, size + 4))
    matrix[4:, 4:] = _symmetrize(linalg.cho_solve(factor, np.eye(size)))

    if include_delay_prior:
        slope = linalg.cho_solve(factor, covariance_delay_deriv(osc, grid, delay_s))
        matrix[0, 0] = 0.5 * float(np.sum(slope * slope.T))
    return FimMatrix(matrix, PARAMETER_NAMES + xi_names(size))


def hybrid_crb(obs: FimMatrix, prior: FimMatrix,
               metadata: Optional[Dict[str, Any]] = None) -> BoundReport:
    """Delay/Doppler entries of (J^(o) + J^(p))^-1."""
    block = fim_inverse_block(obs + prior, 2)
    return BoundReport(BoundFamily.CRB_HYBRID, float(block[0, 0]), float(block[1, 1]),
                       dict(metadata or {}))
