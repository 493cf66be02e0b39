"""
MCRB Module

Misspecified-model bounds for a receiver that ignores phase noise: the
pseudo-true parameter (KL-divergence minimizer between the true PN model and
the assumed PN-free model), the A and B matrices, MCRB = A^-1 B A^-1, the
bias-augmented lower bound LB = MCRB + (eta_bar - eta_0)(eta_bar - eta_0)^T
and its average over PN realizations.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import linalg

from pnbounds.bounds_crb import BoundFamily, BoundReport, snapshot
from pnbounds.errors import ExclusionLimitError, SingularMatrixError
from pnbounds.ofdm_frame import (
    NoiseModel, OfdmConfig, SignalVector, SymbolGrid, TargetTruth,
    noiseless_observation, q_derivatives, synthesize_q
)
from pnbounds.phase_noise import (
    OscillatorModel, PnRealization, sample_pn_exact, sample_time_grid
)
from pnbounds.search import (
    SearchWindow, coarse_peak, correlation_kernel, correlation_value, refine_peak
)
from pnbounds.utils import parallel_map, realization_seeds

logger = logging.getLogger(__name__)

DEFAULT_REALIZATIONS = 100
MAX_EXCLUDED_FRACTION = 0.10
NEWTON_STEPS = 8
# |Re{r^H d_i}| <= tol * ||r|| * ||d_i|| counts as stationary
STATIONARITY_TOL = 1e-9
# condition number of the equilibrated A beyond which the sandwich is refused
MAX_CONDITION = 1e14


@dataclass
class PseudoTrueParams:
    """Assumed-model parameters closest (in KL divergence) to the true model."""

    delay_s: float
    normalized_doppler: float
    gain: complex
    objective_value: float
    converged: bool
    search_trace: List[Tuple[str, float, float, float]] = field(default_factory=list)

    @property
    def eta(self) -> np.ndarray:
        return np.array([self.delay_s, self.normalized_doppler,
                         self.gain.real, self.gain.imag])


@dataclass(frozen=True)
class McrbReport:
    """
    A and B at the pseudo-true point; the bound fields are filled by mcrb_and_lb.

    score holds Re{r^H d_i} for the residual r = mu - mu_tilde(eta_0); it
    vanishes at an exact stationary point.
    """

    A: np.ndarray
    B: np.ndarray
    score: np.ndarray
    pn_seed: Optional[int] = None
    mcrb: Optional[np.ndarray] = None
    bias_outer: Optional[np.ndarray] = None
    lb: Optional[np.ndarray] = None


@dataclass(frozen=True)
class _ModelTerms:
    residual: SignalVector
    jacobian: np.ndarray
    hessian: np.ndarray


def _assumed_model_terms(cfg: OfdmConfig, symbols: SymbolGrid, mu: SignalVector,
                         eta: np.ndarray) -> _ModelTerms:
    """Residual, first and second derivatives of mu_tilde(eta) = alpha q(tau, nu)."""
    delay, doppler = eta[0], eta[1]
    alpha = complex(eta[2], eta[3])
    q = synthesize_q(cfg, symbols, delay, doppler)
    d = q_derivatives(cfg, symbols, delay, doppler, order=2)

    jacobian = np.column_stack([alpha * d.d_tau, alpha * d.d_nu, q, 1j * q])

    hessian = np.zeros((4, 4, cfg.num_samples), dtype=complex)
    hessian[0, 0] = alpha * d.d_tau_tau
    hessian[1, 1] = alpha * d.d_nu_nu
    hessian[0, 1] = hessian[1, 0] = alpha * d.d_tau_nu
    hessian[0, 2] = hessian[2, 0] = d.d_tau
    hessian[0, 3] = hessian[3, 0] = 1j * d.d_tau
    hessian[1, 2] = hessian[2, 1] = d.d_nu
    hessian[1, 3] = hessian[3, 1] = 1j * d.d_nu

    return _ModelTerms(residual=mu - alpha * q, jacobian=jacobian, hessian=hessian)


def _score(terms: _ModelTerms) -> np.ndarray:
    return np.real(terms.residual.conj() @ terms.jacobian)


def _curvature(terms: _ModelTerms) -> np.ndarray:
    """Re{D^H D} - Re{r^H d2mu}; equals -sigma^2 A."""
    gram = np.real(terms.jacobian.conj().T @ terms.jacobian)
    residual_term = np.real(np.einsum("k,ijk->ij", terms.residual.conj(), terms.hessian))
    curvature = gram - residual_term
    return 0.5 * (curvature + curvature.T)


def _is_stationary(terms: _ModelTerms, tol: float = STATIONARITY_TOL) -> bool:
    residual_norm = np.linalg.norm(terms.residual)
    if residual_norm == 0.0:
        return True
    column_norms = np.linalg.norm(terms.jacobian, axis=0)
    return bool(np.all(np.abs(_score(terms)) <= tol * residual_norm * column_norms))


def _equilibrated_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    scale = 1.0 / np.sqrt(np.abs(np.diag(matrix)))
    scaled = matrix * np.outer(scale, scale)
    return scale * linalg.solve(scaled, scale * rhs, assume_a="sym")


def _closed_form_gain(q: SignalVector, mu: SignalVector) -> complex:
    """alpha_0 = q^dagger mu."""
    return complex(np.vdot(q, mu) / np.vdot(q, q).real)


def _newton_polish(cfg: OfdmConfig, symbols: SymbolGrid, mu: SignalVector,
                   eta: np.ndarray, trace: List) -> Tuple[np.ndarray, bool]:
    """Newton steps on ||mu - alpha q(tau, nu)||^2, each kept only if the misfit does not grow."""
    terms = _assumed_model_terms(cfg, symbols, mu, eta)
    cost = float(np.vdot(terms.residual, terms.residual).real)
    for _ in range(NEWTON_STEPS):
        if _is_stationary(terms):
            return eta, True
        try:
            step = _equilibrated_solve(_curvature(terms), _score(terms))
        except (linalg.LinAlgError, ValueError):
            break
        candidate = eta + step
        candidate_terms = _assumed_model_terms(cfg, symbols, mu, candidate)
        candidate_cost = float(np.vdot(candidate_terms.residual, candidate_terms.residual).real)
        if not candidate_cost <= cost:
            break
        eta, terms, cost = candidate, candidate_terms, candidate_cost
        trace.append(("newton", float(eta[0]), float(eta[1]), cost))
    return eta, _is_stationary(terms)


def pseudo_true_search(cfg: OfdmConfig, symbols: SymbolGrid, truth: TargetTruth,
                       pn: PnRealization, window_cells: float = 3.0) -> PseudoTrueParams:
    """
    Pseudo-true (tau_0, nu_0, alpha_0) for one PN realization.

    (tau_0, nu_0) maximizes |mu^H q(tau, nu)|^2 with mu = alpha_bar Xi q(tau_bar, nu_bar):
    coarse grid at half-cell spacing over +-window_cells cells around the truth,
    Nelder-Mead refinement, then Newton steps on the full misfit. The gain is
    alpha_0 = q(tau_0, nu_0)^dagger mu.

    Args:
        cfg: Frame geometry
        symbols: Data symbols
        truth: True target parameters
        pn: PN realization of the true model
        window_cells: Half-width of the coarse window in resolution cells

    Returns:
        PseudoTrueParams; converged is False when neither the simplex nor the
        Newton stage reached its tolerance
    """
    mu = noiseless_observation(cfg, symbols, truth, pn.xi)
    kernel = correlation_kernel(cfg, symbols, mu)
    window = SearchWindow(truth.delay_s, truth.normalized_doppler, window_cells)

    delay, doppler, coarse_value = coarse_peak(cfg, kernel, window)
    trace: List[Tuple[str, float, float, float]] = [("coarse", delay, doppler, coarse_value)]

    peak = refine_peak(cfg, partial(correlation_value, cfg, kernel), delay, doppler)
    trace.extend(("simplex", d, v, f) for d, v, f in peak.trace)

    q = synthesize_q(cfg, symbols, peak.delay_s, peak.normalized_doppler)
    gain = _closed_form_gain(q, mu)
    eta = np.array([peak.delay_s, peak.normalized_doppler, gain.real, gain.imag])
    eta, stationary = _newton_polish(cfg, symbols, mu, eta, trace)

    q = synthesize_q(cfg, symbols, eta[0], eta[1])
    gain = _closed_form_gain(q, mu)
    value = float(np.abs(np.vdot(mu, q)) ** 2)

    converged = peak.converged or stationary
    if not converged:
        logger.warning(f"Pseudo-true search did not converge (pn seed {pn.seed})")
    return PseudoTrueParams(delay_s=float(eta[0]), normalized_doppler=float(eta[1]),
                            gain=gain, objective_value=value, converged=converged,
                            search_trace=trace)


def mcrb_matrices(cfg: OfdmConfig, symbols: SymbolGrid, truth: TargetTruth,
                  pn: PnRealization, noise: NoiseModel,
                  pseudo: PseudoTrueParams) -> McrbReport:
    """
    A and B of the misspecified model at eta_0, in closed Gaussian form.

    A_ij = Re{r^H d2mu/deta_i deta_j - d_i^H d_j} / sigma^2
    B_ij = Re{r^H d_i} Re{r^H d_j} / sigma^4 + Re{d_i^H d_j} / sigma^2
    """
    mu = noiseless_observation(cfg, symbols, truth, pn.xi)
    terms = _assumed_model_terms(cfg, symbols, mu, pseudo.eta)
    sigma_sq = noise.sigma_sq

    score = _score(terms)
    gram = np.real(terms.jacobian.conj().T @ terms.jacobian)
    A = -_curvature(terms) / sigma_sq
    B = np.outer(score, score) / sigma_sq ** 2 + gram / sigma_sq
    return McrbReport(A=A, B=0.5 * (B + B.T), score=score, pn_seed=pn.seed)


def mcrb_and_lb(report: McrbReport, truth: TargetTruth,
                pseudo: PseudoTrueParams) -> McrbReport:
    """
    Complete a report with MCRB = A^-1 B A^-1, the bias outer product and LB.

    Raises:
        SingularMatrixError: If A cannot be inverted reliably
    """
    A = report.A
    diagonal = np.abs(np.diag(A))
    if np.any(diagonal == 0) or not np.all(np.isfinite(A)):
        raise SingularMatrixError("A has a zero or non-finite diagonal", float("inf"))
    scale = 1.0 / np.sqrt(diagonal)
    scaled = A * np.outer(scale, scale)
    condition = float(np.linalg.cond(scaled))
    if not condition < MAX_CONDITION:
        raise SingularMatrixError(
            f"A is singular to working precision (equilibrated condition number {condition:.3e})",
            condition,
        )

    a_inv = scale[:, None] * linalg.solve(scaled, np.diag(scale), assume_a="sym")
    a_inv = 0.5 * (a_inv + a_inv.T)
    mcrb = a_inv @ report.B @ a_inv
    mcrb = 0.5 * (mcrb + mcrb.T)

    bias = truth.eta - pseudo.eta
    bias_outer = np.outer(bias, bias)
    return replace(report, mcrb=mcrb, bias_outer=bias_outer, lb=mcrb + bias_outer)


def lb_report(report: McrbReport, family: BoundFamily = BoundFamily.LB) -> BoundReport:
    """Delay/Doppler view of one completed report (family MCRB or LB)."""
    matrix = report.mcrb if family is BoundFamily.MCRB else report.lb
    if matrix is None:
        raise ValueError("Report has no bounds yet; call mcrb_and_lb first")
    return BoundReport(family, float(matrix[0, 0]), float(matrix[1, 1]),
                       {"pn_seed": report.pn_seed})


def realization_lb(cfg: OfdmConfig, symbols: SymbolGrid, truth: TargetTruth,
                   noise: NoiseModel, window_cells: float,
                   pn: PnRealization) -> Optional[McrbReport]:
    """Completed report for one realization, or None when the search did not converge."""
    pseudo = pseudo_true_search(cfg, symbols, truth, pn, window_cells)
    if not pseudo.converged:
        return None
    return mcrb_and_lb(mcrb_matrices(cfg, symbols, truth, pn, noise, pseudo), truth, pseudo)


def _exact_realization(osc: OscillatorModel, cfg: OfdmConfig, delay_s: float,
                       seed: int) -> PnRealization:
    return sample_pn_exact(osc, sample_time_grid(cfg), delay_s, seed)


def averaged_lb(cfg: OfdmConfig, symbols: SymbolGrid, truth: TargetTruth,
                noise: NoiseModel, osc: OscillatorModel,
                n_realizations: int = DEFAULT_REALIZATIONS, seed: int = 0,
                window_cells: float = 3.0,
                pn_source: Optional[Callable[[int], PnRealization]] = None,
                jobs: int = 1) -> BoundReport:
    """
    LB averaged over PN realizations drawn from the oscillator model.

    Realization seeds derive from the master seed; non-converged searches are
    dropped and counted. The mean is taken in realization order.

    Args:
        cfg: Frame geometry
        symbols: Data symbols
        truth: True target parameters
        noise: Noise variance per real dimension
        osc: Oscillator model
        n_realizations: Number of PN draws
        seed: Master seed
        window_cells: Coarse search half-width in resolution cells
        pn_source: Optional seed -> realization hook replacing the exact sampler
        jobs: Worker processes for the per-realization computations

    Returns:
        BoundReport (family LB_AVERAGED) with per-realization reports attached

    Raises:
        ExclusionLimitError: If more than 10% of realizations are dropped
    """
    if n_realizations < 1:
        raise ValueError(f"n_realizations must be >= 1, got {n_realizations}")

    seeds = realization_seeds(seed, n_realizations)
    source = pn_source or partial(_exact_realization, osc, cfg, truth.delay_s)
    realizations = [source(s) for s in seeds]
    worker = partial(realization_lb, cfg, symbols, truth, noise, window_cells)
    results = parallel_map(worker, realizations, jobs=jobs)

    reports = tuple(r for r in results if r is not None)
    excluded = n_realizations - len(reports)
    if excluded > MAX_EXCLUDED_FRACTION * n_realizations or not reports:
        raise ExclusionLimitError(
            f"{excluded} of {n_realizations} pseudo-true searches did not converge",
            excluded=excluded, total=n_realizations,
        )
    if excluded:
        logger.warning(f"Excluded {excluded} of {n_realizations} PN realizations from the LB average")

    lb = np.array([[r.lb[0, 0], r.lb[1, 1]] for r in reports])
    mcrb = np.array([[r.mcrb[0, 0], r.mcrb[1, 1]] for r in reports])
    bias = np.array([[r.bias_outer[0, 0], r.bias_outer[1, 1]] for r in reports])

    metadata = snapshot(cfg, truth, noise, osc)
    metadata.update({
        "seed": seed,
        "n_realizations": n_realizations,
        "n_excluded": excluded,
        "mcrb_delay_var_mean": float(mcrb[:, 0].mean()),
        "mcrb_doppler_var_mean": float(mcrb[:, 1].mean()),
        "bias_delay_sq_mean": float(bias[:, 0].mean()),
        "bias_doppler_sq_mean": float(bias[:, 1].mean()),
        "lb_delay_var_std": float(lb[:, 0].std()),
        "lb_doppler_var_std": float(lb[:, 1].std()),
    })
    logger.debug(f"Averaged LB over {len(reports)} realizations (seed {seed})")
    return BoundReport(BoundFamily.LB_AVERAGED, float(lb[:, 0].mean()), float(lb[:, 1].mean()),
                       metadata, realizations=reports)
