"""Saddle spectral frame and closed-form transition-time predictions.

At the saddle the phase-space Hessian is blockdiag(H_U, I).  The drift
linearization has a unique unstable rate mu solving mu (mu + gamma) =
lambda_1, with eigen-structure H_V M v = -mu v for the block matrix
M = [[0, I], [-I, gamma I]].  The sharp mean-transition-time prefactor is

    underdamped:  kappa = (2 pi / mu)       sqrt(-det H_U(sigma) / det H_U(m))
    overdamped:   kappa = (2 pi / lambda_1) sqrt(-det H_U(sigma) / det H_U(m))

so kappa_under / kappa_over = lambda_1 / mu = mu + gamma exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, SpectralError, StructuralError
from .landscape import DEGENERACY_TOL, LandscapeReport
from .potentials import PotentialModel

UNDERDAMPED = "underdamped"
OVERDAMPED = "overdamped"


@dataclass(frozen=True)
class SaddleFrame:
    """Eigen-structure of the Hamiltonian Hessian at the saddle.

    lambdas[0] is the magnitude of the unique negative eigenvalue -lambda_1;
    basis columns are the orthonormal eigenvectors e_1..e_2d of H_V ordered
    (unstable position mode, remaining position modes, momentum modes), with
    e_{d+1} the momentum partner of the unstable direction.  m_side records
    on which side of the saddle (along e_1) the starting well lies.
    """

    gamma: float
    lambdas: np.ndarray
    basis: np.ndarray
    mu: float
    v: np.ndarray
    v_in_basis: np.ndarray
    center: np.ndarray        # (sigma, 0) in phase space
    m_side: int               # sign of <m - sigma, e_1 position part>
    det_hu_sigma: float
    det_hu_m: float
    barrier: float


def compute_mu(gamma: float, lambda1: float) -> float:
    """Unstable rate mu = (-gamma + sqrt(gamma^2 + 4 lambda_1)) / 2."""
    if gamma <= 0 or lambda1 <= 0:
        raise InputError("gamma and lambda1 must be positive")
    return 0.5 * (-gamma + np.sqrt(gamma * gamma + 4.0 * lambda1))


def block_matrix_m(gamma: float, d: int) -> np.ndarray:
    """M = [[0, I], [-I, gamma I]]."""
    M = np.zeros((2 * d, 2 * d))
    M[:d, d:] = np.eye(d)
    M[d:, :d] = -np.eye(d)
    M[d:, d:] = gamma * np.eye(d)
    return M


def frame_from_hessian(
    hessian: np.ndarray,
    gamma: float,
    sigma=None,
    m_direction=None,
    det_hu_m: float = 1.0,
    barrier: float = 0.0,
) -> SaddleFrame:
    """Frame from a saddle Hessian alone (no landscape search required).

    The unstable unit vector u has its first nonzero component positive (the
    eigenvector sign is otherwise free); v = ((mu + gamma) u, u).
    """
    if gamma <= 0:
        raise InputError("gamma must be positive")
    hu = 0.5 * (np.asarray(hessian, dtype=float) + np.asarray(hessian, dtype=float).T)
    d = hu.shape[0]
    eigvals, eigvecs = np.linalg.eigh(hu)
    if np.any(np.abs(eigvals) < DEGENERACY_TOL):
        raise SpectralError(f"degenerate saddle Hessian eigenvalue: {eigvals}")
    if np.sum(eigvals < 0) != 1:
        raise SpectralError(f"saddle Hessian must have exactly one negative eigenvalue: {eigvals}")

    lambda1 = -float(eigvals[0])
    u = eigvecs[:, 0]
    nz = np.nonzero(np.abs(u) > 1.0e-12)[0][0]
    if u[nz] < 0:
        u = -u

    # basis: (u, 0), (u_i, 0) for the positive position modes, then (0, u), (0, u_i)
    basis = np.zeros((2 * d, 2 * d))
    basis[:d, 0] = u
    for i in range(1, d):
        basis[:d, i] = eigvecs[:, i]
    basis[d:, d] = u
    for i in range(1, d):
        basis[d:, d + i] = eigvecs[:, i]

    lambdas = np.concatenate([[lambda1], eigvals[1:], np.ones(d)])
    mu = compute_mu(gamma, lambda1)
    v = np.concatenate([(mu + gamma) * u, u])

    sigma = np.zeros(d) if sigma is None else np.asarray(sigma, dtype=float)
    if m_direction is None:
        m_side = 1
    else:
        m_side = 1 if float(np.dot(np.asarray(m_direction, dtype=float), u)) >= 0 else -1

    return SaddleFrame(
        gamma=float(gamma),
        lambdas=lambdas,
        basis=basis,
        mu=float(mu),
        v=v,
        v_in_basis=basis.T @ v,
        center=np.concatenate([sigma, np.zeros(d)]),
        m_side=m_side,
        det_hu_sigma=float(np.prod(eigvals)),
        det_hu_m=float(det_hu_m),
        barrier=float(barrier),
    )


def build_saddle_frame(
    model: PotentialModel,
    report: LandscapeReport,
    gamma: float,
) -> SaddleFrame:
    """Assemble H_V's eigen-frame, mu and the rate eigenvector at the saddle."""
    sigma = report.saddle.location
    hm = model.hessian(report.minimum_m.location)
    det_m = float(np.linalg.det(0.5 * (hm + hm.T)))
    if det_m <= 0:
        raise StructuralError("det H_U at the starting minimum must be positive")
    return frame_from_hessian(
        model.hessian(sigma),
        gamma,
        sigma=sigma,
        m_direction=report.minimum_m.location - sigma,
        det_hu_m=det_m,
        barrier=float(report.barrier_from_m),
    )


def hv_matrix(frame: SaddleFrame) -> np.ndarray:
    """H_V reconstructed from the frame's eigen-decomposition."""
    signs = frame.lambdas.copy()
    signs[0] = -signs[0]
    return frame.basis @ np.diag(signs) @ frame.basis.T


@dataclass(frozen=True)
class FrameIdentityReport:
    eigen_residual: float        # max |H_V M v + mu v|
    mu_relation_residual: float  # |mu (mu + gamma) - lambda_1|
    sum_identity_residual: float  # |(-v1^2/l1 + sum v_i^2/l_i) + gamma/mu|
    shifted_min_abs_eigenvalue: float
    shifted_second_eigenvalue: float
    passed: bool


def verify_frame_identities(
    frame: SaddleFrame,
    eigen_tol: float = 1.0e-10,
    sum_tol: float = 1.0e-10,
    kernel_tol: float = 1.0e-9,
) -> FrameIdentityReport:
    """Check the three spectral identities the prefactor computation rests on.

    (a) H_V M v = -mu v, (b) -v_1^2/lambda_1 + sum_{i>=2} v_i^2/lambda_i =
    -gamma/mu, (c) H_V + (mu/gamma) v v^T is PSD with a one-dimensional
    kernel.
    """
    d = len(frame.center) // 2
    hv = hv_matrix(frame)
    M = block_matrix_m(frame.gamma, d)
    res_eigen = float(np.max(np.abs(hv @ (M @ frame.v) + frame.mu * frame.v)))
    res_mu = abs(frame.mu * (frame.mu + frame.gamma) - frame.lambdas[0])

    vb = frame.v_in_basis
    sum_term = -vb[0] ** 2 / frame.lambdas[0] + np.sum(vb[1:] ** 2 / frame.lambdas[1:])
    res_sum = abs(sum_term + frame.gamma / frame.mu)

    shifted = hv + (frame.mu / frame.gamma) * np.outer(frame.v, frame.v)
    eigs = np.sort(np.linalg.eigvalsh(shifted))
    min_abs = float(np.min(np.abs(eigs)))
    others_positive = float(np.sort(np.abs(eigs))[1])

    passed = (
        res_eigen < eigen_tol
        and res_mu < 1.0e-12
        and res_sum < sum_tol
        and min_abs < kernel_tol
        and others_positive > kernel_tol
        and np.all(eigs > -kernel_tol)
    )
    return FrameIdentityReport(
        eigen_residual=res_eigen,
        mu_relation_residual=float(res_mu),
        sum_identity_residual=float(res_sum),
        shifted_min_abs_eigenvalue=min_abs,
        shifted_second_eigenvalue=others_positive,
        passed=bool(passed),
    )


@dataclass(frozen=True)
class EKPrediction:
    regime: str
    prefactor: float
    exponent: float
    epsilon: float
    predicted_mean_time: float


def ek_prediction(
    report: LandscapeReport,
    frame: SaddleFrame,
    epsilon: float,
    regime: str = UNDERDAMPED,
) -> EKPrediction:
    """Closed-form mean transition time kappa * exp(barrier / epsilon)."""
    if epsilon <= 0:
        raise InputError("epsilon must be positive")
    if regime not in (UNDERDAMPED, OVERDAMPED):
        raise InputError(f"unknown regime {regime!r}")
    if frame.det_hu_m <= 0:
        raise StructuralError("det H_U at m must be positive")
    det_ratio = -frame.det_hu_sigma / frame.det_hu_m
    if det_ratio <= 0:
        raise StructuralError("-det H_U at sigma must be positive for an index-1 saddle")
    rate = frame.mu if regime == UNDERDAMPED else frame.lambdas[0]
    kappa = 2.0 * np.pi / rate * np.sqrt(det_ratio)
    exponent = float(report.barrier_from_m)
    return EKPrediction(
        regime=regime,
        prefactor=float(kappa),
        exponent=exponent,
        epsilon=float(epsilon),
        predicted_mean_time=float(kappa * np.exp(exponent / epsilon)),
    )


def fw_exponent(report: LandscapeReport) -> float:
    """Large-deviation limit of eps * log E[tau]: the barrier U(sigma) - U(m)."""
    if not report.is_valid_double_well:
        raise StructuralError("fw_exponent requires a valid double well")
    return float(report.barrier_from_m)
