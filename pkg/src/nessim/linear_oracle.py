"""Exactly solvable harmonic chain: the ground truth for everything else.

For purely quadratic potentials the drift is linear, x' = A x, and the
stationary state of the SDE dx = A x dt + B dW is the centered Gaussian
with covariance solving the Lyapunov equation A S + S A^T + B B^T = 0.
This module builds (A, B), solves the Lyapunov equation by Kronecker
vectorization and a dense LU solve, exposes the spectral gap, stationary
autocovariance, Kalman controllability, and the minimum-energy steering
control used to validate the nonlinear control integrator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .chain_model import ChainParams, PotentialSpec, index_map, potential_hessian, state_dim
from .sde_dynamics import Model


class NonQuadratic(ValueError):
    """The potential contains terms of exponent > 2."""


class NotHurwitz(ValueError):
    """The drift matrix has an eigenvalue with non-negative real part."""


@dataclass
class LinearModel:
    """Linear drift ``A``, noise matrix ``B`` and the coordinate layout."""

    a: np.ndarray
    b: np.ndarray
    index_map: dict[str, slice]
    params: ChainParams

    @property
    def dim(self) -> int:
        return self.a.shape[0]


def _coupling_matrix(params: ChainParams) -> np.ndarray:
    """Lambda: R^{nd} -> R^{2d}, picking lam * (site 1, site n)."""
    n, d = params.n, params.d
    lam_mat = np.zeros((2 * d, n * d))
    lam_mat[:d, :d] = params.lam * np.eye(d)
    lam_mat[d:, (n - 1) * d:] = params.lam * np.eye(d)
    return lam_mat


def linearize(model: Model) -> LinearModel:
    """Drift and noise matrices of a harmonic model.

    Raises :class:`NonQuadratic` unless every potential term has
    exponent 2.  The returned ``A`` satisfies drift_field(model, x) ==
    A @ vec(x) identically.
    """
    spec: PotentialSpec = model.spec
    params = model.params
    if not spec.is_quadratic():
        raise NonQuadratic("linearize requires all potential exponents == 2")
    idx = index_map(params)
    m = state_dim(params)
    n, d = params.n, params.d
    nd = n * d
    k = potential_hessian(spec, params, np.zeros((n, d)))
    a = np.zeros((m, m))
    sl_p, sl_q = idx["p"], idx["q"]
    a[sl_q, sl_p] = np.eye(nd)
    a[sl_p, sl_q] = -k
    t1, tn = params.temperatures
    gamma = params.gamma
    kind = params.reservoir_kind
    if kind == "langevin":
        eta2 = params.lam ** 2
        for site in (0, n - 1):
            rows = slice(sl_p.start + site * d, sl_p.start + (site + 1) * d)
            a[rows, rows] += -eta2 * np.eye(d)
        b = np.zeros((m, 2 * d))
        b[sl_p.start:sl_p.start + d, :d] = np.sqrt(2.0 * t1 * eta2) * np.eye(d)
        b[sl_p.start + (n - 1) * d:sl_p.start + nd, d:] = \
            np.sqrt(2.0 * tn * eta2) * np.eye(d)
        return LinearModel(a=a, b=b, index_map=idx, params=params)

    lam_mat = _coupling_matrix(params)
    sl_r = idx["r"]
    a[sl_p, sl_r] = -lam_mat.T
    a[sl_r, sl_p] = lam_mat
    a[sl_r, sl_r] = -gamma * np.eye(2 * d)
    b = np.zeros((m, 2 * d))
    b[sl_r, :] = np.diag(np.concatenate([
        np.full(d, np.sqrt(2.0 * t1 * gamma)),
        np.full(d, np.sqrt(2.0 * tn * gamma)),
    ]))
    if kind == "ou2":
        sl_s = idx["s"]
        sigma = params.sigma
        a[sl_r, sl_s] = -sigma * np.eye(2 * d)
        a[sl_s, sl_r] = sigma * np.eye(2 * d)
        a[sl_s, sl_s] = -gamma * np.eye(2 * d)
    return LinearModel(a=a, b=b, index_map=idx, params=params)


def _require_hurwitz(a: np.ndarray) -> None:
    if np.max(np.linalg.eigvals(a).real) >= 0:
        raise NotHurwitz("drift matrix is not Hurwitz")


def stationary_covariance(lm: LinearModel) -> np.ndarray:
    """Solve A S + S A^T + B B^T = 0 by Kronecker vectorization.

    The result is symmetrized and certified: the Frobenius norm of the
    residual must not exceed 1e-10 * ||B B^T||_F.
    """
    a = np.asarray(lm.a, dtype=np.float64)
    b = np.asarray(lm.b, dtype=np.float64)
    _require_hurwitz(a)
    m = a.shape[0]
    bbt = b @ b.T
    big = np.kron(a, np.eye(m)) + np.kron(np.eye(m), a)
    sigma = np.linalg.solve(big, -bbt.reshape(m * m)).reshape(m, m)
    sigma = 0.5 * (sigma + sigma.T)
    resid = a @ sigma + sigma @ a.T + bbt
    norm = np.linalg.norm(bbt)
    if norm > 0 and np.linalg.norm(resid) > 1e-10 * norm:
        raise ArithmeticError(
            f"Lyapunov residual {np.linalg.norm(resid):.3e} exceeds certificate"
        )
    return sigma


def spectral_gap(lm: LinearModel | np.ndarray) -> float:
    """Slowest decay rate, -max Re eig(A); positive for Hurwitz A."""
    a = lm.a if isinstance(lm, LinearModel) else np.asarray(lm)
    _require_hurwitz(a)
    return float(-np.max(np.linalg.eigvals(a).real))


def stationary_autocovariance(lm: LinearModel, sigma: np.ndarray,
                              t: float) -> np.ndarray:
    """Stationary lag covariance E[x(t) x(0)^T] = e^{tA} Sigma (t >= 0)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    a = lm.a if isinstance(lm, LinearModel) else np.asarray(lm)
    return expm(t * a) @ sigma


def controllability_rank(lm: LinearModel, b: np.ndarray | None = None,
                         rtol: float = 1e-9) -> int:
    """Rank of the Kalman matrix [B, AB, ..., A^{m-1} B].

    Singular values below ``rtol * sigma_max`` count as zero.
    """
    a = lm.a if isinstance(lm, LinearModel) else np.asarray(lm)
    if b is None:
        b = lm.b
    m = a.shape[0]
    blocks = [b]
    cur = b
    for _ in range(m - 1):
        cur = a @ cur
        blocks.append(cur)
    kal = np.hstack(blocks)
    sv = np.linalg.svd(kal, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def control_input_matrix(lm: LinearModel) -> np.ndarray:
    """Injection matrix of the associated control system (controls add to dr)."""
    m = lm.dim
    sl_r = lm.index_map.get("r")
    if sl_r is None:
        raise ValueError("control system is defined for OU reservoirs only")
    b = np.zeros((m, 2 * lm.params.d))
    b[sl_r, :] = np.eye(2 * lm.params.d)
    return b


def controllability_gramian(a: np.ndarray, b: np.ndarray, horizon: float) -> np.ndarray:
    """Finite-horizon Gramian int_0^T e^{As} B B^T e^{A^T s} ds (Van Loan)."""
    m = a.shape[0]
    big = np.zeros((2 * m, 2 * m))
    big[:m, :m] = -a
    big[:m, m:] = b @ b.T
    big[m:, m:] = a.T
    phi = expm(big * horizon)
    return phi[m:, m:].T @ phi[:m, m:]


def steering_control(lm: LinearModel, x0: np.ndarray, target: np.ndarray,
                     horizon: float, n_samples: int):
    """Minimum-energy control steering the linear system x0 -> target.

    Returns ``(times, u)`` with ``u`` sampled on ``n_samples + 1`` grid
    points, suitable for the nonlinear control integrator:
        u(t) = B^T e^{A^T (T - t)} W_T^{-1} (target - e^{A T} x0).
    """
    a = lm.a
    b = control_input_matrix(lm)
    gram = controllability_gramian(a, b, horizon)
    defect = np.asarray(target, dtype=np.float64) - expm(a * horizon) @ np.asarray(x0)
    lam = np.linalg.solve(gram, defect)
    times = np.linspace(0.0, horizon, n_samples + 1)
    u = np.array([b.T @ expm(a.T * (horizon - t)) @ lam for t in times])
    return times, u


# ---------------------------------------------------------------------------
# Independent cross-check path for the eigensolver: characteristic
# polynomial by the Faddeev-LeVerrier recursion, roots by Aberth-Ehrlich
# iteration.  Only intended for small matrices (m <= 8 in the tests).
# ---------------------------------------------------------------------------

def characteristic_polynomial(a: np.ndarray) -> np.ndarray:
    """Coefficients [1, c_1, ..., c_m] of det(lambda I - A)."""
    a = np.asarray(a, dtype=np.float64)
    m = a.shape[0]
    coeffs = np.zeros(m + 1)
    coeffs[0] = 1.0
    mk = np.zeros_like(a)
    for k in range(1, m + 1):
        mk = a @ mk + coeffs[k - 1] * np.eye(m)
        coeffs[k] = -np.trace(a @ mk) / k
    return coeffs


def polynomial_roots(coeffs: np.ndarray, iters: int = 200,
                     tol: float = 1e-13) -> np.ndarray:
    """All complex roots of a monic polynomial by Aberth-Ehrlich iteration."""
    coeffs = np.asarray(coeffs, dtype=np.complex128)
    coeffs = coeffs / coeffs[0]
    m = len(coeffs) - 1
    if m == 0:
        return np.array([], dtype=np.complex128)
    deriv = coeffs[:-1] * np.arange(m, 0, -1)
    radius = 1.0 + np.max(np.abs(coeffs[1:]))
    angles = 2.0 * np.pi * (np.arange(m) + 0.376) / m
    z = radius * 0.5 * np.exp(1j * angles)
    for _ in range(iters):
        pz = np.polyval(coeffs, z)
        dpz = np.polyval(deriv, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = np.where(dpz != 0, pz / dpz, 0.0)
            pairwise = 1.0 / (z[:, None] - z[None, :] + np.eye(m))
        np.fill_diagonal(pairwise, 0.0)
        denom = 1.0 - newton * pairwise.sum(axis=1)
        step = newton / denom
        z = z - step
        if np.max(np.abs(step)) < tol * (1.0 + np.max(np.abs(z))):
            break
    return z
