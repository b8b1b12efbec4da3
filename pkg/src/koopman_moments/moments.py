"""Empirical moments of multi-step residuals and local errors.

All expectations are sample averages over the ``L`` initial states, i.e.
``E[X] = (1/L) sum_i X(x_i)``.  For a predictor ``A``:

* residual ``R_t = G_t - A^t G_0`` (columns are samples), ``t = 1..N``;
* local error ``D_t = G_{t+1} - A G_t``, ``t = 0..N-1``;
* ``mu_t = E[R_t]``, ``beta_t = E[D_t]``;
* ``Sigma_t``, ``Omega_t`` the centred covariances of ``R_t`` and ``D_t``;
* ``Gamma_t`` the centred cross covariance of ``R_t`` and ``D_t``, ``t = 1..N-1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import DataMatrices
from .errors import HypothesisError
from .predictors import Predictor

#: Relative bound on ``||beta_t||`` below which a predictor counts as unbiased.
UNBIASED_TOL = 1e-9


def _matrix(pred) -> np.ndarray:
    return pred.matrix if isinstance(pred, Predictor) else np.asarray(pred, dtype=float)


def residual_samples(pred, data: DataMatrices, t: int) -> np.ndarray:
    """``G_t - A^t G_0`` with ``A^t G_0`` built by ``t`` successive products."""
    if not 1 <= t <= data.horizon:
        raise ValueError(f"t must lie in [1, {data.horizon}], got {t}")
    A = _matrix(pred)
    Z = data.snapshots[0]
    for _ in range(t):
        Z = A @ Z
    return data.snapshots[t] - Z


def local_error_samples(pred, data: DataMatrices, t: int) -> np.ndarray:
    """``G_{t+1} - A G_t``."""
    if not 0 <= t <= data.horizon - 1:
        raise ValueError(f"t must lie in [0, {data.horizon - 1}], got {t}")
    A = _matrix(pred)
    return data.snapshots[t + 1] - A @ data.snapshots[t]


@dataclass(frozen=True, eq=False)
class MomentReport:
    """Per-step moments of one predictor on one data set.

    Arrays are stored with their natural first index, so the paper-style
    time labels map as ``mu[t - 1] = mu_t`` (``t = 1..N``),
    ``beta[t] = beta_t`` (``t = 0..N-1``), ``sigma[t - 1] = Sigma_t``,
    ``omega[t] = Omega_t`` and ``gamma[t - 1] = Gamma_t`` (``t = 1..N-1``).
    The accessor methods take the time label directly.
    """

    horizon: int
    mu: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray
    omega: np.ndarray
    gamma: np.ndarray
    tr_sigma: np.ndarray
    tr_omega: np.ndarray
    tr_sigma_uncentred: np.ndarray
    tr_omega_uncentred: np.ndarray
    nu_norm: np.ndarray

    def mu_at(self, t):
        return self.mu[t - 1]

    def beta_at(self, t):
        return self.beta[t]

    def sigma_at(self, t):
        return self.sigma[t - 1]

    def omega_at(self, t):
        return self.omega[t]

    def gamma_at(self, t):
        return self.gamma[t - 1]

    @property
    def norm_mu(self) -> np.ndarray:
        return np.linalg.norm(self.mu, axis=1)

    @property
    def scaled_norm_mu(self) -> np.ndarray:
        """``||mu_t|| / (1 + ||nu_t||)`` for ``t = 1..N``."""
        return self.norm_mu / (1.0 + self.nu_norm[1:])

    def is_unbiased(self, tol: float = UNBIASED_TOL) -> bool:
        """Whether every ``beta_t`` vanishes, i.e. ``A nu_t = nu_{t+1}`` for all ``t``."""
        scale = 1.0 + self.nu_norm[1:]
        return bool(np.all(np.linalg.norm(self.beta, axis=1) <= tol * scale))


def _centred_cov(X, mx, Y=None, my=None):
    L = X.shape[1]
    Xc = X - mx[:, None]
    Yc = Xc if Y is None else Y - my[:, None]
    return (Xc @ Yc.T) / L


def empirical_moments(pred, data: DataMatrices) -> MomentReport:
    """Compute every moment of the residual analysis for ``pred`` on ``data``."""
    A = _matrix(pred)
    m, L, N = data.n_features, data.n_samples, data.horizon
    if A.shape != (m, m):
        raise ValueError(f"predictor is {A.shape}, data has {m} dictionary functions")
    G = data.snapshots

    mu = np.empty((N, m))
    beta = np.empty((N, m))
    sigma = np.empty((N, m, m))
    omega = np.empty((N, m, m))
    gamma = np.empty((max(N - 1, 0), m, m))
    tr_sigma_raw = np.empty(N)
    tr_omega_raw = np.empty(N)

    Z = G[0]
    for t in range(N):
        # local error D_t and residual R_{t+1}
        D = G[t + 1] - A @ G[t]
        beta[t] = D.mean(axis=1)
        omega[t] = _centred_cov(D, beta[t])
        tr_omega_raw[t] = np.sum(D * D) / L
        if t >= 1:
            gamma[t - 1] = _centred_cov(R, mu[t - 1], D, beta[t])
        Z = A @ Z
        R = G[t + 1] - Z
        mu[t] = R.mean(axis=1)
        sigma[t] = _centred_cov(R, mu[t])
        tr_sigma_raw[t] = np.sum(R * R) / L

    sigma = 0.5 * (sigma + sigma.transpose(0, 2, 1))
    omega = 0.5 * (omega + omega.transpose(0, 2, 1))
    return MomentReport(
        horizon=N, mu=mu, beta=beta, sigma=sigma, omega=omega, gamma=gamma,
        tr_sigma=np.trace(sigma, axis1=1, axis2=2),
        tr_omega=np.trace(omega, axis1=1, axis2=2),
        tr_sigma_uncentred=tr_sigma_raw, tr_omega_uncentred=tr_omega_raw,
        nu_norm=np.linalg.norm(data.means, axis=1),
    )


def recursion_check_mean(report: MomentReport, pred) -> np.ndarray:
    """Defects ``||mu_{t+1} - (A mu_t + beta_t)||`` for ``t = 1..N-1``."""
    A = _matrix(pred)
    out = np.empty(max(report.horizon - 1, 0))
    for t in range(1, report.horizon):
        out[t - 1] = np.linalg.norm(
            report.mu_at(t + 1) - (A @ report.mu_at(t) + report.beta_at(t)))
    return out


def recursion_check_variance(report: MomentReport, pred,
                             require_unbiased: bool = True) -> np.ndarray:
    """Frobenius defects of ``Sigma_{t+1} = A Sigma_t A^T + A Gamma_t + Gamma_t^T A^T + Omega_t``.

    Returned for ``t = 1..N-1``.  The identity is stated for unbiased
    predictors; pass ``require_unbiased=False`` to evaluate it on the centred
    moments of any predictor.

    Raises
    ------
    HypothesisError
        If ``require_unbiased`` and some ``beta_t`` does not vanish.
    """
    if require_unbiased and not report.is_unbiased():
        worst = float(np.max(np.linalg.norm(report.beta, axis=1)))
        raise HypothesisError(
            f"predictor does not satisfy A nu_t = nu_(t+1) (max |beta_t| = {worst:.3e})")
    A = _matrix(pred)
    out = np.empty(max(report.horizon - 1, 0))
    for t in range(1, report.horizon):
        S, G = report.sigma_at(t), report.gamma_at(t)
        rhs = A @ S @ A.T + A @ G + G.T @ A.T + report.omega_at(t)
        out[t - 1] = np.linalg.norm(report.sigma_at(t + 1) - rhs)
    return out


def sigma_approximation_gap(report: MomentReport) -> np.ndarray:
    """``|tr Sigma_t - tr Omega_{t-1}| / (1 + tr Sigma_t)`` for ``t = 1..N``.

    Measures how well the design heuristic ``Sigma_t ~ Omega_{t-1}`` holds.
    """
    return np.abs(report.tr_sigma - report.tr_omega) / (1.0 + report.tr_sigma)
