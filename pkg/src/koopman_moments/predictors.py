"""Lifted linear predictors ``z(t+1) = A z(t)`` fitted from snapshot data.

Three fitters are provided:

* :func:`fit_edmd` -- classical one-step EDMD on ``(G_0, G_1)``.
* :func:`fit_edmd_aggregated` -- EDMD on all consecutive snapshot pairs.
* :func:`fit_unbiased` -- minimiser of the aggregated objective subject to
  ``A nu_t = nu_{t+1}`` for ``t = 0 .. N-1``, which makes the mean multi-step
  residual vanish over the whole horizon.

Every least-squares problem ``min_X ||S - X G||_F`` is solved through a
pivoted QR factorisation of ``G^T``; Gram matrices ``G G^T`` are never formed.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .dataset import DataMatrices
from .errors import HorizonError, RankError

EPS = np.finfo(float).eps


class Method(str, enum.Enum):
    EDMD_ONE_STEP = "edmd"
    EDMD_AGGREGATED = "aggregated"
    UNBIASED_MULTI_STEP = "unbiased"


@dataclass(frozen=True, eq=False)
class Predictor:
    """A fitted ``m x m`` transition matrix with its provenance.

    Attributes
    ----------
    matrix : np.ndarray
        The lifted transition matrix ``A``.
    method : Method
    horizon : int
        Number of snapshot steps consumed by the fit.
    diagnostics : dict
        ``objective`` (sum of squared residuals of the fit), ``objective_per_sample``
        (the same divided by ``L``), ranks and condition estimates.
    """

    matrix: np.ndarray
    method: Method
    horizon: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"predictor matrix must be square, got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("predictor matrix has non-finite entries")
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "method", Method(self.method))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def predict(self, z0, steps: int) -> np.ndarray:
        return predict(self, z0, steps)

    def to_csv(self, path, seed=None) -> None:
        """Write the matrix row-major with 17 significant digits."""
        m = self.size
        with open(path, "w", newline="") as fh:
            fh.write("# method,m,N,seed\n")
            fh.write(f"# {self.method.value},{m},{self.horizon},"
                     f"{'' if seed is None else seed}\n")
            writer = csv.writer(fh, lineterminator="\n")
            for row in self.matrix:
                writer.writerow([f"{v:.17g}" for v in row])

    def diagnostics_json(self) -> str:
        keys = ("objective", "rank_B", "rank_Gtilde", "cond_Rhat")
        payload = {"method": self.method.value}
        payload.update({k: self.diagnostics.get(k) for k in keys})
        payload.update({k: v for k, v in self.diagnostics.items() if k not in payload})
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def read_csv_matrix(path) -> np.ndarray:
        return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def _solve_right(S: np.ndarray, G: np.ndarray, what: str):
    """Minimise ``||S - X G||_F`` over ``X`` for a full-row-rank ``G``.

    Returns the minimiser and a dict with the rank and condition estimate of ``G``.
    """
    p = G.shape[0]
    if p == 0:
        return np.zeros((S.shape[0], 0)), {"rank": 0, "cond": 1.0}
    if G.shape[1] < p:
        raise RankError(f"{what} has {G.shape[1]} columns for {p} rows; "
                        "full row rank is impossible", rank=G.shape[1], expected=p)
    # G^T P = Q R; R shares the singular values of G
    Q, R, perm = scipy.linalg.qr(G.T, mode="economic", pivoting=True)
    sv = np.linalg.svd(R, compute_uv=False)
    tol = p * EPS * sv[0] if sv[0] > 0 else np.inf
    rank = int(np.sum(sv > tol))
    if rank < p:
        raise RankError(f"{what} is rank deficient: numerical rank {rank} < {p}",
                        rank=rank, expected=p)
    # X^T[perm] = R^{-1} Q^T S^T
    Y = scipy.linalg.solve_triangular(R, Q.T @ S.T, lower=False)
    Xt = np.empty_like(Y)
    Xt[perm] = Y
    return Xt.T, {"rank": rank, "cond": float(sv[0] / sv[-1])}


def fit_edmd(G0, G1) -> Predictor:
    """One-step EDMD, ``A = G_1 G_0^T (G_0 G_0^T)^{-1}``.

    The diagnostics' ``objective_per_sample`` equals ``||G_1 - A G_0||_F^2 / L``,
    which is the trace of the one-step residual covariance.
    """
    G0 = np.asarray(G0, dtype=float)
    G1 = np.asarray(G1, dtype=float)
    if G0.shape != G1.shape or G0.ndim != 2:
        raise ValueError(f"snapshot shapes differ: {G0.shape} vs {G1.shape}")
    A, info = _solve_right(G1, G0, "G_0")
    objective = float(np.sum((G1 - A @ G0) ** 2))
    L = G0.shape[1]
    diagnostics = {"objective": objective, "objective_per_sample": objective / L,
                   "rank_G0": info["rank"], "cond_G0": info["cond"]}
    return Predictor(A, Method.EDMD_ONE_STEP, 1, diagnostics)


def fit_edmd_aggregated(data: DataMatrices, horizon: int | None = None) -> Predictor:
    """EDMD on the aggregated pairs ``S = [G_1..G_N]``, ``G = [G_0..G_{N-1}]``."""
    data = data.truncated(data.horizon if horizon is None else horizon)
    G, S = data.aggregated_G, data.aggregated_S
    A, info = _solve_right(S, G, "aggregated G")
    objective = float(np.sum((S - A @ G) ** 2))
    diagnostics = {"objective": objective,
                   "objective_per_sample": objective / data.n_samples,
                   "rank_G": info["rank"], "cond_G": info["cond"]}
    return Predictor(A, Method.EDMD_AGGREGATED, data.horizon, diagnostics)


@dataclass(frozen=True, eq=False)
class QrSplit:
    """Complete QR factorisation ``B = [Q1 Q2] [Rhat; 0]`` with ``diag(Rhat) > 0``."""

    Q1: np.ndarray
    Q2: np.ndarray
    Rhat: np.ndarray
    cond_Rhat: float = np.nan


def qr_split(B) -> QrSplit:
    """Split ``R^m`` into the range of ``B`` (``Q1``) and its complement (``Q2``).

    Raises
    ------
    HorizonError
        If ``B`` has more columns than rows.
    RankError
        If ``B`` is numerically column-rank deficient.
    """
    B = np.asarray(B, dtype=float)
    m, N = B.shape
    if m < N:
        raise HorizonError(f"horizon N={N} exceeds dictionary size m={m}")
    sv = np.linalg.svd(B, compute_uv=False)
    tol = m * EPS * sv[0] if sv[0] > 0 else np.inf
    rank = int(np.sum(sv > tol))
    if rank < N:
        raise RankError(f"mean matrix B is rank deficient by {N - rank} column(s) "
                        f"(rank {rank} < {N})", rank=rank, expected=N)
    Q, R = np.linalg.qr(B, mode="complete")
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q[:, :N] *= signs
    Rhat = R[:N] * signs[:, None]
    return QrSplit(Q[:, :N], Q[:, N:], Rhat, float(sv[0] / sv[-1]))


def fit_unbiased(data: DataMatrices, horizon: int | None = None) -> Predictor:
    """Unbiased multi-step predictor.

    Every matrix with ``A B = C`` (``B = [nu_0..nu_{N-1}]``, ``C = [nu_1..nu_N]``)
    can be written ``A = C Rhat^{-1} Q1^T + A2 Q2^T``.  The free block ``A2``
    minimises ``sum_t ||G_{t+1} - A G_t||_F^2``, which reduces to the
    unconstrained problem ``min ||S~ - A2 G~||_F`` with ``G~ = Q2^T G`` and
    ``S~ = S - C Rhat^{-1} Q1^T G``.
    """
    N = data.horizon if horizon is None else horizon
    m = data.n_features
    if N > m:
        raise HorizonError(f"horizon N={N} exceeds dictionary size m={m}")
    data = data.truncated(N)
    B, C = data.mean_basis_B, data.mean_target_C
    split = qr_split(B)
    # A1 = C Rhat^{-1}, via Rhat^T A1^T = C^T
    A1 = scipy.linalg.solve_triangular(split.Rhat, C.T, trans="T", lower=False).T
    G, S = data.aggregated_G, data.aggregated_S
    S_tilde = S - A1 @ (split.Q1.T @ G)
    G_tilde = split.Q2.T @ G
    A2, info = _solve_right(S_tilde, G_tilde, "projected aggregated G")
    A = A1 @ split.Q1.T + A2 @ split.Q2.T
    objective = float(np.sum((S - A @ G) ** 2))
    constraint = float(np.linalg.norm(A @ B - C) / max(np.linalg.norm(C), EPS))
    diagnostics = {"objective": objective,
                   "objective_per_sample": objective / data.n_samples,
                   "rank_B": N, "rank_Gtilde": info["rank"],
                   "cond_Rhat": split.cond_Rhat, "cond_Gtilde": info["cond"],
                   "constraint_residual": constraint}
    return Predictor(A, Method.UNBIASED_MULTI_STEP, N, diagnostics)


def predict(pred: Predictor | np.ndarray, z0, steps: int) -> np.ndarray:
    """Iterate ``z(t+1) = A z(t)``; returns the ``steps + 1`` iterates stacked."""
    A = pred.matrix if isinstance(pred, Predictor) else np.asarray(pred, dtype=float)
    z = np.asarray(z0, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("initial lifted state must be finite")
    if z.shape[0] != A.shape[1]:
        raise ValueError(f"initial lifted state has length {z.shape[0]}, "
                         f"expected {A.shape[1]}")
    if int(steps) < 0:
        raise ValueError("steps must be non-negative")
    out = np.empty((int(steps) + 1,) + z.shape)
    out[0] = z
    for t in range(int(steps)):
        z = A @ z
        out[t + 1] = z
    return out


FITTERS = {
    Method.EDMD_ONE_STEP: lambda data: fit_edmd(data.snapshots[0], data.snapshots[1]),
    Method.EDMD_AGGREGATED: fit_edmd_aggregated,
    Method.UNBIASED_MULTI_STEP: fit_unbiased,
}


def fit(method, data: DataMatrices) -> Predictor:
    """Dispatch to the fitter registered for ``method``."""
    return FITTERS[Method(method)](data)
