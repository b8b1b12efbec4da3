"""Trajectory ensembles and the lifted snapshot matrices built from them."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .dictionary import Dictionary
from .dynamics import DiscreteSystem, _check_states


def sample_initial_states(lower, upper, n_samples: int, seed: int) -> np.ndarray:
    """Draw ``n_samples`` i.i.d. uniform states from the box ``[lower, upper]``.

    Returns an ``(L, n)`` array; the draw is reproducible from ``seed``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != upper.shape or lower.ndim != 1:
        raise ValueError("box bounds must be 1-d arrays of equal length")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("box bounds must be finite")
    if np.any(upper <= lower):
        raise ValueError(f"degenerate box: lower={lower.tolist()} upper={upper.tolist()}")
    if int(n_samples) != n_samples or n_samples < 1:
        raise ValueError(f"n_samples must be a positive integer, got {n_samples}")
    rng = np.random.default_rng(seed)
    return rng.uniform(lower, upper, size=(int(n_samples), lower.size))


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """``L`` trajectories of ``N + 1`` states each.

    ``states`` has shape ``(N + 1, n, L)``: ``states[t]`` holds the states at
    time ``t`` as columns, matching the snapshot-matrix layout.
    """

    states: np.ndarray
    seed: int | None = None
    system: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    @property
    def n_samples(self) -> int:
        return self.states.shape[2]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    def trajectory(self, i: int) -> np.ndarray:
        """Trajectory ``i`` as an ``(N + 1, n)`` array."""
        return self.states[:, :, i]

    def at(self, t: int) -> np.ndarray:
        """States at time ``t`` as an ``(L, n)`` array."""
        return self.states[t].T

    def to_csv(self, path) -> None:
        n = self.state_dim
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["traj", "t"] + [f"x{k + 1}" for k in range(n)])
            for i in range(self.n_samples):
                for t in range(self.horizon + 1):
                    writer.writerow([i, t] + [f"{v:.17g}" for v in self.states[t, :, i]])

    @classmethod
    def from_csv(cls, path) -> "TrajectoryEnsemble":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        traj = rows[:, 0].astype(int)
        t = rows[:, 1].astype(int)
        L, N1, n = traj.max() + 1, t.max() + 1, rows.shape[1] - 2
        states = np.empty((N1, n, L))
        states[t, :, traj] = rows[:, 2:]
        return cls(states)


def build_ensemble(system: DiscreteSystem, initials, horizon: int,
                   seed: int | None = None) -> TrajectoryEnsemble:
    """Roll out ``system`` from every row of ``initials`` (shape ``(L, n)``).

    All trajectories are advanced together; since the step maps act
    elementwise, each one is bit-identical to its individual rollout.

    Raises
    ------
    DivergenceError
        Carrying both the step and the index of the first diverging trajectory.
    """
    initials = np.atleast_2d(np.asarray(initials, dtype=float))
    if initials.shape[1] != system.state_dim:
        raise ValueError(f"initial states have dimension {initials.shape[1]}, "
                         f"expected {system.state_dim}")
    if int(horizon) < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    if not np.all(np.isfinite(initials)):
        raise ValueError("initial states must be finite")
    x = initials.T.copy()
    states = np.empty((horizon + 1,) + x.shape)
    states[0] = x
    for t in range(horizon):
        x = system.step(x)
        _check_states(x, t + 1)
        states[t + 1] = x
    return TrajectoryEnsemble(states, seed=seed, system=system.describe())


def numerical_rank(matrix: np.ndarray) -> int:
    """Rank counting singular values above ``rows * eps * sigma_max``."""
    s = np.linalg.svd(matrix, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    tol = matrix.shape[0] * np.finfo(float).eps * s[0]
    return int(np.sum(s > tol))


@dataclass(frozen=True, eq=False)
class DataMatrices:
    """Snapshot matrices ``G_0 .. G_N`` and everything derived from them.

    Attributes
    ----------
    snapshots : np.ndarray
        Shape ``(N + 1, m, L)``; ``snapshots[t]`` is ``G_t``.
    means : np.ndarray
        Shape ``(N + 1, m)``; row ``t`` is the sample mean of ``G_t``'s columns.
    constant_index : int or None
        Row holding the constant function, if the dictionary has one.
    """

    snapshots: np.ndarray
    means: np.ndarray
    constant_index: int | None = None
    rank_G0: int | None = None
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_snapshots(cls, snapshots, constant_index=None) -> "DataMatrices":
        G = np.array(snapshots, dtype=float)
        if G.ndim != 3 or G.shape[0] < 2:
            raise ValueError("need at least two snapshot matrices of equal shape")
        m, L = G.shape[1:]
        means = G.mean(axis=2)
        rank = numerical_rank(G[0])
        diagnostics = {"m": m, "L": L, "horizon": G.shape[0] - 1, "rank_G0": rank,
                       "full_row_rank_G0": rank == m}
        if L < m:
            warnings.warn(f"only {L} samples for {m} dictionary functions; "
                          "G_0 cannot have full row rank", RuntimeWarning, stacklevel=2)
        return cls(G, means, constant_index, rank, diagnostics)

    @property
    def horizon(self) -> int:
        return self.snapshots.shape[0] - 1

    @property
    def n_features(self) -> int:
        return self.snapshots.shape[1]

    @property
    def n_samples(self) -> int:
        return self.snapshots.shape[2]

    @cached_property
    def aggregated_G(self) -> np.ndarray:
        """``[G_0 ... G_{N-1}]``, shape ``(m, N L)``."""
        return np.hstack(list(self.snapshots[:-1]))

    @cached_property
    def aggregated_S(self) -> np.ndarray:
        """``[G_1 ... G_N]``, shape ``(m, N L)``."""
        return np.hstack(list(self.snapshots[1:]))

    @property
    def mean_basis_B(self) -> np.ndarray:
        """Means ``nu_0 .. nu_{N-1}`` as columns."""
        return self.means[:-1].T.copy()

    @property
    def mean_target_C(self) -> np.ndarray:
        """Means ``nu_1 .. nu_N`` as columns."""
        return self.means[1:].T.copy()

    def truncated(self, horizon: int) -> "DataMatrices":
        """Same data restricted to ``G_0 .. G_horizon``."""
        if horizon == self.horizon:
            return self
        if not 1 <= horizon <= self.horizon:
            raise ValueError(f"horizon must lie in [1, {self.horizon}], got {horizon}")
        return DataMatrices(self.snapshots[:horizon + 1], self.means[:horizon + 1],
                            self.constant_index, self.rank_G0, dict(self.diagnostics))


def assemble(dictionary: Dictionary, ensemble: TrajectoryEnsemble) -> DataMatrices:
    """Lift every state of ``ensemble`` and build the snapshot matrices.

    A rank-deficient ``G_0`` is only recorded in ``diagnostics`` here; the
    fitters refuse it.
    """
    if dictionary.state_dim != ensemble.state_dim:
        raise ValueError(f"dictionary expects dimension {dictionary.state_dim}, "
                         f"ensemble has {ensemble.state_dim}")
    snapshots = np.stack([dictionary._evaluate(ensemble.states[t])
                          for t in range(ensemble.horizon + 1)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        data = DataMatrices.from_snapshots(snapshots, dictionary.constant_index)
    m, L = data.n_features, data.n_samples
    if L < m:
        warnings.warn(f"only {L} samples for {m} dictionary functions; "
                      "G_0 cannot have full row rank", RuntimeWarning, stacklevel=2)
    return data


__all__ = [
    "DataMatrices",
    "TrajectoryEnsemble",
    "assemble",
    "build_ensemble",
    "numerical_rank",
    "sample_initial_states",
]
