"""Discrete-time nonlinear systems and trajectory rollout.

States are arrays whose first axis is the state dimension, so every step map
accepts either a single state of shape ``(n,)`` or a batch of shape
``(n, L)`` with one state per column.  All arithmetic is elementwise, which
makes a batched rollout bit-identical to rolling out each column alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError

#: States with a Euclidean norm above this value abort the rollout.
DIVERGENCE_THRESHOLD = 1e6


@dataclass(frozen=True)
class DiscreteSystem:
    """A map ``x(t+1) = f(x(t))`` together with a sampling box.

    Parameters
    ----------
    state_dim : int
        Dimension ``n`` of the state.
    lower, upper : sequence of float
        Bounds of the axis-aligned box used to draw initial states.
    transition : callable
        Step map acting on arrays of shape ``(n,)`` or ``(n, L)``.
    name : str
        Short identifier, written to exported files.
    """

    state_dim: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    transition: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "custom"

    def __post_init__(self):
        if int(self.state_dim) < 1:
            raise ValueError(f"state_dim must be positive, got {self.state_dim}")
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != self.state_dim or len(self.upper) != self.state_dim:
            raise ValueError(
                f"domain bounds have dimension {len(self.lower)}/{len(self.upper)}, "
                f"expected {self.state_dim}"
            )

    def step(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.transition(np.asarray(x, dtype=float)), dtype=float)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "state_dim": self.state_dim,
            "lower": list(self.lower),
            "upper": list(self.upper),
        }


def rk4_step(vector_field, x, h):
    """One classical fourth-order Runge-Kutta step of size ``h``."""
    k1 = vector_field(x)
    k2 = vector_field(x + (h / 2) * k1)
    k3 = vector_field(x + (h / 2) * k2)
    k4 = vector_field(x + h * k3)
    return x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True)
class OdeSampledSystem(DiscreteSystem):
    """Flow of an autonomous ODE sampled every ``dt`` time units.

    One discrete step is ``substeps`` RK4 steps of size ``dt / substeps``.
    """

    vector_field: Callable[[np.ndarray], np.ndarray] = field(default=None, kw_only=True)
    dt: float = field(default=0.1, kw_only=True)
    substeps: int = field(default=10, kw_only=True)

    def __post_init__(self):
        super().__post_init__()
        if self.transition is not None:
            raise ValueError("an ODE-sampled system is defined by its vector field")
        if self.vector_field is None:
            raise ValueError("vector_field is required")
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError(f"substeps must be a positive integer, got {self.substeps}")

    def step(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        h = self.dt / self.substeps
        for _ in range(self.substeps):
            x = rk4_step(self.vector_field, x, h)
        return x

    def describe(self) -> dict:
        out = super().describe()
        out.update(dt=self.dt, substeps=self.substeps)
        return out


def duffing_vector_field(x):
    # x'' = x - x^3 with x1 = x, x2 = x'; cube written as products so that
    # scalar and batched evaluation round identically
    x1, x2 = x[0], x[1]
    return np.stack([x2, x1 - x1 * x1 * x1])


def duffing_energy(x):
    """Conserved energy ``x2^2/2 - x1^2/2 + x1^4/4`` of the undamped oscillator."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x[1] ** 2 - 0.5 * x[0] ** 2 + 0.25 * x[0] ** 4


def duffing_system(dt: float = 0.1, substeps: int = 10,
                   lower=(-1.0, -1.0), upper=(1.0, 1.0)) -> OdeSampledSystem:
    """Unforced, undamped Duffing oscillator sampled at ``dt``."""
    if not isinstance(substeps, (int, np.integer)) or isinstance(substeps, bool):
        raise ValueError(f"substeps must be an integer, got {substeps!r}")
    return OdeSampledSystem(
        state_dim=2,
        lower=lower,
        upper=upper,
        name="duffing",
        vector_field=duffing_vector_field,
        dt=float(dt),
        substeps=int(substeps),
    )


def identity_system(state_dim: int = 2, lower=None, upper=None) -> DiscreteSystem:
    lower = (-1.0,) * state_dim if lower is None else lower
    upper = (1.0,) * state_dim if upper is None else upper
    return DiscreteSystem(state_dim, lower, upper,
                          transition=lambda x: np.array(x, dtype=float), name="identity")


#: Default coefficients for ``polynomial_map_system``: the map
#: ``(x1, x2) -> (0.9 x1, 0.5 x2 + 0.31 x1^2)``.
DEFAULT_POLYNOMIAL_TERMS = (
    ((0.9, (1, 0)),),
    ((0.5, (0, 1)), (0.31, (2, 0))),
)


def polynomial_map_system(terms: Sequence = DEFAULT_POLYNOMIAL_TERMS,
                          lower=None, upper=None) -> DiscreteSystem:
    """Polynomial map given as one list of ``(coefficient, exponents)`` per output.

    With the default terms the span of ``{1, x1, x2, x1^2}`` is invariant under
    the composition operator, which makes it a convenient sanity case.
    """
    terms = tuple(tuple((float(c), tuple(int(e) for e in exps)) for c, exps in row)
                  for row in terms)
    n = len(terms)
    if n == 0:
        raise ValueError("polynomial map needs at least one output coordinate")
    for row in terms:
        for _, exps in row:
            if len(exps) != n or any(e < 0 for e in exps):
                raise ValueError(f"invalid exponent tuple {exps} for a {n}-state map")

    def transition(x):
        rows = []
        for row in terms:
            acc = np.zeros_like(x[0])
            for coef, exps in row:
                mono = np.ones_like(x[0])
                for i, e in enumerate(exps):
                    for _ in range(e):
                        mono = mono * x[i]
                acc = acc + coef * mono
            rows.append(acc)
        return np.stack(rows)

    lower = (-1.0,) * n if lower is None else lower
    upper = (1.0,) * n if upper is None else upper
    return DiscreteSystem(n, lower, upper, transition=transition,
                          name="custom-polynomial-map")


def _check_states(x, step, trajectory=None):
    norms = np.sqrt(np.sum(x * x, axis=0))
    bad = ~np.isfinite(norms) | (norms > DIVERGENCE_THRESHOLD)
    if np.any(bad):
        where = ""
        if trajectory is None and np.ndim(bad) > 0:
            trajectory = int(np.flatnonzero(bad)[0])
        if trajectory is not None:
            where = f" in trajectory {trajectory}"
        raise DivergenceError(f"state diverged at step {step}{where}",
                              step=step, trajectory=trajectory)


def rollout(system: DiscreteSystem, x0, horizon: int) -> np.ndarray:
    """Iterate ``system`` from ``x0`` for ``horizon`` steps.

    Returns
    -------
    np.ndarray
        Array of shape ``(horizon + 1, n)`` (or ``(horizon + 1, n, L)`` for a
        batch of initial states given as columns).

    Raises
    ------
    DivergenceError
        If a state becomes non-finite or leaves the ball of radius
        ``DIVERGENCE_THRESHOLD``; ``step`` is the index of the offending state.
    """
    x = np.array(x0, dtype=float)
    if x.shape[0] != system.state_dim:
        raise ValueError(f"initial state has dimension {x.shape[0]}, "
                         f"expected {system.state_dim}")
    if int(horizon) < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    out = np.empty((horizon + 1,) + x.shape)
    out[0] = x
    for t in range(horizon):
        x = system.step(x)
        _check_states(x, t + 1)
        out[t + 1] = x
    return out
