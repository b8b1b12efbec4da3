"""Graded monomial dictionaries."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np


@dataclass(frozen=True)
class Dictionary:
    """All monomials of total degree at most ``max_degree`` in ``state_dim`` variables.

    Monomials are ordered by total degree, and within one degree
    lexicographically with the exponent of ``x1`` decreasing first, e.g. for
    two variables and degree 2: ``1, x1, x2, x1^2, x1 x2, x2^2``.

    Attributes
    ----------
    exponents : tuple of tuple of int
        One multi-index per dictionary function.
    constant_index : int
        Position of the constant function (always 0 in this ordering).
    """

    state_dim: int
    max_degree: int
    exponents: tuple[tuple[int, ...], ...]
    constant_index: int = 0
    ordering: str = "grlex"

    @property
    def size(self) -> int:
        return len(self.exponents)

    def __len__(self):
        return self.size

    def lift(self, x) -> np.ndarray:
        """Evaluate the dictionary on one state, returning a vector of length ``m``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.state_dim,):
            raise ValueError(f"state has shape {x.shape}, expected ({self.state_dim},)")
        return self._evaluate(x[:, None])[:, 0]

    def lift_batch(self, states) -> np.ndarray:
        """Evaluate on ``L`` states given as rows of an ``(L, n)`` array.

        Returns the ``m x L`` snapshot matrix with one lifted state per column.
        """
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or states.shape[1] != self.state_dim:
            raise ValueError(f"states have shape {states.shape}, "
                             f"expected (L, {self.state_dim})")
        return self._evaluate(states.T)

    def _evaluate(self, cols: np.ndarray) -> np.ndarray:
        # powers[k, i, :] = x_i ** k by repeated multiplication
        d, n = self.max_degree, self.state_dim
        powers = np.empty((d + 1, n, cols.shape[1]))
        powers[0] = 1.0
        for k in range(1, d + 1):
            powers[k] = powers[k - 1] * cols
        out = np.empty((self.size, cols.shape[1]))
        for row, alpha in enumerate(self.exponents):
            value = powers[alpha[0], 0]
            for i in range(1, n):
                value = value * powers[alpha[i], i]
            out[row] = value
        return out

    def describe(self) -> dict:
        return {"state_dim": self.state_dim, "max_degree": self.max_degree,
                "ordering": self.ordering}


def graded_exponents(state_dim: int, max_degree: int):
    exponents = []
    for degree in range(max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(state_dim), degree):
            alpha = [0] * state_dim
            for i in combo:
                alpha[i] += 1
            exponents.append(tuple(alpha))
    return tuple(exponents)


def monomial_dictionary(state_dim: int, max_degree: int) -> Dictionary:
    """Build the graded monomial dictionary; it has ``comb(n + d, d)`` elements."""
    if int(state_dim) != state_dim or state_dim < 1:
        raise ValueError(f"state_dim must be a positive integer, got {state_dim}")
    if int(max_degree) != max_degree or max_degree < 1:
        raise ValueError(f"max_degree must be a positive integer, got {max_degree}")
    exponents = graded_exponents(int(state_dim), int(max_degree))
    assert len(exponents) == comb(state_dim + max_degree, max_degree)
    return Dictionary(int(state_dim), int(max_degree), exponents, constant_index=0)


def dictionary_size(state_dim: int, max_degree: int) -> int:
    return comb(state_dim + max_degree, max_degree)
