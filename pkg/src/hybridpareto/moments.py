"""Monomial bases, moment vectors, moment and localization matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .poly import Exponent, Polynomial

__all__ = [
    "MonomialBasis",
    "MomentVector",
    "basis",
    "basis_size",
    "half_degree",
    "moment_matrix",
    "localization_matrix",
    "localization_tensor",
    "dirac_moments",
    "poly_to_vector",
]

# exponent entries are plain Python ints; this only guards absurd inputs
MAX_TOTAL_DEGREE = 512


def basis_size(n: int, d: int) -> int:
    return math.comb(n + d, d)


def half_degree(poly: Polynomial) -> int:
    """``ceil(deg p / 2)``, the order shift a polynomial induces in a localizing block."""
    return -(-poly.degree // 2)


def _exponents_of_degree(n: int, d: int) -> list[Exponent]:
    # lex descending inside one degree: x1^d, x1^(d-1) x2, ..., xn^d
    if n == 1:
        return [(d,)]
    out = []
    for a in range(d, -1, -1):
        out.extend((a,) + rest for rest in _exponents_of_degree(n - 1, d - a))
    return out


@dataclass(frozen=True, eq=False)
class MonomialBasis:
    n: int
    d: int
    exponents: tuple[Exponent, ...]
    index: dict

    def __len__(self) -> int:
        return len(self.exponents)

    def __iter__(self):
        return iter(self.exponents)

    def __getitem__(self, i: int) -> Exponent:
        return self.exponents[i]

    def position(self, alpha) -> int:
        try:
            return self.index[tuple(alpha)]
        except KeyError:
            raise KeyError(f"exponent {tuple(alpha)} is not in basis(n={self.n}, d={self.d})") from None

    def evaluate(self, x) -> np.ndarray:
        """The vector ``v_d(x)`` of all basis monomials at ``x``."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.n:
            raise ValueError(f"point has length {x.shape[0]}, basis has {self.n} variables")
        E = np.array(self.exponents, dtype=int)
        return np.prod(x[None, :] ** E, axis=1)


@lru_cache(maxsize=None)
def basis(n: int, d: int) -> MonomialBasis:
    """Graded-lex basis of all exponents in ``n`` variables with total degree ``<= d``."""
    if n < 1 or d < 0:
        raise ValueError(f"basis needs n >= 1 and d >= 0, got n={n}, d={d}")
    if d > MAX_TOTAL_DEGREE:
        raise OverflowError(f"degree {d} exceeds supported maximum {MAX_TOTAL_DEGREE}")
    exps = tuple(e for k in range(d + 1) for e in _exponents_of_degree(n, k))
    return MonomialBasis(n, d, exps, {e: i for i, e in enumerate(exps)})


@dataclass(frozen=True, eq=False)
class MomentVector:
    """Pseudo-moments ``y_alpha`` for all ``|alpha| <= order``, stored in graded-lex order."""

    n: int
    order: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        expected = basis_size(self.n, self.order)
        if vals.shape[0] != expected:
            raise ValueError(f"moment vector of order {self.order} in {self.n} variables needs {expected} entries, got {vals.shape[0]}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def basis(self) -> MonomialBasis:
        return basis(self.n, self.order)

    def __getitem__(self, alpha) -> float:
        return float(self.values[self.basis.position(alpha)])

    def first_order(self) -> np.ndarray:
        """``(y_alpha)_{|alpha| = 1}``, the mean of the underlying (pseudo-)measure."""
        return self.values[1 : self.n + 1].copy()

    def truncate(self, order: int) -> "MomentVector":
        if order > self.order:
            raise ValueError(f"cannot truncate order {self.order} vector to order {order}")
        return MomentVector(self.n, order, self.values[: basis_size(self.n, order)])


def _add(a: Exponent, b: Exponent) -> Exponent:
    return tuple(i + j for i, j in zip(a, b))


@lru_cache(maxsize=None)
def _shift_index(n: int, d: int, shift: Exponent, order: int) -> np.ndarray:
    """Positions of ``alpha + beta + shift`` in ``basis(n, order)`` for alpha, beta in ``basis(n, d)``."""
    rows = basis(n, d)
    full = basis(n, order)
    idx = np.empty((len(rows), len(rows)), dtype=np.intp)
    for i, a in enumerate(rows):
        ag = _add(a, shift)
        for j in range(i, len(rows)):
            idx[i, j] = idx[j, i] = full.index[_add(ag, rows[j])]
    idx.setflags(write=False)
    return idx


def _check_order(needed: int, have: int, what: str):
    if needed > have:
        raise ValueError(f"{what} needs moments up to order {needed}, vector has order {have}")


def moment_matrix(y: MomentVector, d: int) -> np.ndarray:
    """``M_d(y)`` with entry ``(alpha, beta) = y_{alpha+beta}``."""
    if d < 0:
        raise ValueError("moment matrix order must be non-negative")
    _check_order(2 * d, y.order, "moment matrix")
    return y.values[_shift_index(y.n, d, (0,) * y.n, y.order)]


def localization_matrix(p: Polynomial, y: MomentVector, d: int) -> np.ndarray:
    """``M_d(p y)`` with entry ``(alpha, beta) = sum_gamma p_gamma y_{gamma+alpha+beta}``."""
    if p.n != y.n:
        raise ValueError(f"polynomial has {p.n} variables, moments have {y.n}")
    if d < 0:
        raise ValueError("localization matrix order must be non-negative")
    _check_order(2 * d + p.degree, y.order, "localization matrix")
    s = basis_size(y.n, d)
    out = np.zeros((s, s))
    for gamma, c in p.items():
        out += c * y.values[_shift_index(y.n, d, gamma, y.order)]
    return out


def localization_tensor(p: Polynomial, d: int, order: int) -> np.ndarray:
    """Coefficient tensor ``T`` with ``M_d(p y) = sum_i y_i T[i]`` for moment vectors of ``order``.

    Shape is ``(s(order), s(d), s(d))``. With ``p = 1`` this gives the moment matrix map.
    """
    _check_order(2 * d + p.degree, order, "localization matrix")
    n = p.n
    N = basis_size(n, order)
    s = basis_size(n, d)
    T = np.zeros((N, s, s))
    rows, cols = np.indices((s, s))
    for gamma, c in p.items():
        idx = _shift_index(n, d, gamma, order)
        np.add.at(T, (idx, rows, cols), c)
    return T


def dirac_moments(x, order: int) -> MomentVector:
    """Moments ``y_alpha = x^alpha`` of the point mass at ``x`` up to ``order``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return MomentVector(x.shape[0], order, basis(x.shape[0], order).evaluate(x))


def poly_to_vector(p: Polynomial, order: int) -> np.ndarray:
    """Coefficients of ``p`` laid out on ``basis(n, order)``, so ``L_y(p) = vec . y``."""
    if p.degree > order:
        raise ValueError(f"polynomial of degree {p.degree} does not fit order {order}")
    B = basis(p.n, order)
    v = np.zeros(len(B))
    for alpha, c in p.items():
        v[B.index[alpha]] = c
    return v


def vector_to_poly(n: int, order: int, vec) -> Polynomial:
    B = basis(n, order)
    return Polynomial(n, {B[i]: c for i, c in enumerate(np.asarray(vec, dtype=float)) if c != 0.0})
