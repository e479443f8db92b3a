"""Sparse multivariate polynomials over the reals and the multi-objective problem model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]

__all__ = [
    "Exponent",
    "Polynomial",
    "MooProblem",
    "grlex_key",
    "evaluate",
    "evaluate_many",
    "gradient",
    "hessian",
    "weighted_sum",
    "is_positive_definite",
]


def grlex_key(alpha: Exponent) -> tuple:
    """Sort key giving the graded order 1, x1, ..., xn, x1^2, x1 x2, ..., xn^d."""
    return (sum(alpha), tuple(-a for a in alpha))


def _check_exponent(alpha: Sequence[int], n: int) -> Exponent:
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != n:
        raise ValueError(f"exponent {alpha} has length {len(alpha)}, expected {n}")
    if any(a < 0 for a in alpha):
        raise ValueError(f"exponent {alpha} has a negative entry")
    return alpha


class Polynomial:
    """Immutable sparse polynomial in ``n`` variables.

    Terms are stored as a mapping from exponent tuples to nonzero float
    coefficients. Every arithmetic operation returns a new polynomial with
    zero coefficients pruned, so two polynomials compare equal exactly when
    their term maps agree.

    Parameters
    ----------
    n : int
        Number of variables.
    terms : mapping, optional
        Exponent tuple -> coefficient. Repeated keys are not possible in a
        mapping; use :meth:`from_terms` to accumulate an iterable of pairs.
    """

    __slots__ = ("_n", "_terms", "_degree")

    def __init__(self, n: int, terms: Mapping[Sequence[int], float] | None = None):
        if n < 1:
            raise ValueError("a polynomial needs at least one variable")
        clean: dict[Exponent, float] = {}
        for alpha, c in (terms or {}).items():
            alpha = _check_exponent(alpha, n)
            c = float(c)
            if not math.isfinite(c):
                raise ValueError(f"non-finite coefficient {c} for {alpha}")
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
        self._n = n
        self._terms = {a: clean[a] for a in sorted(clean, key=grlex_key) if clean[a] != 0.0}
        self._degree = max((sum(a) for a in self._terms), default=0)

    @classmethod
    def from_terms(cls, n: int, pairs: Iterable[tuple[Sequence[int], float]]) -> "Polynomial":
        acc: dict[Exponent, float] = {}
        for alpha, c in pairs:
            alpha = _check_exponent(alpha, n)
            acc[alpha] = acc.get(alpha, 0.0) + float(c)
        return cls(n, acc)

    @classmethod
    def constant(cls, n: int, c: float) -> "Polynomial":
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n: int, i: int) -> "Polynomial":
        """The coordinate polynomial ``x_{i+1}`` (``i`` is zero based)."""
        alpha = [0] * n
        alpha[i] = 1
        return cls(n, {tuple(alpha): 1.0})

    @classmethod
    def variables(cls, n: int) -> list["Polynomial"]:
        return [cls.variable(n, i) for i in range(n)]

    @property
    def n(self) -> int:
        return self._n

    @property
    def terms(self) -> dict[Exponent, float]:
        return dict(self._terms)

    @property
    def degree(self) -> int:
        return self._degree

    def is_zero(self) -> bool:
        return not self._terms

    def coeff(self, alpha: Sequence[int]) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms)

    # arithmetic

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other._n != self._n:
                raise ValueError(f"variable count mismatch: {self._n} vs {other._n}")
            return other
        if isinstance(other, (int, float, np.integer, np.floating)):
            return Polynomial.constant(self._n, float(other))
        return NotImplemented

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        acc = dict(self._terms)
        for a, c in other._terms.items():
            acc[a] = acc.get(a, 0.0) + c
        return Polynomial(self._n, acc)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self._n, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.integer, np.floating)):
            return Polynomial(self._n, {a: c * float(other) for a, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        acc: dict[Exponent, float] = {}
        for a, ca in self._terms.items():
            for b, cb in other._terms.items():
                ab = tuple(i + j for i, j in zip(a, b))
                acc[ab] = acc.get(ab, 0.0) + ca * cb
        return Polynomial(self._n, acc)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Polynomial":
        if not isinstance(other, (int, float, np.integer, np.floating)):
            return NotImplemented
        return self * (1.0 / float(other))

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("polynomial powers must be non-negative integers")
        out = Polynomial.constant(self._n, 1.0)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self._n, float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._n == other._n and self._terms == other._terms

    def __hash__(self) -> int:
        return hash((self._n, tuple(self._terms.items())))

    def __repr__(self) -> str:
        return f"Polynomial({self._n}, {self._terms!r})"

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for alpha, c in self._terms.items():
            mono = "*".join(
                f"x{i + 1}" if a == 1 else f"x{i + 1}^{a}" for i, a in enumerate(alpha) if a
            )
            if not mono:
                parts.append(f"{c:g}")
            elif c == 1.0:
                parts.append(mono)
            elif c == -1.0:
                parts.append(f"-{mono}")
            else:
                parts.append(f"{c:g}*{mono}")
        return " + ".join(parts).replace("+ -", "- ")

    # calculus

    def diff(self, i: int) -> "Polynomial":
        """Partial derivative with respect to ``x_{i+1}``."""
        acc: dict[Exponent, float] = {}
        for a, c in self._terms.items():
            if a[i]:
                b = list(a)
                b[i] -= 1
                acc[tuple(b)] = c * a[i]
        return Polynomial(self._n, acc)

    def gradient_polys(self) -> list["Polynomial"]:
        return [self.diff(i) for i in range(self._n)]

    def hessian_polys(self) -> list[list["Polynomial"]]:
        grads = self.gradient_polys()
        return [[grads[i].diff(j) for j in range(self._n)] for i in range(self._n)]

    def __call__(self, point) -> float:
        return evaluate(self, point)

    def max_abs_coeff(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)


def _as_point(poly: Polynomial, point) -> np.ndarray:
    x = np.asarray(point, dtype=float).reshape(-1)
    if x.shape[0] != poly.n:
        raise ValueError(f"point has length {x.shape[0]}, polynomial has {poly.n} variables")
    return x


def evaluate(poly: Polynomial, point) -> float:
    x = _as_point(poly, point)
    total = 0.0
    for alpha, c in poly.items():
        term = c
        for xi, a in zip(x, alpha):
            if a:
                term *= xi**a
        total += term
    return float(total)


def evaluate_many(poly: Polynomial, points) -> np.ndarray:
    """Values at each row of the ``(m, n)`` array ``points``."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[1] != poly.n:
        raise ValueError(f"points have {X.shape[1]} columns, polynomial has {poly.n} variables")
    if poly.is_zero():
        return np.zeros(X.shape[0])
    E = np.array(list(poly.terms), dtype=int)
    c = np.array(list(poly.terms.values()))
    return np.prod(X[:, None, :] ** E[None, :, :], axis=2) @ c


def gradient(poly: Polynomial, point) -> np.ndarray:
    x = _as_point(poly, point)
    return np.array([evaluate(g, x) for g in poly.gradient_polys()])


def hessian(poly: Polynomial, point) -> np.ndarray:
    x = _as_point(poly, point)
    n = poly.n
    grads = poly.gradient_polys()
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            H[i, j] = H[j, i] = evaluate(grads[i].diff(j), x)
    return H


def is_positive_definite(matrix, tol: float = 1e-8) -> bool:
    """True iff the smallest eigenvalue of the symmetric ``matrix`` exceeds ``tol``."""
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    asym = np.max(np.abs(A - A.T)) if A.size else 0.0
    if asym > max(tol, 1e-12) * max(1.0, np.max(np.abs(A))):
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
    return bool(np.linalg.eigvalsh(0.5 * (A + A.T))[0] > tol)


@dataclass(frozen=True)
class MooProblem:
    """Convex multi-objective polynomial problem ``min f(x)`` s.t. ``g_i(x) <= 0``.

    ``lam`` is the fixed weight vector of the hybrid scalarization and must
    lie in the interior of the nonnegative orthant.
    """

    n: int
    objectives: tuple[Polynomial, ...]
    constraints: tuple[Polynomial, ...] = ()
    lam: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        objs = tuple(self.objectives)
        cons = tuple(self.constraints)
        if not objs:
            raise ValueError("need at least one objective")
        for q in objs + cons:
            if q.n != self.n:
                raise ValueError(f"polynomial has {q.n} variables, problem has {self.n}")
        lam = np.ones(len(objs)) if self.lam is None else np.asarray(self.lam, dtype=float).reshape(-1)
        if lam.shape[0] != len(objs):
            raise ValueError(f"lambda has {lam.shape[0]} entries for {len(objs)} objectives")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("lambda must be strictly positive")
        lam = lam.copy()
        lam.setflags(write=False)
        object.__setattr__(self, "objectives", objs)
        object.__setattr__(self, "constraints", cons)
        object.__setattr__(self, "lam", lam)

    @property
    def p(self) -> int:
        return len(self.objectives)

    @property
    def m(self) -> int:
        return len(self.constraints)

    def with_lambda(self, lam) -> "MooProblem":
        return MooProblem(self.n, self.objectives, self.constraints, lam)

    def values(self, x) -> np.ndarray:
        return np.array([evaluate(f, x) for f in self.objectives])

    def constraint_values(self, x) -> np.ndarray:
        return np.array([evaluate(g, x) for g in self.constraints])

    def in_feasible_set(self, x, tol: float = 0.0) -> bool:
        return bool(np.all(self.constraint_values(x) <= tol))

    def feasible_mask(self, points, tol: float = 0.0) -> np.ndarray:
        """Row-wise :meth:`in_feasible_set` for an ``(m, n)`` array."""
        X = np.atleast_2d(np.asarray(points, dtype=float))
        mask = np.ones(X.shape[0], dtype=bool)
        for g in self.constraints:
            mask &= evaluate_many(g, X) <= tol
        return mask

    def __eq__(self, other) -> bool:
        if not isinstance(other, MooProblem):
            return NotImplemented
        return (
            self.n == other.n
            and self.objectives == other.objectives
            and self.constraints == other.constraints
            and np.array_equal(self.lam, other.lam)
        )

    __hash__ = None  # type: ignore[assignment]


def weighted_sum(problem: MooProblem, lam=None) -> Polynomial:
    """Return ``sum_j lam_j f_j``, using the problem's own weights by default."""
    lam = problem.lam if lam is None else np.asarray(lam, dtype=float)
    acc: dict[Exponent, float] = {}
    for w, f in zip(lam, problem.objectives):
        for a, c in f.items():
            acc[a] = acc.get(a, 0.0) + float(w) * c
    return Polynomial(problem.n, acc)
