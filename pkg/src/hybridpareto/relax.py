"""Hybrid scalar problem and its two moment relaxation families.

For a parameter point ``z`` the hybrid problem is

    min lam.f(x)  s.t.  g_i(x) <= 0,  f_j(x) <= f_j(z).

Family ``Q`` localizes every constraint (one PSD block per g_i and f_j);
family ``P`` keeps only the moment matrix PSD, imposes the constraints as
scalar inequalities on the moments, and adds a single localizing block for
the level set ``lam.f(x) <= lam.f(z)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .moments import basis_size, half_degree, localization_tensor, poly_to_vector
from .poly import MooProblem, Polynomial, evaluate, weighted_sum
from .sdp import PsdBlock, ScalarIneq, SdpInstance

__all__ = [
    "Family",
    "HybridProblem",
    "RelaxationSpec",
    "relaxation_spec",
    "min_order",
    "build_q",
    "build_p",
    "build",
    "feasibility_check",
]


class Family(str, enum.Enum):
    Q = "Q"
    P = "P"


@dataclass(frozen=True, eq=False)
class HybridProblem:
    base: MooProblem
    z: np.ndarray
    fz: np.ndarray = field(init=False)
    lam_fz: float = field(init=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(-1)
        if z.shape[0] != self.base.n:
            raise ValueError(f"z has length {z.shape[0]}, problem has {self.base.n} variables")
        z.setflags(write=False)
        fz = self.base.values(z)
        fz.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "fz", fz)
        object.__setattr__(self, "lam_fz", float(self.base.lam @ fz))

    @property
    def n(self) -> int:
        return self.base.n

    def level_constraints(self) -> list[Polynomial]:
        """``f_j - f_j(z)``, each required ``<= 0``."""
        return [f - c for f, c in zip(self.base.objectives, self.fz)]

    def scalar_objective(self, lam=None) -> Polynomial:
        return weighted_sum(self.base, lam)


@dataclass(frozen=True)
class RelaxationSpec:
    family: Family
    k: int
    r: tuple[int, ...]
    d: tuple[int, ...]
    k0: int
    d_f: int

    @property
    def order(self) -> int:
        return 2 * self.k


def min_order(problem: MooProblem) -> int:
    """Smallest admissible relaxation order ``k0 = max(max_i r_i, max_j d_j)``."""
    r = [half_degree(g) for g in problem.constraints]
    d = [half_degree(f) for f in problem.objectives]
    # at least 1 so that first-order moments (the candidate point) exist
    return max(max(r, default=0), max(d), 1)


def relaxation_spec(problem: MooProblem, family: Family | str, k: int | None = None) -> RelaxationSpec:
    r = tuple(half_degree(g) for g in problem.constraints)
    d = tuple(half_degree(f) for f in problem.objectives)
    d_f = max(d)
    k0 = min_order(problem)
    k = k0 if k is None else k
    if k < k0:
        raise ValueError(f"relaxation order k={k} is below k0={k0}")
    return RelaxationSpec(Family(family), k, r, d, k0, d_f)


def _objective(hp: HybridProblem, lam, order: int) -> tuple[np.ndarray, float]:
    c = poly_to_vector(hp.scalar_objective(lam), order)
    c0 = c[0]
    c[0] = 0.0
    return c, c0


def _block(p: Polynomial, d: int, order: int, tag) -> PsdBlock:
    return PsdBlock(localization_tensor(p, d, order), tag=tag)


def build_q(hp: HybridProblem, lam=None, k: int | None = None) -> SdpInstance:
    """Moment relaxation localizing ``-g_i`` (with ``g_0 = 1``) and ``f_j(z) - f_j``."""
    base = hp.base
    spec = relaxation_spec(base, Family.Q, k)
    N = basis_size(hp.n, spec.order)
    c, c0 = _objective(hp, lam, spec.order)
    one = Polynomial.constant(hp.n, 1.0)
    blocks = [_block(one, spec.k, spec.order, ("moment",))]
    for i, (g, ri) in enumerate(zip(base.constraints, spec.r)):
        blocks.append(_block(-g, spec.k - ri, spec.order, ("g", i)))
    for j, (h, dj) in enumerate(zip(hp.level_constraints(), spec.d)):
        blocks.append(_block(-h, spec.k - dj, spec.order, ("f", j)))
    return SdpInstance(N, c, c0, tuple(blocks), (), ((0, 1.0),))


def build_p(hp: HybridProblem, lam=None, k: int | None = None, level: float | None = None) -> SdpInstance:
    """Moment relaxation with scalar constraint moments and one ``lam.f`` level block.

    ``level`` overrides the constant ``lam.f(z)`` in the localizing block
    ``M_{k-d_f}((level - lam.f) y)``; by default it is computed from ``z``.
    """
    base = hp.base
    spec = relaxation_spec(base, Family.P, k)
    N = basis_size(hp.n, spec.order)
    c, c0 = _objective(hp, lam, spec.order)
    lam_vec = base.lam if lam is None else np.asarray(lam, dtype=float)
    one = Polynomial.constant(hp.n, 1.0)
    ineqs = []
    for i, g in enumerate(base.constraints):
        a = poly_to_vector(g, spec.order)
        ineqs.append(ScalarIneq(a, 0.0, tag=("g", i)))
    for j, h in enumerate(hp.level_constraints()):
        a = poly_to_vector(h, spec.order)
        a0, a[0] = a[0], 0.0
        ineqs.append(ScalarIneq(a, a0, tag=("f", j)))
    lam_f = weighted_sum(base, lam_vec)
    level = float(lam_vec @ hp.fz) if level is None else float(level)
    blocks = [
        _block(one, spec.k, spec.order, ("moment",)),
        _block(level - lam_f, spec.k - spec.d_f, spec.order, ("level", level)),
    ]
    return SdpInstance(N, c, c0, tuple(blocks), tuple(ineqs), ((0, 1.0),))


def build(hp: HybridProblem, family: Family | str, lam=None, k: int | None = None) -> SdpInstance:
    return (build_q if Family(family) is Family.Q else build_p)(hp, lam, k)


def feasibility_check(hp: HybridProblem, x, tol: float = 1e-9) -> bool:
    """Membership of ``x`` in the hybrid feasible set, with slack ``tol`` on every constraint."""
    x = np.asarray(x, dtype=float)
    if any(evaluate(g, x) > tol for g in hp.base.constraints):
        return False
    return bool(np.all(hp.base.values(x) <= hp.fz + tol))
