"""Rank tests on moment matrices, atom extraction, and SOS certificate recovery."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .moments import MomentVector, basis, basis_size, moment_matrix
from .poly import Polynomial, weighted_sum
from .relax import Family, HybridProblem
from .sdp import SdpInstance, SdpSolution, Status, _dual_value

logger = logging.getLogger(__name__)

__all__ = [
    "ExtractionFailed",
    "CertificateRejected",
    "RankProfile",
    "GramSos",
    "SosCertificate",
    "numeric_rank",
    "rank_profile",
    "check_flat_truncation",
    "extract_atoms",
    "recover_certificate",
]

RANK_TOL = 1e-4


class ExtractionFailed(RuntimeError):
    pass


class CertificateRejected(RuntimeError):
    def __init__(self, residual: float, message: str = ""):
        super().__init__(message or f"certificate identity residual {residual:.3g} exceeds tolerance")
        self.residual = residual


def numeric_rank(matrix, tol_rel: float = RANK_TOL) -> int:
    """Number of eigenvalues above ``tol_rel * max(largest eigenvalue, 1)``."""
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    w = np.linalg.eigvalsh(0.5 * (A + A.T))
    return int(np.sum(w > tol_rel * max(w[-1], 1.0)))


@dataclass
class RankProfile:
    ranks: list[tuple[int, int]]
    t: int | None = None

    def rank(self, t: int) -> int:
        return dict(self.ranks)[t]


def rank_profile(y: MomentVector, k: int, k0: int, tol_rel: float = RANK_TOL) -> RankProfile:
    """Ranks of ``M_t(y)`` for ``t = 0..k`` and the smallest flat order ``t`` in ``[k0, k]``."""
    if 2 * k > y.order:
        raise ValueError(f"order-{y.order} moments cannot form M_{k}")
    if k < k0:
        raise ValueError(f"k={k} is below k0={k0}")
    ranks = [(t, numeric_rank(moment_matrix(y, t), tol_rel)) for t in range(k + 1)]
    r = dict(ranks)
    flat = next((t for t in range(k0, k + 1) if r[t] == r[t - k0]), None)
    return RankProfile(ranks, flat)


def check_flat_truncation(y: MomentVector, k: int, k0: int, tol_rel: float = RANK_TOL) -> int | None:
    return rank_profile(y, k, k0, tol_rel).t


def _column_echelon(V: np.ndarray, tol: float) -> tuple[np.ndarray, list[int]]:
    """Reduced column echelon form of ``V`` (rows in basis order) with partial pivoting."""
    U = V.copy()
    s, r = U.shape
    pivots: list[int] = []
    col = 0
    for i in range(s):
        if col == r:
            break
        j = col + int(np.argmax(np.abs(U[i, col:])))
        if abs(U[i, j]) <= tol:
            U[i, col:] = 0.0
            continue
        U[:, [col, j]] = U[:, [j, col]]
        U[:, col] /= U[i, col]
        for jj in range(r):
            if jj != col:
                U[:, jj] -= U[i, jj] * U[:, col]
        pivots.append(i)
        col += 1
    if col < r:
        raise ExtractionFailed(f"echelon form found only {col} of {r} pivots")
    return U, pivots


def extract_atoms(
    y: MomentVector,
    t: int,
    k0: int = 1,
    tol_rel: float = RANK_TOL,
    pivot_tol: float = 1e-6,
    seed: int = 0,
    retries: int = 3,
) -> list[np.ndarray]:
    """Points of the atomic measure represented by a flat moment matrix ``M_t(y)``.

    Rank one is read off the first-order moments. Higher ranks use the
    Henrion-Lasserre procedure: factor ``M_t = V V^T``, reduce ``V`` to column
    echelon form, build one multiplication matrix per variable on the pivot
    monomials, and diagonalize a random convex combination of them by an
    ordered real Schur decomposition.
    """
    M = moment_matrix(y, t)
    w, Q = np.linalg.eigh(0.5 * (M + M.T))
    r = int(np.sum(w > tol_rel * max(w[-1], 1.0)))
    if r == 0:
        raise ExtractionFailed("moment matrix is numerically zero")
    if r == 1:
        return [y.first_order()]

    V = Q[:, -r:] * np.sqrt(w[-r:])
    U, pivots = _column_echelon(V, pivot_tol * np.linalg.norm(V, 2))
    B = basis(y.n, t)
    piv_exps = [B[i] for i in pivots]
    if max(sum(e) for e in piv_exps) >= t:
        raise ExtractionFailed("pivot monomials reach the top degree; moment matrix is not flat")

    mult = []
    for i in range(y.n):
        rows = []
        for e in piv_exps:
            shifted = list(e)
            shifted[i] += 1
            rows.append(B.index[tuple(shifted)])
        mult.append(U[rows, :])

    rng = np.random.default_rng(seed)
    for attempt in range(retries + 1):
        c = rng.random(y.n) + 0.1
        c /= c.sum()
        N = sum(ci * Ni for ci, Ni in zip(c, mult))
        T, Z = scipy.linalg.schur(N, output="real")
        if np.any(np.abs(np.diag(T, -1)) > 1e-8 * max(1.0, np.abs(T).max())):
            logger.debug("complex eigenvalues in combination %d, retrying", attempt)
            continue
        eig = np.diag(T)
        if r > 1 and np.min(np.diff(np.sort(eig))) < 1e-8 * max(1.0, np.abs(eig).max()):
            logger.debug("repeated eigenvalues in combination %d, retrying", attempt)
            continue
        atoms = [np.array([Z[:, j] @ Ni @ Z[:, j] for Ni in mult]) for j in range(r)]
        return sorted(atoms, key=lambda a: tuple(a))
    raise ExtractionFailed(f"joint diagonalization failed after {retries + 1} attempts")


@dataclass
class GramSos:
    """SOS polynomial ``v_d(x)^T G v_d(x)`` with its Gram matrix."""

    label: str
    n: int
    d: int
    gram: np.ndarray

    @property
    def exponents(self):
        return basis(self.n, self.d).exponents

    def polynomial(self) -> Polynomial:
        E = self.exponents
        acc: dict = {}
        for i, a in enumerate(E):
            for j, b in enumerate(E):
                if self.gram[i, j] != 0.0:
                    ab = tuple(p + q for p, q in zip(a, b))
                    acc[ab] = acc.get(ab, 0.0) + self.gram[i, j]
        return Polynomial(self.n, acc)

    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.gram)[0])

    def to_dict(self) -> dict:
        return {
            "kind": "sos",
            "label": self.label,
            "basis": [list(e) for e in self.exponents],
            "gram": self.gram.tolist(),
        }


@dataclass
class SosCertificate:
    """Identity ``lam.f - gamma = sigma0 + sum(multiplier * constraint polynomial)`` from dual data."""

    family: Family
    gamma: float
    sigma0: GramSos
    sos_multipliers: list[tuple[GramSos, Polynomial]] = field(default_factory=list)
    scalar_multipliers: list[tuple[str, float, Polynomial]] = field(default_factory=list)
    residual: float = float("nan")

    def rhs(self) -> Polynomial:
        out = self.sigma0.polynomial()
        for sos, p in self.sos_multipliers:
            out = out + sos.polynomial() * p
        for _, m, q in self.scalar_multipliers:
            out = out - m * q
        return out

    def min_gram_eig_ratio(self) -> float:
        """Worst ``min eig / (1 + trace)`` over all Gram matrices."""
        grams = [self.sigma0] + [s for s, _ in self.sos_multipliers]
        return min(g.min_eig() / (1.0 + float(np.trace(g.gram))) for g in grams)

    def to_dict(self) -> dict:
        mults = [dict(sos.to_dict(), times=_poly_terms(p)) for sos, p in self.sos_multipliers]
        mults += [
            {"kind": "scalar", "label": lab, "value": m, "times": _poly_terms(-q)}
            for lab, m, q in self.scalar_multipliers
        ]
        return {
            "family": self.family.value,
            "gamma": self.gamma,
            "residual": self.residual,
            "sigma0": self.sigma0.to_dict(),
            "multipliers": mults,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _poly_terms(p: Polynomial) -> list[dict]:
    return [{"exponents": list(a), "coeff": c} for a, c in p.items()]


def _order_of(n: int, size: int) -> int:
    d = 0
    while basis_size(n, d) < size:
        d += 1
    if basis_size(n, d) != size:
        raise ValueError(f"block size {size} is not a basis size for n={n}")
    return d


def recover_certificate(
    inst: SdpInstance,
    sol: SdpSolution,
    family: Family | str,
    hp: HybridProblem,
    lam=None,
    k: int | None = None,
    tol: float = 1e-5,
    gram_tol: float = 1e-7,
) -> SosCertificate:
    """Turn the dual blocks of an optimal relaxation solve into an SOS identity and check it.

    Each PSD dual becomes a Gram matrix on the basis of its block order; the
    polynomial it multiplies is rebuilt from ``hp`` (not from the instance
    data), so the residual is an independent check of the dual solution.
    """
    if sol.status is not Status.OPTIMAL:
        raise ValueError(f"certificate recovery needs an optimal solve, got {sol.status.value}")
    family = Family(family)
    n = hp.n
    lam_vec = hp.base.lam if lam is None else np.asarray(lam, dtype=float)
    target = weighted_sum(hp.base, lam_vec)
    gamma = _dual_value(inst, sol.dual_scalar, sol.dual_psd)

    sigma0 = None
    sos_mults: list[tuple[GramSos, Polynomial]] = []
    for blk, Z in zip(inst.psd_blocks, sol.dual_psd):
        kind = blk.tag[0] if blk.tag else None
        d = _order_of(n, blk.size)
        if kind == "moment":
            sigma0 = GramSos("sigma0", n, d, Z)
            continue
        if kind == "g":
            i = blk.tag[1]
            sos_mults.append((GramSos(f"sigma_g{i + 1}", n, d, Z), -hp.base.constraints[i]))
        elif kind == "f":
            j = blk.tag[1]
            sos_mults.append((GramSos(f"sigma_f{j + 1}", n, d, Z), float(hp.fz[j]) - hp.base.objectives[j]))
        elif kind == "level":
            sos_mults.append((GramSos("sigma_level", n, d, Z), blk.tag[1] - target))
        else:
            raise ValueError(f"block tag {blk.tag!r} has no certificate meaning")
    if sigma0 is None:
        raise ValueError("instance has no moment-matrix block")

    scalars = []
    for a, m in zip(inst.scalar_ineqs, sol.dual_scalar):
        kind, idx = a.tag
        if kind == "g":
            scalars.append((f"mu{idx + 1}", float(m), hp.base.constraints[idx]))
        elif kind == "f":
            scalars.append((f"nu{idx + 1}", float(m), hp.base.objectives[idx] - hp.fz[idx]))
        else:
            raise ValueError(f"scalar tag {a.tag!r} has no certificate meaning")

    cert = SosCertificate(family, gamma, sigma0, sos_mults, scalars)
    diff = cert.rhs() - (target - gamma)
    cert.residual = diff.max_abs_coeff()
    bound = tol * (1.0 + target.max_abs_coeff())
    if cert.residual > bound:
        raise CertificateRejected(cert.residual)
    if any(m < -gram_tol for _, m, _ in scalars):
        raise CertificateRejected(cert.residual, "negative scalar multiplier")
    if cert.min_gram_eig_ratio() < -gram_tol:
        raise CertificateRejected(cert.residual, "Gram matrix is not PSD within tolerance")
    return cert
