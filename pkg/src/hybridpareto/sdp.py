"""Linear optimization over block-diagonal PSD cones in primal moment form.

An instance is::

    minimize    c0 + c . y
    subject to  B_k(y) = A0_k + sum_i y_i A_k[i]  >= 0   (PSD, each block k)
                a0_j + a_j . y <= 0                      (each scalar inequality j)
                y_i = v_i                                (pinned entries)

Pinned entries are substituted out and the rest is handed to Clarabel, a
primal-dual interior-point method with Nesterov-Todd scaling on a
homogeneous embedding (it degrades gracefully when Slater's condition
fails, which happens for parameter points whose feasible set is a single
point). If its answer does not pass the checks below, CVXOPT's NT-scaled
conic solver gets the same problem. Scalar inequalities enter as the
nonnegative-orthant part of the cone, i.e. as 1x1 PSD blocks. Dual
variables are returned per block and every reported number (dual
objective, residuals, gap) is recomputed here from the raw iterates rather
than copied from a backend.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "Status",
    "PsdBlock",
    "ScalarIneq",
    "SdpInstance",
    "SdpSolution",
    "SolverOptions",
    "DualityReport",
    "solve",
    "certify_weak_duality",
    "dump_instance",
]


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITER = "MaxIter"
    NUMERICAL_TROUBLE = "NumericalTrouble"


@dataclass(frozen=True, eq=False)
class PsdBlock:
    """Affine symmetric matrix map ``y -> const + sum_i y_i coeffs[i]`` required PSD."""

    coeffs: np.ndarray  # (var_count, s, s)
    const: np.ndarray | None = None  # (s, s), zero when omitted
    tag: tuple = ()

    def __post_init__(self):
        C = np.asarray(self.coeffs, dtype=float)
        if C.ndim != 3 or C.shape[1] != C.shape[2] or C.shape[1] == 0:
            raise ValueError(f"block coefficients must have shape (N, s, s) with s > 0, got {C.shape}")
        if not np.allclose(C, np.swapaxes(C, 1, 2)):
            raise ValueError("block coefficient matrices must be symmetric")
        A0 = np.zeros(C.shape[1:]) if self.const is None else np.asarray(self.const, dtype=float)
        if A0.shape != C.shape[1:] or not np.allclose(A0, A0.T):
            raise ValueError("block constant must be a symmetric matrix matching the block size")
        object.__setattr__(self, "coeffs", C)
        object.__setattr__(self, "const", A0)

    @property
    def size(self) -> int:
        return self.coeffs.shape[1]

    def __call__(self, y) -> np.ndarray:
        return self.const + np.tensordot(np.asarray(y, dtype=float), self.coeffs, axes=1)


@dataclass(frozen=True, eq=False)
class ScalarIneq:
    """Affine functional ``y -> const + coeffs . y`` required ``<= 0``."""

    coeffs: np.ndarray
    const: float = 0.0
    tag: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float).reshape(-1))
        object.__setattr__(self, "const", float(self.const))

    def __call__(self, y) -> float:
        return float(self.const + self.coeffs @ np.asarray(y, dtype=float))


@dataclass(frozen=True, eq=False)
class SdpInstance:
    var_count: int
    objective: np.ndarray
    objective_const: float = 0.0
    psd_blocks: tuple[PsdBlock, ...] = ()
    scalar_ineqs: tuple[ScalarIneq, ...] = ()
    fixed: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).reshape(-1)
        if c.shape[0] != self.var_count:
            raise ValueError(f"objective has {c.shape[0]} entries for {self.var_count} variables")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "psd_blocks", tuple(self.psd_blocks))
        object.__setattr__(self, "scalar_ineqs", tuple(self.scalar_ineqs))
        object.__setattr__(self, "fixed", tuple((int(i), float(v)) for i, v in self.fixed))
        for b in self.psd_blocks:
            if b.coeffs.shape[0] != self.var_count:
                raise ValueError("PSD block coefficient count does not match var_count")
        for a in self.scalar_ineqs:
            if a.coeffs.shape[0] != self.var_count:
                raise ValueError("scalar inequality length does not match var_count")
        seen = set()
        for i, _ in self.fixed:
            if not 0 <= i < self.var_count:
                raise ValueError(f"pinned index {i} out of range")
            if i in seen:
                raise ValueError(f"index {i} pinned twice")
            seen.add(i)

    def objective_value(self, y) -> float:
        return float(self.objective_const + self.objective @ np.asarray(y, dtype=float))

    def scaled(self, t: float) -> "SdpInstance":
        """Same feasible set, objective multiplied by ``t``."""
        return SdpInstance(
            self.var_count, t * self.objective, t * self.objective_const,
            self.psd_blocks, self.scalar_ineqs, self.fixed,
        )

    def primal_violation(self, y) -> dict:
        """Worst-case PSD and scalar violations of ``y`` (0 when feasible)."""
        y = np.asarray(y, dtype=float)
        psd = [
            max(0.0, -float(np.linalg.eigvalsh(b(y))[0])) / (1.0 + np.linalg.norm(b(y)))
            for b in self.psd_blocks
        ]
        scal = [max(0.0, a(y)) for a in self.scalar_ineqs]
        pins = [abs(y[i] - v) for i, v in self.fixed]
        return {
            "psd": max(psd, default=0.0),
            "scalar": max(scal, default=0.0),
            "pinned": max(pins, default=0.0),
        }


@dataclass(frozen=True)
class SolverOptions:
    eps_gap: float = 1e-8
    eps_feas: float = 1e-8
    max_iter: int = 200


@dataclass(eq=False)
class SdpSolution:
    status: Status
    y: np.ndarray | None
    objective: float
    dual_objective: float
    dual_psd: list = field(default_factory=list)
    dual_scalar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gap: float = float("nan")
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    iterations: int = 0
    ray: np.ndarray | None = None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass
class DualityReport:
    primal: float
    dual: float
    gap: float
    stationarity: float
    min_dual_eig: float
    ok: bool
    status: Status


def _free_layout(inst: SdpInstance):
    pinned = dict(inst.fixed)
    free = np.array([i for i in range(inst.var_count) if i not in pinned], dtype=np.intp)
    y_fix = np.zeros(inst.var_count)
    for i, v in pinned.items():
        y_fix[i] = v
    return free, y_fix


def _tri(M: np.ndarray) -> np.ndarray:
    """Scaled upper triangle, column by column (off-diagonals times sqrt 2), over the last two axes."""
    s = M.shape[-1]
    cols, rows = np.tril_indices(s)  # row-major lower triangle == column-major upper triangle
    w = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return M[..., rows, cols] * w


def _untri(v: np.ndarray, s: int) -> np.ndarray:
    cols, rows = np.tril_indices(s)
    w = np.where(rows == cols, 1.0, 1.0 / np.sqrt(2.0))
    M = np.zeros((s, s))
    M[rows, cols] = v * w
    M[cols, rows] = v * w
    return M


def _cone_data(inst: SdpInstance):
    """Standard form ``min c.x  s.t.  A x + s = b`` with ``s`` in (orthant x PSD blocks) over free variables."""
    free, y_fix = _free_layout(inst)
    c = inst.objective[free]
    A_rows, b_rows = [], []
    for a in inst.scalar_ineqs:
        # a0 + a.y <= 0  <=>  s = -(a0 + a.y_fix) - a_free.x >= 0
        A_rows.append(a.coeffs[free][None, :])
        b_rows.append(np.array([-(a.const + a.coeffs @ y_fix)]))
    sizes = []
    for blk in inst.psd_blocks:
        A0 = blk.const + np.tensordot(y_fix, blk.coeffs, axes=1)
        A_rows.append(-_tri(blk.coeffs[free]).T)
        b_rows.append(_tri(A0))
        sizes.append(blk.size)
    A = np.vstack(A_rows) if A_rows else np.zeros((0, len(free)))
    b = np.concatenate(b_rows) if b_rows else np.zeros(0)
    return free, y_fix, c, A, b, len(inst.scalar_ineqs), sizes


def _split_dual(z: np.ndarray, nl: int, sizes) -> tuple[np.ndarray, list]:
    mu = z[:nl].copy()
    mats, pos = [], nl
    for s in sizes:
        m = s * (s + 1) // 2
        mats.append(_untri(z[pos : pos + m], s))
        pos += m
    return mu, mats


def _dual_value(inst: SdpInstance, mu, mats) -> float:
    """Lagrangian dual bound for fixed multipliers (pinned entries substituted)."""
    _, y_fix = _free_layout(inst)
    val = inst.objective_const + float(inst.objective @ y_fix)
    for m, a in zip(mu, inst.scalar_ineqs):
        val += m * (a.const + a.coeffs @ y_fix)
    for Z, b in zip(mats, inst.psd_blocks):
        val -= float(np.sum(Z * (b.const + np.tensordot(y_fix, b.coeffs, axes=1))))
    return val


def _stationarity(inst: SdpInstance, mu, mats) -> np.ndarray:
    """Gradient of the Lagrangian in the free variables; zero at a dual-feasible point."""
    free, _ = _free_layout(inst)
    r = inst.objective.copy()
    for m, a in zip(mu, inst.scalar_ineqs):
        r = r + m * a.coeffs
    for Z, b in zip(mats, inst.psd_blocks):
        r = r - np.tensordot(b.coeffs, Z, axes=([1, 2], [0, 1]))
    return r[free]


_INFEASIBLE = {"PrimalInfeasible", "AlmostPrimalInfeasible"}
_UNBOUNDED = {"DualInfeasible", "AlmostDualInfeasible"}
_MAX_ITER = {"MaxIterations", "MaxTime"}


def _assess(inst: SdpInstance, y, mu, mats, opts: SolverOptions, iters: int, backend: str, stopped: bool) -> SdpSolution:
    """Recompute objective values, residuals and the status from raw primal/dual iterates."""
    primal = inst.objective_value(y)
    dual = _dual_value(inst, mu, mats)
    viol = inst.primal_violation(y)
    pres = max(viol["psd"], viol["scalar"])
    dres = float(np.max(np.abs(_stationarity(inst, mu, mats)), initial=0.0)) / (
        1.0 + float(np.max(np.abs(inst.objective)))
    )
    min_dual = min(
        [float(m) for m in mu] + [float(np.linalg.eigvalsh(Z)[0]) for Z in mats],
        default=0.0,
    )
    gap = abs(primal - dual)
    converged = (
        gap <= opts.eps_gap * (1.0 + abs(primal))
        and pres <= opts.eps_feas
        and dres <= opts.eps_feas
        and min_dual >= -opts.eps_feas
    )
    if converged:
        status = Status.OPTIMAL
    elif stopped:
        status = Status.MAX_ITER
    else:
        status = Status.NUMERICAL_TROUBLE
    return SdpSolution(
        status, y, primal, dual, mats, mu, gap=gap, primal_residual=pres, dual_residual=dres,
        iterations=iters, message=backend,
    )


def _badness(sol: SdpSolution) -> float:
    return max(sol.gap / (1.0 + abs(sol.objective)), sol.primal_residual, sol.dual_residual)


def _clarabel(inst, opts, free, y_fix, c, A, b, nl, sizes):
    import clarabel
    import scipy.sparse as sp

    cones = ([clarabel.NonnegativeConeT(nl)] if nl else []) + [clarabel.PSDTriangleConeT(s) for s in sizes]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(opts.max_iter)
    # tighter than the contract: the recomputed checks need headroom, and
    # moment objectives are flat along optimal faces so position accuracy ~ sqrt(gap)
    settings.tol_gap_abs = settings.tol_gap_rel = 0.01 * opts.eps_gap
    settings.tol_feas = 0.01 * opts.eps_feas
    P = sp.csc_matrix((len(free), len(free)))
    try:
        res = clarabel.DefaultSolver(P, c, sp.csc_matrix(A), b, cones, settings).solve()
    except BaseException as exc:  # the backend raises its own panic type
        if isinstance(exc, KeyboardInterrupt):
            raise
        logger.debug("clarabel failed: %s", exc)
        return SdpSolution(Status.NUMERICAL_TROUBLE, None, np.nan, np.nan, message=f"clarabel: {exc}")

    backend_status = str(res.status)
    iters = int(res.iterations)
    x = np.array(res.x, dtype=float)
    z = np.array(res.z, dtype=float)
    if backend_status in _INFEASIBLE:
        mu, mats = _split_dual(z, nl, sizes)
        return SdpSolution(
            Status.INFEASIBLE, None, np.inf, np.inf, mats, mu, iterations=iters, ray=z,
            message="dual improving ray certifies primal infeasibility",
        )
    if backend_status in _UNBOUNDED:
        ray = np.zeros(inst.var_count)
        ray[free] = x
        return SdpSolution(
            Status.UNBOUNDED, None, -np.inf, -np.inf, iterations=iters, ray=ray,
            message="primal ray along which the objective decreases without bound",
        )
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
        return SdpSolution(Status.NUMERICAL_TROUBLE, None, np.nan, np.nan, iterations=iters, message=backend_status)
    y = y_fix.copy()
    y[free] = x
    mu, mats = _split_dual(z, nl, sizes)
    return _assess(inst, y, mu, mats, opts, iters, f"clarabel: {backend_status}", backend_status in _MAX_ITER)


def _cvxopt(inst, opts, free, y_fix):
    """Second opinion from CVXOPT's conic solver on the same standard form."""
    from cvxopt import matrix, solvers

    G, h = [], []
    for blk in inst.psd_blocks:
        s = blk.size
        A0 = blk.const + np.tensordot(y_fix, blk.coeffs, axes=1)
        G.append(matrix(-blk.coeffs[free].reshape(len(free), s * s).T.copy()))
        h.append(matrix(A0))
    kw = {}
    if inst.scalar_ineqs:
        kw["Gl"] = matrix(np.array([a.coeffs[free] for a in inst.scalar_ineqs]))
        kw["hl"] = matrix(np.array([-(a.const + a.coeffs @ y_fix) for a in inst.scalar_ineqs]))
    tight = {"abstol": 0.01 * opts.eps_gap, "reltol": 0.01 * opts.eps_gap, "feastol": 0.1 * opts.eps_feas}
    # very tight stopping rules occasionally trip a division by zero inside
    # CVXOPT's step computation; its default rules often still reach the
    # requested accuracy, and the result is judged by _assess either way
    res = None
    for extra in (tight, {}):
        options = {"show_progress": False, "maxiters": int(opts.max_iter), **extra}
        try:
            res = solvers.sdp(matrix(inst.objective[free]), Gs=G, hs=h, options=options, **kw)
            break
        except (ArithmeticError, ValueError) as exc:
            logger.debug("cvxopt failed with %s: %s", extra or "default options", exc)
    if res is None:
        return None
    if res["x"] is None or res["status"] in ("primal infeasible", "dual infeasible"):
        return None
    y = y_fix.copy()
    y[free] = np.array(res["x"]).reshape(-1)
    mu = np.array(res["zl"]).reshape(-1) if inst.scalar_ineqs else np.zeros(0)
    mats = []
    for blk, Z in zip(inst.psd_blocks, res["zs"]):
        Z = np.array(Z)
        mats.append(0.5 * (Z + Z.T))
    if not (np.all(np.isfinite(y)) and all(np.all(np.isfinite(Z)) for Z in mats)):
        return None
    return _assess(inst, y, mu, mats, opts, int(res["iterations"]), f"cvxopt: {res['status']}", res["status"] == "unknown")


def solve(inst: SdpInstance, opts: SolverOptions | None = None) -> SdpSolution:
    """Solve with Clarabel; unless it reports a clean solve, ask CVXOPT as well.

    Higher-order moment relaxations of convex problems are degenerate (the
    optimal moment matrix has rank one), and either backend sometimes stalls
    short of the requested accuracy where the other does not. The returned
    solution is the one that passes the checks, or the less bad of the two.
    """
    opts = opts or SolverOptions()
    free, y_fix, c, A, b, nl, sizes = _cone_data(inst)
    if len(free) == 0:
        y = y_fix.copy()
        viol = inst.primal_violation(y)
        feasible = max(viol.values()) <= opts.eps_feas
        val = inst.objective_value(y)
        return SdpSolution(
            Status.OPTIMAL if feasible else Status.INFEASIBLE, y, val, val if feasible else np.inf,
            [np.zeros((b.size, b.size)) for b in inst.psd_blocks], np.zeros(len(inst.scalar_ineqs)),
            gap=0.0, primal_residual=max(viol.values()), dual_residual=0.0,
        )

    first = _clarabel(inst, opts, free, y_fix, c, A, b, nl, sizes)
    if first.status in (Status.INFEASIBLE, Status.UNBOUNDED):
        return first
    if first.status is Status.OPTIMAL and first.message == "clarabel: Solved":
        return first
    # an AlmostSolved answer can pass the relative checks while its value is
    # still off by a few 1e-6, so it only wins if CVXOPT cannot do better
    second = _cvxopt(inst, opts, free, y_fix)
    if second is None:
        return first
    if second.status is Status.OPTIMAL or first.y is None:
        return second
    if first.status is Status.OPTIMAL:
        return first
    return second if _badness(second) < _badness(first) else first


def certify_weak_duality(sol: SdpSolution, inst: SdpInstance, eps_gap: float = 1e-6) -> DualityReport:
    """Recompute the dual bound from the multipliers alone and compare it with the primal value.

    The bound is ``dual = c0 + sum mu_j a0_j - sum <Z_k, A0_k>`` evaluated at
    the pinned entries; it is a valid lower bound whenever the multipliers
    are nonnegative/PSD and the Lagrangian is stationary, which the report
    also measures.
    """
    if sol.status is not Status.OPTIMAL:
        return DualityReport(sol.objective, sol.dual_objective, np.nan, np.nan, np.nan, False, sol.status)
    dual = _dual_value(inst, sol.dual_scalar, sol.dual_psd)
    primal = inst.objective_value(sol.y)
    stat = float(np.max(np.abs(_stationarity(inst, sol.dual_scalar, sol.dual_psd)), initial=0.0))
    eigs = [float(np.linalg.eigvalsh(Z)[0]) for Z in sol.dual_psd]
    if len(sol.dual_scalar):
        eigs.append(float(np.min(sol.dual_scalar)))
    min_eig = min(eigs, default=0.0)
    ok = dual <= primal + eps_gap * (1.0 + abs(primal))
    return DualityReport(
        primal, dual, primal - dual, stat, min_eig, ok,
        Status.OPTIMAL if ok else Status.NUMERICAL_TROUBLE,
    )


def dump_instance(inst: SdpInstance, stream) -> None:
    """Write ``inst`` in a plain sparse text format for cross-checking with other solvers.

    One entry per line, whitespace separated::

        # comment lines start with '#'
        obj  <var> <coeff>            objective coefficient (var -1: constant term)
        fix  <var> <value>            pinned entry
        <block> <i> <j> <var> <coeff> PSD block entry, upper triangle only (i <= j)

    Blocks are numbered from 0 in instance order; the scalar inequalities
    follow as 1x1 blocks written in PSD form ``-(a0 + a.y) >= 0``. Variable
    index -1 denotes the constant matrix.
    """
    w = stream.write
    w(f"# vars {inst.var_count} psd_blocks {len(inst.psd_blocks)} scalar_ineqs {len(inst.scalar_ineqs)}\n")
    w(f"# block sizes {' '.join(str(b.size) for b in inst.psd_blocks)}\n")
    if inst.objective_const:
        w(f"obj -1 {inst.objective_const:.17g}\n")
    for i in np.flatnonzero(inst.objective):
        w(f"obj {i} {inst.objective[i]:.17g}\n")
    for i, v in inst.fixed:
        w(f"fix {i} {v:.17g}\n")
    for k, b in enumerate(inst.psd_blocks):
        s = b.size
        for i in range(s):
            for j in range(i, s):
                if b.const[i, j]:
                    w(f"{k} {i} {j} -1 {b.const[i, j]:.17g}\n")
                for v in np.flatnonzero(b.coeffs[:, i, j]):
                    w(f"{k} {i} {j} {v} {b.coeffs[v, i, j]:.17g}\n")
    base = len(inst.psd_blocks)
    for k, a in enumerate(inst.scalar_ineqs):
        if a.const:
            w(f"{base + k} 0 0 -1 {-a.const:.17g}\n")
        for v in np.flatnonzero(a.coeffs):
            w(f"{base + k} 0 0 {v} {-a.coeffs[v]:.17g}\n")


def load_instance(stream, sizes: Sequence[int] | None = None) -> SdpInstance:
    """Inverse of :func:`dump_instance`."""
    lines = [ln.split() for ln in stream.read().splitlines()]
    header = [ln for ln in lines if ln and ln[0] == "#"]
    meta = header[0]
    N, nb, ns = int(meta[2]), int(meta[4]), int(meta[6])
    if sizes is None:
        sizes = [int(t) for t in header[1][3:]] if nb else []
    c, c0, fixed = np.zeros(N), 0.0, []
    consts = [np.zeros((s, s)) for s in sizes]
    coeffs = [np.zeros((N, s, s)) for s in sizes]
    a_const, a_coef = np.zeros(ns), np.zeros((ns, N))
    for ln in lines:
        if not ln or ln[0] == "#":
            continue
        if ln[0] == "obj":
            v, x = int(ln[1]), float(ln[2])
            if v < 0:
                c0 = x
            else:
                c[v] = x
        elif ln[0] == "fix":
            fixed.append((int(ln[1]), float(ln[2])))
        else:
            k, i, j, v, x = int(ln[0]), int(ln[1]), int(ln[2]), int(ln[3]), float(ln[4])
            if k < nb:
                target = consts[k] if v < 0 else coeffs[k][v]
                target[i, j] = target[j, i] = x
            elif v < 0:
                a_const[k - nb] = -x
            else:
                a_coef[k - nb, v] = -x
    blocks = tuple(PsdBlock(C, A0) for C, A0 in zip(coeffs, consts))
    ineqs = tuple(ScalarIneq(a_coef[j], a_const[j]) for j in range(ns))
    return SdpInstance(N, c, c0, blocks, ineqs, tuple(fixed))
