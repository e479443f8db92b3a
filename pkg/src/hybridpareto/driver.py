"""End-to-end search for efficient points: sample z, solve the hybrid relaxations, extract, filter."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .certify import (
    RANK_TOL,
    CertificateRejected,
    ExtractionFailed,
    SosCertificate,
    extract_atoms,
    rank_profile,
    recover_certificate,
)
from .moments import MomentVector
from .poly import MooProblem, hessian, is_positive_definite, weighted_sum
from .relax import Family, HybridProblem, build, feasibility_check, min_order
from .sdp import SolverOptions, Status, solve

logger = logging.getLogger(__name__)

__all__ = [
    "SamplingStalled",
    "SweepConfig",
    "EfficientPoint",
    "SweepResult",
    "ExistenceReport",
    "sample_feasible_z",
    "solve_hybrid",
    "reverify_efficiency",
    "pareto_filter",
    "existence_probe",
    "slater_probe",
    "run_sweep",
]

MAX_DRAWS = 10**6
MIN_ACCEPTANCE = 1e-3


class SamplingStalled(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    """Where to take parameter points from and how hard to work on each.

    Either ``z_list`` or ``box`` (n x 2 bounds) with ``samples`` draws is used;
    both may be given, in which case the explicit points come first.
    ``k_max`` defaults to ``k0 + 3``.
    """

    z_list: tuple | None = None
    box: tuple | None = None
    samples: int = 0
    seed: int = 0
    family: Family = Family.P
    k_max: int | None = None
    tol_gap: float = 1e-7
    tol_feas: float = 1e-7
    tol_rank: float = RANK_TOL
    tol_filter: float = 1e-4
    tol_extract_feas: float = 1e-5
    tol_extract_value: float = 1e-4
    tol_reverify: float = 1e-5
    reverify: bool = True
    certificates: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.box is not None:
            box = np.asarray(self.box, dtype=float)
            if box.ndim != 2 or box.shape[1] != 2:
                raise ValueError("box must be an n x 2 array of (lower, upper) bounds")
            if not np.all(np.isfinite(box)) or np.any(box[:, 0] > box[:, 1]):
                raise ValueError("box bounds must be finite with lower <= upper")
            object.__setattr__(self, "box", tuple(map(tuple, box.tolist())))
            if self.samples < 1:
                raise ValueError("a box sampler needs samples >= 1")
        if self.z_list is not None:
            object.__setattr__(self, "z_list", tuple(tuple(float(v) for v in z) for z in self.z_list))
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def has_sources(self) -> bool:
        return bool(self.z_list) or (self.box is not None and self.samples > 0)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(eps_gap=self.tol_gap, eps_feas=self.tol_feas)


@dataclass
class EfficientPoint:
    x: np.ndarray
    values: np.ndarray
    z: np.ndarray
    k_used: int
    family: Family
    verified: bool
    objective: float = float("nan")
    reverify_ok: bool | None = None
    certificate: SosCertificate | None = None
    diagnostics: list = field(default_factory=list)
    alternates: list = field(default_factory=list)

    @property
    def has_certificate(self) -> bool:
        return self.certificate is not None


def sample_feasible_z(cfg: SweepConfig, problem: MooProblem, tol: float = 0.0) -> list[np.ndarray]:
    """Parameter points in the feasible set; any such z makes the hybrid feasible set nonempty."""
    out: list[np.ndarray] = []
    for z in cfg.z_list or ():
        z = np.asarray(z, dtype=float)
        if z.shape[0] != problem.n:
            raise ValueError(f"z {tuple(z)} has length {z.shape[0]}, problem has {problem.n} variables")
        if problem.in_feasible_set(z, tol):
            out.append(z)
        else:
            logger.warning("skipping infeasible parameter point %s", tuple(z))
    if cfg.box is None or cfg.samples < 1:
        return out

    box = np.asarray(cfg.box, dtype=float)
    if box.shape[0] != problem.n:
        raise ValueError(f"box has {box.shape[0]} rows, problem has {problem.n} variables")
    rng = np.random.default_rng(cfg.seed)
    wanted, accepted, draws = cfg.samples, [], 0
    batch = max(1024, 2 * wanted)
    while len(accepted) < wanted:
        pts = rng.uniform(box[:, 0], box[:, 1], size=(batch, problem.n))
        draws += batch
        accepted.extend(pts[problem.feasible_mask(pts, tol)])
        if draws >= MAX_DRAWS and len(accepted) < wanted:
            rate = len(accepted) / draws
            if rate < MIN_ACCEPTANCE:
                raise SamplingStalled(
                    f"only {len(accepted)} of {draws} draws from the box were feasible "
                    f"(rate {rate:.2e}); choose a box that overlaps the feasible set"
                )
    return out + accepted[:wanted]


def _candidate_ok(hp: HybridProblem, x, objective: float, cfg: SweepConfig) -> bool:
    if not feasibility_check(hp, x, cfg.tol_extract_feas):
        return False
    val = float(hp.base.lam @ hp.base.values(x))
    return abs(val - objective) <= cfg.tol_extract_value * (1.0 + abs(objective))


def solve_hybrid(problem: MooProblem, lam, z, cfg: SweepConfig) -> EfficientPoint:
    """Escalate the relaxation order from ``k0`` until the optimal moments have a flat truncation.

    A point is marked verified only when the solve is optimal, the flat
    truncation test fires, extraction succeeds, and every extracted atom is
    feasible and attains the relaxation value. Otherwise the mean of the last
    optimal moment vector is returned with ``verified = False``.
    """
    if lam is not None:
        problem = problem.with_lambda(lam)
    hp = HybridProblem(problem, z)
    k0 = min_order(problem)
    k_max = cfg.k_max if cfg.k_max is not None else k0 + 3
    opts = cfg.solver_options()
    diags: list[dict] = []
    fallback = None
    for k in range(k0, max(k0, k_max) + 1):
        inst = build(hp, cfg.family, k=k)
        sol = solve(inst, opts)
        diag = {
            "k": k,
            "status": sol.status.value,
            "objective": sol.objective,
            "gap": sol.gap,
            "primal_residual": sol.primal_residual,
            "dual_residual": sol.dual_residual,
            "iterations": sol.iterations,
        }
        diags.append(diag)
        if sol.status in (Status.INFEASIBLE, Status.UNBOUNDED):
            logger.warning("relaxation at z=%s, k=%d reported %s", tuple(hp.z), k, sol.status.value)
            break
        if sol.status is not Status.OPTIMAL:
            if sol.y is not None:
                fallback = (k, sol)
            continue
        fallback = (k, sol)
        y = MomentVector(problem.n, 2 * k, sol.y)
        prof = rank_profile(y, k, k0, cfg.tol_rank)
        diag["ranks"] = [r for _, r in prof.ranks]
        diag["flat_t"] = prof.t
        if prof.t is None:
            continue
        try:
            atoms = extract_atoms(y, prof.t, k0, cfg.tol_rank)
        except ExtractionFailed as exc:
            diag["extraction"] = str(exc)
            continue
        if not all(_candidate_ok(hp, a, sol.objective, cfg) for a in atoms):
            diag["extraction"] = "extracted atoms are not optimal for the hybrid problem"
            continue
        cert = None
        if cfg.certificates:
            try:
                cert = recover_certificate(inst, sol, cfg.family, hp, k=k)
            except CertificateRejected as exc:
                diag["certificate"] = str(exc)
        x = atoms[0]
        return EfficientPoint(
            x, problem.values(x), hp.z.copy(), k, cfg.family, True, sol.objective,
            certificate=cert, diagnostics=diags, alternates=atoms[1:],
        )

    if fallback is None:
        nan = np.full(problem.n, np.nan)
        return EfficientPoint(nan, np.full(problem.p, np.nan), hp.z.copy(), k_max, cfg.family, False, diagnostics=diags)
    k, sol = fallback
    x = sol.y[1 : problem.n + 1].copy()
    return EfficientPoint(x, problem.values(x), hp.z.copy(), k, cfg.family, False, sol.objective, diagnostics=diags)


def reverify_efficiency(problem: MooProblem, lam, point: EfficientPoint, cfg: SweepConfig) -> bool:
    """Re-solve at ``z = x`` and require the optimal value to equal ``lam.f(x)``.

    A point is optimal for its own hybrid problem exactly when it is
    efficient, so a strictly lower relaxation value exposes a dominating point.
    """
    if not point.verified:
        raise ValueError("only verified points can be re-verified")
    if lam is not None:
        problem = problem.with_lambda(lam)
    x = np.asarray(point.x, dtype=float)
    value = float(problem.lam @ problem.values(x))
    again = solve_hybrid(problem, None, x, replace(cfg, certificates=False))
    if not again.verified:
        return False
    return abs(again.objective - value) <= cfg.tol_reverify * (1.0 + abs(value))


def _dominates(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    """``a`` dominates ``b``: no worse anywhere (within tol), strictly better somewhere by more than tol."""
    return bool(np.all(a <= b + tol) and np.any(a < b - tol))


def pareto_filter(points: list[EfficientPoint], tol: float = 1e-4) -> list[EfficientPoint]:
    """Drop dominated value vectors, then merge points closer than ``tol`` in x."""
    keep = [
        p for p in points
        if not any(_dominates(q.values, p.values, tol) for q in points if q is not p)
    ]
    out: list[EfficientPoint] = []
    for p in keep:
        if all(np.linalg.norm(p.x - q.x) > tol for q in out):
            out.append(p)
    return out


@dataclass
class ExistenceReport:
    conclusive: bool
    witness: np.ndarray | None
    checked: int
    nonconvex_at: np.ndarray | None = None
    message: str = ""


def existence_probe(problem: MooProblem, lam, samples, tol: float = 1e-8) -> ExistenceReport:
    """Look for a sample where the weighted Hessian is positive definite.

    For convex data that is enough for the weighted sum to be coercive and
    strictly convex, hence for efficient points to exist. The guarantee needs
    convexity, so a sample with an indefinite Hessian makes the probe
    inconclusive even if another sample is positive definite.
    """
    lam_f = weighted_sum(problem, lam)
    witness, bad = None, None
    pts = [np.asarray(s, dtype=float) for s in samples]
    for x in pts:
        H = hessian(lam_f, x)
        if bad is None and np.linalg.eigvalsh(H)[0] < -tol:
            bad = x
        if witness is None and is_positive_definite(H, tol):
            witness = x
    if bad is not None:
        return ExistenceReport(False, witness, len(pts), bad, "weighted Hessian is indefinite at a sample; data is not convex")
    if witness is None:
        return ExistenceReport(False, None, len(pts), None, "no sample with a positive definite weighted Hessian")
    return ExistenceReport(True, witness, len(pts), None, "weighted Hessian is positive definite at a sample")


def slater_probe(problem: MooProblem, samples, margin: float = 1e-9) -> np.ndarray | None:
    """First sample strictly inside every constraint, or None. Best effort only."""
    for s in samples:
        x = np.asarray(s, dtype=float)
        if np.all(problem.constraint_values(x) < -margin):
            return x
    return None


@dataclass
class SweepResult:
    efficient: list[EfficientPoint]
    unverified: list[EfficientPoint]
    raw: list[EfficientPoint]
    z_count: int


def _task(args):
    problem, z, cfg = args
    pt = solve_hybrid(problem, None, z, cfg)
    if pt.verified and cfg.reverify:
        pt.reverify_ok = reverify_efficiency(problem, None, pt, cfg)
    return pt


def run_sweep(problem: MooProblem, cfg: SweepConfig) -> SweepResult:
    zs = sample_feasible_z(cfg, problem)
    zs = sorted(zs, key=lambda z: tuple(z))
    tasks = [(problem, z, cfg) for z in zs]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            raw = list(ex.map(_task, tasks, chunksize=max(1, math.ceil(len(tasks) / (4 * cfg.workers)))))
    else:
        raw = [_task(t) for t in tasks]
    expanded = []
    for pt in raw:
        if not pt.verified:
            continue
        expanded.append(pt)
        for a in pt.alternates:
            expanded.append(replace(pt, x=a, values=problem.values(a), alternates=[]))
    efficient = pareto_filter(expanded, cfg.tol_filter)
    unverified = [pt for pt in raw if not pt.verified]
    return SweepResult(efficient, unverified, raw, len(zs))
