"""Independent reference solvers and random test instances.

Nothing here touches the moment/SDP code: values come from a dense grid over
the hybrid feasible set followed by projected-gradient refinement, with
projections computed by Dykstra's alternating scheme over the individual
convex constraint sets.
"""

import numpy as np

from hybridpareto.poly import MooProblem, Polynomial


class Fast:
    """Numpy evaluator for a polynomial with its gradient and Hessian."""

    def __init__(self, poly):
        items = list(poly.items()) or [((0,) * poly.n, 0.0)]
        self.E = np.array([a for a, _ in items], dtype=float)
        self.c = np.array([c for _, c in items], dtype=float)
        self.n = poly.n
        self.degree = poly.degree

    def __call__(self, x):
        return float(self.c @ np.prod(np.asarray(x, dtype=float) ** self.E, axis=1))

    def many(self, X):
        return np.prod(X[:, None, :] ** self.E[None], axis=2) @ self.c

    def _shifted(self, x, idx):
        e = self.E.copy()
        k = np.ones(len(e))
        for i in idx:
            k = k * e[:, i]
            e[:, i] = np.maximum(e[:, i] - 1, 0)
        return (self.c * k) @ np.prod(x ** e, axis=1)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([self._shifted(x, (i,)) for i in range(self.n)])

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        H = np.zeros((self.n, self.n))
        for i in range(self.n):
            for j in range(i, self.n):
                H[i, j] = H[j, i] = self._shifted(x, (i, j))
        return H


# ---------------------------------------------------------------- instances

def random_instance(seed):
    """A 2-variable convex instance with linear constraints and a feasible z.

    The first objective is always a positive definite quadratic, so every
    hybrid feasible set is bounded. The remaining objectives are drawn from
    convex quadratics, weighted quartics w*||x - c||^4, and linear forms.
    """
    rng = np.random.default_rng(seed)
    x1, x2 = Polynomial.variables(2)
    xs = (x1, x2)

    def quad(psd_only=False):
        R = rng.normal(size=(2, 2))
        A = R.T @ R + (0.0 if psd_only else 0.3) * np.eye(2)
        c = rng.uniform(-2, 2, size=2)
        d = [xi - ci for xi, ci in zip(xs, c)]
        return sum(A[i, j] * d[i] * d[j] for i in range(2) for j in range(2))

    def quartic():
        c = rng.uniform(-2, 2, size=2)
        w = rng.uniform(0.2, 1.5)
        r2 = (x1 - c[0]) ** 2 + (x2 - c[1]) ** 2
        return w * r2 * r2

    def linear():
        a = rng.normal(size=2)
        return a[0] * x1 + a[1] * x2

    objs = [quad()]
    p = int(rng.integers(2, 4))
    kinds = ["quad", "quartic", "linear"]
    for j in range(1, p):
        kind = kinds[(seed + j) % 3] if j == 1 else rng.choice(kinds)
        objs.append({"quad": lambda: quad(psd_only=True), "quartic": quartic, "linear": linear}[kind]())

    x0 = rng.uniform(-1.0, 1.0, size=2)
    cons = []
    for _ in range(int(rng.integers(1, 4))):
        a = rng.normal(size=2)
        b = float(a @ x0) + rng.uniform(0.2, 1.0)
        cons.append(a[0] * x1 + a[1] * x2 - b)
    lam = rng.uniform(0.5, 2.0, size=len(objs))
    problem = MooProblem(2, tuple(objs), tuple(cons), lam)

    # keep z only if the hybrid feasible set has a point with margin in every
    # constraint; a z at or next to the efficient set makes K_z (nearly) a
    # single point, where the relaxations lose strict feasibility
    for _ in range(1000):
        z = x0 + rng.uniform(-1.5, 1.5, size=2)
        if problem.in_feasible_set(z) and _has_interior(problem, z):
            return problem, z
    raise RuntimeError(f"seed {seed}: no z with a strictly feasible hybrid set")


def _has_interior(problem, z, margin=0.02, grid=81):
    lo, hi = bounding_box(problem, z)
    axes = [np.linspace(lo[i], hi[i], grid) for i in range(problem.n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, problem.n)
    ok = np.ones(len(pts), dtype=bool)
    for g in problem.constraints:
        ok &= Fast(g).many(pts) <= -margin
    for f, c in zip(problem.objectives, problem.values(z)):
        ok &= Fast(f).many(pts) <= c - margin * (1.0 + abs(c))
    return bool(ok.any())


# ---------------------------------------------------------------- projections

def _project_halfspace(p, a, b):
    viol = a @ p - b
    return p if viol <= 0 else p - viol / (a @ a) * a


def _project_ball(p, c, r):
    d = p - c
    nd = np.linalg.norm(d)
    return p if nd <= r else c + d * (r / nd)


def _project_ellipsoid(p, w, Q, bt, t):
    """Projection onto {x : x'Ax + b'x <= t} with A = Q diag(w) Q' positive semidefinite.

    In the eigenbasis the KKT point is x(mu) = (p - mu b) / (1 + 2 mu w),
    and the multiplier mu >= 0 is found by bisection.
    """
    pt = Q.T @ p
    q = lambda u: float(np.sum(w * u * u) + bt @ u - t)
    if q(pt) <= 0:
        return p
    x_of = lambda mu: (pt - mu * bt) / (1.0 + 2.0 * mu * w)
    lo, hi = 0.0, 1.0
    while q(x_of(hi)) > 0:
        lo, hi = hi, 2 * hi
        if hi > 1e14:
            raise RuntimeError("ellipsoid looks empty")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if q(x_of(mid)) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return Q @ x_of(hi)


def _convex_set(h):
    """Classify {h <= 0} for a quadratic or a weighted quartic w*||x - c||^4 + const."""
    n = h.n
    unit = lambda *idx: tuple(sum(1 for i in idx if i == k) for k in range(n))
    if h.degree == 2:
        A = np.array([[h.coeff(unit(i, j)) * (1.0 if i == j else 0.5) for j in range(n)] for i in range(n)])
        b = np.array([h.coeff(unit(i)) for i in range(n)])
        w, Q = np.linalg.eigh(A)
        return ("ellipsoid", (np.maximum(w, 0.0), Q, Q.T @ b, -h.coeff((0,) * n)))
    if h.degree == 4:
        w = h.coeff(unit(0, 0, 0, 0))
        c = np.array([-h.coeff(unit(i, i, i)) / (4 * w) for i in range(n)])
        x = Polynomial.variables(n)
        r2 = sum((xi - ci) ** 2 for xi, ci in zip(x, c))
        rest = h - w * r2 * r2
        t = -rest.coeff((0,) * n)
        if (rest + t).max_abs_coeff() > 1e-9 * (1 + h.max_abs_coeff()):
            raise ValueError("quartic is not of the form w*||x - c||^4 + const")
        return ("ball", (c, (max(t, 0.0) / w) ** 0.25))
    raise ValueError(f"no projection for degree {h.degree}")


def _split(problem, z):
    """Hybrid feasible set as a list of (kind, data) convex pieces."""
    n = problem.n
    unit = lambda i: tuple(int(k == i) for k in range(n))
    fz = problem.values(z)
    polys = list(problem.constraints) + [f - float(c) for f, c in zip(problem.objectives, fz)]
    sets = []
    for h in polys:
        if h.degree <= 1:
            a = np.array([h.coeff(unit(i)) for i in range(n)])
            if np.any(a != 0):
                sets.append(("halfspace", (a, -h.coeff((0,) * n))))
        else:
            sets.append(_convex_set(h))
    return sets


_PROJ = {"halfspace": _project_halfspace, "ball": _project_ball, "ellipsoid": _project_ellipsoid}


def dykstra_project(p, sets, cycles=300, tol=1e-11):
    """Projection onto an intersection of convex pieces by Dykstra's algorithm."""
    x = np.asarray(p, dtype=float).copy()
    if len(sets) == 1:
        kind, data = sets[0]
        return _PROJ[kind](x, *data)
    incr = [np.zeros_like(x) for _ in sets]
    for _ in range(cycles):
        change = 0.0
        for i, (kind, data) in enumerate(sets):
            y = x + incr[i]
            x_new = _PROJ[kind](y, *data)
            step = y - x_new
            # the iterate alone can revisit a point while corrections still move
            change += np.linalg.norm(x_new - x) + np.linalg.norm(step - incr[i])
            x, incr[i] = x_new, step
        if change < tol:
            break
    return x


# ---------------------------------------------------------------- oracle

def bounding_box(problem, z):
    """Box containing {f_1 <= f_1(z)} for a positive definite quadratic f_1."""
    f = Fast(problem.objectives[0])
    o = np.zeros(problem.n)
    A = 0.5 * f.hess(o)
    b = f.grad(o)
    Ainv = np.linalg.inv(A)
    r = f(z) - f(o) + 0.25 * b @ Ainv @ b
    center = -0.5 * Ainv @ b
    half = np.sqrt(max(r, 0.0) * np.diag(Ainv))
    return center - half - 1e-9, center + half + 1e-9


def hybrid_oracle(problem, z, grid=301, iters=2000, feas_tol=1e-9):
    """min lam.f over the hybrid feasible set at z, by grid search then projected gradient."""
    z = np.asarray(z, dtype=float)
    phi = Fast(sum(float(l) * f for l, f in zip(problem.lam, problem.objectives)))
    lo, hi = bounding_box(problem, z)
    axes = [np.linspace(lo[i], hi[i], grid) for i in range(problem.n)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, problem.n)
    fz = problem.values(z)
    ok = np.ones(len(pts), dtype=bool)
    for g in problem.constraints:
        ok &= Fast(g).many(pts) <= feas_tol
    for f, c in zip(problem.objectives, fz):
        ok &= Fast(f).many(pts) <= c + feas_tol
    x = z.copy()
    if ok.any():
        vals = phi.many(pts[ok])
        i = int(np.argmin(vals))
        if vals[i] < phi(z):
            x = pts[ok][i]

    sets = _split(problem, z)
    pieces = [Fast(g) for g in problem.constraints] + [Fast(f - float(c)) for f, c in zip(problem.objectives, fz)]
    feasible = lambda y: max(h(y) for h in pieces) <= 1e-8
    L = max(np.linalg.eigvalsh(phi.hess(x))[-1], 1e-3)
    step = 1.0 / L
    v = phi(x)
    for _ in range(iters):
        x_new = dykstra_project(x - step * phi.grad(x), sets)
        v_new = phi(x_new)
        # an unconverged projection must not sneak an infeasible point in
        if v_new > v + 1e-15 or not feasible(x_new):
            step *= 0.5
            if step < 1e-12:
                break
            continue
        moved = np.linalg.norm(x_new - x)
        x, v = x_new, v_new
        if moved < 1e-12:
            break
    assert feasible(x)
    return v, x
