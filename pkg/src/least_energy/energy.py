"""Least-energy solutions by minimizing the Sobolev quotient on P1 meshes.

The discrete quotient is

    J(v) = (vᵀKv + λ Σ m_i v_i²) / (Σ m_i |v_i|^{p+1})^{2/(p+1)}

with K the stiffness matrix and m the lumped mass weights, both restricted to
interior vertices. A minimizer v scaled by J(v)^{1/(p-1)} solves the discrete
problem A u = m ∘ u^p with A = K + λ diag(m).

Minimization is a projected gradient method in the A inner product with
Barzilai-Borwein steps. A unit step is the nonlinear inverse iteration
v ← A⁻¹(m ∘ v^p), which never increases J (Hölder then Cauchy-Schwarz), so it
is the fallback whenever a BB step fails to decrease J. Near the minimizer a
Newton iteration on A u = m ∘ u^p finishes the job.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg
from .mesh import GradingSpec, Mesh, build_mesh, graded_mesh

LOG_FLOOR = -700.0


class SolverError(RuntimeError):
    """Base class for solver failures."""


class StagnationError(SolverError):
    """The quotient stopped decreasing before the tolerance was met; ``field`` is the last iterate."""

    def __init__(self, message, field):
        super().__init__(message)
        self.field = field


class PowerOverflowError(SolverError, OverflowError):
    pass


class ContinuationError(SolverError):
    """A continuation stage failed; ``completed`` holds the reports before it."""

    def __init__(self, message, stage, completed):
        super().__init__(message)
        self.stage = stage
        self.completed = completed


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class ProblemParams:
    lam: float = 0.0
    p: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "lam", float(self.lam))
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal values on every mesh vertex; zero on the boundary."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_vertices,):
            raise ValueError(f"field has {v.shape} values for {self.mesh.n_vertices} vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite values")
        if np.any(v[self.mesh.boundary_mask] != 0.0):
            raise ValueError("field is nonzero on the boundary")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_interior(cls, mesh, interior_values):
        v = np.zeros(mesh.n_vertices)
        v[mesh.interior] = interior_values
        return cls(mesh, v)

    @property
    def interior_values(self):
        return self.values[self.mesh.interior]

    def __call__(self, points):
        return self.mesh.interpolate(self.values, points)


@dataclass(frozen=True, eq=False)
class SolveReport:
    """Solution of one (λ, p) problem together with its energies and history."""

    params: ProblemParams
    solution: Field
    c_squared: float
    pde_residual: float
    iterations: int
    newton_iterations: int
    p_path: tuple
    max_point: tuple
    max_index: int
    sup_norm: float
    drift: float = 0.0
    history: tuple = field(default=(), repr=False)

    @property
    def p(self):
        return self.params.p

    @property
    def lam(self):
        return self.params.lam

    @property
    def mesh(self):
        return self.solution.mesh

    @property
    def epsilon(self):
        """Local scale 1/(sqrt(p-1)·‖u‖_∞^{(p-1)/2})."""
        p = self.p
        return math.exp(-0.5 * math.log(p - 1) - 0.5 * (p - 1) * math.log(self.sup_norm))

    def _ops(self):
        return operators(self.mesh)

    @property
    def grad_sq(self):
        ops = self._ops()
        u = self.solution.interior_values
        return float(u @ (ops.K @ u))

    @property
    def l2_sq(self):
        return self.integral_power(2.0)

    def integral_power(self, q):
        ops = self._ops()
        u = self.solution.interior_values
        return float(ops.m @ _abs_power(u, q))


# ---------------------------------------------------------------------------
# discrete operators


@dataclass(frozen=True, eq=False)
class Operators:
    K: sp.csr_matrix   # interior stiffness
    m: np.ndarray      # interior lumped mass weights
    interior: np.ndarray


def operators(mesh: Mesh) -> Operators:
    if "operators" not in mesh._cache:
        I = mesh.interior
        K = linalg.restrict(linalg.assemble_stiffness(mesh), I)
        m = linalg.lumped_weights(mesh)[I]
        mesh._cache["operators"] = Operators(K=K, m=m, interior=I)
    return mesh._cache["operators"]


def _abs_power(v, q):
    a = np.abs(v)
    out = np.zeros_like(a)
    pos = a > 0
    out[pos] = np.exp(q * np.log(a[pos]))
    return out


def odd_power(v, q, log_domain=True):
    """sign(v)|v|^q; in log-domain mode evaluated as exp(q·max(log|v|, -700/q))."""
    if not log_domain:
        with np.errstate(over="raise", invalid="raise"):
            try:
                return np.sign(v) * np.abs(v) ** q
            except FloatingPointError as exc:
                raise PowerOverflowError(
                    f"u^p overflowed at p={q}; rerun with log_domain=True") from exc
    a = np.abs(v)
    out = np.zeros_like(a)
    pos = a > 0
    la = np.maximum(np.log(a[pos]), LOG_FLOOR / q)
    with np.errstate(over="raise"):
        try:
            out[pos] = np.exp(q * la)
        except FloatingPointError as exc:
            raise PowerOverflowError(f"|u|^{q} overflows even in the log domain") from exc
    return np.sign(v) * out


def quotient_value(field: Field, lam, p):
    """Discrete J_λ for any p >= 1 (p = 1 gives the lumped Rayleigh quotient)."""
    if p < 1:
        raise ValueError("p must be at least 1")
    ops = operators(field.mesh)
    u = field.interior_values
    if not np.any(u):
        raise ValueError("quotient of the zero field")
    num = u @ (ops.K @ u) + lam * (ops.m @ (u * u))
    den = ops.m @ _abs_power(u, p + 1.0)
    return float(num / den ** (2.0 / (p + 1.0)))


def quotient(field: Field, params: ProblemParams):
    """Discrete quotient J_λ(u) with lumped quadrature for the L² and L^{p+1} terms."""
    return quotient_value(field, params.lam, params.p)


def first_eigenfunction(mesh: Mesh):
    """Positive first Dirichlet eigenfunction (lumped mass) and its eigenvalue."""
    ops = operators(mesh)
    M = sp.diags(ops.m, format="csr")
    pair = linalg.smallest_eigenpairs(ops.K, M, 1, sigma=0.0)[0]
    v = np.abs(pair.vector)
    return Field.from_interior(mesh, v), pair.value


def bump(mesh: Mesh, center, width):
    """Gaussian bump exp(-|x-center|²/width²) restricted to interior vertices."""
    x = mesh.vertices[mesh.interior]
    d2 = (x[:, 0] - center[0]) ** 2 + (x[:, 1] - center[1]) ** 2
    return Field.from_interior(mesh, np.exp(-d2 / width ** 2))


def random_positive(mesh: Mesh, seed):
    """Smooth random positive interior field: a first eigenfunction times a random bump mix."""
    rng = np.random.default_rng(seed)
    phi, _ = first_eigenfunction(mesh)
    x = mesh.vertices[mesh.interior]
    lo, hi = x.min(axis=0), x.max(axis=0)
    w = np.zeros(len(x))
    for _ in range(4):
        c = lo + rng.random(2) * (hi - lo)
        s = 0.2 + 0.3 * rng.random()
        w += rng.random() * np.exp(-((x - c) ** 2).sum(axis=1) / s ** 2)
    return Field.from_interior(mesh, phi.interior_values * (0.5 + w))


@dataclass(frozen=True)
class BranchSpread:
    """Least-energy levels and maximum points reached from several starts."""

    c_squared: tuple
    max_points: tuple

    @property
    def level_spread(self):
        c = np.asarray(self.c_squared)
        return float((c.max() - c.min()) / c.min())

    @property
    def point_spread(self):
        pts = np.asarray(self.max_points)
        return float(np.max(np.linalg.norm(pts - pts[0], axis=1)))


def branch_spread(params: ProblemParams, mesh: Mesh, seeds=(0, 1, 2), tol=1e-9, **kwargs):
    """Minimize from random positive starts and report how far the results disagree.

    Uniqueness of the least-energy solution is not known in general, so this
    reports the spread rather than asserting it vanishes.
    """
    reps = [minimize(params, mesh, init=random_positive(mesh, s), tol=tol, **kwargs)
            for s in seeds]
    return BranchSpread(tuple(r.c_squared for r in reps),
                        tuple(tuple(r.max_point) for r in reps))


def _max_point(mesh, values):
    I = mesh.interior
    vi = values[I]
    best = vi.max()
    idx = int(I[np.nonzero(vi == best)[0]].min())
    return idx, tuple(float(c) for c in mesh.vertices[idx])


# ---------------------------------------------------------------------------
# minimization


class _Problem:
    def __init__(self, mesh, params, log_domain):
        self.mesh = mesh
        self.p = params.p
        self.lam = params.lam
        self.ops = operators(mesh)
        self.A = (self.ops.K + sp.diags(self.lam * self.ops.m)).tocsc()
        key = ("A_lu", self.lam)
        if key not in mesh._cache:
            mesh._cache[key] = linalg.Factorized(self.A)
        self.solve = mesh._cache[key]
        self.log_domain = log_domain

    def norm_power(self, v):
        return float(self.ops.m @ _abs_power(v, self.p + 1.0))

    def normalize(self, v):
        return v / self.norm_power(v) ** (1.0 / (self.p + 1.0))

    def energy(self, v):
        return float(v @ (self.A @ v))

    def J(self, v):
        return self.energy(v) / self.norm_power(v) ** (2.0 / (self.p + 1.0))

    def F(self, u):
        return self.A @ u - self.ops.m * odd_power(u, self.p, self.log_domain)

    def dual_norm(self, r):
        return math.sqrt(max(float(r @ self.solve(r)), 0.0))


def _gradient_phase(prob, v, switch_tol, max_iter, history):
    v = prob.normalize(np.abs(v))
    J = prob.J(v)
    recent = [J]
    best = J
    prev_v = prev_g = None
    stall = 0
    it = 0
    res = math.inf
    for it in range(1, max_iter + 1):
        Av = prob.A @ v
        w = prob.solve(prob.ops.m * odd_power(v, prob.p, prob.log_domain))
        g = v - J * w
        Ag = Av - J * prob.ops.m * odd_power(v, prob.p, prob.log_domain)
        res = math.sqrt(max(float(g @ Ag), 0.0) / prob.energy(v))
        history.append(("gradient", it, J, res))
        if res <= switch_tol:
            return v, J, res, it
        tau = 1.0
        if prev_v is not None:
            s = v - prev_v
            y = g - prev_g
            sy = float(s @ (prob.A @ y))
            if sy > 0:
                tau = min(5.0, max(0.2, float(s @ (prob.A @ s)) / sy))
        trial = prob.normalize(np.abs(v - tau * g))
        Jt = prob.J(trial)
        if not Jt < max(recent[-5:]) or not np.isfinite(Jt):
            trial = prob.normalize(np.abs(w))  # inverse iteration: monotone
            Jt = prob.J(trial)
        # nonmonotone steps may raise J, so progress is measured on the best value
        if Jt < best * (1.0 - 1e-14):
            best, stall = Jt, 0
        else:
            stall += 1
        if stall >= 100:
            raise StagnationError(
                f"quotient stalled at {J!r} with gradient residual {res:.3e}",
                Field.from_interior(prob.mesh, v))
        prev_v, prev_g = v, g
        v, J = trial, Jt
        recent.append(J)
    return v, J, res, it


def _newton_phase(prob, u, tol, max_iter, history):
    m = prob.ops.m
    p = prob.p
    res0 = None
    for it in range(1, max_iter + 1):
        F = prob.F(u)
        nf = prob.dual_norm(F)
        res = nf / math.sqrt(prob.energy(u))
        history.append(("newton", it, prob.J(u), res))
        if res <= tol:
            return u, res, it - 1, True
        if res0 is None:
            res0 = res
        d = p * m * odd_power(np.abs(u), p - 1.0, prob.log_domain)
        Jac = (prob.A - sp.diags(d)).tocsc()
        try:
            delta = linalg.Factorized(Jac)(-F)
        except RuntimeError:
            return u, res, it, False
        alpha = 1.0
        while alpha > 1e-4:
            cand = u + alpha * delta
            if np.all(np.isfinite(cand)):
                nc = prob.dual_norm(prob.F(cand))
                if nc < (1.0 - 1e-4 * alpha) * nf:
                    break
            alpha *= 0.5
        else:
            return u, res, it, False
        u = cand
    F = prob.F(u)
    res = prob.dual_norm(F) / math.sqrt(prob.energy(u))
    return u, res, max_iter, res <= tol


def minimize(params: ProblemParams, mesh: Mesh, init: Field | None = None, tol=1e-9,
             switch_tol=1e-4, max_iter=5000, newton_max=30, log_domain=True,
             p_path=None):
    """Least-energy solution of -Δu + λu = u^p on ``mesh``.

    Returns a SolveReport whose ``solution`` solves the discrete problem with
    relative residual ``pde_residual`` (A⁻¹-norm of the residual over the
    A-norm of u) at most ``tol``.
    """
    prob = _Problem(mesh, params, log_domain)
    if init is None:
        init, _ = first_eigenfunction(mesh)
    v0 = init.interior_values
    if not np.any(v0):
        raise ValueError("initial field is zero")
    history = []
    v, J, res, iters = _gradient_phase(prob, v0, switch_tol, max_iter, history)
    newton_its = 0
    for _attempt in range(6):
        u = J ** (1.0 / (params.p - 1.0)) * v
        u, res, n_it, ok = _newton_phase(prob, u, tol, newton_max, history)
        newton_its += n_it
        if ok:
            break
        # Newton left its basin: tighten the gradient phase and retry
        switch_tol *= 0.1
        v, J, res, more = _gradient_phase(prob, v, switch_tol, max_iter, history)
        iters += more
    else:
        raise StagnationError(f"Newton polish failed to reach tol={tol} (residual {res:.3e})",
                              Field.from_interior(mesh, u))
    if np.any(u <= 0):
        u = np.abs(u)
    field = Field.from_interior(mesh, u)
    idx, pt = _max_point(mesh, field.values)
    return SolveReport(params=params, solution=field, c_squared=prob.J(u), pde_residual=res,
                       iterations=iters, newton_iterations=newton_its,
                       p_path=tuple(p_path or (params.p,)), max_point=pt, max_index=idx,
                       sup_norm=float(field.values[idx]), history=tuple(history))


def default_schedule(p_target, start=3.0, ratio=1.5):
    """Geometric schedule from ``start`` with the given ratio, ending exactly at ``p_target``."""
    if p_target <= start:
        return [float(p_target)]
    out = [float(start)]
    while out[-1] * ratio < p_target:
        out.append(out[-1] * ratio)
    out.append(float(p_target))
    return out


def continue_in_p(params_target: ProblemParams, mesh: Mesh, schedule=None, tol=1e-9,
                  init: Field | None = None, **kwargs):
    """Solve along an increasing p schedule, warm-starting each stage from the last."""
    if schedule is None:
        schedule = default_schedule(params_target.p)
    schedule = [float(s) for s in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    if schedule[-1] != params_target.p:
        raise ValueError("schedule must end at the target p")
    if schedule[0] > 5:
        raise ValueError("schedule must start at p <= 5")
    reports = []
    current = init
    for i, p in enumerate(schedule):
        params = ProblemParams(params_target.lam, p)
        try:
            rep = minimize(params, mesh, current, tol=tol, p_path=schedule[: i + 1], **kwargs)
        except SolverError as exc:
            raise ContinuationError(f"continuation stage {i} (p={p}) failed: {exc}", i,
                                    reports) from exc
        if reports:
            prev = reports[-1].max_point
            rep = _with_drift(rep, math.dist(prev, rep.max_point))
        reports.append(rep)
        current = rep.solution
    return reports


def _with_drift(rep, drift):
    from dataclasses import replace

    return replace(rep, drift=drift)


# ---------------------------------------------------------------------------
# graded solves at large p


def estimate_epsilon(p, amplitude=math.sqrt(math.e)):
    return math.exp(-0.5 * math.log(p - 1) - 0.5 * (p - 1) * math.log(amplitude))


def transfer(field: Field, mesh: Mesh):
    """Interpolate a field onto another mesh of the same domain (zero outside)."""
    vals = field.mesh.interpolate(field.values, mesh.vertices)
    vals = np.nan_to_num(vals, nan=0.0)
    vals[mesh.boundary_mask] = 0.0
    return Field(mesh, np.maximum(vals, 0.0))


def graded_solve(domain, params: ProblemParams, base_h=0.03, window=4.0, resolve=8.0,
                 focus=None, schedule=None, tol=1e-9, max_regrades=3, growth=0.25,
                 max_vertices=None):
    """Continuation to large p on a mesh graded around the concentration point.

    The core is meshed at ε/``resolve`` out to about 1.5·``window``·ε, with ε
    first estimated from the amplitude √e and then from the computed solution;
    the mesh is rebuilt while the estimate is off by more than 25%.
    Returns ``(reports, mesh)``.
    """
    if focus is None:
        if domain.symmetric:
            focus = tuple(domain.center)
        else:
            coarse = build_mesh(domain, base_h)
            reps = continue_in_p(ProblemParams(params.lam, min(params.p, 10.0)), coarse,
                                 default_schedule(min(params.p, 10.0)), tol=1e-8)
            focus = reps[-1].max_point
    eps = estimate_epsilon(params.p)
    kw = {} if max_vertices is None else {"max_vertices": max_vertices}
    reports = None
    for _ in range(max_regrades + 1):
        inner = min(base_h, eps / resolve)
        grading = GradingSpec(tuple(focus), inner, base_h, 1.5 * window * eps, growth)
        mesh = graded_mesh(domain, base_h, grading, **kw)
        if reports is None:
            reports = continue_in_p(params, mesh, schedule, tol=tol)
        else:
            start = transfer(reports[-1].solution, mesh)
            rep = minimize(params, mesh, start, tol=tol, p_path=reports[-1].p_path)
            reports = reports[:-1] + [rep]
        measured = reports[-1].epsilon
        if abs(measured - eps) <= 0.25 * measured:
            break
        eps = measured
    return reports, reports[-1].mesh


# ---------------------------------------------------------------------------
# snapshots


def write_field(report_or_field, path, p=None, lam=None):
    """Text snapshot: ``field vertices=N p=<p> lambda=<λ>`` then one value per line."""
    if isinstance(report_or_field, SolveReport):
        fld = report_or_field.solution
        p, lam = report_or_field.p, report_or_field.lam
    else:
        fld = report_or_field
    with open(path, "w") as fh:
        fh.write(f"field vertices={fld.mesh.n_vertices} p={float(p)!r} lambda={float(lam)!r}\n")
        for v in fld.values:
            fh.write(f"{v:.17g}\n")


def read_field(path, mesh: Mesh):
    """Read a snapshot; returns ``(field, p, lam)``."""
    with open(path) as fh:
        head = fh.readline().split()
        if not head or head[0] != "field":
            raise ValueError(f"{path} is not a field snapshot")
        meta = dict(tok.split("=", 1) for tok in head[1:])
        n = int(meta["vertices"])
        vals = np.array([float(fh.readline()) for _ in range(n)])
    return Field(mesh, vals), float(meta["p"]), float(meta["lambda"])
