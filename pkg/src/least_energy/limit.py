"""Exact objects of the p → ∞ limit: the Liouville bubble, its radial kernel
modes, the Moser test-function bound and the Robin function of a domain."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse.linalg as spla

from . import kernels, linalg
from .mesh import Mesh
from .reports import MU_BAR_SQ

TWO_PI = 2.0 * math.pi
EIGHT_PI = 8.0 * math.pi


class LimitError(ValueError):
    pass


class IntegrationError(RuntimeError):
    """RK4 blew up; ``radius`` is the last radius with finite values."""

    def __init__(self, message, radius):
        super().__init__(message)
        self.radius = radius


# ---------------------------------------------------------------------------
# bubble


@dataclass(frozen=True)
class Bubble:
    """U(x) = log(8μ² / (1 + μ²|x−y|²)²), a solution of −ΔU = e^U with mass 8π.

    ``mu_sq`` is stored separately so the canonical μ² = 1/8 is exact.
    """

    mu: float
    center: tuple = (0.0, 0.0)
    mu_sq: float | None = None

    def __post_init__(self):
        if not self.mu > 0:
            raise LimitError(f"bubble needs mu > 0, got {self.mu}")
        if self.mu_sq is None:
            object.__setattr__(self, "mu_sq", self.mu * self.mu)
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def canonical(cls, center=(0.0, 0.0)):
        return cls(mu=math.sqrt(MU_BAR_SQ), center=center, mu_sq=MU_BAR_SQ)

    @property
    def scale_radius(self):
        return 1.0 / self.mu


def bubble_eval(b: Bubble, x):
    """U_{μ,y} at a point or an ``(n, 2)`` array of points."""
    x = np.asarray(x, dtype=float)
    d2 = np.sum((x - np.asarray(b.center)) ** 2, axis=-1)
    out = math.log(8.0 * b.mu_sq) - 2.0 * np.log1p(b.mu_sq * d2)
    return float(out) if np.ndim(out) == 0 else out


def bubble_mass(b: Bubble, radius):
    """∫_{B(y, radius)} e^U = 8π μ²ρ²/(1 + μ²ρ²); radius = inf gives 8π."""
    if not radius > 0:
        raise LimitError(f"radius must be positive, got {radius}")
    if math.isinf(radius):
        return EIGHT_PI
    t = b.mu_sq * radius * radius
    return EIGHT_PI * t / (1.0 + t)


def kernel_functions(r):
    """The bounded kernel profiles ζ₀ = (8−r²)/(8+r²) and ζ₁ = r/(1+r²/8)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise LimitError("kernel functions need r >= 0")
    z0 = (8.0 - r * r) / (8.0 + r * r)
    z1 = r / (1.0 + r * r / 8.0)
    if np.ndim(r) == 0:
        return float(z0), float(z1)
    return z0, z1


# ---------------------------------------------------------------------------
# radial modes


@dataclass(frozen=True, eq=False)
class RadialMode:
    """Angular-frequency-k component ψ_k sampled on a radial grid."""

    k: int
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if self.k < 0 or int(self.k) != self.k:
            raise LimitError(f"k must be a nonnegative integer, got {self.k}")
        if g.shape != v.shape or g.ndim != 1:
            raise LimitError("grid and values must be matching 1D arrays")
        if np.any(np.diff(g) <= 0):
            raise LimitError("grid must be strictly increasing")
        if self.k >= 1 and g[0] == 0.0 and v[0] != 0.0:
            raise LimitError("modes with k >= 1 vanish at r = 0")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)

    @classmethod
    def sample(cls, k, f, step=1e-3, r_max=10.0):
        n = int(round(r_max / step))
        r = np.linspace(0.0, n * step, n + 1)
        return cls(k, r, f(r))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "psi"])
            for r, v in zip(self.grid, self.values):
                w.writerow([f"{r:.10g}", f"{v:.17g}"])


def _weight(r):
    return 1.0 / (1.0 + r * r / 8.0) ** 2


def mode_operator_residual(mode: RadialMode):
    """max over interior nodes of |A_k ψ| by second-order finite differences.

    A_k ψ = −ψ'' − ψ'/r + k²ψ/r² − (1+r²/8)⁻²ψ is applied through φ = ψ/r^k,
    A_k ψ = −r^k (φ'' + (2k+1)φ'/r) − (1+r²/8)⁻²ψ, which keeps the central
    differences second order up to r = 0 because φ is even.
    """
    r, psi, k = mode.grid, mode.values, mode.k
    h = np.diff(r)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        raise LimitError("mode_operator_residual needs a uniform grid")
    h = float(h[0])
    if h > 1e-2 + 1e-15:
        raise LimitError(f"grid step {h} is too coarse (needs <= 1e-2)")
    if r[-1] < 10.0 - 1e-9:
        raise LimitError(f"grid ends at {r[-1]}, needs r_max >= 10")
    if r[0] != 0.0:
        raise LimitError("grid must start at r = 0")
    phi = np.empty_like(psi)
    phi[1:] = psi[1:] / r[1:] ** k
    phi[0] = psi[0] if k == 0 else (4.0 * phi[1] - phi[2]) / 3.0
    ri = r[1:-1]
    d2 = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / (h * h)
    d1 = (phi[2:] - phi[:-2]) / (2.0 * h)
    A = -ri ** k * (d2 + (2 * k + 1) * d1 / ri) - _weight(ri) * psi[1:-1]
    return float(np.max(np.abs(A)))


class ShootResult(NamedTuple):
    verdict: str           # "bounded" or "unbounded"
    trace: RadialMode      # regular branch, leading coefficient 1
    near_max: float        # max |ψ| on [0, 1]
    far_max: float         # max |ψ| on [0, r_max]
    second: RadialMode | None  # k = 0 only: second solution on [1, r_max]


def _series(k, r, terms=8):
    """Regular solution r^k Σ a_j r^{2j} (a₀ = 1) and its derivative."""
    b = [(i + 1) * (-0.125) ** i for i in range(terms)]
    a = [1.0]
    for j in range(1, terms):
        a.append(-sum(b[i] * a[j - 1 - i] for i in range(j)) / (4.0 * j * (k + j)))
    psi = sum(aj * r ** (k + 2 * j) for j, aj in enumerate(a))
    dpsi = sum(aj * (k + 2 * j) * r ** (k + 2 * j - 1) for j, aj in enumerate(a))
    return psi, dpsi


def _check_finite(psi, r0, h):
    bad = ~np.isfinite(psi)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise IntegrationError(f"integration failed past r = {r0 + (i - 1) * h}", r0 + (i - 1) * h)


def mode_shoot(k: int, r_max: float = 50.0, step: float = 1e-3):
    """Integrate the k-th kernel equation from r ≈ 0 along the regular branch.

    The verdict is ``bounded`` iff max|ψ| on [0, r_max] ≤ 10·max|ψ| on [0, 1].
    For k = 0 the second solution is also traced from r = 1 with unit
    Wronskian r(ψ₁ψ₂' − ψ₁'ψ₂) = 1 and ψ₂(1) = 0.
    """
    if k < 0 or int(k) != k:
        raise LimitError(f"k must be a nonnegative integer, got {k}")
    if r_max < 50.0:
        raise LimitError(f"r_max must be at least 50, got {r_max}")
    n = int(round(r_max / step))
    h = r_max / n
    psi0, dpsi0 = _series(k, h)
    psi, _ = kernels.mode_rk4(int(k), h, psi0, dpsi0, h, n - 1)
    psi = np.concatenate([[1.0 if k == 0 else 0.0], np.asarray(psi)])
    _check_finite(psi, 0.0, h)
    r = np.linspace(0.0, r_max, n + 1)
    one = int(round(1.0 / h))
    near = float(np.max(np.abs(psi[: one + 1])))
    far = float(np.max(np.abs(psi)))
    verdict = "bounded" if far <= 10.0 * near else "unbounded"
    second = None
    if k == 0:
        p1 = psi[one]
        s, _ = kernels.mode_rk4(0, r[one], 0.0, 1.0 / (r[one] * p1), h, n - one)
        s = np.asarray(s)
        _check_finite(s, r[one], h)
        second = RadialMode(0, r[one:], s)
    return ShootResult(verdict, RadialMode(int(k), r, psi), near, far, second)


# ---------------------------------------------------------------------------
# Moser test function


class MoserBound(NamedTuple):
    quotient_bound: float   # upper bound on c_{λ,p} = J_λ^{1/2}
    gradient_norm: float    # ‖∇m_d‖² (analytically 1)
    l2_sq: float            # ‖m_d‖²
    power_lower: float      # I₁ = ∫_{B_d} m_d^{p+1}, a lower bound for ∫ m_d^{p+1}


def moser_bound(R, d=None, p=3.0, lam=0.0):
    """Quotient bound from the Moser function on B_R (assumed inside the domain).

    m_d = √(L/2π) on B_d and log(R/|x|)/√(2πL) on B_R \\ B_d, L = log(R/d).
    The default d = R e^{−(p+1)/4} is the cutoff that balances the estimate.
    """
    if not R > 0:
        raise LimitError(f"R must be positive, got {R}")
    if d is None:
        d = R * math.exp(-(p + 1.0) / 4.0)
    if not 0 < d < R:
        raise LimitError(f"need 0 < d < R, got d={d}, R={R}")
    L = math.log(R / d)
    grad = math.log(R / d) / L
    tail = 0.25 - math.exp(-2.0 * L) * (0.5 * L * L + 0.5 * L + 0.25)
    l2 = (L * math.pi * d * d + TWO_PI * R * R * tail / L) / TWO_PI
    log_i1 = 0.5 * (p + 1.0) * math.log(L / TWO_PI) + math.log(math.pi * d * d)
    bound_sq = (grad + lam * l2) * math.exp(-2.0 * log_i1 / (p + 1.0))
    return MoserBound(math.sqrt(bound_sq), grad, l2, math.exp(log_i1))


# ---------------------------------------------------------------------------
# Robin function


@dataclass(frozen=True, eq=False)
class RobinField:
    """Samples of R(y) = g(y, y) with g the regular part of the Dirichlet Green's function."""

    mesh: Mesh
    samples: np.ndarray
    values: np.ndarray
    critical_point: tuple
    critical_value: float
    gradient_residual: float

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "R"])
            for (x, y), v in zip(self.samples, self.values):
                w.writerow([f"{x:.10g}", f"{y:.10g}", f"{v:.17g}"])


class _RobinSolver:
    def __init__(self, mesh):
        self.mesh = mesh
        K = linalg.assemble_stiffness(mesh)
        I = mesh.interior
        B = np.nonzero(mesh.boundary_mask)[0]
        self.I, self.B = I, B
        self.KIB = K[I][:, B].tocsr()
        self.lu = spla.splu(linalg.restrict(K, I).tocsc())

    def __call__(self, ys):
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        xb = self.mesh.vertices[self.B]
        d = np.linalg.norm(xb[:, None, :] - ys[None, :, :], axis=2)
        gb = np.log(d) / TWO_PI
        gi = self.lu.solve(-(self.KIB @ gb))
        out = np.empty(len(ys))
        full = np.zeros(self.mesh.n_vertices)
        for j, y in enumerate(ys):
            full[self.I] = gi[:, j]
            full[self.B] = gb[:, j]
            out[j] = self.mesh.interpolate(full, y[None, :])[0]
        return out


def sample_grid(mesh: Mesh, spacing, margin=None, center=None):
    """Square lattice of points through ``center`` at least ``margin`` inside the domain."""
    dom = mesh.domain
    if margin is None:
        margin = 2.0 * mesh.h_max + 1e-12
    c = np.asarray(center if center is not None else dom.center, dtype=float)
    half = dom.diameter
    n = int(math.ceil(half / spacing))
    t = np.arange(-n, n + 1) * spacing
    X, Y = np.meshgrid(c[0] + t, c[1] + t, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    keep = dom.boundary_distance(pts) > margin
    return pts[keep]


def _quadratic_polish(samples, values, best):
    """Stationary point of a least-squares quadratic through the 13 nearest samples."""
    x0 = samples[best]
    d = np.linalg.norm(samples - x0, axis=1)
    near = np.argsort(d, kind="stable")[:13]
    if len(near) < 6:
        return x0
    dx = samples[near] - x0
    V = np.column_stack([np.ones(len(near)), dx[:, 0], dx[:, 1],
                         0.5 * dx[:, 0] ** 2, dx[:, 0] * dx[:, 1], 0.5 * dx[:, 1] ** 2])
    coef, *_ = np.linalg.lstsq(V, values[near], rcond=None)
    g = coef[1:3]
    H = np.array([[coef[3], coef[4]], [coef[4], coef[5]]])
    if np.any(np.linalg.eigvalsh(H) >= 0):
        return x0
    step = np.linalg.solve(H, -g)
    if np.linalg.norm(step) > d[near].max():
        return x0
    return x0 + step


def robin_function(mesh: Mesh, samples=None, spacing=None):
    """Robin function at interior samples and its critical point.

    For each sample y the discrete harmonic g(·, y) with boundary values
    (1/2π) log|x − y| is computed with one LU factorization shared by all
    samples; R(y) is its value at y. The critical point is the sample maximum
    polished by a local quadratic fit; ``gradient_residual`` is a central
    difference estimate of |∇R| there.
    """
    if mesh.domain is None:
        raise LimitError("robin_function needs a mesh with a domain")
    if samples is None:
        samples = sample_grid(mesh, spacing or 4.0 * mesh.h_max)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    margin = 2.0 * mesh.h_max
    dist = mesh.domain.boundary_distance(samples)
    bad = np.nonzero(dist <= margin)[0]
    if len(bad):
        i = int(bad[0])
        raise LimitError(f"sample {tuple(samples[i])} is {dist[i]:.4g} from the boundary; "
                         f"samples need distance > 2 h_max = {margin:.4g}")
    solve = _RobinSolver(mesh)
    values = solve(samples)
    if not np.all(np.isfinite(values)):
        raise LimitError("Robin function is not finite at every sample")
    order = np.lexsort((samples[:, 1], samples[:, 0], -values))
    best = int(order[0])
    x = _quadratic_polish(samples, values, best)
    if mesh.domain.boundary_distance(x[None, :])[0] <= margin:
        x = samples[best]
    delta = 0.5 * mesh.h_max
    probe = np.array([x, x + [delta, 0], x - [delta, 0], x + [0, delta], x - [0, delta]])
    pv = solve(probe)
    grad = np.array([pv[1] - pv[2], pv[3] - pv[4]]) / (2.0 * delta)
    return RobinField(mesh=mesh, samples=samples, values=values,
                      critical_point=(float(x[0]), float(x[1])), critical_value=float(pv[0]),
                      gradient_residual=float(np.linalg.norm(grad)))
