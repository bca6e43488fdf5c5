"""Radial oracle for the disk.

On a disk of radius R the least-energy solution is radial, and the PDE reduces
to u'' + u'/r = λu - u^p with u'(0) = 0. We shoot on the amplitude a = u(0)
so that the first zero of u lands at r = R.

Everything is integrated in the logarithmic variable s = log r. A uniform
step in s is a step proportional to r, so the grid is automatically fine in
the concentration core (width ~ ε, which is about 1e-22 at p = 200) and coarse
near the boundary.

Linearized spectra are computed by Sturm counting with a Prüfer angle instead
of an assembled matrix. At large p the matrix entries in the core are of size
1/ε² while the eigenvalues of interest are O(1), so an assembled matrix loses
them to rounding; the Prüfer sweep stays well scaled. ``mode_matrix_eigenvalues``
keeps a tridiagonal finite-element discretization as an independent
cross-check at moderate p.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq

from . import kernels
from .reports import ProfileComparison, SpectrumReport, limit_profile

DS = 1e-3
"""Default step in s = log r."""

START_FRACTION = 1e-4
"""Series start radius as a fraction of the local scale ε."""

AMPLITUDE_CAP = 10.0


class ShootingError(RuntimeError):
    """Raised when the amplitude bracket shows no sign change.

    ``trace`` holds ``(amplitude, first_zero_radius_or_nan)`` pairs from a scan
    over the bracket.
    """

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class DiscretizationError(ValueError):
    """Raised when a radial grid is too coarse to resolve the r = 0 behavior."""


# ---------------------------------------------------------------------------
# Bessel root


def _j0(x):
    """J0 by its power series (accurate for the moderate arguments used here)."""
    term = 1.0
    total = 1.0
    q = -0.25 * x * x
    m = 0
    while abs(term) > 1e-18 * max(1.0, abs(total)):
        m += 1
        term *= q / (m * m)
        total += term
    return total


def bessel_lambda1(disk_radius=1.0):
    """First Dirichlet eigenvalue of the Laplacian on a disk: (j_{0,1}/R)^2.

    j_{0,1} is found by bisection of the J0 series on [2, 3] to 1e-12 or better.
    """
    if disk_radius <= 0:
        raise ValueError("disk_radius must be positive")
    lo, hi = 2.0, 3.0
    while hi - lo > 1e-14:
        mid = 0.5 * (lo + hi)
        if _j0(mid) > 0:
            lo = mid
        else:
            hi = mid
    j01 = 0.5 * (lo + hi)
    return (j01 / disk_radius) ** 2


# ---------------------------------------------------------------------------
# shooting


def local_scale(p, amplitude):
    """ε = 1/(sqrt(p-1) a^{(p-1)/2}), evaluated in log form."""
    return math.exp(-0.5 * math.log(p - 1.0) - 0.5 * (p - 1.0) * math.log(amplitude))


def _series_start(p, lam, a, r):
    # u = a + c r^2 + d r^4 near the origin
    # written in rho = r^2 a^{p-1} so the large coefficients never form alone
    if r == 0.0:
        return a, 0.0
    r2 = r * r
    rho = math.exp((p - 1.0) * math.log(a) + math.log(r2))
    c2 = (lam * r2 - rho) * a / 4.0         # c r^2
    d4 = (lam * r2 - p * rho) * c2 / 16.0   # d r^4
    return a + c2 + d4, 2.0 * c2 + 4.0 * d4  # u and r u'


def _start_s(p, a):
    return math.log(START_FRACTION * local_scale(p, a))


def first_zero(p, lam, amplitude, s_max, ds=DS):
    """Radius of the first zero of the radial solution with u(0) = amplitude.

    Returns NaN when u stays positive up to r = e^{s_max}.
    """
    s0 = _start_s(p, amplitude)
    u0, v0 = _series_start(p, lam, amplitude, math.exp(s0))
    sz, _, _, _, _ = kernels.radial_integrate(p, lam, s0, ds, s_max, u0, v0, False)
    return math.exp(sz) if sz == sz else float("nan")


def amplitude_bracket(p, lam, disk_radius=1.0):
    """Amplitude range to search: [0.99 (λ+λ₁)^{1/(p-1)}, min(10, overflow cap)]."""
    lo = 0.99 * (lam + bessel_lambda1(disk_radius)) ** (1.0 / (p - 1.0))
    hi = min(AMPLITUDE_CAP, math.exp(650.0 / p))
    return lo, hi


@dataclass(frozen=True)
class RadialSolution:
    """Radial solution on a disk, sampled on a grid uniform in s = log r.

    ``grid[0] == 0`` carries the amplitude; the remaining points are
    ``exp(s_grid)`` and the last one is ``disk_radius``. ``rv`` holds r u'.
    """

    p: float
    lam: float
    disk_radius: float
    amplitude: float
    grid: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    s_grid: np.ndarray = field(repr=False)
    rv: np.ndarray = field(repr=False)
    zero_radius: float = 0.0

    @property
    def epsilon(self):
        return local_scale(self.p, self.amplitude)

    @property
    def sup_norm(self):
        return self.amplitude

    @property
    def ds(self):
        return float(self.s_grid[1] - self.s_grid[0])

    def _integrate(self, f):
        # 2π ∫ f r dr = 2π ∫ f r^2 ds, plus the disk r < r_start where f ≈ f(0)
        r = self.grid[1:]
        core = 0.5 * f[0] * r[0] ** 2
        return 2.0 * math.pi * (simpson(f[1:] * r * r, x=self.s_grid) + core)

    def integral_power(self, q):
        """∫ u^q over the disk (log-domain power)."""
        u = self.values
        with np.errstate(divide="ignore"):
            f = np.where(u > 0, np.exp(q * np.log(np.where(u > 0, u, 1.0))), 0.0)
        return self._integrate(f)

    @property
    def grad_sq(self):
        return 2.0 * math.pi * simpson(self.rv[1:] ** 2, x=self.s_grid)

    @property
    def l2_sq(self):
        return self.integral_power(2.0)

    @property
    def c_squared(self):
        """Quotient value J(u) = (∫|∇u|² + λ∫u²)/(∫u^{p+1})^{2/(p+1)}."""
        num = self.grad_sq + self.lam * self.l2_sq
        return num / self.integral_power(self.p + 1.0) ** (2.0 / (self.p + 1.0))

    def energy_identity_residual(self):
        """Relative gap in ∫|∇u|² + λ∫u² = ∫u^{p+1}."""
        lhs = self.grad_sq + self.lam * self.l2_sq
        rhs = self.integral_power(self.p + 1.0)
        return abs(lhs - rhs) / rhs

    def sobolev_ratio(self):
        """D_p estimate ‖u‖_{L^p} / (sqrt(p) ‖∇u‖_{L²})."""
        lp = self.integral_power(self.p) ** (1.0 / self.p)
        return lp / (math.sqrt(self.p) * math.sqrt(self.grad_sq))

    def rescaled_core_mass(self, window=4.0):
        """(p-1)·∫_{|x| < window·ε} u^{p-1}/a^{p-1}, which tends to the bubble mass on B_window."""
        mask = self.grid <= window * self.epsilon
        idx = np.nonzero(mask)[0]
        last = idx[-1]
        u = self.values[: last + 1]
        rho = np.exp((self.p - 1.0) * np.log(u / self.amplitude))
        r = self.grid[: last + 1]
        core = 0.5 * rho[0] * r[1] ** 2
        body = simpson(rho[1:] * r[1:] ** 2, x=self.s_grid[:last])
        return 2.0 * math.pi * (body + core) / self.epsilon ** 2

    def __call__(self, radius):
        """Interpolate u at arbitrary radii in [0, disk_radius]."""
        r = np.atleast_1d(np.asarray(radius, dtype=float))
        out = np.empty_like(r)
        r0 = self.grid[1]
        small = r < r0
        if np.any(small):
            out[small] = np.array([_series_start(self.p, self.lam, self.amplitude, x)[0]
                                   for x in r[small]])
        big = ~small
        if np.any(big):
            spline = CubicHermiteSpline(self.s_grid, self.values[1:], self.rv[1:])
            out[big] = spline(np.log(np.minimum(r[big], self.disk_radius)))
        return out if np.ndim(radius) else float(out[0])

    def monotone(self):
        """True when u' < 0 at every grid point with r > 0."""
        return bool(np.all(self.derivative[1:] < 0))

    def write_trace(self, path):
        """CSV trace with columns r, u, du_dr."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "u", "du_dr"])
            for r, u, du in zip(self.grid, self.values, self.derivative):
                w.writerow([repr(float(r)), repr(float(u)), repr(float(du))])


def shoot(p, lam=0.0, disk_radius=1.0, tol=1e-10, ds=DS):
    """Shoot on the amplitude so that the first zero of u is at ``disk_radius``.

    Brent's method runs on log a. The mismatch is log(r_zero/R) when a zero is
    met before 4R, and a positive constant otherwise.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if disk_radius <= 0:
        raise ValueError("disk_radius must be positive")
    log_r = math.log(disk_radius)
    s_max = log_r + math.log(4.0)

    def mismatch(t):
        rz = first_zero(p, lam, math.exp(t), s_max, ds)
        if rz != rz:
            return math.log(4.0) + 1.0
        return math.log(rz) - log_r

    a_lo, a_hi = amplitude_bracket(p, lam, disk_radius)
    f_lo = mismatch(math.log(a_lo))
    f_hi = mismatch(math.log(a_hi))
    if not (f_lo > 0 > f_hi):
        trace = [(float(a), first_zero(p, lam, float(a), s_max, ds))
                 for a in np.geomspace(a_lo, a_hi, 25)]
        raise ShootingError(
            f"no sign change of the first-zero mismatch over amplitudes "
            f"[{a_lo:.6g}, {a_hi:.6g}] for p={p}, lambda={lam}", trace)
    t = brentq(mismatch, math.log(a_lo), math.log(a_hi), xtol=1e-15, rtol=1e-15,
               maxiter=300)
    a = math.exp(t)
    return _trajectory(p, lam, disk_radius, a, tol, ds)


def _trajectory(p, lam, disk_radius, a, tol, ds):
    log_r = math.log(disk_radius)
    # an even number of steps that ends exactly at log R
    n = int(math.ceil((log_r - _start_s(p, a)) / ds))
    n += n % 2
    s0 = log_r - n * ds
    u0, v0 = _series_start(p, lam, a, math.exp(s0))
    sz, vz, _, us, vs = kernels.radial_integrate(p, lam, s0, ds, log_r + 4 * ds, u0, v0,
                                                 True)
    if sz != sz:
        raise ShootingError("final trajectory has no zero", [])
    zero_radius = math.exp(sz)
    if abs(zero_radius - disk_radius) > tol * disk_radius:
        raise ShootingError(
            f"first zero at {zero_radius!r}, off by more than tol={tol}", [])
    us = np.array(us[: n + 1])
    vs = np.array(vs[: n + 1])
    if len(us) < n + 1:
        # the zero fell a hair before R; close the grid with the zero state
        pad = n + 1 - len(us)
        us = np.concatenate([us[:-1], np.zeros(pad + 1)])
        vs = np.concatenate([vs[:-1], np.full(pad + 1, vz)])
    us[-1] = 0.0
    s_grid = s0 + ds * np.arange(n + 1)
    s_grid[-1] = log_r
    r = np.exp(s_grid)
    grid = np.concatenate([[0.0], r])
    values = np.concatenate([[a], us])
    rv = np.concatenate([[0.0], vs])
    derivative = np.concatenate([[0.0], vs / r])
    return RadialSolution(p=float(p), lam=float(lam), disk_radius=float(disk_radius),
                          amplitude=a, grid=grid, values=values, derivative=derivative,
                          s_grid=s_grid, rv=rv, zero_radius=zero_radius)


def amplitude_table(solutions, path=None):
    """Rows (p, lambda, amplitude, c_squared, epsilon); optionally written as CSV."""
    rows = [{"p": s.p, "lambda": s.lam, "amplitude": s.amplitude,
             "c_squared": s.c_squared, "epsilon": s.epsilon} for s in solutions]
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["p"])
            w.writeheader()
            for row in rows:
                w.writerow({k: repr(float(v)) for k, v in row.items()})
    return rows


# ---------------------------------------------------------------------------
# rescaled profile


def oracle_profile(sol, radii=None):
    """Rescaled profile φ(X) = (p-1) log(u(ε|X|)/a) against the limit bubble."""
    if radii is None:
        radii = np.linspace(0.0, 4.0, 81)
    radii = np.asarray(radii, dtype=float)
    eps = sol.epsilon
    u = np.atleast_1d(sol(radii * eps))
    phi = (sol.p - 1.0) * np.log(u / sol.amplitude)
    phi = np.where(radii == 0.0, 0.0, phi)
    bubble = limit_profile(radii)
    points = np.column_stack([radii, np.zeros_like(radii)])
    return ProfileComparison(
        p=sol.p, lam=sol.lam, epsilon=eps, sample_radii=radii, sample_points=points,
        phi_values=phi, bubble_values=bubble,
        sup_discrepancy=float(np.max(np.abs(phi - bubble))), window_resolved=True,
        local_h=sol.ds * eps)


# ---------------------------------------------------------------------------
# linearized modes
#
# In s = log r the mode equation L_k psi = mu psi reads psi_s = z,
# z_s = (k^2 + r^2 (V - mu)) psi with V = lambda - p u^{p-1}. Eigenvalues below
# mu are counted by the zeros of the regular solution (Sturm), tracked with a
# Prüfer angle. For k = 1 the translation mode u' solves L_1 u' = 0 exactly;
# the regular solution agrees with it up to a component that grows like r,
# and at large p rounding noise in that component swamps the O(1) eigenvalue.
# Writing psi = u' w removes the cancellation:
#     -(r u'^2 w')' = mu r u'^2 w,   w(R) = 0,
# and the zeros of w are the zeros of psi because u' < 0 on (0, R]. Its
# regular solution is w = 1 plus a tiny growing part, so it is swept in the
# linear variables rather than as an angle.

Q_CUT = 1e4


class _ModeGrid(NamedTuple):
    W: np.ndarray   # r^2 (λ - p u^{p-1})
    E: np.ndarray   # r^2
    G: np.ndarray   # d/ds log(u'^2) for the factorized k = 1 problem
    zero: np.ndarray
    h: float        # RK4 step (two grid spacings)
    r0: float
    v0: float       # potential at the first node


def _mode_grid(sol):
    r = sol.grid[1:]
    u = sol.values[1:]
    if len(r) < 5 or (len(r) - 1) % 2:
        raise DiscretizationError("radial grid needs an even number (>= 4) of steps")
    if sol.ds > 0.05:
        raise DiscretizationError(f"grid step {sol.ds} in log r is too coarse")
    pos = u > 0
    logu = np.log(np.where(pos, u, 1.0))
    up1 = np.where(pos, np.exp((sol.p - 1.0) * logu), 0.0)
    V = sol.lam - sol.p * up1
    rv = sol.rv[1:]
    # (r u')_s = r^2 (λu - u^p) and (u'^2)_s / u'^2 = 2 (r u')_s / (r u') - 2
    G = 2.0 * r * r * (sol.lam * u - u * up1) / rv - 2.0
    return _ModeGrid(W=r * r * V, E=r * r, G=G, zero=np.zeros_like(r), h=2.0 * sol.ds,
                     r0=float(r[0]), v0=float(V[0]))


def _start(k, mu, g):
    """Regular initial state (y, z) at the first grid node."""
    if k == 1:
        # factorized form: w = 1 - mu r^2/8, r w' = -mu r^2/4
        return 1.0 - mu * g.r0 ** 2 / 8.0, -mu * g.r0 ** 2 / 4.0
    # psi ~ r^k (1 + (V-mu) r^2 / (4(k+1))), scaled by r^-k
    x = (g.v0 - mu) * g.r0 ** 2 / (4.0 * (k + 1))
    return 1.0 + x, k + (k + 2) * x


def _coefficients(k, g):
    if k == 1:
        return 0.0, g.zero, g.G
    return float(k * k), g.W, g.zero


def _theta_end(k, mu, g):
    y, z = _start(k, mu, g)
    k2, W, G = _coefficients(k, g)
    if k == 1:
        # w stays near 1 across the core while w_s ~ mu r^2 is tiny; an angle
        # pinned at pi/2 would round those increments away, the linear state
        # keeps them to full relative precision
        ys, zs = kernels.linear_sweep(k2, mu, y, z, W, g.E, G, g.h)
        return float(np.unwrap(np.arctan2(ys, zs))[-1])
    th, _ = kernels.prufer_sweep(k2, mu, math.atan2(y, z), W, g.E, G, g.h, Q_CUT)
    return th


def eigen_count(sol, k, mu, grid=None):
    """Number of eigenvalues of L_k below ``mu`` (zeros of the regular solution)."""
    g = grid or _mode_grid(sol)
    return int(math.floor(_theta_end(k, mu, g) / math.pi))


def _mode_eigenvalues(k, n_eigs, g):
    if k == 1:
        lower = 0.0  # the factorized operator is positive
    else:
        lower = float(np.min(g.W / g.E)) - 1.0
    upper = 1.0
    while math.floor(_theta_end(k, upper, g) / math.pi) < n_eigs:
        upper *= 2.0
        if upper > 1e12:
            raise DiscretizationError("eigenvalue search did not terminate")
    tlo, thi = math.asinh(lower), math.asinh(upper)
    out = []
    for j in range(n_eigs):
        a, b = tlo, thi
        target = (j + 1) * math.pi
        # bisect on the count, then polish the angle condition with Brent
        for _ in range(200):
            m = 0.5 * (a + b)
            if _theta_end(k, math.sinh(m), g) < target:
                a = m
            else:
                b = m
            if b - a < 1e-3 * max(1.0, abs(m)):
                break
        fa = _theta_end(k, math.sinh(a), g) - target
        fb = _theta_end(k, math.sinh(b), g) - target
        if fa < 0 < fb:
            t = brentq(lambda t: _theta_end(k, math.sinh(t), g) - target, a, b,
                       xtol=1e-14, rtol=1e-13, maxiter=200)
        else:
            t = 0.5 * (a + b)
        out.append(math.sinh(t))
        tlo = t
    return np.array(out)


def mode_eigenvalues(sol, k, n_eigs=6):
    """The ``n_eigs`` smallest Dirichlet eigenvalues of L_k on (0, disk_radius)."""
    return _mode_eigenvalues(k, n_eigs, _mode_grid(sol))


def mode_function(sol, k, mu, grid=None):
    """Regular solution of L_k ψ = μψ at the even grid nodes, as (r, ψ) with max |ψ| = 1."""
    g = grid or _mode_grid(sol)
    y0, z0 = _start(k, mu, g)
    k2, W, G = _coefficients(k, g)
    ys, _ = kernels.linear_sweep(k2, mu, y0, z0, W, g.E, G, g.h)
    r = sol.grid[1:][::2]
    psi = np.asarray(ys)
    if k == 1:
        psi = psi * sol.derivative[1:][::2]
    return r, psi / psi[np.argmax(np.abs(psi))]


def radial_linearized_modes(sol, k_max=4, n_eigs=6, gap=None):
    """Smallest eigenvalues of L_k = -d²/dr² - (1/r)d/dr + k²/r² + λ - p u^{p-1}, k = 0..k_max.

    Dirichlet at the disk radius, regular branch at 0. Modes with k >= 1 stand
    for two planar eigenfunctions (cos and sin), recorded as ``multiplicity``.
    The default nondegeneracy gap is 1e-3 times the tenth smallest magnitude
    over the union of all modes.
    """
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    g = _mode_grid(sol)
    per_k = [_mode_eigenvalues(k, n_eigs, g) for k in range(k_max + 1)]
    if gap is None:
        mags = np.sort(np.abs(np.concatenate(per_k)))
        gap = 1e-3 * mags[min(9, len(mags) - 1)]
    return [SpectrumReport.from_eigenvalues(ev, gap=gap, mode=k,
                                            multiplicity=1 if k == 0 else 2,
                                            expected_negatives=1 if k == 0 else 0)
            for k, ev in enumerate(per_k)]


def morse_index(reports):
    """Planar Morse index from per-mode reports (k >= 1 modes count twice)."""
    return sum(r.negative_count * r.multiplicity for r in reports)


def zeta1_overlap(sol, mu=None):
    """Overlap of the first k=1 eigenfunction with ζ₁(|X|) = |X|/(1+|X|²/8) in rescaled variables.

    Weighted by e^U so the comparison lives in the core where the limit kernel
    is meaningful. Returns |<ψ, ζ₁>| / (‖ψ‖ ‖ζ₁‖).
    """
    g = _mode_grid(sol)
    if mu is None:
        mu = float(_mode_eigenvalues(1, 1, g)[0])
    r, psi = mode_function(sol, 1, mu, g)
    X = r / sol.epsilon
    zeta = X / (1.0 + X * X / 8.0)
    weight = np.exp(limit_profile(X)) * X * X  # e^U X dX with dX = X ds
    s = np.log(X)
    ip = simpson(weight * psi * zeta, x=s)
    n1 = simpson(weight * psi * psi, x=s)
    n2 = simpson(weight * zeta * zeta, x=s)
    return abs(ip) / math.sqrt(n1 * n2)


def mode_matrix_eigenvalues(sol, k, n_eigs, stride=10, inner=0.05):
    """Eigenvalues of a tridiagonal P1 discretization of L_k (cross-check route).

    Linear elements in r on every ``stride``-th oracle node beyond
    ``inner``·ε plus the origin, lumped mass with weight r, and the k²/r²
    term integrated at cell centers. It shares nothing with the Prüfer route
    except the oracle profile, and it is reliable only while 1/ε² stays far
    below 1/machine-epsilon.
    """
    nodes = sol.grid[1:]
    nodes = nodes[nodes >= inner * sol.epsilon][::stride]
    r = np.concatenate([[0.0], nodes])
    if r[-1] != sol.disk_radius:
        r = np.concatenate([r, [sol.disk_radius]])
    if len(r) < 8:
        raise DiscretizationError("grid too coarse near r = 0")
    u = np.maximum(sol(r), 0.0)
    V = sol.lam - sol.p * np.power(u, sol.p - 1.0)
    d = np.diff(r)
    rm = 0.5 * (r[:-1] + r[1:])
    n = len(r)
    diag = np.zeros(n)
    off = np.zeros(n - 1)
    mass = np.zeros(n)
    kap = rm / d
    tau = k * k * d / (4.0 * rm)
    diag[:-1] += kap + tau
    diag[1:] += kap + tau
    off += -kap + tau
    mass[:-1] += d * (2 * r[:-1] + r[1:]) / 6.0
    mass[1:] += d * (r[:-1] + 2 * r[1:]) / 6.0
    diag += mass * V
    first = 0 if k == 0 else 1
    m = mass[first:n - 1]
    a = diag[first:n - 1] / m
    b = off[first:n - 2] / np.sqrt(m[:-1] * m[1:])
    return eigh_tridiagonal(a, b, eigvals_only=True, select="i",
                            select_range=(0, n_eigs - 1))
