"""Triangulations of convex planar domains with optional grading about a point.

Meshes are built by a ring mesher. Rings are scaled copies of the boundary
about a focus point (the domain center unless a grading says otherwise),
sampled at equal arc-length fractions with the polygon corners inserted
exactly. Consecutive rings are joined by a zipper triangulation and the
innermost ring by a fan to the focus. Doubly symmetric domains centered at
the focus are meshed on one quadrant and reflected, so the vertex set is
bitwise symmetric under both axis reflections.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_MAX_VERTICES = 1_500_000
SPACING = 0.6
"""Ring spacing as a fraction of the local size; keeps zipper diagonals below it."""


class MeshError(ValueError):
    """Invalid domain or mesh request."""


class VertexCapError(MeshError):
    """The requested resolution would exceed the vertex cap."""


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class DomainSpec:
    """A convex planar domain.

    ``kind`` is one of ``disk`` (params: radius), ``ellipse`` (a, b),
    ``rectangle`` (width, height) or ``convex_polygon`` (flattened CCW vertex
    list). Use the classmethod constructors.
    """

    kind: str
    params: tuple
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("disk", "ellipse", "rectangle", "convex_polygon"):
            raise MeshError(f"unknown domain kind {self.kind!r}")
        if self.kind != "convex_polygon":
            if any(not (float(v) > 0) for v in self.params):
                raise MeshError(f"{self.kind} dimensions must be positive: {self.params}")
        else:
            _check_convex(self.polygon_vertices())

    @classmethod
    def disk(cls, radius=1.0, center=(0.0, 0.0)):
        return cls("disk", (float(radius),), tuple(map(float, center)))

    @classmethod
    def ellipse(cls, a, b, center=(0.0, 0.0)):
        return cls("ellipse", (float(a), float(b)), tuple(map(float, center)))

    @classmethod
    def rectangle(cls, width, height, center=(0.0, 0.0)):
        return cls("rectangle", (float(width), float(height)), tuple(map(float, center)))

    @classmethod
    def convex_polygon(cls, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise MeshError("polygon needs at least three (x, y) vertices")
        c = v.mean(axis=0)
        return cls("convex_polygon", tuple(v.ravel().tolist()), (float(c[0]), float(c[1])))

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        center = tuple(d.get("center", (0.0, 0.0)))
        if kind == "disk":
            return cls.disk(d.get("radius", 1.0), center)
        if kind == "ellipse":
            return cls.ellipse(d["a"], d["b"], center)
        if kind in ("rectangle", "square"):
            w = d.get("width", d.get("side", 1.0))
            return cls.rectangle(w, d.get("height", w), center)
        if kind == "convex_polygon":
            return cls.convex_polygon(d["vertices"])
        raise MeshError(f"unknown domain kind {kind!r}")

    def to_dict(self):
        if self.kind == "disk":
            return {"kind": "disk", "radius": self.params[0], "center": list(self.center)}
        if self.kind == "ellipse":
            return {"kind": "ellipse", "a": self.params[0], "b": self.params[1],
                    "center": list(self.center)}
        if self.kind == "rectangle":
            return {"kind": "rectangle", "width": self.params[0], "height": self.params[1],
                    "center": list(self.center)}
        return {"kind": "convex_polygon", "vertices": self.polygon_vertices().tolist()}

    # geometry -------------------------------------------------------------

    def polygon_vertices(self):
        """Corner list (CCW) for polygonal kinds, in absolute coordinates."""
        if self.kind == "convex_polygon":
            return np.asarray(self.params, dtype=float).reshape(-1, 2)
        if self.kind == "rectangle":
            w, h = self.params
            cx, cy = self.center
            return np.array([[cx + w / 2, cy - h / 2], [cx + w / 2, cy + h / 2],
                             [cx - w / 2, cy + h / 2], [cx - w / 2, cy - h / 2]])
        raise MeshError(f"{self.kind} has no corners")

    @property
    def symmetric(self):
        """True for kinds symmetric under both reflections through the center."""
        return self.kind in ("disk", "ellipse", "rectangle")

    @property
    def diameter(self):
        if self.kind == "disk":
            return 2.0 * self.params[0]
        if self.kind == "ellipse":
            return 2.0 * max(self.params)
        v = self.polygon_vertices()
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    @property
    def area(self):
        if self.kind == "disk":
            return math.pi * self.params[0] ** 2
        if self.kind == "ellipse":
            return math.pi * self.params[0] * self.params[1]
        v = self.polygon_vertices()
        x, y = v[:, 0], v[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def contains(self, points, margin=0.0):
        """Mask of points at distance > ``margin`` inside the domain (approximate for ellipses)."""
        return self.boundary_distance(points) > margin

    def boundary_distance(self, points):
        """Signed distance to the boundary, positive inside.

        Exact for disks and polygons; for ellipses the first-order estimate
        (1 - ρ)/|∇ρ| with ρ the normalized radius is used, which is exact on
        the boundary and adequate for the margin checks it serves.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cx, cy = self.center
        x = pts[:, 0] - cx
        y = pts[:, 1] - cy
        if self.kind == "disk":
            return self.params[0] - np.hypot(x, y)
        if self.kind == "ellipse":
            a, b = self.params
            rho = np.sqrt((x / a) ** 2 + (y / b) ** 2)
            grad = np.hypot(x / a ** 2, y / b ** 2) / np.maximum(rho, 1e-300)
            out = (1.0 - rho) / np.where(rho > 0, grad, 1.0 / min(a, b))
            return np.where(rho > 0, out, min(a, b))
        v = self.polygon_vertices()
        d = np.full(len(pts), np.inf)
        for i in range(len(v)):
            p0, p1 = v[i], v[(i + 1) % len(v)]
            e = p1 - p0
            n = np.array([e[1], -e[0]]) / np.hypot(*e)  # outward for CCW
            d = np.minimum(d, -((pts - p0) @ n))
        return d

    def perimeter(self):
        return _Boundary(self, self.center).perimeter


def _check_convex(v):
    n = len(v)
    if n < 3:
        raise MeshError("polygon needs at least three vertices")
    reflex = []
    for i in range(n):
        a, b, c = v[i - 1], v[i], v[(i + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross <= 0:
            reflex.append((i, (float(b[0]), float(b[1])), float(cross)))
    if reflex:
        desc = "; ".join(f"reflex vertex {i} at {pt} (turn {cr:.3g})" for i, pt, cr in reflex)
        raise MeshError(f"polygon is not strictly convex and counterclockwise: {desc}")


class _Boundary:
    """Arc-length parametrization B(σ), σ ∈ [0, 1), in coordinates local to a center."""

    def __init__(self, spec: DomainSpec, center):
        self.spec = spec
        c = np.asarray(center, dtype=float)
        self.kinks = np.zeros(0)
        if spec.kind == "disk":
            self.perimeter = 2 * math.pi * spec.params[0]
        elif spec.kind == "ellipse":
            a, b = spec.params
            th = np.linspace(0.0, 2 * math.pi, 20001)
            ds = np.hypot(a * np.sin(th), b * np.cos(th))
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (ds[1:] + ds[:-1]) * np.diff(th))])
            self.perimeter = float(cum[-1])
            self._th = th
            self._frac = cum / cum[-1]
        else:
            v = spec.polygon_vertices() - c
            if spec.kind == "rectangle":
                # start at the midpoint of the right side so σ = 0 lies on the x-axis
                w, h = spec.params
                off = np.asarray(spec.center) - c
                v = np.array([[w / 2, 0.0], [w / 2, h / 2], [-w / 2, h / 2], [-w / 2, -h / 2],
                              [w / 2, -h / 2]]) + off
                corners = [1, 2, 3, 4]
            else:
                corners = list(range(len(v)))
            closed = np.vstack([v, v[:1]])
            seg = np.hypot(*np.diff(closed, axis=0).T)
            self._poly = closed
            self._cum = np.concatenate([[0.0], np.cumsum(seg)])
            self.perimeter = float(self._cum[-1])
            self.kinks = np.array([self._cum[i] / self.perimeter for i in corners])
        self.center = c
        self._offset = np.asarray(spec.center, dtype=float) - c

    def __call__(self, sigma):
        s = np.asarray(sigma, dtype=float) % 1.0
        kind = self.spec.kind
        if kind == "disk":
            r = self.spec.params[0]
            ang = 2 * math.pi * s
            pts = np.column_stack([r * np.cos(ang), r * np.sin(ang)]) + self._offset
        elif kind == "ellipse":
            a, b = self.spec.params
            th = np.interp(s, self._frac, self._th)
            pts = np.column_stack([a * np.cos(th), b * np.sin(th)]) + self._offset
        else:
            arc = s * self.perimeter
            idx = np.clip(np.searchsorted(self._cum, arc, side="right") - 1, 0,
                          len(self._cum) - 2)
            t = (arc - self._cum[idx]) / (self._cum[idx + 1] - self._cum[idx])
            p0 = self._poly[idx]
            p1 = self._poly[idx + 1]
            pts = p0 + t[:, None] * (p1 - p0)
            # corners exactly
            for k, kf in enumerate(self.kinks):
                hit = np.abs(s - kf) < 1e-15
                if np.any(hit):
                    j = np.searchsorted(self._cum, kf * self.perimeter - 1e-12)
                    pts[hit] = self._poly[min(j, len(self._poly) - 1)]
        return pts

    def radii(self):
        pts = self(np.linspace(0, 1, 4001, endpoint=False))
        if len(self.kinks):
            pts = np.vstack([pts, self(self.kinks)])
        r = np.hypot(pts[:, 0], pts[:, 1])
        return float(r.min()), float(r.max())


# ---------------------------------------------------------------------------
# size fields


@dataclass(frozen=True)
class GradingSpec:
    """Local refinement about ``focus``.

    The size is ``inner_h`` within ``transition_radius`` of the focus and grows
    linearly with slope ``growth`` beyond it, capped at ``outer_h``.
    """

    focus: tuple
    inner_h: float
    outer_h: float
    transition_radius: float
    growth: float = 0.25

    def __post_init__(self):
        if not (0 < self.inner_h <= self.outer_h):
            raise MeshError("grading needs 0 < inner_h <= outer_h")
        if not self.transition_radius > 0:
            raise MeshError("transition_radius must be positive")
        if not self.growth > 0:
            raise MeshError("growth must be positive")

    def size(self, distance):
        d = np.asarray(distance, dtype=float)
        grown = self.inner_h + self.growth * np.maximum(d - self.transition_radius, 0.0)
        return np.minimum(self.outer_h, grown)

    def to_dict(self):
        return {"focus": list(self.focus), "inner_h": self.inner_h, "outer_h": self.outer_h,
                "transition_radius": self.transition_radius, "growth": self.growth}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["focus"]), float(d["inner_h"]), float(d["outer_h"]),
                   float(d["transition_radius"]), float(d.get("growth", 0.25)))


@dataclass(frozen=True)
class SizeField:
    """Target edge length: ``target_h`` everywhere, lowered by any gradings."""

    target_h: float
    gradings: tuple = ()

    def at_distance_bounds(self, center, t_rmin, t_rmax):
        """Smallest size on a ring centered at ``center`` with radii in [t_rmin, t_rmax]."""
        h = self.target_h
        for g in self.gradings:
            off = math.hypot(g.focus[0] - center[0], g.focus[1] - center[1])
            d_lb = max(0.0, off - t_rmax, t_rmin - off)
            h = min(h, float(g.size(d_lb)))
        return h

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        h = np.full(len(pts), self.target_h)
        for g in self.gradings:
            d = np.hypot(pts[:, 0] - g.focus[0], pts[:, 1] - g.focus[1])
            h = np.minimum(h, g.size(d))
        return h


# ---------------------------------------------------------------------------
# mesh


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation. ``boundary_mask`` flags vertices on ∂Ω."""

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray
    domain: DomainSpec | None = None
    size_field: SizeField | None = None
    focus: tuple | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def interior(self):
        """Indices of interior (non-boundary) vertices."""
        if "interior" not in self._cache:
            self._cache["interior"] = np.nonzero(~self.boundary_mask)[0]
        return self._cache["interior"]

    def edges(self):
        """Unique edges as sorted index pairs, with the number of adjacent triangles."""
        if "edges" not in self._cache:
            t = self.triangles
            e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            e.sort(axis=1)
            uniq, counts = np.unique(e, axis=0, return_counts=True)
            self._cache["edges"] = (uniq, counts)
        return self._cache["edges"]

    def edge_lengths(self):
        e, _ = self.edges()
        d = self.vertices[e[:, 0]] - self.vertices[e[:, 1]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def h_max(self):
        return float(self.edge_lengths().max())

    @property
    def h_min(self):
        return float(self.edge_lengths().min())

    def signed_areas(self):
        v = self.vertices
        t = self.triangles
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    @property
    def area(self):
        return float(self.signed_areas().sum())

    @property
    def area_deficit(self):
        """|Ω| minus the triangulated area (polygonal boundary deficit)."""
        if self.domain is None:
            return float("nan")
        return self.domain.area - self.area

    def barycenters(self):
        return self.vertices[self.triangles].mean(axis=1)

    def triangle_diameters(self):
        v = self.vertices[self.triangles]
        d = [np.hypot(*(v[:, i] - v[:, j]).T) for i, j in ((0, 1), (1, 2), (2, 0))]
        return np.max(d, axis=0)

    def check_invariants(self, tol=1e-12):
        """Raise MeshError if orientation, conformity or boundary flags are off."""
        if np.any(self.signed_areas() <= 0):
            bad = int(np.argmin(self.signed_areas()))
            raise MeshError(f"triangle {bad} has nonpositive signed area")
        e, counts = self.edges()
        if np.any(counts > 2):
            raise MeshError("an edge is shared by more than two triangles")
        bnd = e[counts == 1]
        flagged = np.zeros(self.n_vertices, dtype=bool)
        flagged[bnd.ravel()] = True
        if not np.array_equal(flagged, self.boundary_mask):
            raise MeshError("boundary_mask differs from the vertices on boundary edges")
        if self.domain is not None:
            diam = self.domain.diameter
            dist = np.abs(self.domain.boundary_distance(self.vertices[self.boundary_mask]))
            if dist.size and dist.max() > tol * diam * 10:
                raise MeshError(f"boundary vertex off the boundary by {dist.max():.3g}")
        return True

    # point location -------------------------------------------------------

    def _tree(self):
        if "tree" not in self._cache:
            self._cache["tree"] = cKDTree(self.barycenters())
        return self._cache["tree"]

    def _bary(self, tri, pts):
        v = self.vertices[self.triangles[tri]]
        a, b, c = v[:, 0], v[:, 1], v[:, 2]
        det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        l1 = ((pts[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
              - (pts[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
        l2 = ((b[:, 0] - a[:, 0]) * (pts[:, 1] - a[:, 1])
              - (b[:, 1] - a[:, 1]) * (pts[:, 0] - a[:, 0])) / det
        return np.column_stack([1.0 - l1 - l2, l1, l2])

    def locate(self, points, tol=1e-10):
        """Containing triangle and barycentric coordinates; triangle -1 when outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        tri = np.full(len(pts), -1, dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        k = min(16, self.n_triangles)
        _, cand = self._tree().query(pts, k=k)
        cand = np.atleast_2d(cand).reshape(len(pts), k)
        for j in range(k):
            todo = tri < 0
            if not np.any(todo):
                break
            c = cand[todo, j]
            lam = self._bary(c, pts[todo])
            ok = lam.min(axis=1) >= -tol
            idx = np.nonzero(todo)[0][ok]
            tri[idx] = c[ok]
            bary[idx] = lam[ok]
        for i in np.nonzero(tri < 0)[0]:  # brute force for the stragglers
            lam = self._bary(np.arange(self.n_triangles), np.repeat(pts[i:i + 1],
                                                                    self.n_triangles, 0))
            best = int(np.argmax(lam.min(axis=1)))
            if lam[best].min() >= -tol:
                tri[i] = best
                bary[i] = lam[best]
        return tri, bary

    def interpolate(self, values, points):
        """P1 interpolation of nodal ``values``; NaN outside the mesh."""
        tri, bary = self.locate(points)
        vals = np.asarray(values)
        out = np.full(len(tri), np.nan)
        ok = tri >= 0
        out[ok] = np.einsum("ij,ij->i", bary[ok], vals[self.triangles[tri[ok]]])
        return out

    def local_h(self, point):
        """Longest edge of the triangle containing ``point`` (nearest one if outside)."""
        tri, _ = self.locate(point)
        t = int(tri[0])
        if t < 0:
            _, t = self._tree().query(np.atleast_2d(point)[0])
        return float(self.triangle_diameters()[t])


# ---------------------------------------------------------------------------
# construction


def _ring_radii(bnd, size, center, max_vertices):
    rmin, rmax = bnd.radii()
    ts = [0.0]
    t = 0.0
    while True:
        h = size.at_distance_bounds(center, t * rmin, t * rmax)
        t_next = t + SPACING * h / rmax
        # do not jump past a region where the size is smaller
        h2 = size.at_distance_bounds(center, t_next * rmin, t_next * rmax)
        if h2 < h:
            t_next = t + SPACING * h2 / rmax
        if t_next >= 1.0:
            break
        ts.append(t_next)
        t = t_next
        if len(ts) > max_vertices:
            raise VertexCapError(f"mesh would exceed the vertex cap of {max_vertices}")
    # land on the boundary without leaving a sliver ring
    if len(ts) > 1 and (1.0 - ts[-1]) < 0.35 * (ts[-1] - ts[-2]):
        ts.pop()
    ts.append(1.0)
    return np.array(ts), rmin, rmax


def _ring_fractions(n, lo, hi, kinks, closed):
    """Arc fractions on a ring: ``n`` equal steps of [lo, hi] plus the kinks inside."""
    if closed:
        base = lo + (hi - lo) * np.arange(n) / n
    else:
        base = lo + (hi - lo) * np.arange(n + 1) / n
    ks = [k for k in kinks if lo - 1e-15 <= k <= hi + 1e-15]
    if ks:
        step = (hi - lo) / n
        keep = np.ones(len(base), dtype=bool)
        for k in ks:
            near = np.abs(base - k) < 0.3 * step
            if not closed:
                near[0] = near[-1] = False
            keep &= ~near
        base = np.unique(np.concatenate([base[keep], ks]))
    return base


def _zipper(ia, fa, ib, fb, closed):
    """Triangles between an inner ring (indices ia, fractions fa) and an outer one."""
    tris = []
    if closed:
        ia = np.append(ia, ia[0])
        fa = np.append(fa, 1.0 + fa[0])
        ib = np.append(ib, ib[0])
        fb = np.append(fb, 1.0 + fb[0])
    i = j = 0
    m, n = len(ia) - 1, len(ib) - 1
    while i < m or j < n:
        if j < n and (i == m or fb[j + 1] <= fa[i + 1]):
            tris.append((ia[i], ib[j], ib[j + 1]))
            j += 1
        else:
            tris.append((ia[i], ib[j], ia[i + 1]))
            i += 1
    return tris


def _ring_mesh(bnd, size, center, lo, hi, closed, max_vertices):
    """Vertices (local coordinates), triangles, boundary flags and axis tags for an arc range."""
    ts, rmin, rmax = _ring_radii(bnd, size, center, max_vertices)
    span = hi - lo
    verts = [np.zeros((1, 2))]
    fracs = [np.array([0.0])]
    index = [np.array([0])]
    count = 1
    kinks = list(bnd.kinks)
    rings = []
    for t in ts[1:]:
        h = size.at_distance_bounds(center, t * rmin, t * rmax)
        n = max(2 if not closed else 6, int(math.ceil(t * bnd.perimeter * span / (SPACING * h))))
        f = _ring_fractions(n, lo, hi, kinks, closed)
        if count + len(f) > max_vertices:
            raise VertexCapError(f"mesh would exceed the vertex cap of {max_vertices}")
        pts = t * bnd(f)
        verts.append(pts)
        fracs.append(f)
        index.append(np.arange(count, count + len(f)))
        rings.append(t)
        count += len(f)
    tris = []
    # fan from the focus to the first ring
    f1, i1 = fracs[1], index[1]
    ring = list(i1) + ([i1[0]] if closed else [])
    for a, b in zip(ring[:-1], ring[1:]):
        tris.append((0, a, b))
    for r in range(1, len(index) - 1):
        tris.extend(_zipper(index[r], fracs[r], index[r + 1], fracs[r + 1], closed))
    V = np.vstack(verts)
    T = np.array(tris, dtype=np.int64)
    bmask = np.zeros(len(V), dtype=bool)
    bmask[index[-1]] = True
    frac_all = np.concatenate(fracs)
    return V, T, bmask, frac_all


def _orient(V, T):
    a, b, c = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    T = T.copy()
    flip = area < 0
    T[flip] = T[flip][:, [0, 2, 1]]
    keep = area != 0
    return T[keep]


def _reflect(V, T, bmask, axis):
    """Mirror across x=0 (axis=0) or y=0 (axis=1), merging vertices on the mirror line."""
    on_line = V[:, axis] == 0.0
    n = len(V)
    new_ids = np.empty(n, dtype=np.int64)
    new_ids[on_line] = np.nonzero(on_line)[0]
    off = np.nonzero(~on_line)[0]
    new_ids[off] = n + np.arange(len(off))
    W = V[off].copy()
    W[:, axis] = -W[:, axis]
    V2 = np.vstack([V, W])
    T2 = np.vstack([T, new_ids[T][:, [0, 2, 1]]])
    b2 = np.concatenate([bmask, bmask[off]])
    return V2, T2, b2


def _delaunay_flip(V, T, max_rounds=500):
    """Lawson flips until every interior edge has opposite angles summing to at most π.

    The stiffness entry of an edge is -(cot α + cot β)/2, so afterwards every
    off-diagonal entry is nonpositive and the discrete maximum principle holds.
    Edges with a single triangle (the outer boundary and, before reflection,
    the symmetry axes) are never touched.
    """
    T = _orient(V, T)
    for _ in range(max_rounds):
        nt = len(T)
        edge = np.vstack([T[:, [1, 2]], T[:, [2, 0]], T[:, [0, 1]]])
        opp = np.concatenate([T[:, 0], T[:, 1], T[:, 2]])
        tri = np.tile(np.arange(nt), 3)
        key = np.sort(edge, axis=1)
        order = np.lexsort((key[:, 1], key[:, 0]))
        ks = key[order]
        i = np.nonzero(np.all(ks[1:] == ks[:-1], axis=1))[0]
        h1, h2 = order[i], order[i + 1]
        a, b = key[h1, 0], key[h1, 1]
        c, d = opp[h1], opp[h2]

        def cot(x, y, z):  # cotangent of the angle at z in triangle (x, y, z)
            u, w = V[x] - V[z], V[y] - V[z]
            return (u * w).sum(1) / np.abs(u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0])

        viol = np.nonzero(cot(a, b, c) + cot(a, b, d) < -1e-10)[0]
        if viol.size == 0:
            return T
        used = np.zeros(nt, dtype=bool)
        T = T.copy()
        for j in viol:
            t1, t2 = tri[h1[j]], tri[h2[j]]
            if used[t1] or used[t2]:
                continue
            pa, pb, pc, pd = V[a[j]], V[b[j]], V[c[j]], V[d[j]]
            s1 = (pd[0] - pc[0]) * (pa[1] - pc[1]) - (pd[1] - pc[1]) * (pa[0] - pc[0])
            s2 = (pd[0] - pc[0]) * (pb[1] - pc[1]) - (pd[1] - pc[1]) * (pb[0] - pc[0])
            if s1 * s2 >= 0:  # quad not strictly convex
                continue
            used[t1] = used[t2] = True
            T[t1] = (c[j], a[j], d[j]) if s1 > 0 else (c[j], d[j], a[j])
            T[t2] = (c[j], d[j], b[j]) if s1 > 0 else (c[j], b[j], d[j])
        if not used.any():
            return T
    raise MeshError("edge flipping did not terminate")


def _finish(V, T, bmask, spec, size, center):
    T = _orient(V, T)
    # boundary flags from topology: the ring construction already knows them,
    # but reflection merges can only keep or drop, never invent, so recompute
    e = np.vstack([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    topo = np.zeros(len(V), dtype=bool)
    topo[uniq[counts == 1].ravel()] = True
    if not np.array_equal(topo, bmask):
        raise MeshError("ring mesher produced inconsistent boundary flags")
    return Mesh(vertices=V, triangles=T, boundary_mask=bmask, domain=spec, size_field=size,
                focus=tuple(center))


def _generate(spec, size, center, max_vertices):
    center = tuple(float(c) for c in center)
    if not spec.contains(np.array([center]))[0]:
        raise MeshError(f"focus {center} is not inside the domain")
    bnd = _Boundary(spec, center)
    if spec.symmetric and np.allclose(center, spec.center, rtol=0, atol=0):
        try:
            V, T, bmask, fr = _ring_mesh(bnd, size, center, 0.0, 0.25, False,
                                         max_vertices // 4 + 1)
        except VertexCapError:
            raise VertexCapError(f"mesh would exceed the vertex cap of {max_vertices}") from None
        # exact axis coordinates so the reflections merge bitwise
        V[np.abs(fr - 0.0) < 1e-15, 1] = 0.0
        V[np.abs(fr - 0.25) < 1e-15, 0] = 0.0
        T = _delaunay_flip(V, T)
        V, T, bmask = _reflect(V, T, bmask, 0)
        V, T, bmask = _reflect(V, T, bmask, 1)
    else:
        V, T, bmask, _ = _ring_mesh(bnd, size, center, 0.0, 1.0, True, max_vertices)
        T = _delaunay_flip(V, T)
    if len(V) > max_vertices:
        raise VertexCapError(f"mesh would exceed the vertex cap of {max_vertices}")
    V = V + np.asarray(center)
    return _finish(V, T, bmask, spec, size, center)


def build_mesh(spec: DomainSpec, target_h, max_vertices=DEFAULT_MAX_VERTICES):
    """Quasi-uniform mesh of ``spec`` with edges no longer than about ``target_h``."""
    if not target_h > 0:
        raise MeshError("target_h must be positive")
    if target_h >= spec.diameter / 2:
        raise MeshError(f"target_h={target_h} must be below diam/2 = {spec.diameter / 2}")
    return _generate(spec, SizeField(float(target_h)), spec.center, max_vertices)


def refine(mesh: Mesh, grading: GradingSpec, max_vertices=DEFAULT_MAX_VERTICES):
    """Mesh of the same domain with the size additionally capped by ``grading``.

    The mesh is regenerated about the grading focus. When the grading never
    asks for edges shorter than the existing size the input is returned.
    """
    if mesh.domain is None or mesh.size_field is None:
        raise MeshError("refine needs a mesh built by build_mesh")
    spec = mesh.domain
    if not spec.contains(np.array([grading.focus]))[0]:
        raise MeshError(f"grading focus {grading.focus} is not inside the domain")
    if grading.inner_h >= mesh.size_field.target_h and all(
            grading.inner_h >= g.inner_h for g in mesh.size_field.gradings):
        return mesh
    size = SizeField(mesh.size_field.target_h, mesh.size_field.gradings + (grading,))
    return _generate(spec, size, grading.focus, max_vertices)


def graded_mesh(spec, target_h, grading, max_vertices=DEFAULT_MAX_VERTICES):
    """Shortcut for ``refine(build_mesh(spec, target_h), grading)``."""
    size = SizeField(float(target_h), (grading,))
    return _generate(spec, size, grading.focus, max_vertices)


def uniform_refine(mesh: Mesh):
    """Split every triangle into four through its edge midpoints (nested refinement).

    Boundary midpoints stay on the boundary polygon, so the coarse space is a
    subspace of the fine one.
    """
    e, counts = mesh.edges()
    n = mesh.n_vertices
    mid = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    key = {(int(a), int(b)): n + i for i, (a, b) in enumerate(e)}
    t = mesh.triangles

    def m(a, b):
        return key[(a, b) if a < b else (b, a)]

    new = []
    for a, b, c in t.tolist():
        ab, bc, ca = m(a, b), m(b, c), m(c, a)
        new += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    V = np.vstack([mesh.vertices, mid])
    bmask = np.concatenate([mesh.boundary_mask, counts == 1])
    return Mesh(vertices=V, triangles=np.array(new, dtype=np.int64), boundary_mask=bmask,
                domain=None, size_field=None, focus=mesh.focus)


def reflection_permutation(mesh: Mesh, axis=0):
    """Permutation induced by x_axis ↦ -x_axis about the domain center, or None if not exact."""
    c = np.asarray(mesh.domain.center if mesh.domain is not None else (0.0, 0.0))
    # canonical rounding absorbs the roundoff of shifting by an off-origin center
    scale = float(np.abs(mesh.vertices - c).max())
    local = np.round((mesh.vertices - c) / scale, 12) + 0.0
    mirrored = local.copy()
    mirrored[:, axis] = -mirrored[:, axis] + 0.0
    lookup = {tuple(p): i for i, p in enumerate(map(tuple, local))}
    perm = np.empty(mesh.n_vertices, dtype=np.int64)
    for i, p in enumerate(map(tuple, mirrored)):
        j = lookup.get(p)
        if j is None:
            return None
        perm[i] = j
    return perm


# ---------------------------------------------------------------------------
# text I/O


def write_mesh(mesh: Mesh, path):
    """Plain text: ``vertices N triangles M``, N lines ``x y flag``, M lines ``i j k``."""
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_vertices} triangles {mesh.n_triangles}\n")
        for (x, y), b in zip(mesh.vertices, mesh.boundary_mask):
            fh.write(f"{x:.17g} {y:.17g} {int(b)}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path, domain=None):
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[0] != "vertices" or head[2] != "triangles":
            raise MeshError(f"bad mesh header in {path}")
        n, m = int(head[1]), int(head[3])
        V = np.empty((n, 2))
        B = np.empty(n, dtype=bool)
        for i in range(n):
            x, y, b = fh.readline().split()
            V[i] = float(x), float(y)
            B[i] = b == "1"
        T = np.array([list(map(int, fh.readline().split())) for _ in range(m)],
                     dtype=np.int64).reshape(m, 3)
    return Mesh(vertices=V, triangles=T, boundary_mask=B, domain=domain)
