"""Conforming triangular meshes of the unit disc and the L-shaped domain.

Both generators are deterministic.  The disc is built from concentric rings
whose spacing follows the boundary grading law

    h_T ~ h * dist(T, boundary) ** ((mu - 1) / mu),     h_T ~ h ** mu  at the boundary,

and the L-shape ``[0, 2]^2 minus [1, 2]^2`` from a uniform grid of split squares.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

logger = logging.getLogger(__name__)

SIGMA_MAX = 5.0
# target node spacing of the disc rings relative to the grading law
SPACING = 1.25

PAIR_CLASSES = ("disjoint", "vertex_adjacent", "edge_adjacent", "identical")


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class GradingSpec:
    h: float
    mu: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.h <= 1.0:
            raise MeshError(f"mesh parameter h must lie in (0, 1], got {self.h}")
        if not 1.0 <= self.mu <= 2.0:
            raise MeshError(f"grading exponent mu must lie in [1, 2], got {self.mu}")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation.

    ``triangles`` are counterclockwise vertex-index triples.  ``domain`` is
    ``"disc"``, ``"lshape"`` or ``None`` for user-built meshes.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_vertex: np.ndarray
    domain: str = None
    grading: GradingSpec = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_vertex"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def corners(self):
        """Vertex coordinates per triangle, shape ``(nt, 3, 2)``."""
        if "corners" not in self._cache:
            c = self.vertices[self.triangles]
            c.setflags(write=False)
            self._cache["corners"] = c
        return self._cache["corners"]

    @property
    def signed_areas(self):
        c = self.corners
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def areas(self):
        return np.abs(self.signed_areas)

    @property
    def diameters(self):
        c = self.corners
        lengths = np.stack([np.linalg.norm(c[:, (k + 1) % 3] - c[:, k], axis=1) for k in range(3)], axis=1)
        return lengths.max(axis=1)

    @property
    def inscribed_diameters(self):
        c = self.corners
        perimeter = sum(np.linalg.norm(c[:, (k + 1) % 3] - c[:, k], axis=1) for k in range(3))
        return 4.0 * self.areas / perimeter

    @property
    def h_max(self):
        return float(self.diameters.max())

    @property
    def shape_coeff(self):
        return float((self.diameters / self.inscribed_diameters).max())

    @property
    def barycenters(self):
        return self.corners.mean(axis=1)

    @property
    def interior(self):
        """Indices of vertices that carry degrees of freedom."""
        return np.flatnonzero(~self.boundary_vertex)

    @property
    def dof_map(self):
        """Vertex -> dof index, ``-1`` on boundary vertices."""
        if "dof_map" not in self._cache:
            dof = np.full(self.n_vertices, -1, dtype=np.int64)
            dof[self.interior] = np.arange(len(self.interior))
            dof.setflags(write=False)
            self._cache["dof_map"] = dof
        return self._cache["dof_map"]

    @property
    def n_dofs(self):
        return int((~self.boundary_vertex).sum())

    def boundary_edges(self):
        """Boundary edges ``(ne, 2)`` oriented so that the domain lies to the left."""
        if "bedges" not in self._cache:
            t = self.triangles
            e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            key = np.sort(e, axis=1)
            _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
            be = e[counts[inv.ravel()] == 1]
            be.setflags(write=False)
            self._cache["bedges"] = be
        return self._cache["bedges"]

    def edges(self):
        """Unique undirected edges and how many triangles share each."""
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0, return_counts=True)

    def locate(self, points):
        """Index of a triangle containing each point (``-1`` if outside)."""
        from scipy.spatial import cKDTree

        points = np.atleast_2d(np.asarray(points, dtype=float))
        if "tree" not in self._cache:
            self._cache["tree"] = cKDTree(self.barycenters)
        tree = self._cache["tree"]
        k = min(16, self.n_triangles)
        _, cand = tree.query(points, k=k)
        cand = cand.reshape(len(points), k)
        out = np.full(len(points), -1, dtype=np.int64)
        todo = np.ones(len(points), dtype=bool)
        for j in range(k):
            idx = np.flatnonzero(todo)
            if not len(idx):
                break
            lam = self.barycentric(cand[idx, j], points[idx])
            ok = lam.min(axis=1) >= -1e-10
            out[idx[ok]] = cand[idx[ok], j]
            todo[idx[ok]] = False
        if todo.any():
            # fall back to a full scan for stragglers
            for i in np.flatnonzero(todo):
                lam = self.barycentric(np.arange(self.n_triangles), np.repeat(points[i:i + 1], self.n_triangles, 0))
                hit = np.flatnonzero(lam.min(axis=1) >= -1e-10)
                if len(hit):
                    out[i] = hit[0]
        return out

    def barycentric(self, tri_idx, points):
        c = self.corners[tri_idx]
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        d = points - c[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)


def _finalize(vertices, triangles, boundary, domain, grading=None, sigma_max=SIGMA_MAX):
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    mesh = Mesh(vertices, triangles, np.asarray(boundary, dtype=bool), domain, grading)
    validate(mesh, sigma_max=sigma_max)
    return mesh


def validate(mesh, sigma_max=SIGMA_MAX):
    """Check orientation, conformity and shape regularity; raise MeshError."""
    if (mesh.signed_areas <= 0).any():
        raise MeshError("mesh contains triangles with non-positive signed area")
    _, counts = mesh.edges()
    if counts.max() > 2:
        raise MeshError("non-conforming mesh: an edge is shared by more than two triangles")
    # Euler characteristic of a simply connected planar triangulation
    if mesh.n_vertices - len(counts) + mesh.n_triangles != 1:
        raise MeshError("triangulation is not a simply connected conforming partition")
    bverts = np.unique(mesh.boundary_edges())
    flagged = np.flatnonzero(mesh.boundary_vertex)
    if not np.array_equal(bverts, flagged):
        raise MeshError("boundary flags disagree with the topological boundary")
    sigma = mesh.shape_coeff
    if sigma > sigma_max:
        raise MeshError(f"shape coefficient {sigma:.3f} exceeds bound {sigma_max}")


# ---------------------------------------------------------------------------
# disc

def disc_layer_positions(h, mu):
    """Distances to the boundary of the disc rings, from 0 (boundary) to 1 (center).

    The count of layers between the boundary and a distance ``d`` is
    ``L(d) = int_0^d dt / H(t)`` with ``H(t) = h * max(t, h**mu) ** ((mu-1)/mu)``;
    rings sit at equispaced values of ``L / SPACING``.
    """
    hm = h ** mu

    def layers(d):
        if d <= hm:
            return d / hm
        return 1.0 + mu * (d ** (1.0 / mu) - h) / h

    def inverse(L):
        if L <= 1.0:
            return L * hm
        return (h * (L - 1.0) / mu + h) ** mu

    total = layers(1.0) / SPACING
    n = max(1, int(round(total)))
    d = np.array([inverse(SPACING * k * total / n) for k in range(n + 1)])
    d[-1] = 1.0
    return d


def _size(h, mu, d):
    return SPACING * h * np.maximum(d, h ** mu) ** ((mu - 1.0) / mu)


def _stitch(inner, outer, ai, ao):
    """Triangulate the annular strip between two closed rings of vertex ids."""
    m, n = len(inner), len(outer)
    # unwrap angles so both sequences increase from a common start
    start = float(ai[0])
    ao = np.mod(ao - start, 2 * np.pi)
    jo = int(np.argmin(np.minimum(ao, 2 * np.pi - ao)))
    ao = np.roll(ao, -jo)
    outer = np.roll(outer, -jo)
    if ao[0] > np.pi:
        ao[0] -= 2 * np.pi
    ao[1:] = np.where(ao[1:] < ao[0], ao[1:] + 2 * np.pi, ao[1:])
    ai = np.mod(ai - start, 2 * np.pi)
    ai_ext = np.append(ai, 2 * np.pi)
    ao_ext = np.append(ao, ao[0] + 2 * np.pi)
    tris = []
    i = j = 0
    while i < m or j < n:
        adv_inner = j >= n or (i < m and ai_ext[i + 1] <= ao_ext[j + 1])
        if adv_inner:
            tris.append((inner[i % m], outer[j % n], inner[(i + 1) % m]))
            i += 1
        else:
            tris.append((inner[i % m], outer[j % n], outer[(j + 1) % n]))
            j += 1
    return tris


def build_disc_mesh(spec, sigma_max=SIGMA_MAX):
    """Ring mesh of the unit disc for a ``GradingSpec``.

    ``mu = 1`` gives a quasi-uniform mesh of size ``~h``; ``mu > 1`` grades
    the rings toward the circle.  Boundary vertices lie exactly on ``|x| = 1``.
    """
    if not isinstance(spec, GradingSpec):
        spec = GradingSpec(*spec)
    h, mu = spec.h, spec.mu
    d = disc_layer_positions(h, mu)
    radii = 1.0 - d
    sizes = _size(h, mu, d)

    pts = []
    rings = []
    angles = []
    offset = 0
    for k, (r, H) in enumerate(zip(radii[:-1], sizes[:-1])):
        n = max(6, int(round(2 * np.pi * r / H)))
        shift = 0.5 * (k % 2) * 2 * np.pi / n
        th = shift + 2 * np.pi * np.arange(n) / n
        xy = np.column_stack([np.cos(th), np.sin(th)]) * r
        pts.append(xy)
        rings.append(np.arange(offset, offset + n))
        angles.append(th)
        offset += n
    center = offset
    pts.append(np.zeros((1, 2)))
    vertices = np.vstack(pts)

    tris = []
    for k in range(len(rings) - 1):
        # ring k is outside ring k+1
        tris += _stitch(rings[k + 1], rings[k], angles[k + 1], angles[k])
    last = rings[-1]
    tris += [(center, last[i], last[(i + 1) % len(last)]) for i in range(len(last))]
    tris = np.array(tris, dtype=np.int64)

    # snap boundary exactly
    outer = rings[0]
    vertices[outer] /= np.linalg.norm(vertices[outer], axis=1)[:, None]
    boundary = np.zeros(len(vertices), dtype=bool)
    boundary[outer] = True
    mesh = _finalize(vertices, tris, boundary, "disc", spec, sigma_max)
    logger.debug("disc mesh h=%g mu=%g: %d vertices, %d triangles", h, mu, mesh.n_vertices, mesh.n_triangles)
    return mesh



# ---------------------------------------------------------------------------
# L-shape

def build_lshape_mesh(h, sigma_max=SIGMA_MAX):
    """Uniform mesh of ``[0,2]^2 minus [1,2]^2`` with ``ceil(1/h)`` cells per unit.

    Every square is split along the same diagonal, so meshes whose cell counts
    divide each other are nested.
    """
    if not 0.0 < h <= 1.0:
        raise MeshError(f"mesh parameter h must lie in (0, 1], got {h}")
    n = int(np.ceil(1.0 / h - 1e-12))
    m = 2 * n
    ij = [(i, j) for j in range(m + 1) for i in range(m + 1) if not (i > n and j > n)]
    index = {p: k for k, p in enumerate(ij)}
    vertices = np.array(ij, dtype=float) / n
    tris = []
    for j in range(m):
        for i in range(m):
            if i >= n and j >= n:
                continue
            a, b = index[(i, j)], index[(i + 1, j)]
            c, d = index[(i + 1, j + 1)], index[(i, j + 1)]
            tris.append((a, b, c))
            tris.append((a, c, d))
    tris = np.array(tris, dtype=np.int64)
    x, y = vertices[:, 0], vertices[:, 1]
    tol = 1e-12
    boundary = (
        (np.abs(x) < tol) | (np.abs(y) < tol) | (np.abs(x - 2) < tol) | (np.abs(y - 2) < tol)
        | ((np.abs(x - 1) < tol) & (y >= 1 - tol)) | ((np.abs(y - 1) < tol) & (x >= 1 - tol))
    )
    return _finalize(vertices, tris, boundary, "lshape", GradingSpec(min(1.0, 1.0 / n), 1.0), sigma_max)


# ---------------------------------------------------------------------------

def classify_pair(mesh, t1, t2):
    """Relation of two elements by their number of shared vertices."""
    nt = mesh.n_triangles
    for t in (t1, t2):
        if not (0 <= int(t) < nt):
            raise IndexError(f"element id {t} out of range [0, {nt})")
    shared = len(set(mesh.triangles[t1].tolist()) & set(mesh.triangles[t2].tolist()))
    return PAIR_CLASSES[shared]


def dist_to_boundary(mesh, points):
    """Distance of points to the true domain boundary."""
    points = np.atleast_2d(points)
    if mesh.domain == "disc":
        return np.abs(1.0 - np.linalg.norm(points, axis=1))
    if mesh.domain == "lshape":
        poly = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=float)
        return _polygon_distance(points, poly)
    raise MeshError("distance to boundary needs a known domain")


def _polygon_distance(points, poly):
    best = np.full(len(points), np.inf)
    for k in range(len(poly)):
        p, q = poly[k], poly[(k + 1) % len(poly)]
        e = q - p
        t = np.clip(((points - p) @ e) / (e @ e), 0.0, 1.0)
        best = np.minimum(best, np.linalg.norm(points - (p + t[:, None] * e), axis=1))
    return best


def write_mesh(mesh, path):
    """Plain-text dump: ``nv nt``, then ``x y flag`` rows, then ``i j k`` rows."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for (x, y), b in zip(mesh.vertices, mesh.boundary_vertex):
            fh.write(f"{float(x)!r} {float(y)!r} {int(b)}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path, domain=None):
    with open(path) as fh:
        nv, nt = map(int, fh.readline().split())
        rows = [fh.readline().split() for _ in range(nv)]
        tris = [list(map(int, fh.readline().split())) for _ in range(nt)]
    verts = np.array([[float(r[0]), float(r[1])] for r in rows])
    flags = np.array([int(r[2]) for r in rows], dtype=bool)
    return Mesh(verts, np.array(tris, dtype=np.int64), flags, domain)
