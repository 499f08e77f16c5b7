"""Finite element matrices for the integral fractional Laplacian.

The stiffness matrix is

    A_ij = C(2,s)/2 * int int_{R^2 x R^2} (phi_i(x) - phi_i(y)) (phi_j(x) - phi_j(y)) |x-y|^(-2-2s)

split into element pairs of the mesh plus ``C(2,s) * int phi_i phi_j omega_s``
where ``omega_s(x) = int_{R^2 minus Omega_h} |x-y|^(-2-2s) dy`` is evaluated in
closed form as a sum over the boundary edges of the mesh.
"""
from dataclasses import dataclass, field
import logging
import math
import struct

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree
from scipy.special import beta as beta_fn, betainc, hyp2f1

from .exact import normalization_constant
from .quadrature import gauss_jacobi01, gauss_legendre01, triangle_rule
from . import _pairs

__all__ = [
    "QuadratureSpec", "StiffnessMatrix", "normalization_constant", "assemble_stiffness",
    "weight_omega_s", "omega_polygon", "assemble_mass", "assemble_coupling", "assemble_load",
    "dump_matrix", "load_matrix", "MAX_DENSE_DOFS",
]

log = logging.getLogger(__name__)

MAX_DENSE_DOFS = 15000

LSHAPE_POLYGON = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=float)


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature orders for the stiffness assembly.

    Orders are Gauss points per coordinate.  ``order_singular`` drives the
    regularized integrals of touching pairs, ``order_disjoint`` the tensor
    rule of well separated pairs.  Disjoint pairs closer than
    ``near_field_factor * (h1 + h2)`` get the elevated ``order_near``;
    ``order_complement`` is the per-element rule of the weight term.
    """

    order_disjoint: int = 3
    order_singular: int = 9
    near_field_factor: float = 1.0
    order_near: int = 7
    order_complement: int = 8

    def __post_init__(self):
        for name in ("order_disjoint", "order_singular", "order_near", "order_complement"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {v}")
        if not (self.near_field_factor >= 0.0 and math.isfinite(self.near_field_factor)):
            raise ValueError("near_field_factor must be finite and >= 0")

    def raised(self, k=2):
        return QuadratureSpec(self.order_disjoint + k, self.order_singular + k, self.near_field_factor,
                              self.order_near + k, self.order_complement + k)


@dataclass(frozen=True, eq=False)
class StiffnessMatrix:
    entries: np.ndarray
    s: float
    c_ns: float
    quad: QuadratureSpec
    pair_counts: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def n(self):
        return self.entries.shape[0]

    def energy(self, v):
        v = np.asarray(v, dtype=float)
        return float(v @ (self.entries @ v))


def _check_s(s):
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order s must lie in (0, 1), got {s}")


# ---------------------------------------------------------------- complement

def _edge_integral(s, t, d2):
    """``int_0^psi cos(th)^(2s) dth`` with ``tan psi = t / |delta|``."""
    with np.errstate(invalid="ignore", divide="ignore"):
        x = t * t / (d2 + t * t)
    return np.sign(t) * 0.5 * beta_fn(0.5, s + 0.5) * betainc(0.5, s + 0.5, x)


def _omega_batch(X, P, Q, s):
    """Complement weights for batches: points ``X (m, nq, 2)``, edges ``P, Q (m, ne, 2)``.

    Each row ``k`` uses its own polygon ``P[k, e] -> Q[k, e]`` traversed with
    the region on the left; zero-length edges are padding.
    """
    tau = Q - P
    length = np.hypot(tau[..., 0], tau[..., 1])
    safe = np.where(length > 0.0, length, 1.0)
    tau = tau / safe[..., None]
    rel = P[:, None, :, :] - X[:, :, None, :]
    delta = rel[..., 0] * tau[:, None, :, 1] - rel[..., 1] * tau[:, None, :, 0]
    t1 = rel[..., 0] * tau[:, None, :, 0] + rel[..., 1] * tau[:, None, :, 1]
    t2 = t1 + length[:, None, :]
    d2 = delta * delta
    val = _edge_integral(s, t2, d2) - _edge_integral(s, t1, d2)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(d2 > 0.0, np.sign(delta) * np.abs(delta) ** (-2.0 * s) * val, 0.0)
    return term.sum(axis=2) / (2.0 * s)


def omega_polygon(points, edges_p, edges_q, s, chunk=2048):
    """Complement weight ``int_{R^2 minus D} |x-y|^(-2-2s) dy`` of a polygonal region ``D``.

    ``edges_p[k] -> edges_q[k]`` traverse the boundary of ``D`` with ``D`` on
    the left (holes and several components are fine).  Integrating the kernel
    radially from ``x`` out to infinity turns the area integral into a sum
    over edges of ``sign(delta) |delta|^(-2s) (F(psi2) - F(psi1)) / (2s)``
    where ``F(psi) = int_0^psi cos^(2s)``, an incomplete Beta function.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    p = np.asarray(edges_p, dtype=float)[None]
    q = np.asarray(edges_q, dtype=float)[None]
    out = np.empty(len(x))
    for start in range(0, len(x), chunk):
        out[start:start + chunk] = _omega_batch(x[None, start:start + chunk], p, q, s)[0]
    return out


def weight_omega_s(x, domain, s):
    """``int_{R^2 minus Omega} |x-y|^(-2-2s) dy`` for the unit disc or the L-shape.

    Accepts one point or an array of points strictly inside the domain.
    """
    _check_s(s)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if domain == "disc":
        r2 = np.einsum("ij,ij->i", pts, pts)
        if np.any(r2 >= 1.0):
            raise ValueError("point not strictly inside the unit disc")
        # angular average of the tail integral, in hypergeometric form
        val = math.pi / s * hyp2f1(s, 1.0 + s, 1.0, r2)
    elif domain == "lshape":
        poly = LSHAPE_POLYGON
        val = omega_polygon(pts, poly, np.roll(poly, -1, axis=0), s)
        if np.any(~np.isfinite(val)) or np.any(val <= 0):
            raise ValueError("point not strictly inside the L-shaped domain")
    else:
        raise ValueError(f"unknown domain {domain!r}")
    return float(val[0]) if np.ndim(x) == 1 else val


def near_lists(mesh, factor):
    """Symmetric CSR lists of the touching and near elements of every element.

    ``T2`` is near ``T1`` when the gap estimate ``|c1 - c2| - r1 - r2`` (centroids,
    circumradii about the centroid) is below ``factor * (h1 + h2)``.
    """
    cent = mesh.barycenters
    radii = np.max(np.linalg.norm(mesh.corners - cent[:, None, :], axis=2), axis=1)
    diam = mesh.diameters
    tris = mesh.triangles
    nt = len(tris)
    r = 2.0 * radii.max() + 2.0 * factor * diam.max()
    pairs = cKDTree(cent).query_pairs(r, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    d = cent[i] - cent[j]
    gap = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2) - radii[i] - radii[j]
    shared = (tris[i][:, :, None] == tris[j][:, None, :]).any(axis=(1, 2))
    keep = shared | (gap < factor * (diam[i] + diam[j]))
    rows = np.concatenate([i[keep], j[keep]])
    cols = np.concatenate([j[keep], i[keep]])
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    ptr = np.zeros(nt + 1, dtype=np.int64)
    np.add.at(ptr, rows + 1, 1)
    return np.cumsum(ptr), cols.astype(np.int64)


def _cluster_boundaries(mesh, elems, ptr, idx):
    """Boundary edges of ``T`` united with its near elements, for each ``T`` in ``elems``.

    Returns padded arrays ``P, Q`` of shape ``(len(elems), ne_max, 2)``.
    """
    tris = mesh.triangles
    nv = mesh.n_vertices
    verts = mesh.vertices
    directed = np.stack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1)
    lists = []
    for t in elems:
        members = np.concatenate([[t], idx[ptr[t]:ptr[t + 1]]])
        e = directed[members].reshape(-1, 2)
        code = e[:, 0] * nv + e[:, 1]
        rev = e[:, 1] * nv + e[:, 0]
        lists.append(e[~np.isin(rev, code)])
    ne = max(len(b) for b in lists)
    P = np.zeros((len(elems), ne, 2))
    Q = np.zeros((len(elems), ne, 2))
    for k, b in enumerate(lists):
        P[k, :len(b)] = verts[b[:, 0]]
        Q[k, :len(b)] = verts[b[:, 1]]
        P[k, len(b):] = verts[b[0, 0]]
        Q[k, len(b):] = verts[b[0, 0]]
    return P, Q


def _seg_rule(order, s):
    """Collapsed rules on the reference triangle ``(0,0), (1,0), (0,1)``.

    ``"vertex"``: singular vertex at the origin, weight ``u^(1-2s)`` built in.
    ``"edge"``: singular edge opposite the origin, weight ``(1-u)^(2-2s)``.
    Returned as ``(u, v, w)`` with the Jacobian of the collapse included but
    the singular weight factored out.
    """
    v, wv = gauss_legendre01(order)
    rules = {}
    for key, (a, b) in (("vertex", (0.0, 1.0 - 2.0 * s)), ("edge", (2.0 - 2.0 * s, 1.0)),
                        ("plain", (0.0, 1.0))):
        u, wu = gauss_jacobi01(order, a, b)
        uu, vv = np.meshgrid(u, v, indexing="ij")
        rules[key] = uu.ravel(), vv.ravel(), np.outer(wu, wv).ravel()
    return rules


def _self_term(mesh, s, order, ptr, idx, batch_points=3_000_000):
    """``int_T phi_a phi_b omega_S`` summed over elements, ``S`` = ``T`` and its near elements.

    This is the complement contribution plus the diagonal blocks of all far
    pairs: ``sum_{T2 far} int_T2 k(x, y) dy + int_{R^2 minus Omega_h} k(x, y) dy``
    equals the complement weight of ``S``.  Elements touching the boundary use
    Gauss-Jacobi rules collapsed at the singular vertex or edge.
    """
    verts = mesh.vertices
    tris = mesh.triangles
    dof = mesh.dof_map
    bflag = mesh.boundary_vertex
    be = mesh.boundary_edges()
    bset = {(int(a), int(b)) for a, b in be} | {(int(b), int(a)) for a, b in be}
    areas = mesh.areas
    nb = bflag[tris].sum(axis=1)
    has = (dof[tris] >= 0).any(axis=1)
    rules = _seg_rule(order, s)

    # each job: element, apex vertex, two other vertices, rule key, singular power
    # of the apex-side coordinate, local dof triple in the order (apex, b1, b2)
    jobs = {"plain": [], "vertex": [], "edge": []}
    for t in np.flatnonzero(has):
        tri = tris[t]
        if nb[t] == 0:
            jobs["plain"].append((t, tri[0], tri[1], tri[2]))
        elif nb[t] == 1:
            k = int(np.argmax(bflag[tri]))
            jobs["vertex"].append((t, tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]))
        elif nb[t] == 2:
            k = int(np.argmin(bflag[tri]))
            c, b1, b2 = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
            if (int(b1), int(b2)) in bset:
                jobs["edge"].append((t, c, b1, b2))
            else:
                # chord between two boundary vertices: split at its midpoint
                jobs.setdefault("bridge", []).append((t, c, b1, b2))

    rows, cols, vals = [], [], []
    for key, items in jobs.items():
        if not items:
            continue
        items = np.array(items, dtype=np.int64)
        rule = rules["vertex" if key == "bridge" else key]
        u, v, w = rule
        step = max(1, batch_points // (len(u) * 64))
        for start in range(0, len(items), step):
            it = items[start:start + step]
            t = it[:, 0]
            Pb, Qb = _cluster_boundaries(mesh, t, ptr, idx)
            V0, V1, V2 = verts[it[:, 1]], verts[it[:, 2]], verts[it[:, 3]]
            d = dof[it[:, 1:]]
            if key == "bridge":
                M = 0.5 * (V1 + V2)
                loc = np.zeros((len(it), 3, 3))
                for B in (V1, V2):
                    # sub-triangle (B, M, apex) collapsed at B; only the apex is a dof
                    X = B[:, None, :] + u[None, :, None] * ((M - B)[:, None, :]
                                                            + v[None, :, None] * (V0 - M)[:, None, :])
                    om = _omega_batch(X, Pb, Qb, s)
                    e1, e2 = M - B, V0 - B
                    sub = 0.5 * np.abs(e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])
                    phi = u * v
                    loc[:, 0, 0] += (om * (u ** (2.0 * s) * w * phi * phi)[None, :]).sum(axis=1) * 2.0 * sub
                _collect(rows, cols, vals, d, loc)
                continue
            # x = V0 + u ((V1 - V0) + v (V2 - V1)); barycentrics (1-u, u(1-v), uv)
            X = V0[:, None, :] + u[None, :, None] * ((V1 - V0)[:, None, :]
                                                     + v[None, :, None] * (V2 - V1)[:, None, :])
            om = _omega_batch(X, Pb, Qb, s)
            lam = np.stack([1.0 - u, u * (1.0 - v), u * v], axis=1)
            # the rule weights carry u (plain), u^(1-2s) (vertex), (1-u)^(2-2s) u (edge)
            if key == "plain":
                g = 2.0 * w
            elif key == "vertex":
                g = 2.0 * w * u ** (2.0 * s)
            else:
                # only the apex is a dof; phi_apex^2 = (1-u)^2 sits in the weight
                g = 2.0 * w * (1.0 - u) ** (2.0 * s)
                lam[:, 0] = 1.0
            loc = np.einsum("tq,q,qa,qb->tab", om, g, lam, lam) * areas[t][:, None, None]
            _collect(rows, cols, vals, d, loc)

    n = mesh.n_dofs
    return sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n)).toarray()


def _collect(rows, cols, vals, dofs, loc):
    m = dofs.shape[1]
    I = np.repeat(dofs, m, axis=1)
    J = np.tile(dofs, (1, m))
    V = loc.reshape(len(dofs), -1)
    ok = (I >= 0) & (J >= 0)
    rows.append(I[ok])
    cols.append(J[ok])
    vals.append(V[ok])


# ----------------------------------------------------------------- stiffness

def assemble_stiffness(mesh, s, quad=None, max_dofs=MAX_DENSE_DOFS):
    """Dense stiffness matrix of the fractional Laplacian over interior vertices."""
    _check_s(s)
    quad = QuadratureSpec() if quad is None else quad
    if not isinstance(quad, QuadratureSpec):
        raise TypeError("quad must be a QuadratureSpec")
    n = mesh.n_dofs
    if n > max_dofs:
        raise MemoryError(f"{n} unknowns exceed the dense cap of {max_dofs}")
    if n == 0:
        raise ValueError("mesh has no interior vertices")

    verts = np.ascontiguousarray(mesh.vertices, dtype=float)
    tris = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
    dof = np.ascontiguousarray(mesh.dof_map, dtype=np.int64)
    ptr, idx = near_lists(mesh, quad.near_field_factor)
    lam_f, w_f = triangle_rule(quad.order_disjoint)
    lam_n, w_n = triangle_rule(quad.order_near)
    xs, ws = gauss_legendre01(quad.order_singular)

    A = np.zeros((n, n))
    counts = _pairs.assemble_pairs(verts, tris, dof, float(s), ptr, idx,
                                   np.ascontiguousarray(lam_f), np.ascontiguousarray(w_f),
                                   np.ascontiguousarray(lam_n), np.ascontiguousarray(w_n),
                                   xs, ws, A)
    A += _self_term(mesh, s, quad.order_complement, ptr, idx)
    c = normalization_constant(2, s)
    A *= c
    # exact symmetry: keep the upper triangle and mirror it
    iu = np.triu_indices(n, 1)
    A[(iu[1], iu[0])] = A[iu]

    diag = np.diag(A)
    if np.any(diag <= 0.0):
        bad = np.flatnonzero(diag <= 0.0)
        raise FloatingPointError(f"non-positive stiffness diagonal at dofs {bad[:10].tolist()}: "
                                 "quadrature breakdown")
    names = ("disjoint_far", "disjoint_near", "vertex_adjacent", "edge_adjacent", "identical")
    return StiffnessMatrix(A, float(s), c, quad, dict(zip(names, map(int, counts))))


# ---------------------------------------------------------- mass, load, coupling

def assemble_mass(mesh):
    """Exact P1 mass matrix over interior vertices (sparse CSR)."""
    tris = mesh.triangles
    dof = mesh.dof_map
    loc = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    d = dof[tris]
    I = np.repeat(d, 3, axis=1)
    J = np.tile(d, (1, 3))
    V = mesh.areas[:, None] * loc.ravel()[None, :]
    ok = (I >= 0) & (J >= 0)
    n = mesh.n_dofs
    return sparse.csr_matrix((V[ok], (I[ok], J[ok])), shape=(n, n))


def assemble_coupling(mesh):
    """``B[i, K] = int_K phi_i`` for interior vertices ``i`` (sparse CSR, n_dofs x n_tri)."""
    d = mesh.dof_map[mesh.triangles]
    K = np.repeat(np.arange(len(d)), 3)
    I = d.ravel()
    V = np.repeat(mesh.areas / 3.0, 3)
    ok = I >= 0
    return sparse.csr_matrix((V[ok], (I[ok], K[ok])), shape=(mesh.n_dofs, len(d)))


def assemble_load(mesh, f, quad_order=4):
    """``int f phi_i`` by a collapsed Gauss rule with ``quad_order`` points per direction."""
    if int(quad_order) != quad_order or quad_order < 1:
        raise ValueError("quad_order must be a positive integer")
    if not callable(f):
        raise TypeError("f must be callable on (m, 2) point arrays")
    lam, w = triangle_rule(int(quad_order))
    X = np.einsum("qa,tad->tqd", lam, mesh.corners)
    fx = np.asarray(f(X.reshape(-1, 2)), dtype=float).reshape(X.shape[:2])
    loc = np.einsum("tq,q,qa->ta", fx, w, lam) * mesh.areas[:, None]
    d = mesh.dof_map[mesh.triangles]
    ok = d >= 0
    return np.bincount(d[ok], weights=loc[ok], minlength=mesh.n_dofs)


# --------------------------------------------------------------------- dumps

_MAGIC = b"FRSTIFF1"


def dump_matrix(A, path):
    """Write ``A`` as magic, ``n`` (int64), ``s`` (float64), then row-major float64."""
    M = A.entries if isinstance(A, StiffnessMatrix) else np.asarray(A)
    s = A.s if isinstance(A, StiffnessMatrix) else float("nan")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qd", M.shape[0], s))
        fh.write(np.ascontiguousarray(M, dtype="<f8").tobytes())


def load_matrix(path):
    """Inverse of :func:`dump_matrix`; returns ``(entries, s)``."""
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a stiffness dump")
        n, s = struct.unpack("<qd", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * n:
        raise ValueError("truncated stiffness dump")
    return data.reshape(n, n).copy(), s
