"""Independent reference integrators used by the tests.

None of these share code with the production quadrature.  The touching-pair
oracle substitutes ``y = x - z``: for fixed ``z`` the inner integral runs over
the convex polygon ``T1 cap (T2 + z)`` and has a quadratic integrand, so it is
computed exactly; the remaining ``z`` integral is done adaptively in polar
coordinates.
"""
import math

import numpy as np
from numba import njit
from scipy.integrate import quad, quad_vec
from scipy.special import roots_jacobi

from fracocp.assembly import assemble_coupling, assemble_load, assemble_mass
from fracocp.quadrature import triangle_rule


@njit(cache=True)
def _clip(poly, n, a, b, c):
    """Keep the part of polygon ``poly[:n]`` where ``a x + b y + c >= 0``."""
    out = np.empty((n + 3, 2))
    m = 0
    for i in range(n):
        p = poly[i]
        q = poly[(i + 1) % n]
        fp = a * p[0] + b * p[1] + c
        fq = a * q[0] + b * q[1] + c
        if fp >= 0:
            out[m] = p
            m += 1
        if (fp >= 0) != (fq >= 0):
            t = fp / (fp - fq)
            out[m, 0] = p[0] + t * (q[0] - p[0])
            out[m, 1] = p[1] + t * (q[1] - p[1])
            m += 1
    return out, m


@njit(cache=True)
def _bary(T, x, y):
    det = (T[1, 0] - T[0, 0]) * (T[2, 1] - T[0, 1]) - (T[2, 0] - T[0, 0]) * (T[1, 1] - T[0, 1])
    l1 = ((x - T[0, 0]) * (T[2, 1] - T[0, 1]) - (T[2, 0] - T[0, 0]) * (y - T[0, 1])) / det
    l2 = ((T[1, 0] - T[0, 0]) * (y - T[0, 1]) - (x - T[0, 0]) * (T[1, 1] - T[0, 1])) / det
    return 1.0 - l1 - l2, l1, l2


@njit(cache=True)
def overlap_moment(T1, T2, loc1, loc2, nloc, z0, z1):
    """``G_ab(z) = int_{T1 cap (T2+z)} (phi_a(x) - phi_a(x-z)) (phi_b(x) - phi_b(x-z)) dx``.

    ``loc1[k]`` / ``loc2[k]`` give the local index of vertex ``k`` of each
    triangle; both triangles must be counter-clockwise.
    """
    poly = T1.copy()
    n = 3
    for k in range(3):
        p = T2[k]
        q = T2[(k + 1) % 3]
        # left half-plane of the shifted edge
        a = -(q[1] - p[1])
        b = q[0] - p[0]
        c = -(a * (p[0] + z0) + b * (p[1] + z1))
        poly, n = _clip(poly, n, a, b, c)
        if n < 3:
            return np.zeros((nloc, nloc))
    G = np.zeros((nloc, nloc))
    d = np.empty(nloc)
    # fan triangulation, edge-midpoint rule is exact for quadratics
    for i in range(1, n - 1):
        A = poly[0]
        B = poly[i]
        C = poly[i + 1]
        area = 0.5 * ((B[0] - A[0]) * (C[1] - A[1]) - (C[0] - A[0]) * (B[1] - A[1]))
        for e in range(3):
            if e == 0:
                x = 0.5 * (A[0] + B[0])
                y = 0.5 * (A[1] + B[1])
            elif e == 1:
                x = 0.5 * (B[0] + C[0])
                y = 0.5 * (B[1] + C[1])
            else:
                x = 0.5 * (C[0] + A[0])
                y = 0.5 * (C[1] + A[1])
            d[:] = 0.0
            b1 = _bary(T1, x, y)
            b2 = _bary(T2, x - z0, y - z1)
            for k in range(3):
                d[loc1[k]] += b1[k]
                d[loc2[k]] -= b2[k]
            for p in range(nloc):
                for q in range(nloc):
                    G[p, q] += area / 3.0 * d[p] * d[q]
    return G


def _ccw(T):
    T = np.asarray(T, dtype=float)
    det = (T[1, 0] - T[0, 0]) * (T[2, 1] - T[0, 1]) - (T[2, 0] - T[0, 0]) * (T[1, 1] - T[0, 1])
    return (T, np.array([0, 1, 2])) if det > 0 else (T[[0, 2, 1]], np.array([0, 2, 1]))


@njit(cache=True)
def _radial(T1, T2, loc1, loc2, nloc, s, th, rmax, tj, wj, tg, wg):
    """``int_0^inf G(rho e) rho^(-1-2s) d rho`` split at the exact events in rho.

    Between events the clipped polygon keeps its combinatorics, so ``G`` is a
    polynomial of degree at most four in ``rho`` and vanishes to second order
    at the origin.
    """
    e0 = math.cos(th)
    e1 = math.sin(th)
    br = np.empty(20)
    nb = 0
    br[nb] = 0.0
    br[nb + 1] = rmax
    nb = 2
    for side in range(2):
        A = T1 if side == 0 else T2
        B = T2 if side == 0 else T1
        sg = 1.0 if side == 0 else -1.0
        for k in range(3):
            p = A[k]
            q = A[(k + 1) % 3]
            n0 = -(q[1] - p[1])
            n1 = q[0] - p[0]
            ne = sg * (n0 * e0 + n1 * e1)
            if abs(ne) < 1e-14:
                continue
            for j in range(3):
                # vertex of the other (shifted) triangle meets this edge line
                r = (n0 * (p[0] - B[j, 0]) + n1 * (p[1] - B[j, 1])) / ne
                if 0.0 < r < rmax:
                    br[nb] = r
                    nb += 1
    br = np.sort(br[:nb])
    out = np.zeros((nloc, nloc))
    first = True
    for i in range(nb - 1):
        lo = br[i]
        hi = br[i + 1]
        if hi - lo < 1e-15 * rmax:
            continue
        if first:
            for q in range(len(tj)):
                rho = hi * tj[q]
                G = overlap_moment(T1, T2, loc1, loc2, nloc, rho * e0, rho * e1)
                out += G * (wj[q] * hi ** (2.0 - 2.0 * s) / (rho * rho))
            first = False
            continue
        # geometric splitting keeps rho^(-1-2s) well resolved
        a = lo
        while a < hi:
            b = min(hi, 4.0 * a)
            for q in range(len(tg)):
                rho = a + (b - a) * tg[q]
                G = overlap_moment(T1, T2, loc1, loc2, nloc, rho * e0, rho * e1)
                out += G * (wg[q] * (b - a) * rho ** (-1.0 - 2.0 * s))
            a = b
    return out


def touching_pair(verts, tri1, tri2, s, n_theta=None, epsrel=1e-11):
    """Pair integral matrix over the union of vertex indices of ``tri1`` and ``tri2``.

    Returns ``(ids, I)`` where ``ids`` lists the global vertex indices of the rows.
    The angle is integrated adaptively, or with ``n_theta`` Gauss points per
    interval between critical directions.
    """
    ids = list(dict.fromkeys(list(tri1) + list(tri2)))
    pos = {v: i for i, v in enumerate(ids)}
    T1, o1 = _ccw(verts[list(tri1)])
    T2, o2 = _ccw(verts[list(tri2)])
    T1 = np.ascontiguousarray(T1)
    T2 = np.ascontiguousarray(T2)
    loc1 = np.array([pos[tri1[k]] for k in o1])
    loc2 = np.array([pos[tri2[k]] for k in o2])
    nloc = len(ids)
    allp = np.vstack([T1, T2])
    rmax = max(np.linalg.norm(p - q) for p in allp for q in allp) * 1.001
    x, w = roots_jacobi(6, 0.0, 1.0 - 2.0 * s)
    tj, wj = 0.5 * (x + 1.0), w / 2.0 ** (2.0 - 2.0 * s)
    x, w = np.polynomial.legendre.leggauss(16)
    tg, wg = 0.5 * (x + 1.0), 0.5 * w
    if n_theta is not None:
        x, w = np.polynomial.legendre.leggauss(n_theta)
        xt, wt = 0.5 * (x + 1.0), 0.5 * w

    def radial(th):
        return _radial(T1, T2, loc1, loc2, nloc, s, th, rmax, tj, wj, tg, wg)

    angles = []
    for T in (T1, T2):
        for k in range(3):
            d = T[(k + 1) % 3] - T[k]
            a = math.atan2(d[1], d[0]) % (2 * math.pi)
            angles += [a, (a + math.pi) % (2 * math.pi)]
    for p in allp:
        for q in allp:
            if np.linalg.norm(p - q) > 0:
                angles.append(math.atan2(*(p - q)[::-1]) % (2 * math.pi))
    pts = sorted(set(round(a, 14) for a in angles) | {0.0, 2 * math.pi})
    total = np.zeros((nloc, nloc))
    for lo, hi in zip(pts[:-1], pts[1:]):
        if hi - lo <= 1e-13:
            continue
        if n_theta is None:
            total += quad_vec(radial, lo, hi, epsrel=epsrel, epsabs=0.0, limit=200)[0]
        else:
            # the radial integral is analytic between consecutive critical angles
            for th, w in zip(lo + (hi - lo) * xt, (hi - lo) * wt):
                total += w * radial(th)
    return ids, total


@njit(cache=True)
def _disjoint_sums(X, wx, lx, Y, wy, ly, s):
    I = np.zeros((6, 6))
    for p in range(X.shape[0]):
        for q in range(Y.shape[0]):
            d0 = X[p, 0] - Y[q, 0]
            d1 = X[p, 1] - Y[q, 1]
            k = wx[p] * wy[q] * (d0 * d0 + d1 * d1) ** (-1.0 - s)
            for a in range(3):
                for b in range(3):
                    I[a, b] += k * lx[p, a] * lx[p, b]
                    I[3 + a, 3 + b] += k * ly[q, a] * ly[q, b]
                    I[a, 3 + b] -= k * lx[p, a] * ly[q, b]
    for a in range(3):
        for b in range(3):
            I[3 + b, a] = I[a, 3 + b]
    return I


def disjoint_pair(verts, tri1, tri2, s, n=24):
    """Brute-force tensor Gauss (conical product) for elements with disjoint closures."""
    def rule(T):
        x, w = np.polynomial.legendre.leggauss(n)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        u, v = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w) * u
        lam = np.stack([1 - u, u * (1 - v), u * v], -1).reshape(-1, 3)
        u, v = T[1] - T[0], T[2] - T[0]
        area = 0.5 * abs(u[0] * v[1] - u[1] * v[0])
        return np.ascontiguousarray(lam @ T), W.ravel() * 2.0 * area, lam
    X, wx, lx = rule(verts[list(tri1)])
    Y, wy, ly = rule(verts[list(tri2)])
    return list(tri1) + list(tri2), _disjoint_sums(X, wx, lx, Y, wy, ly, s)


def _ray_polygon(x, e, poly):
    """Sorted distances at which the ray ``x + r e`` crosses the polygon boundary."""
    hits = []
    n = len(poly)
    for k in range(n):
        p = poly[k]
        d = poly[(k + 1) % n] - p
        den = e[0] * (-d[1]) - e[1] * (-d[0])
        if abs(den) < 1e-300:
            continue
        w = p - x
        r = (w[0] * (-d[1]) - w[1] * (-d[0])) / den
        t = (e[0] * w[1] - e[1] * w[0]) / den
        if r > 0 and 0 <= t < 1:
            hits.append(r)
    return sorted(hits)


def omega_raycast(x, poly, s, epsrel=1e-11):
    """``int_{R^2 minus poly} |x-y|^(-2-2s) dy`` by integrating along rays from ``x``."""
    x = np.asarray(x, dtype=float)

    def f(th):
        e = np.array([math.cos(th), math.sin(th)])
        hits = _ray_polygon(x, e, poly)
        # outside on [h0, h1], [h2, h3], ..., [h_last, inf)
        val = 0.0
        for i in range(0, len(hits), 2):
            val += hits[i] ** (-2.0 * s)
            if i + 1 < len(hits):
                val -= hits[i + 1] ** (-2.0 * s)
        return val / (2.0 * s)

    pts = sorted(math.atan2(*(p - x)[::-1]) % (2 * math.pi) for p in poly)
    pts = [0.0] + pts + [2 * math.pi]
    return sum(quad(f, lo, hi, epsrel=epsrel, limit=200)[0] for lo, hi in zip(pts[:-1], pts[1:]) if hi > lo)


def omega_disc_ray(x, s):
    """Disc version of the ray integral (exact exit distance)."""
    x = np.asarray(x, dtype=float)

    def f(th):
        e = np.array([math.cos(th), math.sin(th)])
        b = x @ e
        r = -b + math.sqrt(1.0 - x @ x + b * b)
        return r ** (-2.0 * s) / (2.0 * s)
    return quad(f, 0.0, 2 * math.pi, epsrel=1e-12, limit=200)[0]


@njit(cache=True)
def _omega_convex(x, poly, s, xt, wt):
    """Ray-cast complement weight of a convex polygon: ``(1/2s) int R(theta)^(-2s)``."""
    n = poly.shape[0]
    ang = np.empty(n + 1)
    for k in range(n):
        ang[k] = math.atan2(poly[k, 1] - x[1], poly[k, 0] - x[0]) % (2 * math.pi)
    ang[n] = 0.0
    ang = np.sort(ang)
    total = 0.0
    for i in range(n + 1):
        lo = ang[i]
        hi = ang[i + 1] if i < n else 2 * math.pi
        for q in range(len(xt)):
            th = lo + (hi - lo) * xt[q]
            e0 = math.cos(th)
            e1 = math.sin(th)
            best = 1e300
            for k in range(n):
                p = poly[k]
                d0 = poly[(k + 1) % n, 0] - p[0]
                d1 = poly[(k + 1) % n, 1] - p[1]
                den = e0 * (-d1) + e1 * d0
                if abs(den) < 1e-300:
                    continue
                w0 = p[0] - x[0]
                w1 = p[1] - x[1]
                r = (w0 * (-d1) + w1 * d0) / den
                if r > 0.0 and r < best:
                    best = r
            total += wt[q] * (hi - lo) * best ** (-2.0 * s)
    return total / (2.0 * s)


def _graded(levels, n):
    """Composite Gauss rule on [0, 1] refined geometrically toward 0."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    edges = [0.0] + [0.5 ** k for k in range(levels, -1, -1)]
    X, W = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        X.append(a + (b - a) * x)
        W.append((b - a) * w)
    return np.concatenate(X), np.concatenate(W)


def complement_element(verts, tri, bflag, poly, s, levels=14, n=10):
    """``int_T lam_a lam_b omega`` for one element of a mesh of the convex polygon ``poly``.

    Duffy coordinates collapsed at a boundary vertex (graded toward it) or at
    the interior vertex opposite a boundary edge (graded toward the edge).
    """
    T = verts[list(tri)]
    nb = int(np.sum(bflag))
    if nb == 0 or nb == 3:
        k = 0
    elif nb == 1:
        k = int(np.argmax(bflag))
    else:
        k = int(np.argmin(bflag))
    order = [k, (k + 1) % 3, (k + 2) % 3]
    A, B, C = T[order]
    gu, wu = _graded(levels, n)
    if nb == 2:
        gu, wu = 1.0 - gu, wu
    gv, wv = _graded(6, n)
    gv = np.concatenate([0.5 * gv, 1.0 - 0.5 * gv])
    wv = np.concatenate([0.5 * wv, 0.5 * wv])
    xt, wt = np.polynomial.legendre.leggauss(12)
    xt, wt = 0.5 * (xt + 1.0), 0.5 * wt
    u, v = B - A, C - A
    area = 0.5 * abs(u[0] * v[1] - u[1] * v[0])
    uu, vv = [z.ravel() for z in np.meshgrid(gu, gv, indexing="ij")]
    ww = np.outer(wu, wv).ravel()
    X = A + uu[:, None] * ((B - A) + vv[:, None] * (C - B))
    lam = np.stack([1.0 - uu, uu * (1.0 - vv), uu * vv], axis=1)
    om = np.array([_omega_convex(x, poly, s, xt, wt) for x in X])
    out = np.einsum("q,qa,qb->ab", ww * 2.0 * area * uu * om, lam, lam)
    res = np.zeros((3, 3))
    res[np.ix_(order, order)] = out
    return res


def oracle_stiffness(mesh, s, n_theta=12):
    """Stiffness matrix over interior vertices built only from the oracles above.

    The mesh must be of a convex domain; its boundary polygon is used as is.
    Returns the matrix and a boolean mask of entries with disjoint supports.
    """
    from scipy.special import gamma
    verts, tris = mesh.vertices, mesh.triangles
    dof = mesh.dof_map
    n = int((dof >= 0).sum())
    be = mesh.boundary_edges()
    # chain the boundary edges into a polygon
    nxt = {int(a): int(b) for a, b in be}
    start = int(be[0, 0])
    poly = [start]
    while nxt[poly[-1]] != start:
        poly.append(nxt[poly[-1]])
    poly = np.ascontiguousarray(verts[poly])
    A = np.zeros((n, n))

    def scatter(ids, I, fac=1.0):
        for p, i in enumerate(ids):
            for q, j in enumerate(ids):
                if dof[i] >= 0 and dof[j] >= 0:
                    A[dof[i], dof[j]] += fac * I[p, q]

    has = (dof[tris] >= 0).any(axis=1)
    sizes = mesh.diameters
    cent = mesh.barycenters
    for t1 in range(len(tris)):
        for t2 in range(t1, len(tris)):
            if not (has[t1] or has[t2]):
                continue
            shared = len(set(tris[t1]) & set(tris[t2]))
            if shared:
                ids, I = touching_pair(verts, tuple(tris[t1]), tuple(tris[t2]), s, n_theta=n_theta)
                scatter(ids, I, 0.5 if t1 == t2 else 1.0)
            else:
                gap = np.linalg.norm(cent[t1] - cent[t2]) / (sizes[t1] + sizes[t2])
                ids, I = disjoint_pair(verts, tuple(tris[t1]), tuple(tris[t2]), s, n=24 if gap < 2 else 12)
                scatter(ids, I)
        if has[t1]:
            scatter(list(tris[t1]), complement_element(verts, tris[t1], mesh.boundary_vertex[tris[t1]], poly, s))
    c = 4.0 ** s * s * gamma(1.0 + s) / (np.pi * gamma(1.0 - s))
    supp = [set(np.flatnonzero((tris == v).any(axis=1))) for v in np.flatnonzero(dof >= 0)]
    disjoint = np.array([[not (supp[i] & supp[j]) for j in range(n)] for i in range(n)])
    return c * A, disjoint


# --------------------------------------------------------------------------- dense optimality systems
# The unconstrained first-order conditions are linear: state, adjoint and
# gradient equations are stacked and solved in one dense factorization.

def kkt_fully_discrete(mesh, A, alpha, f, ud):
    n, m = mesh.n_dofs, mesh.n_triangles
    M = assemble_mass(mesh).toarray()
    B = assemble_coupling(mesh).toarray()
    F = assemble_load(mesh, f, 6)
    G = assemble_load(mesh, ud, 6)
    W = np.diag(mesh.areas)
    K = np.block([
        [A, np.zeros((n, n)), -B],
        [-M, A, np.zeros((n, m))],
        [np.zeros((m, n)), B.T, alpha * W],
    ])
    rhs = np.concatenate([F, -G, np.zeros(m)])
    x = np.linalg.solve(K, rhs)
    return x[:n], x[n:2 * n], x[2 * n:]


def kkt_variational(mesh, A, alpha, f, ud, order):
    n = mesh.n_dofs
    lam, w = triangle_rule(order)
    d = mesh.dof_map[mesh.triangles]
    # B_var W^-1 B_var^T assembled element by element: sum_q w_q |K| phi_i(x_q) phi_j(x_q)
    C = np.zeros((n, n))
    loc = np.einsum("q,qa,qb->ab", w, lam, lam)
    for k in range(mesh.n_triangles):
        for a in range(3):
            for b in range(3):
                if d[k, a] >= 0 and d[k, b] >= 0:
                    C[d[k, a], d[k, b]] += mesh.areas[k] * loc[a, b]
    M = assemble_mass(mesh).toarray()
    F = assemble_load(mesh, f, 6)
    G = assemble_load(mesh, ud, 6)
    K = np.block([[A, C / alpha], [-M, A]])
    x = np.linalg.solve(K, np.concatenate([F, -G]))
    return x[:n], x[n:]
