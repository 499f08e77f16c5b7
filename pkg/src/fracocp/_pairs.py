"""Element-pair integrals of the fractional stiffness form (numba kernels).

For elements T1, T2 and P1 hat functions the pair integral is

    I_ab(T1, T2) = int_T1 int_T2 (phi_a(x) - phi_a(y)) (phi_b(x) - phi_b(y)) |x - y|^(-2-2s) dy dx.

Touching pairs are reduced by homogeneity around the shared vertex / edge:
the integrand scales like rho^(3-2s) (vertex), rho^(2-2s) (edge) or the
translate overlap is known in closed form (identical), so the radial
variable integrates exactly and only smooth 1-3 dimensional integrals remain.
"""
import math

import numpy as np
from numba import njit

PAIR_DISJOINT, PAIR_VERTEX, PAIR_EDGE, PAIR_IDENTICAL = 0, 1, 2, 3


@njit(cache=True)
def _area(p0, p1, p2):
    return 0.5 * abs((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))


@njit(cache=True)
def _gradients(P):
    """Gradients of the three barycentric functions of triangle ``P`` (3, 2)."""
    x0, y0 = P[0, 0], P[0, 1]
    x1, y1 = P[1, 0], P[1, 1]
    x2, y2 = P[2, 0], P[2, 1]
    det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    g = np.empty((3, 2))
    g[1, 0] = (y2 - y0) / det
    g[1, 1] = -(x2 - x0) / det
    g[2, 0] = -(y1 - y0) / det
    g[2, 1] = (x1 - x0) / det
    g[0, 0] = -g[1, 0] - g[2, 0]
    g[0, 1] = -g[1, 1] - g[2, 1]
    return g


@njit(cache=True)
def identical_local(P, s, xg, wg):
    """3x3 pair integral of a triangle with itself.

    With ``y = x - z`` the integrand depends on ``z`` only and the overlap
    ``|T cap (T + z)| = |T| (1 - rho t(theta))_+^2``, ``t = sum_i |grad lam_i . e| / 2``.
    The radial integral is a Beta function; the angular one is split at the
    kinks of ``t`` and done by Gauss-Legendre.
    """
    g = _gradients(P)
    area = _area(P[0], P[1], P[2])
    br = np.empty(3)
    for i in range(3):
        th = math.atan2(g[i, 1], g[i, 0]) + 0.5 * math.pi
        br[i] = th % math.pi
    br.sort()
    M00 = 0.0
    M01 = 0.0
    M11 = 0.0
    ex = 2.0 * s - 2.0
    for k in range(3):
        lo = br[k]
        hi = br[k + 1] if k < 2 else br[0] + math.pi
        span = hi - lo
        for q in range(len(xg)):
            th = lo + span * xg[q]
            c = math.cos(th)
            sn = math.sin(th)
            t = 0.5 * (abs(g[0, 0] * c + g[0, 1] * sn) + abs(g[1, 0] * c + g[1, 1] * sn)
                       + abs(g[2, 0] * c + g[2, 1] * sn))
            w = wg[q] * span * t ** ex
            M00 += w * c * c
            M01 += w * c * sn
            M11 += w * sn * sn
    # the integrand is pi-periodic in theta
    beta = 2.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s) * (4.0 - 2.0 * s))
    fac = 2.0 * area * beta
    out = np.empty((3, 3))
    for a in range(3):
        for b in range(a, 3):
            v = fac * (g[a, 0] * (M00 * g[b, 0] + M01 * g[b, 1]) + g[a, 1] * (M01 * g[b, 0] + M11 * g[b, 1]))
            out[a, b] = v
            out[b, a] = v
    return out


@njit(cache=True)
def edge_local(P, Q, A, B, s, xg, wg):
    """4x4 pair integral for triangles (P, Q, A) and (P, Q, B) sharing edge PQ.

    Local order ``[P, Q, A, B]``.  In coordinates ``x = P + al1 e + be1 a``,
    ``y = P + al2 e + be2 b`` the integrand depends on ``(z, be1, be2)``,
    ``z = al1 - al2``, times the admissible length ``(1 - m)_+`` of the
    remaining edge coordinate, with ``m`` homogeneous of degree one.
    """
    ex, ey = Q[0] - P[0], Q[1] - P[1]
    ax, ay = A[0] - P[0], A[1] - P[1]
    bx, by = B[0] - P[0], B[1] - P[1]
    a1 = _area(P, Q, A)
    a2 = _area(P, Q, B)
    kexp = -1.0 - s
    mexp = 2.0 * s - 3.0
    out = np.zeros((4, 4))
    D = np.empty(4)
    n = len(xg)
    for sign in (1.0, -1.0):
        for piece in range(2):
            c0 = 0.5 * piece
            for i in range(n):
                c = c0 + 0.5 * xg[i]
                wc = 0.5 * wg[i]
                for j in range(n):
                    t = (1.0 - c) * xg[j]
                    w = wc * (1.0 - c) * wg[j]
                    if sign > 0:
                        w2 = c      # be2 is the kink coordinate
                        w1 = t
                    else:
                        w1 = c
                        w2 = t
                    w0 = 1.0 - w1 - w2
                    z = sign * w0
                    if sign > 0:
                        m = max(w0 + w1, w2)
                    else:
                        m = max(w1, w2 + w0)
                    rx = z * ex + w1 * ax - w2 * bx
                    ry = z * ey + w1 * ay - w2 * by
                    r2 = rx * rx + ry * ry
                    f = w * r2 ** kexp * m ** mexp
                    D[0] = -z - w1 + w2
                    D[1] = z
                    D[2] = w1
                    D[3] = -w2
                    for p in range(4):
                        fp = f * D[p]
                        for q in range(p, 4):
                            out[p, q] += fp * D[q]
    fac = 4.0 * a1 * a2 / ((3.0 - 2.0 * s) * (4.0 - 2.0 * s))
    for p in range(4):
        for q in range(p, 4):
            out[p, q] *= fac
            out[q, p] = out[p, q]
    return out


@njit(cache=True)
def vertex_local(P, A1, B1, A2, B2, s, xg, wg):
    """5x5 pair integral for triangles (P, A1, B1), (P, A2, B2) sharing vertex P.

    Local order ``[P, A1, B1, A2, B2]``.  Duffy coordinates collapsed at ``P``
    make everything homogeneous in ``(u1, u2)``; splitting ``u2 <= u1`` /
    ``u1 < u2`` and integrating the larger one exactly leaves a smooth
    three-dimensional integral.
    """
    a1 = _area(P, A1, B1)
    a2 = _area(P, A2, B2)
    kexp = -1.0 - s
    out = np.zeros((5, 5))
    D = np.empty(5)
    n = len(xg)
    for i in range(n):
        v1 = xg[i]
        d1x = A1[0] - P[0] + v1 * (B1[0] - A1[0])
        d1y = A1[1] - P[1] + v1 * (B1[1] - A1[1])
        for j in range(n):
            v2 = xg[j]
            d2x = A2[0] - P[0] + v2 * (B2[0] - A2[0])
            d2y = A2[1] - P[1] + v2 * (B2[1] - A2[1])
            wij = wg[i] * wg[j]
            for k in range(n):
                wv = xg[k]
                wk = wij * wg[k] * wv
                for region in range(2):
                    if region == 0:
                        u1 = 1.0
                        u2 = wv
                    else:
                        u1 = wv
                        u2 = 1.0
                    rx = u1 * d1x - u2 * d2x
                    ry = u1 * d1y - u2 * d2y
                    f = wk * (rx * rx + ry * ry) ** kexp
                    D[0] = u2 - u1
                    D[1] = u1 * (1.0 - v1)
                    D[2] = u1 * v1
                    D[3] = -u2 * (1.0 - v2)
                    D[4] = -u2 * v2
                    for p in range(5):
                        fp = f * D[p]
                        for q in range(p, 5):
                            out[p, q] += fp * D[q]
    fac = 4.0 * a1 * a2 / (4.0 - 2.0 * s)
    for p in range(5):
        for q in range(p, 5):
            out[p, q] *= fac
            out[q, p] = out[p, q]
    return out


@njit(cache=True)
def disjoint_blocks(X1, W1, X2, W2, lam, s):
    """Blocks of the pair integral for elements with disjoint closures.

    ``X*`` are quadrature points ``(nq, 2)``, ``W*`` weights including the
    element area, ``lam`` the shared barycentric table ``(nq, 3)``.
    Returns ``(B11, B22, B12)``: the kernel mass of each element against the
    other and the (negative) cross block.
    """
    nq = X1.shape[0]
    kexp = -1.0 - s
    S1 = np.zeros(nq)
    S2 = np.zeros(nq)
    Y = np.zeros((nq, 3))
    for p in range(nq):
        xp = X1[p, 0]
        yp = X1[p, 1]
        for q in range(nq):
            dx = xp - X2[q, 0]
            dy = yp - X2[q, 1]
            kv = W1[p] * W2[q] * (dx * dx + dy * dy) ** kexp
            S1[p] += kv
            S2[q] += kv
            Y[p, 0] += kv * lam[q, 0]
            Y[p, 1] += kv * lam[q, 1]
            Y[p, 2] += kv * lam[q, 2]
    B11 = np.zeros((3, 3))
    B22 = np.zeros((3, 3))
    B12 = np.zeros((3, 3))
    for p in range(nq):
        for a in range(3):
            la = lam[p, a]
            for b in range(3):
                B11[a, b] += S1[p] * la * lam[p, b]
                B22[a, b] += S2[p] * la * lam[p, b]
                B12[a, b] -= la * Y[p, b]
    return B11, B22, B12


@njit(cache=True)
def _shared(t1, t2):
    n = 0
    for i in range(3):
        for j in range(3):
            if t1[i] == t2[j]:
                n += 1
    return n


@njit(cache=True)
def _scatter(A, dofs, L):
    m = len(dofs)
    for p in range(m):
        i = dofs[p]
        if i < 0:
            continue
        for q in range(m):
            j = dofs[q]
            if j < 0:
                continue
            A[i, j] += L[p, q]


@njit(cache=True)
def assemble_pairs(verts, tris, dof, s, near_ptr, near_idx,
                   lam_far, w_far, lam_near, w_near, xs, ws, A):
    """Accumulate the element-pair part of the form into ``A``.

    Touching pairs and the near pairs listed in ``near_ptr/near_idx`` (CSR,
    symmetric) contribute their full local matrices.  For far pairs only the
    cross block is added here; their diagonal blocks are folded into the
    per-element weight term.  Pairs are visited in lexicographic order, so
    the result is reproducible.  Returns counts (far, near, vertex, edge,
    identical).
    """
    nt = tris.shape[0]
    counts = np.zeros(5, dtype=np.int64)
    nf = lam_far.shape[0]
    nn = lam_near.shape[0]
    Xf = np.empty((nt, nf, 2))
    Wf = np.empty((nt, nf))
    has = np.zeros(nt, dtype=np.bool_)
    areas = np.empty(nt)
    P = np.empty((3, 2))
    for t in range(nt):
        area = _area(verts[tris[t, 0]], verts[tris[t, 1]], verts[tris[t, 2]])
        areas[t] = area
        for q in range(nf):
            for d in range(2):
                Xf[t, q, d] = (lam_far[q, 0] * verts[tris[t, 0], d] + lam_far[q, 1] * verts[tris[t, 1], d]
                               + lam_far[q, 2] * verts[tris[t, 2], d])
            Wf[t, q] = w_far[q] * area
        for k in range(3):
            if dof[tris[t, k]] >= 0:
                has[t] = True
    Xn1 = np.empty((nn, 2))
    Xn2 = np.empty((nn, 2))
    Wn1 = np.empty(nn)
    Wn2 = np.empty(nn)
    d1 = np.empty(3, dtype=np.int64)
    d2 = np.empty(3, dtype=np.int64)
    d4 = np.empty(4, dtype=np.int64)
    d5 = np.empty(5, dtype=np.int64)
    mark = np.zeros(nt, dtype=np.bool_)
    Yc = np.empty((nf, 3))
    kexp = -1.0 - s
    for t1 in range(nt):
        tri1 = tris[t1]
        for k in range(3):
            d1[k] = dof[tri1[k]]
        for k in range(near_ptr[t1], near_ptr[t1 + 1]):
            mark[near_idx[k]] = True
        for t2 in range(t1, nt):
            tri2 = tris[t2]
            if not mark[t2] and t2 != t1:
                # far pair: cross block only
                if not (has[t1] and has[t2]):
                    continue
                for k in range(3):
                    d2[k] = dof[tri2[k]]
                for p in range(nf):
                    xp = Xf[t1, p, 0]
                    yp = Xf[t1, p, 1]
                    y0 = 0.0
                    y1 = 0.0
                    y2 = 0.0
                    for q in range(nf):
                        dx = xp - Xf[t2, q, 0]
                        dy = yp - Xf[t2, q, 1]
                        kv = Wf[t2, q] * (dx * dx + dy * dy) ** kexp
                        y0 += kv * lam_far[q, 0]
                        y1 += kv * lam_far[q, 1]
                        y2 += kv * lam_far[q, 2]
                    Yc[p, 0] = Wf[t1, p] * y0
                    Yc[p, 1] = Wf[t1, p] * y1
                    Yc[p, 2] = Wf[t1, p] * y2
                for a in range(3):
                    i = d1[a]
                    if i < 0:
                        continue
                    for b in range(3):
                        j = d2[b]
                        if j < 0:
                            continue
                        v = 0.0
                        for p in range(nf):
                            v += lam_far[p, a] * Yc[p, b]
                        A[i, j] -= v
                        A[j, i] -= v
                counts[0] += 1
                continue
            if not (has[t1] or has[t2]):
                continue
            ns = _shared(tri1, tri2)
            if ns == 0:
                for k in range(3):
                    d2[k] = dof[tri2[k]]
                for q in range(nn):
                    for d in range(2):
                        Xn1[q, d] = (lam_near[q, 0] * verts[tri1[0], d] + lam_near[q, 1] * verts[tri1[1], d]
                                     + lam_near[q, 2] * verts[tri1[2], d])
                        Xn2[q, d] = (lam_near[q, 0] * verts[tri2[0], d] + lam_near[q, 1] * verts[tri2[1], d]
                                     + lam_near[q, 2] * verts[tri2[2], d])
                    Wn1[q] = w_near[q] * areas[t1]
                    Wn2[q] = w_near[q] * areas[t2]
                B11, B22, B12 = disjoint_blocks(Xn1, Wn1, Xn2, Wn2, lam_near, s)
                counts[1] += 1
                for a in range(3):
                    i = d1[a]
                    if i >= 0:
                        for b in range(3):
                            j = d1[b]
                            if j >= 0:
                                A[i, j] += B11[a, b]
                    i = d2[a]
                    if i >= 0:
                        for b in range(3):
                            j = d2[b]
                            if j >= 0:
                                A[i, j] += B22[a, b]
                    i = d1[a]
                    if i >= 0:
                        for b in range(3):
                            j = d2[b]
                            if j >= 0:
                                A[i, j] += B12[a, b]
                                A[j, i] += B12[a, b]
            elif ns == 3:
                for k in range(3):
                    P[k, 0] = verts[tri1[k], 0]
                    P[k, 1] = verts[tri1[k], 1]
                L = identical_local(P, s, xs, ws)
                for a in range(3):
                    for b in range(3):
                        L[a, b] *= 0.5
                _scatter(A, d1, L)
                counts[4] += 1
            elif ns == 2:
                # order as [P, Q, A, B]
                k3 = 0
                for k in range(3):
                    found = False
                    for m in range(3):
                        if tri1[k] == tri2[m]:
                            found = True
                    if not found:
                        k3 = k
                va = tri1[k3]
                vp = tri1[(k3 + 1) % 3]
                vq = tri1[(k3 + 2) % 3]
                vb = tri2[0]
                for m in range(3):
                    if tri2[m] != vp and tri2[m] != vq:
                        vb = tri2[m]
                L = edge_local(verts[vp], verts[vq], verts[va], verts[vb], s, xs, ws)
                d4[0] = dof[vp]
                d4[1] = dof[vq]
                d4[2] = dof[va]
                d4[3] = dof[vb]
                _scatter(A, d4, L)
                counts[3] += 1
            else:
                k1 = 0
                k2 = 0
                for k in range(3):
                    for m in range(3):
                        if tri1[k] == tri2[m]:
                            k1 = k
                            k2 = m
                vp = tri1[k1]
                a1 = tri1[(k1 + 1) % 3]
                b1 = tri1[(k1 + 2) % 3]
                a2 = tri2[(k2 + 1) % 3]
                b2 = tri2[(k2 + 2) % 3]
                L = vertex_local(verts[vp], verts[a1], verts[b1], verts[a2], verts[b2], s, xs, ws)
                d5[0] = dof[vp]
                d5[1] = dof[a1]
                d5[2] = dof[b1]
                d5[3] = dof[a2]
                d5[4] = dof[b2]
                _scatter(A, d5, L)
                counts[2] += 1
        for k in range(near_ptr[t1], near_ptr[t1 + 1]):
            mark[near_idx[k]] = False
    return counts
