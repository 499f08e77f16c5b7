"""Error functionals and experimental orders of convergence."""
from dataclasses import dataclass, field
import csv
import io
import logging
import math

import numpy as np

from .quadrature import gauss_jacobi01, gauss_legendre01, triangle_rule
from .solver import StateField

__all__ = [
    "element_values", "l2_error", "energy_pairing_exact", "energy_error_state", "eoc", "slope",
    "ConvergenceRecord", "CSV_HEADER", "reference_errors",
]

log = logging.getLogger(__name__)

CSV_HEADER = ["level", "h", "N", "e_energy", "e_l2_control", "rate_energy", "rate_control"]


def element_values(mesh, field_, lam):
    """Values of a discrete or exact field at barycentric points ``lam`` of every element.

    Accepts P0 data (length ``n_triangles`` or a ControlField), P1 data
    (length ``n_vertices``/``n_dofs`` or a StateField), objects with an
    ``on_elements`` method, and callables on ``(m, 2)`` arrays.
    Returns shape ``(n_triangles, nq)``.
    """
    nt = mesh.n_triangles
    if hasattr(field_, "on_elements"):
        return field_.on_elements(lam)
    if isinstance(field_, StateField):
        field_ = field_.full(mesh)
    if hasattr(field_, "values") and not callable(field_):
        field_ = field_.values
    if hasattr(field_, "values") and hasattr(field_, "bounds"):
        field_ = field_.values
    if callable(field_):
        X = np.einsum("qa,tad->tqd", lam, mesh.corners)
        return np.asarray(field_(X.reshape(-1, 2)), dtype=float).reshape(nt, len(lam))
    v = np.asarray(field_, dtype=float)
    if v.shape == (nt,):
        return np.repeat(v[:, None], len(lam), axis=1)
    if v.shape == (mesh.n_dofs,) and mesh.n_dofs != mesh.n_vertices:
        full = np.zeros(mesh.n_vertices)
        full[mesh.interior] = v
        v = full
    if v.shape == (mesh.n_vertices,):
        return v[mesh.triangles] @ lam.T
    raise ValueError(f"cannot interpret field of shape {v.shape}")


def l2_error(mesh, discrete, exact, quad_order=6):
    """``||discrete - exact||_{L2(Omega_h)}`` by per-element Gauss quadrature."""
    lam, w = triangle_rule(int(quad_order))
    d = element_values(mesh, discrete, lam) - element_values(mesh, exact, lam)
    return math.sqrt(float(((d * d) @ w) @ mesh.areas))


def energy_pairing_exact(g, u, n_r=48, n_theta=64, s=None):
    """``int_{unit disc} g u`` by polar Gauss quadrature.

    With ``s`` given the radial rule is Gauss-Jacobi for the weight
    ``(1 - r)^s r``, which absorbs the boundary factor ``(1 - r^2)^s``.
    Otherwise ``r = 1 - t^2`` is used with Gauss-Legendre in ``t``.
    """
    if s is None:
        t, wt = gauss_legendre01(n_r)
        r = 1.0 - t * t
        wr = wt * 2.0 * t * r
    else:
        x, wx = gauss_jacobi01(n_r, s, 1.0)
        r = x
        wr = wx / (1.0 - r) ** s
    th = 2.0 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
    R, TH = np.meshgrid(r, th, indexing="ij")
    pts = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1).reshape(-1, 2)
    vals = (np.asarray(g(pts)) * np.asarray(u(pts))).reshape(R.shape)
    return float(wr @ vals.sum(axis=1)) * 2.0 * math.pi / n_theta


def energy_error_state(mesh, u_T, benchmark, control_load, f_load=None, exact_term=None,
                       quad_order=8):
    """``||u_bar - u_T||_s`` from the algebraic identity

        ||u_bar - u_T||_s^2 = <f + z_bar, u_bar> - 2 <z_bar, u_T> - <f, u_T> + <z_T, u_T>.

    ``control_load`` is the load vector of the discrete control (``B z_T``),
    ``f_load`` the load of ``f`` used by the discrete state equation.
    The first term defaults to polar quadrature of ``<f + z_bar, u_bar>``.
    """
    from .assembly import assemble_load

    u = u_T.coeffs if isinstance(u_T, StateField) else np.asarray(u_T, dtype=float)
    if exact_term is None:
        exact_term = energy_pairing_exact(lambda x: benchmark.f(x) + benchmark.z_bar(x), benchmark.u_bar,
                                          s=benchmark.s)
    if f_load is None:
        f_load = assemble_load(mesh, benchmark.f, quad_order)
    zbar_load = assemble_load(mesh, benchmark.z_bar, quad_order)
    e2 = exact_term - 2.0 * float(zbar_load @ u) - float(f_load @ u) + float(control_load @ u)
    if e2 < 0.0:
        if -e2 > 1e-12 * abs(exact_term):
            log.warning("energy identity gave %.3e < 0; clamped to zero", e2)
        e2 = 0.0
    return math.sqrt(e2)


def eoc(errors, sizes):
    """Rates ``log(e_k / e_{k+1}) / log(h_k / h_{k+1})`` between adjacent levels (NaN if undefined)."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(sizes, dtype=float)
    if len(e) != len(h):
        raise ValueError("errors and sizes differ in length")
    if len(e) < 2:
        raise ValueError("need at least two levels")
    out = np.full(len(e) - 1, np.nan)
    for k in range(len(e) - 1):
        if e[k] > 0 and e[k + 1] > 0 and h[k] > 0 and h[k + 1] > 0 and h[k] != h[k + 1]:
            out[k] = math.log(e[k] / e[k + 1]) / math.log(h[k] / h[k + 1])
        else:
            log.warning("undefined rate between levels %d and %d", k, k + 1)
    return out


def slope(errors, counts):
    """Least-squares slope of ``log e`` against ``log N``."""
    e = np.asarray(errors, dtype=float)
    n = np.asarray(counts, dtype=float)
    if len(e) < 2 or np.any(e <= 0):
        raise ValueError("need at least two positive errors")
    return float(np.polyfit(np.log(n), np.log(e), 1)[0])


@dataclass
class ConvergenceRecord:
    """Errors per level.  ``basis`` is ``"h"`` (rates vs h) or ``"N"`` (slopes vs N)."""

    h: list = field(default_factory=list)
    N: list = field(default_factory=list)
    e_energy: list = field(default_factory=list)
    e_l2_control: list = field(default_factory=list)
    e_l2_state: list = field(default_factory=list)
    basis: str = "h"
    label: str = ""

    def add(self, h, N, e_energy, e_l2_control, e_l2_state=float("nan")):
        if self.h and not (h < self.h[-1] or N > self.N[-1]):
            raise ValueError("levels must be ordered by decreasing h / increasing N")
        self.h.append(float(h))
        self.N.append(int(N))
        self.e_energy.append(float(e_energy))
        self.e_l2_control.append(float(e_l2_control))
        self.e_l2_state.append(float(e_l2_state))

    def __len__(self):
        return len(self.h)

    def rates(self, which):
        e = getattr(self, which)
        if len(e) < 2:
            return np.zeros(0)
        if self.basis == "h":
            return eoc(e, self.h)
        # adjacent slopes in N
        return np.array([math.log(e[k + 1] / e[k]) / math.log(self.N[k + 1] / self.N[k])
                         for k in range(len(e) - 1)])

    def fitted(self, which):
        e = getattr(self, which)
        if self.basis == "h":
            return float(np.polyfit(np.log(self.h), np.log(e), 1)[0])
        return slope(e, self.N)

    def to_csv(self, path=None):
        re = self.rates("e_energy")
        rc = self.rates("e_l2_control")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k in range(len(self)):
            row = [k, repr(self.h[k]), self.N[k], repr(self.e_energy[k]), repr(self.e_l2_control[k]),
                   "" if k == 0 else repr(float(re[k - 1])), "" if k == 0 else repr(float(rc[k - 1]))]
            w.writerow(row)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path, basis="h", label=""):
        rec = cls(basis=basis, label=label)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        for r in rows:
            rec.add(float(r["h"]), int(r["N"]), float(r["e_energy"]), float(r["e_l2_control"]))
        return rec


def reference_errors(coarse, u_c, z_c, fine, A_fine, u_f, z_f):
    """Energy and L2-control errors of a coarse solution against a reference on a nested finer mesh.

    P1 states are embedded exactly by evaluating the coarse field at the fine
    vertices; P0 controls are compared elementwise through the coarse element
    containing each fine barycenter.  The energy error is the quadratic form
    of the fine stiffness matrix.
    """
    uc = u_c.full(coarse) if isinstance(u_c, StateField) else np.asarray(u_c)
    if uc.shape != (coarse.n_vertices,):
        full = np.zeros(coarse.n_vertices)
        full[coarse.interior] = uc
        uc = full
    pts = fine.vertices[fine.interior]
    t = coarse.locate(pts)
    if np.any(t < 0):
        raise ValueError("fine mesh is not contained in the coarse mesh")
    lam = coarse.barycentric(t, pts)
    embedded = (lam * uc[coarse.triangles[t]]).sum(axis=1)
    uf = u_f.coeffs if isinstance(u_f, StateField) else np.asarray(u_f)
    d = uf - embedded
    M = A_fine.entries if hasattr(A_fine, "entries") else A_fine
    e_energy = math.sqrt(max(float(d @ (M @ d)), 0.0))
    zc = getattr(z_c, "values", z_c)
    zf = getattr(z_f, "values", z_f)
    tc = coarse.locate(fine.barycenters)
    dz = np.asarray(zf) - np.asarray(zc)[tc]
    e_ctrl = math.sqrt(float((dz * dz) @ fine.areas))
    return e_energy, e_ctrl
