"""Box-constrained optimal control of the fractional Poisson problem.

    min  1/2 ||u - u_d||^2 + alpha/2 ||z||^2   s.t.  (-Delta)^s u = f + z,  a <= z <= b.

Two discretizations share one reduced problem.  A control space is given by
weights ``w`` (the L2 inner product is diagonal) and a coupling matrix ``B``
mapping controls to load vectors:

* fully discrete: one constant per element, ``w = |K|``, ``B[i, K] = int_K phi_i``;
* variational: the control is only sampled at the nodes of a fixed element
  quadrature rule, ``w_q`` the quadrature weight and ``B[i, q] = w_q phi_i(x_q)``.
  The optimal samples are ``proj(-p(x_q)/alpha)``, so the state equation sees
  the clipped adjoint integrated by that rule.

The reduced gradient in the weighted inner product is ``B^T p / w + alpha z``
and the box problem is solved by projected Barzilai-Borwein steps with
monotone backtracking.
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator

from .assembly import QuadratureSpec, assemble_coupling, assemble_load, assemble_mass, assemble_stiffness
from .exact import proj_box
from .quadrature import triangle_rule
from .solver import CholeskySolver, StateField

__all__ = [
    "OcpProblem", "ControlField", "SemidiscreteControl", "OcpSolution", "OptimizationError",
    "DiscreteSystem", "proj_box", "l2_project_pw_constant", "reduced_gradient", "reduced_cost",
    "FullyDiscreteOCP", "VariationalOCP", "solve_fully_discrete", "solve_variational",
]

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    """Raised when the optimizer hits ``max_iter``; carries the last iterate."""

    def __init__(self, msg, control=None, stationarity=None):
        super().__init__(msg)
        self.control = control
        self.stationarity = stationarity


@dataclass(frozen=True)
class OcpProblem:
    s: float
    alpha: float
    a: float
    b: float
    f: object
    u_d: object
    opt_tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError("s must lie in (0, 1)")
        if not self.alpha > 0.0:
            raise ValueError("alpha must be positive")
        if not self.a < self.b:
            raise ValueError("bounds must satisfy a < b")
        if not (callable(self.f) and callable(self.u_d)):
            raise TypeError("f and u_d must be callables on (m, 2) point arrays")


@dataclass(frozen=True, eq=False)
class ControlField:
    """Piecewise constant control, one value per element."""

    values: np.ndarray
    bounds: tuple

    def __call__(self, mesh, points):
        return self.values[mesh.locate(points)]


@dataclass(frozen=True, eq=False)
class SemidiscreteControl:
    """``proj(-p_h / alpha)`` for a P1 adjoint ``p_h``; ``values`` are its samples at the rule nodes."""

    mesh: object
    adjoint: np.ndarray
    alpha: float
    bounds: tuple
    values: np.ndarray

    def __call__(self, points):
        pts = np.atleast_2d(points)
        t = self.mesh.locate(pts)
        lam = self.mesh.barycentric(t, pts)
        p = self.mesh.dof_map[self.mesh.triangles[t]]
        pv = np.where(p >= 0, self.adjoint[np.maximum(p, 0)], 0.0)
        return proj_box(-(lam * pv).sum(axis=1) / self.alpha, *self.bounds)

    def on_elements(self, lam):
        """Values at barycentric points ``lam (nq, 3)`` of every element, shape ``(nt, nq)``."""
        d = self.mesh.dof_map[self.mesh.triangles]
        pv = np.where(d >= 0, self.adjoint[np.maximum(d, 0)], 0.0)
        return proj_box(-(pv @ lam.T) / self.alpha, *self.bounds)


@dataclass(frozen=True, eq=False)
class OcpSolution:
    state: StateField
    adjoint: StateField
    control: object
    iterations: int
    final_stationarity: float
    cost: float
    trace: list = field(default_factory=list)


# --------------------------------------------------------------------------- helpers

def l2_project_pw_constant(mesh, g, quad_order=4):
    """Element means of ``g``: a callable, a P1 field (vertex or interior values) or a StateField."""
    if callable(g) and not isinstance(g, (np.ndarray, StateField)):
        lam, w = triangle_rule(max(int(quad_order), 1))
        X = np.einsum("qa,tad->tqd", lam, mesh.corners)
        vals = np.asarray(g(X.reshape(-1, 2)), dtype=float).reshape(X.shape[:2])
        return vals @ w
    v = g.full(mesh) if isinstance(g, StateField) else np.asarray(g, dtype=float)
    if v.shape == (mesh.n_dofs,) and mesh.n_dofs != mesh.n_vertices:
        full = np.zeros(mesh.n_vertices)
        full[mesh.interior] = v
        v = full
    if v.shape != (mesh.n_vertices,):
        raise ValueError("P1 field must have one value per vertex or per interior vertex")
    # the mean of an affine function is its barycenter value
    return v[mesh.triangles].mean(axis=1)


class DiscreteSystem:
    """Matrices and factorization shared by all solves on one mesh."""

    def __init__(self, mesh, stiffness, f, u_d, load_order=6):
        self.mesh = mesh
        self.A = stiffness
        self.solve = CholeskySolver(stiffness)
        self.M = assemble_mass(mesh)
        self.F = assemble_load(mesh, f, load_order)
        self.G = assemble_load(mesh, u_d, load_order)
        lam, w = triangle_rule(load_order)
        X = np.einsum("qa,tad->tqd", lam, mesh.corners)
        ud = np.asarray(u_d(X.reshape(-1, 2)), dtype=float).reshape(X.shape[:2])
        self.ud_sq = float(((ud ** 2) @ w) @ mesh.areas)

    def state(self, B, z):
        return self.solve(self.F + B @ z)

    def adjoint(self, u):
        return self.solve(self.M @ u - self.G)


class _ControlSpace:
    def __init__(self, B, w):
        self.B = sparse.csr_matrix(B)
        self.BT = self.B.T.tocsr()
        self.w = np.asarray(w, dtype=float)


def _fully_discrete_space(mesh):
    return _ControlSpace(assemble_coupling(mesh), mesh.areas)


def _variational_space(mesh, order):
    lam, w = triangle_rule(order)
    nt, nq = mesh.n_triangles, len(w)
    W = (mesh.areas[:, None] * w[None, :]).ravel()
    d = mesh.dof_map[mesh.triangles]
    rows = np.repeat(d, nq, axis=0).reshape(nt, nq, 3)
    cols = np.broadcast_to(np.arange(nt * nq).reshape(nt, nq, 1), rows.shape)
    vals = W.reshape(nt, nq, 1) * lam[None, :, :]
    ok = rows >= 0
    B = sparse.csr_matrix((vals[ok], (rows[ok], cols[ok])), shape=(mesh.n_dofs, nt * nq))
    space = _ControlSpace(B, W)
    space.lam = lam
    return space


def reduced_cost(system, space, alpha, z, u=None):
    u = system.state(space.B, z) if u is None else u
    misfit = u @ (system.M @ u) - 2.0 * (system.G @ u) + system.ud_sq
    return 0.5 * misfit + 0.5 * alpha * float(space.w @ (z * z))


def reduced_gradient(problem, mesh, system, z, space=None):
    """``B^T p(z) / w + alpha z``; for P0 controls this is ``avg_K p + alpha z_K``."""
    space = _fully_discrete_space(mesh) if space is None else space
    u = system.state(space.B, z)
    p = system.adjoint(u)
    return space.BT @ p / space.w + problem.alpha * z


def _stationarity(space, z, pbar, alpha, a, b):
    r = z - proj_box(-pbar / alpha, a, b)
    return math.sqrt(float(space.w @ (r * r)))


def _projected_bb(system, space, alpha, a, b, tol, max_iter, z0=None, trace=None):
    """Projected Barzilai-Borwein with Armijo backtracking along the projection arc."""
    z = proj_box(np.zeros(len(space.w)) if z0 is None else np.asarray(z0, dtype=float), a, b)
    u = system.state(space.B, z)
    j = reduced_cost(system, space, alpha, z, u)
    step = 1.0 / alpha
    sigma = 1e-4
    for it in range(max_iter + 1):
        p = system.adjoint(u)
        pbar = space.BT @ p / space.w
        g = pbar + alpha * z
        res = _stationarity(space, z, pbar, alpha, a, b)
        if trace is not None:
            trace.append((it, j, res))
        if res <= tol:
            return z, u, p, it, res, j
        if it == max_iter:
            break
        while True:
            zn = proj_box(z - step * g, a, b)
            dz = zn - z
            un = system.state(space.B, zn)
            du = un - u
            # exact change of the quadratic cost, free of cancellation
            gd = float(space.w @ (g * dz))
            dj = gd + 0.5 * (float(du @ (system.M @ du)) + alpha * float(space.w @ (dz * dz)))
            if dj <= sigma * gd or step < 1e-12:
                break
            step *= 0.5
        pn = system.adjoint(un)
        gn = space.BT @ pn / space.w + alpha * zn
        sy = float(space.w @ (dz * (gn - g)))
        ss = float(space.w @ (dz * dz))
        step = min(max(ss / sy, 1e-10), 1e10) if sy > 0 else 1.0 / alpha
        z, u, j = zn, un, j + dj
    raise OptimizationError(f"no convergence in {max_iter} iterations (stationarity {res:.3e})",
                            control=z, stationarity=res)


# --------------------------------------------------------------------------- estimators

class _OCPBase(BaseEstimator):
    def _check(self):
        OcpProblem(self.s, self.alpha, self.a, self.b, _zero, _zero, self.opt_tol, self.max_iter)
        if self.opt_tol <= 0:
            raise ValueError("opt_tol must be positive")

    def _system(self, mesh, f, u_d, stiffness):
        if stiffness is None:
            stiffness = assemble_stiffness(mesh, self.s, self.quad or QuadratureSpec())
        elif abs(stiffness.s - self.s) > 0:
            raise ValueError(f"stiffness was assembled for s={stiffness.s}, estimator has s={self.s}")
        return DiscreteSystem(mesh, stiffness, f, u_d, self.load_order)

    def _run(self, mesh, f, u_d, stiffness, system, space):
        self._check()
        if system is None:
            system = self._system(mesh, f, u_d, stiffness)
        self.system_ = system
        trace = []
        z, u, p, it, res, j = _projected_bb(system, space, self.alpha, self.a, self.b,
                                            self.opt_tol, self.max_iter, trace=trace)
        self.trace_ = trace
        self.n_iter_ = it
        self.stationarity_ = res
        self.cost_ = j
        self.state_ = StateField(u, id(mesh))
        self.adjoint_ = StateField(p, id(mesh))
        return z


def _zero(x):
    return np.zeros(len(np.atleast_2d(x)))


class FullyDiscreteOCP(_OCPBase):
    """Piecewise linear state, piecewise constant control.

    Parameters mirror :class:`OcpProblem`; ``fit(mesh, f, u_d)`` sets
    ``control_`` (a :class:`ControlField`), ``state_``, ``adjoint_``,
    ``n_iter_``, ``stationarity_``, ``cost_`` and ``trace_``.
    """

    def __init__(self, s=0.5, alpha=0.1, a=-np.inf, b=np.inf, opt_tol=1e-8, max_iter=500,
                 quad=None, load_order=6):
        self.s = s
        self.alpha = alpha
        self.a = a
        self.b = b
        self.opt_tol = opt_tol
        self.max_iter = max_iter
        self.quad = quad
        self.load_order = load_order

    def fit(self, mesh, f, u_d, stiffness=None, system=None):
        space = _fully_discrete_space(mesh)
        self.space_ = space
        z = self._run(mesh, f, u_d, stiffness, system, space)
        self.control_ = ControlField(z, (self.a, self.b))
        return self

    def solution(self):
        return OcpSolution(self.state_, self.adjoint_, self.control_, self.n_iter_,
                           self.stationarity_, self.cost_, self.trace_)


class VariationalOCP(_OCPBase):
    """Piecewise linear state; the control is the clipped adjoint ``proj(-p/alpha)``.

    ``control_order`` is the per-element Gauss rule used for the control load.
    ``fit`` sets ``control_`` (a :class:`SemidiscreteControl`) and the same
    attributes as :class:`FullyDiscreteOCP`.
    """

    def __init__(self, s=0.5, alpha=0.1, a=-np.inf, b=np.inf, opt_tol=1e-8, max_iter=500,
                 quad=None, load_order=6, control_order=6):
        self.s = s
        self.alpha = alpha
        self.a = a
        self.b = b
        self.opt_tol = opt_tol
        self.max_iter = max_iter
        self.quad = quad
        self.load_order = load_order
        self.control_order = control_order

    def fit(self, mesh, f, u_d, stiffness=None, system=None):
        space = _variational_space(mesh, self.control_order)
        self.space_ = space
        z = self._run(mesh, f, u_d, stiffness, system, space)
        self.control_ = SemidiscreteControl(mesh, self.adjoint_.coeffs, self.alpha, (self.a, self.b), z)
        return self

    def solution(self):
        return OcpSolution(self.state_, self.adjoint_, self.control_, self.n_iter_,
                           self.stationarity_, self.cost_, self.trace_)


def _estimator(cls, problem, **kw):
    return cls(s=problem.s, alpha=problem.alpha, a=problem.a, b=problem.b,
               opt_tol=problem.opt_tol, max_iter=problem.max_iter, **kw)


def solve_fully_discrete(problem, mesh, stiffness=None, **kw):
    est = _estimator(FullyDiscreteOCP, problem, **kw).fit(mesh, problem.f, problem.u_d, stiffness)
    return est.solution()


def solve_variational(problem, mesh, stiffness=None, **kw):
    est = _estimator(VariationalOCP, problem, **kw).fit(mesh, problem.f, problem.u_d, stiffness)
    return est.solution()
