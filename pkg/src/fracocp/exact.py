"""Closed-form solutions of the fractional Poisson problem on the unit disc.

The family

    u_{n,l}(r, theta) = r^l cos(l theta) P_n^{(s,l)}(2r^2 - 1) (1 - r^2)_+^s

solves ``(-Delta)^s u = f_{n,l}`` in the disc with

    f_{n,l} = 2^{2s} Gamma(1+s)^2 binom(s+n+l, s) binom(s+n, s) r^l cos(l theta) P_n^{(s,l)}(2r^2 - 1).
"""
from dataclasses import dataclass
import math

import numpy as np


def jacobi(n, alpha_j, beta_j, x):
    """Jacobi polynomial ``P_n^(alpha, beta)(x)`` by the three-term recurrence."""
    if n < 0:
        raise ValueError("degree must be non-negative")
    x = np.asarray(x, dtype=float)
    a, b = float(alpha_j), float(beta_j)
    p0 = np.ones_like(x)
    if n == 0:
        return p0
    p1 = (a + 1.0) + (a + b + 2.0) * (x - 1.0) / 2.0
    for k in range(2, n + 1):
        c = 2 * k + a + b
        a1 = 2 * k * (k + a + b) * (c - 2)
        a2 = (c - 1) * (c * (c - 2) * x + a * a - b * b)
        a3 = 2 * (k + a - 1) * (k + b - 1) * c
        p0, p1 = p1, (a2 * p1 - a3 * p0) / a1
    return p1


def _gamma(x):
    if x <= 0 and float(x).is_integer():
        raise ValueError(f"Gamma has a pole at {x}")
    return math.gamma(x)


def gen_binomial(top, k):
    """``Gamma(top+1) / (Gamma(k+1) Gamma(top-k+1))`` for real arguments."""
    return _gamma(top + 1.0) / (_gamma(k + 1.0) * _gamma(top - k + 1.0))


def normalization_constant(n, s):
    """``C(n,s) = 2^{2s} s Gamma(s + n/2) / (pi^{n/2} Gamma(1 - s))``."""
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order s must lie in (0, 1), got {s}")
    if n not in (1, 2):
        raise ValueError("only n = 1, 2 are supported")
    return 4.0 ** s * s * math.gamma(s + n / 2.0) / (math.pi ** (n / 2.0) * math.gamma(1.0 - s))


def _polar(points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.hypot(p[:, 0], p[:, 1])
    th = np.arctan2(p[:, 1], p[:, 0])
    return r, th


def _angular(n, ell, s, r, th):
    return r ** ell * np.cos(ell * th) * jacobi(n, s, ell, 2.0 * r * r - 1.0)


def u_exact(n, ell, s, points):
    """``u_{n,l}`` at points ``(m, 2)``; identically zero for ``r >= 1``."""
    r, th = _polar(points)
    bump = np.clip(1.0 - r * r, 0.0, None) ** s
    return _angular(n, ell, s, r, th) * bump


def f_coefficient(n, ell, s):
    return 4.0 ** s * math.gamma(1.0 + s) ** 2 * gen_binomial(s + n + ell, s) * gen_binomial(s + n, s)


def f_exact(n, ell, s, points):
    """Right-hand side ``f_{n,l}`` matching ``u_exact(n, ell, s)``."""
    r, th = _polar(points)
    return f_coefficient(n, ell, s) * _angular(n, ell, s, r, th)


def proj_box(v, a, b):
    return np.minimum(b, np.maximum(a, v))


@dataclass(frozen=True)
class DiscBenchmark:
    """Exact optimal triple on the unit disc with a known active set.

    ``u_d = u_{0,1} + alpha f_{0,0}``, ``f = f_{0,1} - proj(u_{0,0})`` give the
    state ``u_{0,1}``, adjoint ``-alpha u_{0,0}`` and control ``proj(u_{0,0})``.
    """

    s: float
    alpha: float
    a: float
    b: float

    def u_bar(self, x):
        return u_exact(0, 1, self.s, x)

    def p_bar(self, x):
        return -self.alpha * u_exact(0, 0, self.s, x)

    def z_bar(self, x):
        return proj_box(-self.p_bar(x) / self.alpha, self.a, self.b)

    def f(self, x):
        return f_exact(0, 1, self.s, x) - proj_box(u_exact(0, 0, self.s, x), self.a, self.b)

    def u_d(self, x):
        return u_exact(0, 1, self.s, x) + self.alpha * f_exact(0, 0, self.s, x)

    @property
    def r_o(self):
        """Radius of the disc on which the upper bound is active."""
        return math.sqrt(1.0 - self.b ** (1.0 / self.s))

    def energy_norm_sq(self):
        """``A(u_bar, u_bar) = <f_{0,1}, u_{0,1}>`` in closed form."""
        s = self.s
        return 4.0 ** s * math.gamma(1.0 + s) ** 2 * math.pi / (2.0 * (s + 2.0))


def disc_benchmark(s=0.7, alpha=0.1, a=-0.9, b=0.9):
    """The disc benchmark with an active upper bound near the center."""
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    if not 0.0 < b < 1.0:
        raise ValueError("upper bound b must lie in (0, 1) for a nonempty active set")
    if a > 0.0:
        raise ValueError("lower bound a must be non-positive")
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    return DiscBenchmark(s, alpha, a, b)
