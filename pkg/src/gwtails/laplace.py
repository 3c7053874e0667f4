"""Laplace transforms of the martingale limits and the saddle function.

``phi`` is evaluated through the Poincare equation ``phi(z a**n) = f_n(phi(z))``:
the argument is scaled into the disc ``|w| <= base_radius`` where a Taylor
polynomial with exact coefficients is accurate to ~1e-17, then lifted by
``n`` applications of ``f``.  The Taylor coefficients come from the same
functional equation (``a**k c_k = [w**k] f(phi(w))``), so no moment of ``W``
is ever estimated.

The transform with immigration is a product over the whole lifting orbit
of a single base point, which makes ``phi_star`` cost the same as one
``phi`` evaluation.  Everything that can underflow is returned as a complex
logarithm.
"""
from __future__ import annotations

import math
from math import comb

import numpy as np

from .genfun import DEFAULT_CTX, _f, horner, log_imm_pgf, log_schroder_ratio
from .model import EvalContext, ImmigrationModel, OffspringModel

TAYLOR_TOL = 1e-17
MAX_ORDER = 40
CAUCHY_RADIUS = 0.5
CAUCHY_NODES = 64
_UNIT_CIRCLE = np.exp(2j * np.pi * np.arange(CAUCHY_NODES) / CAUCHY_NODES)


class ConsistencyError(ArithmeticError):
    """A computed quantity violates a property it must satisfy (e.g. convexity of psi)."""


def taylor_coefficients(off: OffspringModel, order: int) -> np.ndarray:
    """Coefficients ``c_0..c_order`` of ``phi(w) = sum c_k w**k``.

    ``c_k = (-1)**k E[W**k] / k!``.  Derived from ``phi(a w) = f(phi(w))``
    with ``phi(w) = 1 + x(w)``: ``(a**k - a) c_k = sum_{j>=2} F_j [w**k] x**j``
    where ``F_j = f^{(j)}(1)/j!``.
    """
    a = off.mean_a
    ks = np.arange(1, off.support_max + 1)
    fact = np.array([sum(p * comb(int(k), j) for k, p in zip(ks, off.probs)) for j in range(order + 1)])
    c = np.zeros(order + 1)
    c[0], c[1] = 1.0, -1.0
    for k in range(2, order + 1):
        x = c.copy()
        x[0] = 0.0
        x[k:] = 0.0
        total = 0.0
        power = x.copy()
        for j in range(2, k + 1):
            power = np.convolve(power, x)[: order + 1]
            total += fact[j] * power[k]
        c[k] = total / (a**k - a)
    return c


class PhiEvaluator:
    """Evaluator of ``phi(z) = E exp(-z W)`` on ``Re z >= 0``.

    Parameters
    ----------
    off : OffspringModel
    ctx : EvalContext, optional
        ``ctx.base_radius`` is the radius of the Taylor disc.
    """

    def __init__(self, off: OffspringModel, ctx: EvalContext | None = None):
        ctx = ctx or DEFAULT_CTX
        self.off = off
        self.ctx = ctx
        self.base_radius = float(ctx.base_radius)
        coeffs = taylor_coefficients(off, MAX_ORDER + 1)
        order = 2
        while order < MAX_ORDER and abs(coeffs[order + 1]) * self.base_radius ** (order + 1) > TAYLOR_TOL:
            order += 1
        self.order = order
        self.base_coeffs = coeffs[: order + 1]
        self.remainder_bound = abs(coeffs[order + 1]) * self.base_radius ** (order + 1)
        self._log_a = off.log_a

    @property
    def mean_w(self) -> float:
        return -self.base_coeffs[1]

    @property
    def second_moment_w(self) -> float:
        """``E W**2 = Var X / (a**2 - a) + 1``."""
        return 2.0 * self.base_coeffs[2]

    def moment(self, k: int) -> float:
        c = taylor_coefficients(self.off, max(k, 2))
        return (-1) ** k * math.factorial(k) * c[k]

    def lift_depth(self, z) -> np.ndarray:
        """Number of lifts ``n = ceil(log_a(|z| / base_radius))``, at least 0."""
        mod = np.abs(np.asarray(z))
        with np.errstate(divide="ignore"):
            n = np.ceil(np.log(mod / self.base_radius) / self._log_a)
        n = np.where(mod > self.base_radius, n, 0.0)
        return n.astype(np.int64)

    def base(self, w):
        return horner(self.base_coeffs, np.asarray(w, dtype=complex))

    def _check(self, z):
        z = np.asarray(z, dtype=complex)
        if np.any(z.real < -1e-14 * np.maximum(1.0, np.abs(z))):
            raise ValueError("Laplace transforms are only evaluated on Re z >= 0")
        return z

    def phi(self, z):
        """``phi(z)``; scalar in, scalar out."""
        z = self._check(z)
        scalar = z.ndim == 0
        z = np.atleast_1d(z)
        n = self.lift_depth(z)
        g = self.base(z * np.exp(-n * self._log_a))
        nmax = int(n.max(initial=0))
        for j in range(nmax):
            active = n >= nmax - j
            g = np.where(active, _f(self.off, g), g)
        return complex(g[0]) if scalar else g

    def log_phi(self, z):
        return np.log(self.phi(z))

    def log_phi_star(self, imm: ImmigrationModel, z, ctx: EvalContext | None = None):
        """``log phi_*(z)`` for the process with immigration ``imm``."""
        ctx = ctx or self.ctx
        z = self._check(z)
        scalar = z.ndim == 0
        z = np.atleast_1d(z)
        n = self.lift_depth(z)
        b = z * np.exp(-n * self._log_a)
        g = self.base(b)
        # term n_i: phi(z a^{-n_i}) is the base value itself
        acc = log_imm_pgf(imm, g)
        nmax = int(n.max(initial=0))
        for j in range(nmax):
            active = n >= nmax - j
            g = np.where(active, _f(self.off, g), g)
            acc = acc + np.where(active, log_imm_pgf(imm, g), 0.0)
        # factors with arguments inside the Taylor disc
        ratio = 1.0 / self.off.mean_a
        w = b
        for _ in range(ctx.max_iters * 10):
            w = w * ratio
            term = log_imm_pgf(imm, self.base(w))
            acc = acc + term
            d = float(np.max(np.abs(term), initial=0.0))
            if d * ratio / (1.0 - ratio) * 1.01 < ctx.product_tol:
                break
        else:
            raise ArithmeticError("phi_star product did not converge")
        return complex(acc[0]) if scalar else acc

    def phi_star(self, imm: ImmigrationModel, z, ctx: EvalContext | None = None):
        return np.exp(self.log_phi_star(imm, z, ctx))

    def log_phi_k(self, imm: ImmigrationModel, z, k: int, ctx: EvalContext | None = None):
        """``log phi_k(z) = nu (k+1) log phi(z a**-k) + log phi_*(z a**-(k+1))``."""
        if k < -1:
            raise ValueError("k must be >= -1")
        z = self._check(z)
        star = self.log_phi_star(imm, z * math.exp(-(k + 1) * self._log_a), ctx)
        if k == -1:
            return star
        return imm.min_index_nu * (k + 1) * self.log_phi(z * math.exp(-k * self._log_a)) + star

    # saddle function psi(s) = log S(phi(s))

    def psi(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s <= 0):
            raise ValueError("psi is defined for s > 0")
        y = self.phi(s)
        val = np.log(y) + log_schroder_ratio(self.off, y, self.ctx)
        return np.real(val) if np.ndim(val) else float(np.real(val))

    def psi_taylor(self, s: float) -> tuple[float, float]:
        """``(psi'(s), psi''(s))`` from the Cauchy integral on the circle ``|z - s| = s/2``.

        ``psi`` is analytic on ``Re z > 0``, so the trapezoidal rule on the circle
        converges geometrically (ratio ~1/2 per node); 64 nodes give ~1e-13.
        Finite differences would amplify the ~1e-13 rounding noise of ``psi``.
        """
        if not s > 0:
            raise ValueError("psi is defined for s > 0")
        r = CAUCHY_RADIUS * s
        z = s + r * _UNIT_CIRCLE
        y = self.phi(z)
        f = np.log(y) + log_schroder_ratio(self.off, y, self.ctx)
        d1 = float(np.mean(f * np.conj(_UNIT_CIRCLE)).real) / r
        d2 = 2.0 * float(np.mean(f * np.conj(_UNIT_CIRCLE) ** 2).real) / r**2
        return d1, d2

    def psi_d1(self, s: float) -> float:
        return self.psi_taylor(s)[0]

    def psi_d2(self, s: float) -> float:
        """Second derivative; raises if the result is not positive."""
        val = self.psi_taylor(s)[1]
        if not val > 0:
            raise ConsistencyError(f"psi'' = {val:.3g} <= 0 at s = {s:.6g}")
        return val


def phi(ev: PhiEvaluator, z):
    return ev.phi(z)


def phi_star(ev: PhiEvaluator, imm: ImmigrationModel, z, ctx: EvalContext | None = None):
    return ev.phi_star(imm, z, ctx)


def phi_k(ev: PhiEvaluator, imm: ImmigrationModel, z, k: int, ctx: EvalContext | None = None):
    return np.exp(ev.log_phi_k(imm, z, k, ctx))


def psi(ev: PhiEvaluator, s):
    return ev.psi(s)


def psi_d1(ev: PhiEvaluator, s: float) -> float:
    return ev.psi_d1(s)


def psi_d2(ev: PhiEvaluator, s: float) -> float:
    return ev.psi_d2(s)


def h_of_phi(ev: PhiEvaluator, imm: ImmigrationModel, z):
    """``h(phi(z))``; convenience for functional-equation residuals."""
    return np.exp(log_imm_pgf(imm, ev.phi(z)))

