"""Small-deviation scales and closed asymptotic predictors.

All scales are functions of ``eps`` through ``L = log(1/eps)``:

* ``omega``: ``omega - log(omega) + log(log a) = L``
* ``rho``: ``rho * a**(-rho) = eps`` (so ``omega = rho log a``)
* ``gamma_s = L / log a``
* ``gamma = L / log a + (1/log a + 1/((lambda-1) log p1)) log L``
* ``u``: ``nu psi'(u) = -a**(-{rho})``, the saddle of the inversion integral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .genfun import DEFAULT_CTX, big_f, r_correction, schroder_value
from .laplace import PhiEvaluator
from .model import EvalContext, ImmigrationModel, OffspringModel


class ScaleError(ValueError):
    """``eps`` outside the range where the scale equations have admissible roots."""


@dataclass(frozen=True)
class ScaleSolution:
    eps: float
    omega: float
    rho: float
    N: int
    frac_rho: float
    gamma: float
    gamma_s: float
    u: float

    @property
    def log_inv_eps(self) -> float:
        return -math.log(self.eps)


def _newton(g, dg, x0: float, max_iters: int, tol: float = 1e-15) -> float:
    x = x0
    for _ in range(max_iters):
        step = g(x) / dg(x)
        x -= step
        if abs(step) <= tol * max(1.0, abs(x)):
            return x
    raise ArithmeticError(f"Newton iteration did not converge from {x0!r}")


def solve_omega(eps: float, log_a: float, max_iters: int = 200) -> float:
    """Root ``omega > 1`` of ``omega - log(omega) + log(log a) = log(1/eps)``.

    The left side is convex and increasing on ``omega > 1``, so Newton from any
    start ``> 1`` overshoots at most once and then converges monotonically.
    """
    big_l = -math.log(eps)
    if big_l <= 1.0 + math.log(log_a):
        raise ScaleError(f"eps = {eps!r} too large: no root omega > 1")
    x0 = big_l if big_l > 1.0 else 2.0 * (big_l - math.log(log_a)) + 2.0
    return _newton(lambda w: w - math.log(w) + math.log(log_a) - big_l,
                   lambda w: 1.0 - 1.0 / w, x0, max_iters)


def solve_rho(eps: float, log_a: float, max_iters: int = 200) -> float:
    """Root ``rho > 1/log a`` of ``rho log a - log(rho) = log(1/eps)``."""
    big_l = -math.log(eps)
    if big_l <= 1.0 + math.log(log_a):
        raise ScaleError(f"eps = {eps!r} too large: no admissible root rho")
    x0 = max(big_l / log_a, 2.0 / log_a)
    return _newton(lambda r: r * log_a - math.log(r) - big_l,
                   lambda r: log_a - 1.0 / r, x0, max_iters)


def gamma_s(eps: float, off: OffspringModel) -> float:
    return -math.log(eps) / off.log_a


def gamma(eps: float, off: OffspringModel) -> float:
    big_l = -math.log(eps)
    coef = 1.0 / off.log_a + 1.0 / ((off.second_index_lambda - 1) * math.log(off.p1))
    return big_l / off.log_a + coef * math.log(big_l)


def solve_u(ev: PhiEvaluator, nu: int, frac_rho: float, max_iters: int = 200) -> float:
    """Root of ``nu psi'(u) = -a**(-frac_rho)``.

    ``psi'`` increases from ``-inf`` to ``0`` on ``(0, inf)``; the root is
    bracketed on a doubling grid, bisected in ``log u`` and polished by Newton.
    """
    a = ev.off.mean_a
    target = -(a ** (-frac_rho)) / nu

    def g(s: float) -> float:
        return ev.psi_d1(s) - target

    lo = hi = 1.0
    if g(1.0) < 0:
        while g(hi) < 0:
            lo, hi = hi, hi * 2.0
            if hi > 1e12:
                raise ArithmeticError("u bracket not found")
    else:
        while g(lo) >= 0:
            lo, hi = lo / 2.0, lo
            if lo < 1e-12:
                raise ArithmeticError("u bracket not found")
    for _ in range(max_iters):
        mid = math.sqrt(lo * hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 < 1e-10:
            break
    u = math.sqrt(lo * hi)
    for _ in range(3):
        step = g(u) / ev.psi_d2(u)
        if not lo * 0.999 < u - step < hi * 1.001:
            break
        u -= step
        if abs(step) < 1e-14 * u:
            break
    return u


def u_bracket(ev: PhiEvaluator, nu: int) -> tuple[float, float]:
    """Range ``[u(0), u(1)]`` of the saddle over all values of ``{rho}``."""
    return solve_u(ev, nu, 0.0), solve_u(ev, nu, 1.0)


def solve_scales(off: OffspringModel, imm: ImmigrationModel | None, ev: PhiEvaluator, eps: float,
                 ctx: EvalContext | None = None) -> ScaleSolution:
    """All scales at ``eps``; ``u`` is ``nan`` without immigration."""
    ctx = ctx or DEFAULT_CTX
    if not 0.0 < eps < 1.0:
        raise ScaleError("eps must lie in (0, 1)")
    omega = solve_omega(eps, off.log_a, ctx.max_iters)
    rho = solve_rho(eps, off.log_a, ctx.max_iters)
    if omega <= 1.0 or rho <= 1.0:
        raise ScaleError(f"eps = {eps!r} too large: omega = {omega:.4g}, rho = {rho:.4g}")
    n = int(math.floor(rho))
    frac = rho - n
    u = solve_u(ev, imm.min_index_nu, frac, ctx.max_iters) if imm is not None else math.nan
    return ScaleSolution(eps=eps, omega=omega, rho=rho, N=n, frac_rho=frac,
                         gamma=gamma(eps, off), gamma_s=gamma_s(eps, off), u=u)


@dataclass(frozen=True)
class SaddleTerms:
    """Quantities evaluated at the saddle ``u``."""

    u: float
    phi_u: float
    log_s: float        # log S(phi(u))
    log_phi_star: float
    log_f: float        # log F(phi(u))
    psi2: float


def saddle_terms(off: OffspringModel, imm: ImmigrationModel, ev: PhiEvaluator, u: float,
                 ctx: EvalContext | None = None) -> SaddleTerms:
    ctx = ctx or ev.ctx
    y = ev.phi(u).real
    return SaddleTerms(
        u=u, phi_u=y,
        log_s=math.log(schroder_value(off, y, ctx).real),
        log_phi_star=ev.log_phi_star(imm, u, ctx).real,
        log_f=math.log(big_f(off, imm, y, ctx).real),
        psi2=ev.psi_d2(u),
    )


def m_hat(off: OffspringModel, imm: ImmigrationModel, rho: float, terms: SaddleTerms) -> tuple[float, float]:
    """Periodic coefficients of the full tail of the immigration limit, as functions of ``rho``.

    ``terms`` must be evaluated at the saddle for ``{rho}``.
    """
    nu, fr, u = imm.min_index_nu, rho - math.floor(rho), terms.u
    lp1, lq = math.log(off.p1), math.log(imm.q_nu)
    a = off.mean_a
    m1 = nu * lp1 / 2 * (1 - 2 * fr) + u * a ** (-fr) + nu * terms.log_s + lq
    m2 = (terms.log_phi_star + terms.log_f - math.log(u) - 0.5 * math.log(2 * math.pi * nu * terms.psi2)
          + nu * lp1 / 2 * (fr * fr - fr) - nu * fr * terms.log_s - fr * lq)
    return m1, m2


def predict_tail_W_immigration(off: OffspringModel, imm: ImmigrationModel, ev: PhiEvaluator, eps: float,
                               ctx: EvalContext | None = None, sol: ScaleSolution | None = None) -> float:
    """Asymptotic ``log P{W_imm < eps} = -sigma omega**2 + omega M1 - log(omega)/2 + M2``."""
    sol = sol or solve_scales(off, imm, ev, eps, ctx)
    terms = saddle_terms(off, imm, ev, sol.u, ctx)
    m1h, m2h = m_hat(off, imm, sol.rho, terms)
    log_a = off.log_a
    m1 = m1h / log_a
    m2 = 0.5 * math.log(log_a) + m2h
    w = sol.omega
    return -imm.sigma * w * w + w * m1 - 0.5 * math.log(w) + m2


def log_psi_kn(off: OffspringModel, imm: ImmigrationModel, y: float, k: int, n: int,
               ctx: EvalContext | None = None) -> float:
    """``log (1 - R_{n-k}(y)/S(y))**(nu n)`` for real ``y``."""
    r = r_correction(off, y, n - k, ctx).real
    s = schroder_value(off, y, ctx).real
    return imm.min_index_nu * n * math.log1p(-r / s)


def predict_joint(off: OffspringModel, imm: ImmigrationModel, ev: PhiEvaluator, eps: float, k: int,
                  ctx: EvalContext | None = None, sol: ScaleSolution | None = None) -> float:
    """Asymptotic ``log P{K_imm > k, W_imm < eps}`` at the saddle ``u a**N``."""
    ctx = ctx or ev.ctx
    sol = sol or solve_scales(off, imm, ev, eps, ctx)
    n = sol.N
    if k < -1 or k >= n:
        raise ValueError(f"k = {k} outside the supported range [-1, {n - 1}]")
    nu = imm.min_index_nu
    terms = saddle_terms(off, imm, ev, sol.u, ctx)
    log_big_phi = (terms.log_phi_star + terms.log_f + log_psi_kn(off, imm, terms.phi_u, k, n, ctx)
                   - math.log(sol.u) - 0.5 * math.log(2 * math.pi * nu * terms.psi2))
    return (n * math.log(imm.q_nu) + nu * n * (n + 1) / 2 * math.log(off.p1) + log_big_phi
            + sol.u * eps * off.mean_a**n + nu * n * terms.log_s - 0.5 * math.log(n))


def fluctuation_c2(off: OffspringModel, sol: ScaleSolution) -> float:
    """``rho p1**((lambda-1)(rho-gamma))``; bounded in ``eps`` but not convergent."""
    return sol.rho * off.p1 ** ((off.second_index_lambda - 1) * (sol.rho - sol.gamma))


def fluctuation_w(off: OffspringModel, sol: ScaleSolution) -> float:
    lam1 = off.second_index_lambda - 1
    fg = sol.gamma - math.floor(sol.gamma)
    return off.r_constant * fluctuation_c2(off, sol) * off.p1 ** (lam1 * (fg - sol.frac_rho))


def predict_fluctuation(off: OffspringModel, imm: ImmigrationModel, ev: PhiEvaluator, eps: float, x: int,
                        ctx: EvalContext | None = None, sol: ScaleSolution | None = None) -> float:
    """Asymptotic ``P{K_imm > floor(gamma) + x | W_imm < eps}``.

    ``exp(-w nu p1**(-(lambda-1) x) S(phi(u))**(lambda-1))``.
    """
    ctx = ctx or ev.ctx
    sol = sol or solve_scales(off, imm, ev, eps, ctx)
    lam1 = off.second_index_lambda - 1
    s = schroder_value(off, ev.phi(sol.u).real, ctx).real
    w = fluctuation_w(off, sol)
    return math.exp(-w * imm.min_index_nu * off.p1 ** (-lam1 * x) * s**lam1)


def fluctuation_range(off: OffspringModel, imm: ImmigrationModel, ev: PhiEvaluator, eps_grid,
                      ctx: EvalContext | None = None) -> tuple[float, float]:
    """Observed range of ``nu w S(phi(u))**(lambda-1)`` over ``eps_grid``."""
    vals = []
    lam1 = off.second_index_lambda - 1
    for eps in eps_grid:
        sol = solve_scales(off, imm, ev, float(eps), ctx)
        s = schroder_value(off, ev.phi(sol.u).real, ctx).real
        vals.append(imm.min_index_nu * fluctuation_w(off, sol) * s**lam1)
    return float(min(vals)), float(max(vals))


def predict_tail_W_schroder(off: OffspringModel, ev: PhiEvaluator, eps: float,
                            ctx: EvalContext | None = None) -> float:
    """``L(eps) eps**tau``, the leading term of ``P{W < eps}``."""
    from .inversion import schroder_l

    return schroder_l(ev, eps, ctx) * eps**off.tau


def predict_K_conditional_schroder(off: OffspringModel, ev: PhiEvaluator, eps: float, x: int,
                                   ctx: EvalContext | None = None) -> float:
    """``P{K > gamma_s + x | W < eps} = p1**(floor(gamma_s)+x) P{W < a**(x-{gamma_s})} / P{W < eps}``.

    An exact identity; both tails are computed by inversion.
    """
    from .inversion import tail_W

    gs = gamma_s(eps, off)
    n = math.floor(gs)
    if n + x < 0:
        return 1.0
    upper = off.mean_a ** (x - (gs - n))
    num = tail_W(ev, upper, ctx).log_value
    den = tail_W(ev, eps, ctx).log_value
    return math.exp((n + x) * math.log(off.p1) + num - den)


def predict_K_conditional_schroder_limit(off: OffspringModel, ev: PhiEvaluator, eps: float, x: int,
                                         ctx: EvalContext | None = None) -> float:
    """Limit form ``p1**(x-{gamma_s}) P{W < a**(x-{gamma_s})} / L(eps)``; periodic in ``eps``."""
    from .inversion import schroder_l, tail_W

    gs = gamma_s(eps, off)
    frac = gs - math.floor(gs)
    upper = off.mean_a ** (x - frac)
    return off.p1 ** (x - frac) * tail_W(ev, upper, ctx).value / schroder_l(ev, eps, ctx)
