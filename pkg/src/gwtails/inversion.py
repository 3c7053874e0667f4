"""Left-tail probabilities by inversion of the Laplace transform.

For a positive random variable with transform ``Phi`` and any shift ``c > 0``

    P{V < eps} = (1/pi) int_0^inf Re[ exp(eps c (1 - i s)) Phi(c (1 - i s)) / (1 - i s) ] ds.

The companion term with ``-1`` in place of the exponential integrates to zero
because ``Phi(z)/z`` is analytic and integrable on ``Re z > 0``.  The integrand
is normalized by its value at ``s = 0`` so the result is produced as a
logarithm and never underflows.

Quadrature: the half-line is cut into blocks of one half-period of
``exp(-i eps c s)``; each block is integrated by vectorized adaptive
Gauss-Legendre panels (``n`` against ``2n`` nodes).  Fast-decaying integrands
stop on the block envelope.  Slowly decaying ones (``|Phi| ~ s**-tau`` without
immigration) form an alternating sequence of block sums that is summed with
the Wynn epsilon algorithm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .genfun import DEFAULT_CTX, log_schroder_ratio, r_correction
from .laplace import PhiEvaluator
from .model import EvalContext, ImmigrationModel

GL_NODES = 16
MAX_PANELS_PER_BLOCK = 4096
MIN_BLOCKS = 4
_GL = {n: np.polynomial.legendre.leggauss(n) for n in (GL_NODES, 2 * GL_NODES)}


class QuadratureError(ArithmeticError):
    """The inversion integral did not reach the requested accuracy."""


@dataclass(frozen=True)
class TailResult:
    value: float
    log_value: float
    abs_error_est: float
    method: str
    contour_shift: float
    t_truncation: float
    rel_error: float | None = None  # kept separately so it survives underflow of ``value``

    @property
    def rel_error_est(self) -> float:
        if self.rel_error is not None:
            return self.rel_error
        return self.abs_error_est / self.value if self.value > 0 else math.inf


@dataclass(frozen=True)
class LaplaceTransform:
    """``log Phi(z)`` as a vectorized callable on ``Re z >= 0``."""

    log: Callable[[np.ndarray], np.ndarray]
    name: str = "transform"


def transform_w(ev: PhiEvaluator) -> LaplaceTransform:
    return LaplaceTransform(ev.log_phi, "W")


def transform_w_imm(ev: PhiEvaluator, imm: ImmigrationModel) -> LaplaceTransform:
    return LaplaceTransform(lambda z: ev.log_phi_star(imm, z), "W_imm")


def transform_v(ev: PhiEvaluator, imm: ImmigrationModel, k: int) -> LaplaceTransform:
    """Transform of the limit of the process conditioned on minimal growth up to generation ``k``."""
    return LaplaceTransform(lambda z: ev.log_phi_k(imm, z, k), f"V_{k}")


def wynn_epsilon(partial_sums) -> float:
    """Wynn epsilon extrapolation of a sequence of partial sums."""
    s = np.asarray(partial_sums, dtype=float)
    n = s.size
    if n < 3:
        return float(s[-1])
    prev = np.zeros(n + 1)
    cur = s.copy()
    best = float(s[-1])
    for col in range(1, n):
        diff = np.diff(cur)
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = prev[1:cur.size] + 1.0 / diff
        if not np.all(np.isfinite(nxt)):
            break
        prev, cur = cur, nxt
        if col % 2 == 0 and cur.size:
            best = float(cur[-1])
    return best


def _panel_rule(func, lo: np.ndarray, hi: np.ndarray):
    """Integrals of ``func`` on panels with 16- and 32-node Gauss-Legendre rules."""
    mids, halves = 0.5 * (lo + hi), 0.5 * (hi - lo)
    xs, ws = [], []
    for n in (GL_NODES, 2 * GL_NODES):
        x, w = _GL[n]
        xs.append((mids[:, None] + halves[:, None] * x[None, :]).ravel())
        ws.append(w)
    vals = func(np.concatenate(xs))
    k1 = lo.size * GL_NODES
    v1 = vals[:k1].reshape(lo.size, GL_NODES) @ ws[0] * halves
    v2 = vals[k1:].reshape(lo.size, 2 * GL_NODES) @ ws[1] * halves
    return v2, np.abs(v2 - v1)


def _adaptive_block(func, lo: float, hi: float, n_init: int, abs_tol: float):
    """Adaptive panel bisection on ``[lo, hi]``; returns (integral, error estimate)."""
    edges = np.linspace(lo, hi, n_init + 1)
    plo, phi_ = edges[:-1], edges[1:]
    total = err = 0.0
    width = hi - lo
    while plo.size:
        val, e = _panel_rule(func, plo, phi_)
        ok = e <= abs_tol * (phi_ - plo) / width + 1e-300
        total += float(val[ok].sum())
        err += float(e[ok].sum())
        plo, phi_ = plo[~ok], phi_[~ok]
        if plo.size:
            mid = 0.5 * (plo + phi_)
            plo, phi_ = np.concatenate([plo, mid]), np.concatenate([mid, phi_])
            if plo.size > MAX_PANELS_PER_BLOCK:
                raise QuadratureError("panel budget exhausted")
    return total, err


@dataclass(frozen=True)
class LineIntegral:
    log_scale: float    # integral = exp(log_scale) * value
    value: float
    abs_error: float    # on ``value``
    s_truncation: float


def line_integral(log_g, lin: float, ctx: EvalContext, width_hint: float | None = None,
                  allow_negative: bool = False) -> LineIntegral:
    """``(1/pi) int_0^inf Re[exp(lin (1 - i s)) G(1 - i s) / (1 - i s)] ds`` with ``log_g = log G``.

    Returned as ``exp(log_scale) * value`` where ``log_scale = lin + Re log G(1)``.
    """
    log_g1 = complex(np.atleast_1d(log_g(np.array([1.0 + 0j])))[0])
    m = lin + log_g1.real

    def integrand(s):
        w = 1.0 - 1j * s
        return np.real(np.exp(lin * w + log_g(w) - m) / w)

    half = math.pi / lin
    n_init = 1
    if width_hint is not None and width_hint < half:
        n_init = min(int(math.ceil(half / width_hint)), 64)
    rough, _ = _adaptive_block(integrand, 0.0, half, n_init, 1e-3)
    ref = max(abs(rough), 1e-300)
    tol = ctx.quad_rel_tol * ref
    blocks, err_sum = [], 0.0
    sums = []
    estimate, tail_err = math.nan, math.inf
    prev_extrap = None
    max_blocks = max(ctx.max_iters, MIN_BLOCKS + 2)
    for m_blk in range(max_blocks):
        lo, hi = m_blk * half, (m_blk + 1) * half
        val, e = _adaptive_block(integrand, lo, hi, n_init if m_blk == 0 else 1, 0.1 * tol)
        blocks.append(val)
        err_sum += e
        sums.append((sums[-1] if sums else 0.0) + val)
        if m_blk + 1 < MIN_BLOCKS:
            continue
        total = sums[-1]
        if abs(blocks[-1]) < 0.1 * tol and abs(blocks[-2]) < 0.1 * tol:
            estimate, tail_err = total, abs(blocks[-1])
            break
        extrap = wynn_epsilon(sums[-30:])
        if prev_extrap is not None and abs(extrap - prev_extrap) < tol:
            estimate, tail_err = extrap, abs(extrap - prev_extrap)
            break
        prev_extrap = extrap
    else:
        raise QuadratureError(f"tail did not converge in {max_blocks} blocks")
    value = estimate / math.pi
    err = (err_sum + tail_err) / math.pi
    if value <= 0 and not allow_negative:
        raise QuadratureError(f"non-positive inversion integral {value:.3g} (error {err:.3g})")
    return LineIntegral(m, value, err, len(sums) * half)


def saddle_shift(transform: LaplaceTransform, eps: float) -> float:
    """Minimizer of ``eps c + log Phi(c)`` over ``c >= 1/eps``.

    On this line the integrand peaks at ``s = 0`` and cancellation is smallest.
    """
    lo = -math.log(eps)

    def g(x):
        c = math.exp(x)
        return eps * c + float(np.real(transform.log(np.array([c + 0j]))[0]))

    res = minimize_scalar(g, bounds=(lo, lo + 40.0), method="bounded", options={"xatol": 1e-6})
    return math.exp(res.x)


def invert_tail(transform: LaplaceTransform, eps: float, shift: float | None = None,
                ctx: EvalContext | None = None, width_hint: float | None = None,
                method: str = "plain_contour") -> TailResult:
    """``P{V < eps}`` for the variable with Laplace transform ``transform``.

    ``shift`` is the abscissa ``c`` of the vertical contour (default: the real
    saddle point, see ``saddle_shift``).
    ``width_hint`` is the expected width of the integrand peak in the scaled
    variable ``s = t / c``.
    """
    ctx = ctx or DEFAULT_CTX
    if not eps > 0:
        raise ValueError("eps must be positive")
    c = saddle_shift(transform, eps) if shift is None else float(shift)
    if not c > 0:
        raise ValueError("contour shift must be positive")
    res = line_integral(lambda w: transform.log(c * w), eps * c, ctx, width_hint)
    log_value = res.log_scale + math.log(res.value)
    value = math.exp(log_value) if log_value > -745 else 0.0
    if value > 1.0 + 10 * res.abs_error / res.value:
        raise QuadratureError(f"inversion produced probability {value!r} > 1")
    return TailResult(value=min(value, 1.0), log_value=min(log_value, 0.0),
                      abs_error_est=value * res.abs_error / res.value,
                      method=method, contour_shift=c, t_truncation=res.s_truncation * c,
                      rel_error=res.abs_error / res.value)


def w_shift(ev: PhiEvaluator, eps: float) -> float:
    """``a**floor(log(1/eps)/log a)``, so that ``eps * shift`` lies in ``(1/a, 1]``."""
    return ev.off.mean_a ** math.floor(-math.log(eps) / ev.off.log_a)


def tail_W(ev: PhiEvaluator, eps: float, ctx: EvalContext | None = None, shift: float | None = None) -> TailResult:
    """``P{W < eps}`` for the process without immigration."""
    c = w_shift(ev, eps) if shift is None else shift
    return invert_tail(transform_w(ev), eps, c, ctx)


def joint_prob(ev: PhiEvaluator, imm: ImmigrationModel, eps: float, k: int,
               ctx: EvalContext | None = None, sol=None) -> TailResult:
    """``P{K_imm > k, W_imm < eps} = q_nu**(k+1) p1**(nu k (k+1)/2) P{V_k < eps}``.

    The contour passes through ``u a**N`` and the first panels have the width
    of the saddle peak.
    """
    from .scales import solve_scales

    if k < -1:
        raise ValueError("k must be >= -1")
    ctx = ctx or ev.ctx
    off = ev.off
    sol = sol or solve_scales(off, imm, ev, eps, ctx)
    nu = imm.min_index_nu
    c = sol.u * off.mean_a**sol.N
    width = 1.0 / (sol.u * math.sqrt(nu * max(sol.N, 1) * ev.psi_d2(sol.u)))
    res = invert_tail(transform_v(ev, imm, k), eps, c, ctx, width_hint=width, method="shifted_contour")
    log_pref = (k + 1) * math.log(imm.q_nu) + nu * k * (k + 1) / 2 * math.log(off.p1)
    log_value = res.log_value + log_pref
    value = math.exp(log_value) if log_value > -745 else 0.0
    return TailResult(value=value, log_value=log_value, abs_error_est=res.abs_error_est * math.exp(log_pref),
                      method=res.method, contour_shift=c, t_truncation=res.t_truncation,
                      rel_error=res.rel_error_est)


def tail_W_imm(ev: PhiEvaluator, imm: ImmigrationModel, eps: float, ctx: EvalContext | None = None) -> TailResult:
    """``P{W_imm < eps}`` for the process with immigration."""
    if eps >= 0.9:
        return invert_tail(transform_w_imm(ev, imm), eps, None, ctx)
    return joint_prob(ev, imm, eps, -1, ctx)


def conditional_k(ev: PhiEvaluator, imm: ImmigrationModel, eps: float, ks, ctx: EvalContext | None = None):
    """``P{K_imm > k | W_imm < eps}`` for each ``k`` in ``ks``, by ratio of joint probabilities."""
    from .scales import solve_scales

    sol = solve_scales(ev.off, imm, ev, eps, ctx)
    base = joint_prob(ev, imm, eps, -1, ctx, sol)
    return [math.exp(joint_prob(ev, imm, eps, int(k), ctx, sol).log_value - base.log_value) for k in ks]


def _schroder_split(ev: PhiEvaluator, eps: float):
    off = ev.off
    gs = -math.log(eps) / off.log_a
    n = math.floor(gs)
    frac = gs - n
    return n, frac, off.mean_a ** (-frac), off.p1 ** (-frac)


def schroder_l(ev: PhiEvaluator, eps: float, ctx: EvalContext | None = None) -> float:
    """Multiplicatively periodic factor ``L(eps)`` of ``P{W < eps} ~ L(eps) eps**tau``."""
    ctx = ctx or ev.ctx
    _, _, alpha, pref = _schroder_split(ev, eps)

    def log_g(w):
        y = ev.phi(w)
        return np.log(y) + log_schroder_ratio(ev.off, y, ctx)

    res = line_integral(log_g, alpha, ctx)
    return pref * math.exp(res.log_scale) * res.value


def schroder_correction(ev: PhiEvaluator, eps: float, ctx: EvalContext | None = None) -> TailResult:
    """``L(eps) eps**tau - P{W < eps}``, computed directly from ``R_n`` (no cancellation)."""
    ctx = ctx or ev.ctx
    n, _, alpha, pref = _schroder_split(ev, eps)

    def log_g(w):
        return np.log(r_correction(ev.off, ev.phi(w), n, ctx))

    res = line_integral(log_g, alpha, ctx, allow_negative=True)
    scale = pref * math.exp(res.log_scale) * eps**ev.off.tau
    value = scale * res.value
    return TailResult(value=value, log_value=math.log(abs(value)) if value else -math.inf,
                      abs_error_est=scale * res.abs_error, method="plain_contour",
                      contour_shift=1.0, t_truncation=res.s_truncation)
