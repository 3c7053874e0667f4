"""Offspring PGF iterates, the Schroeder function and the correction products.

All evaluators accept scalars or arrays of complex points and are pure
functions of ``(model, z, ctx)``.  Infinite products are truncated once a
bound on the neglected log-tail drops below ``ctx.product_tol``; the bound
is taken from the real majorant sequence ``f_j(|z|)``, which dominates the
complex one term by term because all PGF coefficients are non-negative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import EvalContext, ImmigrationModel, OffspringModel

DEFAULT_CTX = EvalContext()
MIN_FACTORS = 10
WORKING_RADIUS = 0.95


class GenfunDomainError(ArithmeticError):
    """Point outside the region where an evaluator is defined or validated."""


@dataclass(frozen=True)
class ProductTail:
    """Value of a truncated infinite product with its truncation bookkeeping."""

    value: complex | np.ndarray
    truncation_index: int
    tail_bound: float   # bound on the neglected log-tail


def horner(coeffs: np.ndarray, y):
    """``sum(coeffs[i] * y**i)`` evaluated by Horner's rule."""
    acc = np.zeros_like(y) + coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * y + c
    return acc


def clog1p(z):
    """Complex ``log(1 + z)`` accurate for tiny ``|z|`` (numpy's complex log1p is not)."""
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    return 0.5 * np.log1p(2.0 * x + x * x + y * y) + 1j * np.arctan2(y, 1.0 + x)


def _f(off: OffspringModel, y):
    return y * horner(off.probs, y)


def _a_minus_one(off: OffspringModel, y):
    if off.a_coeffs.size == 0:
        return np.zeros_like(y)
    return y * horner(off.a_coeffs, y)


def _b_minus_one(imm: ImmigrationModel, y):
    if imm.b_coeffs.size == 0:
        return np.zeros_like(y)
    return y * horner(imm.b_coeffs, y)


def _as_complex(z):
    arr = np.asarray(z, dtype=complex)
    return arr, arr.ndim == 0


def _out(arr, scalar):
    return complex(arr) if scalar else arr


def _check_disc(z, radius: float, strict: bool = False):
    mod = np.abs(z)
    bad = mod >= radius if strict else mod > radius
    if np.any(bad):
        raise GenfunDomainError(f"|z| = {float(mod.max()):.6g} outside the admissible disc (radius {radius})")


def pgf(off: OffspringModel, z):
    """Offspring generating function ``f(z) = sum p_n z**n`` on the closed unit disc."""
    z, scalar = _as_complex(z)
    _check_disc(z, 1.0 + 1e-12)
    return _out(_f(off, z), scalar)


def pgf_iter(off: OffspringModel, z, n: int):
    """``n``-fold composition ``f_n(z)``; ``f_0`` is the identity."""
    if n < 0:
        raise ValueError("iterate index must be non-negative")
    z, scalar = _as_complex(z)
    _check_disc(z, 1.0 + 1e-12)
    y = z
    for _ in range(n):
        y = _f(off, y)
    return _out(y, scalar)


def pgf_orbit(off: OffspringModel, z, n: int) -> np.ndarray:
    """Stack ``[f_0(z), ..., f_n(z)]`` along a new leading axis."""
    z = np.asarray(z, dtype=complex)
    out = np.empty((n + 1,) + z.shape, dtype=complex)
    out[0] = z
    for j in range(n):
        out[j + 1] = _f(off, out[j])
    return out


def a_factor(off: OffspringModel, z, j: int):
    """``A_j(z) = 1 + p_1^{-1} sum_{l>1} p_l f_j(z)**(l-1)``."""
    y = pgf_iter(off, z, j)
    return 1.0 + _a_minus_one(off, y)


def _log_tail_bound(d: float, q: float) -> float:
    """Bound on ``sum_{i>j} |log(1 + x_i)|`` given ``|x_j| <= d`` and ratio ``q``."""
    if q >= 1.0 or d >= 1.0:
        return math.inf
    tail = d * q / (1.0 - q)
    return tail / (1.0 - d)


def _a_log_sum(off: OffspringModel, z: np.ndarray, ctx: EvalContext, start: int = 0, weight=None,
               relative: bool = False):
    """Sum ``w_j log A_j(z)`` over ``j >= start`` plus ``f_start(z)``.

    ``weight`` maps ``j`` to a multiplier (``None`` means 1).  With
    ``relative`` the tail bound is compared with ``|sum|`` instead of 1.  Returns
    ``(sum, f_start, prefix_log, index, bound)``; ``prefix_log`` is the sum of
    ``log A_j`` for ``j < start`` (needed by ``R_n``).
    """
    r = float(np.max(np.abs(z))) if z.size else 0.0
    if r >= 1.0:
        raise GenfunDomainError("Schroeder products need |z| < 1")
    y = z.copy()
    yr = r
    prefix = np.zeros_like(z)
    for j in range(start):
        am1 = _a_minus_one(off, y)
        prefix = prefix + clog1p(am1)
        y = off.p1 * y * (1.0 + am1)
        yr = float(_f(off, yr))
    f_start = y
    acc = np.zeros_like(z)
    d_prev = None
    bound = math.inf
    j = start
    for it in range(max(ctx.max_iters, 1) * 10):
        am1 = _a_minus_one(off, y)
        if np.any(np.abs(1.0 + am1) < 1e-300):
            raise GenfunDomainError(f"A_{j} vanishes inside the requested region")
        w = 1.0 if weight is None else weight(j)
        acc = acc + w * clog1p(am1)
        d = float(_a_minus_one(off, yr))
        dw = d * w
        if dw == 0.0:
            bound = 0.0
        elif d_prev is not None and d_prev > 0.0:
            q = dw / d_prev
            bound = math.inf if (q >= 1.0 or d >= 1.0) else dw * q / (1.0 - q) / (1.0 - d)
        d_prev = dw
        y = off.p1 * y * (1.0 + am1)
        yr = float(_f(off, yr))
        j += 1
        scale = float(np.min(np.abs(acc))) if relative else 1.0
        if j - start >= MIN_FACTORS and (bound == 0.0 or bound < ctx.product_tol * scale):
            break
    else:
        raise ArithmeticError("Schroeder product did not reach the requested tolerance")
    return acc, f_start, prefix, j, bound


def schroder(off: OffspringModel, z, ctx: EvalContext | None = None) -> ProductTail:
    """Schroeder function ``S(z) = z prod_{j>=0} A_j(z)`` for ``|z| < 1``."""
    ctx = ctx or DEFAULT_CTX
    z, scalar = _as_complex(z)
    _check_disc(z, 1.0, strict=True)
    acc, _, _, idx, bound = _a_log_sum(off, np.atleast_1d(z), ctx)
    val = np.atleast_1d(z) * np.exp(acc)
    val = val.reshape(z.shape)
    return ProductTail(_out(val, scalar), idx, float(bound))


def schroder_value(off: OffspringModel, z, ctx: EvalContext | None = None):
    return schroder(off, z, ctx).value


def log_schroder_ratio(off: OffspringModel, z, ctx: EvalContext | None = None):
    """``log(S(z)/z) = sum_j log A_j(z)``; finite at ``z = 0``."""
    ctx = ctx or DEFAULT_CTX
    z, scalar = _as_complex(z)
    _check_disc(z, 1.0, strict=True)
    acc, *_ = _a_log_sum(off, np.atleast_1d(z), ctx)
    return _out(acc.reshape(z.shape), scalar)


def r_correction(off: OffspringModel, z, n: int, ctx: EvalContext | None = None):
    """``R_n(z) = S(z) - p_1^{-n} f_n(z)`` without cancellation.

    Uses ``R_n = z prod_{j<n} A_j * (prod_{k>=n} A_k - 1)``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    ctx = ctx or DEFAULT_CTX
    z, scalar = _as_complex(z)
    _check_disc(z, 1.0, strict=True)
    zz = np.atleast_1d(z)
    nonzero = zz != 0
    if not np.all(nonzero):
        out = np.zeros_like(zz)
        if np.any(nonzero):
            out[nonzero] = np.atleast_1d(r_correction(off, zz[nonzero], n, ctx))
        return _out(out.reshape(z.shape), scalar)
    acc, _, prefix, _, _ = _a_log_sum(off, zz, ctx, start=n, relative=True)
    val = zz * np.exp(prefix) * np.expm1(acc)
    return _out(val.reshape(z.shape), scalar)


def r_rate_limit(off: OffspringModel) -> float:
    """Limit of ``R_n(s) / (S(s)**lambda p_1**(n(lambda-1)))``.

    Equals ``p_lambda / (p_1 (1 - p_1**(lambda-1)))``.
    """
    return off.r_constant


def imm_pgf(imm: ImmigrationModel, y):
    """Immigration generating function ``h(y)``."""
    y = np.asarray(y, dtype=complex)
    return imm.q_nu * y**imm.min_index_nu * (1.0 + _b_minus_one(imm, y))


def log_imm_pgf(imm: ImmigrationModel, y):
    """``log h(y)`` computed as ``log q_nu + nu log y + log B(y)`` (safe for tiny ``y``)."""
    y = np.asarray(y, dtype=complex)
    return math.log(imm.q_nu) + imm.min_index_nu * np.log(y) + clog1p(_b_minus_one(imm, y))


def b_factor(off: OffspringModel, imm: ImmigrationModel, z, n: int):
    """``B_n(z) = 1 + q_nu^{-1} sum_{l>nu} q_l f_n(z)**(l-nu)``."""
    y = pgf_iter(off, z, n)
    return 1.0 + _b_minus_one(imm, np.asarray(y, dtype=complex))


def big_b(off: OffspringModel, imm: ImmigrationModel, z, ctx: EvalContext | None = None) -> ProductTail:
    """``B(z) = prod_{j>=1} B_j(z)``."""
    ctx = ctx or DEFAULT_CTX
    z, scalar = _as_complex(z)
    _check_disc(z, 1.0, strict=True)
    zz = np.atleast_1d(z)
    r = float(np.max(np.abs(zz)))
    y = _f(off, zz)
    yr = float(_f(off, r))
    acc = np.zeros_like(zz)
    d_prev, bound, j = None, math.inf, 1
    for _ in range(ctx.max_iters * 10):
        bm1 = _b_minus_one(imm, y)
        acc = acc + clog1p(bm1)
        d = float(_b_minus_one(imm, yr))
        if d == 0.0:
            bound = 0.0
        elif d_prev is not None and d_prev > 0.0:
            bound = _log_tail_bound(d, d / d_prev)
        d_prev = d
        y = _f(off, y)
        yr = float(_f(off, yr))
        j += 1
        if j - 1 >= MIN_FACTORS and bound < ctx.product_tol:
            break
    else:
        raise ArithmeticError("B product did not reach the requested tolerance")
    val = np.exp(acc).reshape(z.shape)
    return ProductTail(_out(val, scalar), j - 1, float(bound))


def big_c(off: OffspringModel, z, ctx: EvalContext | None = None) -> ProductTail:
    """``C(z) = lim prod_{j=1}^n A_j(z)**(-j)``; fails if some ``A_j`` vanishes."""
    ctx = ctx or DEFAULT_CTX
    z, scalar = _as_complex(z)
    _check_disc(z, 1.0, strict=True)
    zz = np.atleast_1d(z)
    acc, _, _, idx, bound = _a_log_sum(off, zz, ctx, start=1, weight=lambda j: float(j))
    val = np.exp(-acc).reshape(z.shape)
    return ProductTail(_out(val, scalar), idx, float(bound))


def big_f(off: OffspringModel, imm: ImmigrationModel, z, ctx: EvalContext | None = None):
    """``F(z) = B(z) C(z)**nu``."""
    b = np.asarray(big_b(off, imm, z, ctx).value)
    c = np.asarray(big_c(off, z, ctx).value)
    val = b * c**imm.min_index_nu
    return complex(val) if val.ndim == 0 else val


def log_big_f(off: OffspringModel, imm: ImmigrationModel, z, ctx: EvalContext | None = None):
    return np.log(np.asarray(big_f(off, imm, z, ctx)))


def _sector_boundary(theta: float, radius: float, n: int = 160) -> np.ndarray:
    rad = np.linspace(radius / n, radius, n)
    ang = np.linspace(-theta, theta, n)
    return np.concatenate([rad * np.exp(1j * theta), rad * np.exp(-1j * theta), radius * np.exp(1j * ang)])


def _sector_ok(off, imm, theta, radius, threshold, ctx) -> bool:
    pts = _sector_boundary(theta, radius)
    try:
        ratio = np.abs(np.exp(log_schroder_ratio(off, pts, ctx)))
        if np.min(ratio) <= threshold:
            return False
        if imm is not None and np.min(np.abs(big_b(off, imm, pts, ctx).value)) <= threshold:
            return False
    except GenfunDomainError:
        return False
    return True


@lru_cache(maxsize=64)
def sector_angle(off: OffspringModel, imm: ImmigrationModel | None = None, radius: float = WORKING_RADIUS,
                 threshold: float = 1e-6) -> float:
    """Largest half-angle (bisection, cached per model) on whose sector boundary ``|S/z|`` and ``|B|`` exceed ``threshold``."""
    ctx = DEFAULT_CTX
    hi = 0.5 * math.pi * (1.0 - 1e-3)
    if _sector_ok(off, imm, hi, radius, threshold, ctx):
        return hi
    lo = 1e-3
    if not _sector_ok(off, imm, lo, radius, threshold, ctx):
        raise GenfunDomainError("no admissible sector found")
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if _sector_ok(off, imm, mid, radius, threshold, ctx):
            lo = mid
        else:
            hi = mid
    return lo


def in_sector(z, theta: float, radius: float = WORKING_RADIUS) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    return (np.abs(z) <= radius) & (z != 0) & (np.abs(np.angle(z)) <= theta)
