"""Offspring and immigration laws, evaluation settings and config parsing.

Probability vectors are indexed from one: ``probs[0]`` is the probability
of one offspring (or one immigrant).  Mass at zero is not representable in
a list and must be given through the mapping form, where it is rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SUM_TOL = 1e-12


class ModelError(ValueError):
    """Invalid offspring or immigration law, or invalid configuration."""


def _as_prob_vector(probs: Sequence[float] | Mapping[Any, float], what: str) -> np.ndarray:
    """Normalize list/mapping input to a float vector indexed from 1."""
    if isinstance(probs, Mapping):
        items = {int(k): float(v) for k, v in probs.items()}
        if not items:
            raise ModelError(f"{what}: empty probability vector")
        if any(k < 0 for k in items):
            raise ModelError(f"{what}: negative support point")
        if items.get(0, 0.0) > 0.0:
            raise ModelError(f"{what}: mass at zero is not allowed (got {items[0]})")
        kmax = max(items)
        if kmax < 1:
            raise ModelError(f"{what}: no mass on positive integers")
        vec = np.zeros(kmax)
        for k, v in items.items():
            if k >= 1:
                vec[k - 1] = v
    else:
        vec = np.asarray(probs, dtype=float).ravel()
        if vec.size == 0:
            raise ModelError(f"{what}: empty probability vector")
    if not np.all(np.isfinite(vec)):
        raise ModelError(f"{what}: non-finite probability")
    if np.any(vec < 0):
        raise ModelError(f"{what}: negative probability")
    total = vec.sum()
    if abs(total - 1.0) > SUM_TOL:
        raise ModelError(f"{what}: probabilities sum to {total!r}, not 1")
    vec = vec / total
    # trailing zeros carry no information and only slow down Horner loops
    nz = np.flatnonzero(vec)
    return vec[: nz[-1] + 1]


@dataclass(frozen=True, eq=False)
class OffspringModel:
    """Finite-support offspring law with ``p_0 = 0`` and ``p_1 > 0``."""

    probs: np.ndarray
    mean_a: float
    second_index_lambda: int
    tau: float
    second_moment: float

    @property
    def p1(self) -> float:
        return float(self.probs[0])

    @property
    def p_lambda(self) -> float:
        return float(self.probs[self.second_index_lambda - 1])

    @property
    def support_max(self) -> int:
        return int(self.probs.size)

    @property
    def log_a(self) -> float:
        return math.log(self.mean_a)

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean_a**2

    @cached_property
    def a_coeffs(self) -> np.ndarray:
        """Coefficients of ``A(y) - 1`` in powers ``y**1 .. y**(K-1)``."""
        return self.probs[1:] / self.probs[0]

    @property
    def a_rate_constant(self) -> float:
        """``p_lambda / p1``: leading coefficient of ``log A_j(s) ~ c f_j(s)**(lambda-1)``."""
        return self.p_lambda / self.p1

    @cached_property
    def r_constant(self) -> float:
        """Limit of ``R_n / (S**lambda * p1**(n*(lambda-1)))``."""
        lam = self.second_index_lambda
        return self.p_lambda / (self.p1 * (1.0 - self.p1 ** (lam - 1)))

    @cached_property
    def key(self) -> tuple:
        return ("offspring",) + tuple(self.probs.tolist())

    def __hash__(self) -> int:
        return hash(self.key)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, OffspringModel) and self.key == other.key

    def __repr__(self) -> str:
        return f"OffspringModel(probs={self.probs.tolist()}, a={self.mean_a:.6g}, tau={self.tau:.6g})"


@dataclass(frozen=True, eq=False)
class ImmigrationModel:
    """Finite-support immigration law with ``q_0 = 0``."""

    probs: np.ndarray
    min_index_nu: int
    sigma: float

    @property
    def q_nu(self) -> float:
        return float(self.probs[self.min_index_nu - 1])

    @property
    def mean(self) -> float:
        k = np.arange(1, self.probs.size + 1)
        return float(np.dot(k, self.probs))

    @cached_property
    def b_coeffs(self) -> np.ndarray:
        """Coefficients of ``B(y) - 1`` in powers ``y**1 ..``."""
        return self.probs[self.min_index_nu:] / self.q_nu

    @cached_property
    def key(self) -> tuple:
        return ("immigration",) + tuple(self.probs.tolist())

    def __hash__(self) -> int:
        return hash(self.key)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ImmigrationModel) and self.key == other.key

    def __repr__(self) -> str:
        return f"ImmigrationModel(probs={self.probs.tolist()}, nu={self.min_index_nu}, sigma={self.sigma:.6g})"


@dataclass(frozen=True)
class EvalContext:
    """Truncation orders and tolerances shared by all evaluators."""

    product_tol: float = 1e-15
    base_radius: float = 1e-3
    quad_rel_tol: float = 1e-10
    max_iters: int = 200
    mc_seed: int = 20140611

    def __post_init__(self):
        for name in ("product_tol", "base_radius", "quad_rel_tol"):
            if not getattr(self, name) > 0:
                raise ModelError(f"context.{name} must be strictly positive")
        if self.max_iters < 1:
            raise ModelError("context.max_iters must be >= 1")
        if self.mc_seed < 0:
            raise ModelError("context.mc_seed must be non-negative")


def build_offspring(probs: Sequence[float] | Mapping[Any, float]) -> OffspringModel:
    """Validate an offspring law and derive ``a``, ``lambda``, ``tau`` and ``E X^2``.

    >>> m = build_offspring([0.5, 0.5])
    >>> round(m.mean_a, 12), m.second_index_lambda
    (1.5, 2)
    """
    p = _as_prob_vector(probs, "offspring")
    if p[0] <= 0.0:
        raise ModelError("offspring: p_1 = 0 (Boettcher case) is not supported")
    if p[0] >= 1.0 or np.count_nonzero(p) < 2:
        raise ModelError("offspring: degenerate offspring law (single atom)")
    k = np.arange(1, p.size + 1, dtype=float)
    a = float(np.dot(k, p))
    lam = int(np.flatnonzero(p[1:])[0]) + 2
    tau = -math.log(p[0]) / math.log(a)
    m2 = float(np.dot(k * k, p))
    return OffspringModel(probs=p, mean_a=a, second_index_lambda=lam, tau=tau, second_moment=m2)


def build_immigration(probs: Sequence[float] | Mapping[Any, float], off: OffspringModel) -> ImmigrationModel:
    """Validate an immigration law and derive ``nu`` and ``sigma``.

    >>> off = build_offspring([0.5, 0.5])
    >>> imm = build_immigration([1.0], off)
    >>> imm.min_index_nu, round(imm.sigma, 5)
    (1, 2.10806)
    """
    q = _as_prob_vector(probs, "immigration")
    nu = int(np.flatnonzero(q)[0]) + 1
    sigma = nu * math.log(1.0 / off.p1) / (2.0 * off.log_a**2)
    return ImmigrationModel(probs=q, min_index_nu=nu, sigma=sigma)


def truncated_geometric(success: float = 0.5, atoms: int = 48) -> np.ndarray:
    """``p_k = success * (1 - success)**(k-1)`` on ``1..atoms``, tail folded into the last atom."""
    if not 0.0 < success < 1.0:
        raise ModelError("geometric success probability must lie in (0, 1)")
    if atoms < 2:
        raise ModelError("geometric truncation needs at least two atoms")
    k = np.arange(1, atoms + 1)
    p = success * (1.0 - success) ** (k - 1)
    p[-1] += (1.0 - success) ** atoms
    return p / p.sum()


@dataclass(frozen=True)
class ModelConfig:
    """Parsed model file."""

    offspring: OffspringModel
    immigration: ImmigrationModel | None = None
    context: EvalContext = field(default_factory=EvalContext)
    source: str | None = None


def _parse_law(raw: Any, what: str):
    if isinstance(raw, Mapping) and "geometric" in raw:
        return truncated_geometric(float(raw["geometric"]), int(raw.get("atoms", 48)))
    if isinstance(raw, Mapping) or isinstance(raw, (list, tuple)):
        return raw
    raise ModelError(f"{what}: expected a list, a {{count = prob}} table or {{geometric = p}}")


_CONTEXT_KEYS = {"product_tol", "base_radius", "quad_rel_tol", "max_iters", "seed", "mc_seed"}


def parse_config(data: Mapping[str, Any], source: str | None = None) -> ModelConfig:
    if "offspring" not in data:
        raise ModelError("config: missing 'offspring'")
    off = build_offspring(_parse_law(data["offspring"], "offspring"))
    imm = None
    if data.get("immigration") is not None:
        imm = build_immigration(_parse_law(data["immigration"], "immigration"), off)
    ctx_raw = dict(data.get("context") or {})
    unknown = set(ctx_raw) - _CONTEXT_KEYS
    if unknown:
        raise ModelError(f"config: unknown context keys {sorted(unknown)}")
    if "seed" in ctx_raw:
        ctx_raw["mc_seed"] = ctx_raw.pop("seed")
    try:
        ctx = EvalContext(**ctx_raw)
    except TypeError as exc:
        raise ModelError(f"config: bad context ({exc})") from exc
    return ModelConfig(offspring=off, immigration=imm, context=ctx, source=source)


def load_config(path: str | Path) -> ModelConfig:
    """Read a TOML or JSON model file (chosen by extension, JSON for ``.json``)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ModelError(f"cannot parse model file {path}: {exc}") from exc
    return parse_config(data, source=str(path))
