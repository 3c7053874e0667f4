"""Named invariant checks run by ``gwtails verify``."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import genfun as gf
from . import inversion as inv
from . import scales as sc
from .laplace import PhiEvaluator
from .model import ModelConfig
from .simulate import exact_zn_pmf


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def as_dict(self) -> dict:
        d = asdict(self)
        for key in ("measured", "threshold"):
            if not math.isfinite(d[key]):
                d[key] = str(d[key])
        return d


def _max(x) -> float:
    return float(np.max(np.abs(np.asarray(x))))


class _Suite:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.off = cfg.offspring
        self.imm = cfg.immigration
        self.ctx = cfg.context
        self.ev = PhiEvaluator(self.off, self.ctx)
        self.results: list[CheckResult] = []

    def add(self, name: str, measured: float, threshold: float, ok: bool | None = None, detail: str = ""):
        passed = measured <= threshold if ok is None else ok
        self.results.append(CheckResult(name, bool(passed), float(measured), float(threshold), detail))

    def run(self, name: str, fn: Callable[[], None]):
        try:
            fn()
        except Exception as exc:  # a crashing check is a failed check
            self.results.append(CheckResult(name, False, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))

    # offspring law
    def c_mean(self):
        k = np.arange(1, self.off.support_max + 1)
        self.add("mean_offspring", abs(float(np.sum(k * self.off.probs)) - self.off.mean_a), 1e-14)

    def c_tau(self):
        self.add("tau_identity", abs(self.off.mean_a ** (-self.off.tau) - self.off.p1), 1e-12)

    def c_pgf_one(self):
        self.add("pgf_at_one", abs(gf.pgf(self.off, 1.0) - 1.0), 1e-14)

    # Schroeder function
    def c_schroder_limit(self):
        s = gf.schroder_value(self.off, 0.5, self.ctx).real
        it = gf.pgf_iter(self.off, 0.5, 60).real / self.off.p1**60
        self.add("schroder_iterate_limit", abs(s - it) / s, 1e-8)

    def c_schroder_equation(self):
        z = np.array([0.1, 0.5, 0.9, 0.3 + 0.4j, -0.5 + 0.2j, 0.7j])
        lhs = gf.schroder_value(self.off, gf.pgf(self.off, z), self.ctx)
        rhs = self.off.p1 * gf.schroder_value(self.off, z, self.ctx)
        self.add("schroder_equation", _max(lhs - rhs) / max(1.0, _max(rhs)), 1e-10)

    def c_schroder_monotone(self):
        s = np.linspace(0.01, 0.95, 95)
        v = gf.schroder_value(self.off, s, self.ctx).real
        worst = min(float(np.min(np.diff(v))), float(np.min(np.diff(v / s))))
        self.add("schroder_monotone", -worst, 0.0, ok=worst > 0)

    def c_schroder_modulus(self):
        rng = np.random.default_rng(self.ctx.mc_seed)
        r = 0.95 * np.sqrt(rng.random(400))
        z = r * np.exp(2j * np.pi * rng.random(400))
        excess = np.abs(gf.schroder_value(self.off, z, self.ctx)) - gf.schroder_value(self.off, r, self.ctx).real
        self.add("schroder_modulus_bound", float(np.max(excess)), 1e-12)

    def c_r_rate(self):
        lam = self.off.second_index_lambda
        y = 0.5
        s = gf.schroder_value(self.off, y, self.ctx).real
        vals = [gf.r_correction(self.off, y, n, self.ctx).real / (s**lam * self.off.p1 ** (n * (lam - 1)))
                for n in (40, 60)]
        dev = max(abs(v / self.off.r_constant - 1.0) for v in vals)
        self.add("r_correction_rate", dev, 1e-2)

    # Laplace transform
    def c_phi_equation(self):
        z = np.concatenate([np.geomspace(0.01, 100, 40), [1 + 5j, 10 - 3j]])
        res = _max(self.ev.phi(self.off.mean_a * z) - gf.pgf(self.off, self.ev.phi(z)))
        self.add("phi_functional_equation", res, 1e-10)

    def c_phi_modulus(self):
        x = np.geomspace(0.01, 100, 20)
        z = (x[:, None] * (1 + 1j * np.linspace(-5, 5, 11)[None, :])).ravel()
        m = np.abs(self.ev.phi(z)) - self.ev.phi(z.real).real
        self.add("phi_modulus_bound", float(np.max(m)), 1e-13)

    def c_phi_decreasing(self):
        v = self.ev.phi(np.geomspace(1e-3, 1e3, 200)).real
        worst = float(np.max(np.diff(v)))
        self.add("phi_decreasing", worst, 0.0, ok=worst < 0)

    def c_moments(self):
        off = self.off
        expected = off.variance / (off.mean_a**2 - off.mean_a) + 1.0
        self.add("second_moment_W", abs(self.ev.second_moment_w - expected), 1e-12)

    def c_psi_convex(self):
        s = np.geomspace(0.05, 50, 25)
        d1 = np.array([self.ev.psi_d1(x) for x in s])
        d2 = np.array([self.ev.psi_d2(x) for x in s])
        ok = bool(np.all(np.diff(d1) > 0) and np.all(d2 > 0) and np.all(d1 < 0))
        self.add("psi_derivative_increasing", float(np.min(d2)), 0.0, ok=ok)

    def c_psi_limits(self):
        a = self.off.mean_a
        up = np.array([self.ev.psi_d1(a**n) for n in range(9)])
        down = np.array([self.ev.psi_d1(a ** (-n)) for n in range(9)])
        ok = bool(np.all(np.diff(np.abs(up)) < 0) and np.all(np.diff(down) < 0))
        self.add("psi_derivative_limits", float(abs(up[-1])), float(abs(up[0])), ok=ok)

    # scales
    def c_scales(self):
        log_a = self.off.log_a
        worst = 0.0
        for eps in np.geomspace(1e-8, 1e-2, 7):
            w = sc.solve_omega(eps, log_a)
            r = sc.solve_rho(eps, log_a)
            worst = max(worst, abs(w - math.log(w) + math.log(log_a) + math.log(eps)),
                        abs(r * self.off.mean_a ** (-r) / eps - 1.0), abs(w - r * log_a))
        self.add("scale_equations", worst, 1e-10)

    # inversion
    def c_shift_invariance(self):
        eps = 0.05
        r1 = inv.tail_W(self.ev, eps, self.ctx)
        r2 = inv.tail_W(self.ev, eps, self.ctx, shift=4.0 / eps)
        tol = 10 * (r1.abs_error_est + r2.abs_error_est) + 1e-12
        self.add("inversion_shift_invariance", abs(r1.value - r2.value), tol)

    def c_inversion_monotone(self):
        vals = [inv.tail_W(self.ev, e, self.ctx).value for e in np.geomspace(1e-4, 3, 12)]
        ok = all(0 <= v <= 1 for v in vals) and bool(np.all(np.diff(vals) > 0))
        self.add("inversion_monotone_in_eps", float(vals[-1]), 1.0, ok=ok)

    def c_inversion_vs_exact(self):
        # the event {Z_1 = 1, W' < a eps} is contained in {W < eps}
        eps = 0.2
        full = inv.tail_W(self.ev, eps, self.ctx).value
        one = self.off.p1 * inv.tail_W(self.ev, self.off.mean_a * eps, self.ctx).value
        self.add("inversion_first_step_bound", one - full, 1e-12)

    def c_exact_pmf(self):
        pmf = exact_zn_pmf(self.off, None, 3, 1 << 10)
        mean = float(np.dot(np.arange(pmf.probs.size), pmf.probs))
        self.add("exact_pmf_mean", abs(mean / self.off.mean_a**3 - 1.0), 1e-9)

    # immigration
    def c_phi_star(self):
        z = np.geomspace(0.01, 100, 40)
        lhs = self.ev.phi_star(self.imm, z)
        rhs = gf.imm_pgf(self.imm, self.ev.phi(z)) * self.ev.phi_star(self.imm, z / self.off.mean_a)
        self.add("phi_star_functional_equation", _max(lhs - rhs), 1e-10)

    def c_product_identity(self):
        off, imm, nu = self.off, self.imm, self.imm.min_index_nu
        z = np.array([0.3, 0.6 + 0.2j, 0.8j])
        worst = 0.0
        for n_max in range(1, 13):
            direct = np.ones_like(z)
            a_prod = np.ones_like(z)
            b_prod = np.ones_like(z)
            for n in range(1, n_max + 1):
                direct = direct * gf.imm_pgf(imm, gf.pgf_iter(off, z, n))
                for j in range(n):
                    a_prod = a_prod * gf.a_factor(off, z, j) ** nu
                b_prod = b_prod * gf.b_factor(off, imm, z, n)
            factored = (imm.q_nu**n_max * off.p1 ** (nu * n_max * (n_max + 1) / 2) * z ** (nu * n_max)
                        * a_prod * b_prod)
            worst = max(worst, _max((direct - factored) / np.maximum(np.abs(factored), 1e-300)))
        self.add("immigration_product_identity", worst, 1e-10)

    def c_u(self):
        worst = 0.0
        for eps in (1e-3, 1e-5):
            sol = sc.solve_scales(self.off, self.imm, self.ev, eps, self.ctx)
            worst = max(worst, abs(self.imm.min_index_nu * self.ev.psi_d1(sol.u)
                                   + self.off.mean_a ** (-sol.frac_rho)))
        self.add("saddle_equation", worst, 1e-8)

    def c_marginal_k(self):
        off, imm, nu = self.off, self.imm, self.imm.min_index_nu
        worst = 0.0
        for k in range(3):
            pmf = exact_zn_pmf(off, imm, k, 1 << 12).probs
            direct = pmf[nu * (k + 1)] if pmf.size > nu * (k + 1) else 0.0
            # minimal size in generation k forces minimal sizes before it
            formula = imm.q_nu ** (k + 1) * off.p1 ** (nu * k * (k + 1) / 2)
            worst = max(worst, abs(direct - formula))
        self.add("minimal_growth_probability", worst, 1e-14)

    def c_joint_reduction(self):
        eps = 1e-3
        j = inv.joint_prob(self.ev, self.imm, eps, -1, self.ctx)
        r = inv.invert_tail(inv.transform_w_imm(self.ev, self.imm), eps, None, self.ctx)
        self.add("joint_k_minus_one_is_tail", abs(j.log_value - r.log_value), 1e-6)


def run_checks(cfg: ModelConfig) -> list[CheckResult]:
    s = _Suite(cfg)
    names = [n for n in dir(s) if n.startswith("c_")]
    imm_only = {"c_phi_star", "c_product_identity", "c_u", "c_marginal_k", "c_joint_reduction"}
    for n in sorted(names, key=lambda x: list(_Suite.__dict__).index(x)):
        if n in imm_only and s.imm is None:
            continue
        s.run(n[2:], getattr(s, n))
    return s.results
