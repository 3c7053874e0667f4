import math

import numpy as np
import pytest

from gwtails import genfun as gf
from gwtails import scales as sc
from gwtails.inversion import joint_prob, schroder_l
from gwtails.model import build_immigration, build_offspring


def test_rho_fixed_point():
    eps = 10 * 2.0**-10
    assert eps == 0.009765625
    assert sc.solve_rho(eps, math.log(2)) == pytest.approx(10.0, abs=1e-10)


def test_omega_fixed_point():
    big_l = 5 - math.log(5) + math.log(math.log(2))
    assert big_l == pytest.approx(3.024022, rel=1e-5)  # exact 3.0240492
    assert math.exp(-big_l) == pytest.approx(0.0486, abs=1e-4)
    assert sc.solve_omega(math.exp(-big_l), math.log(2)) == pytest.approx(5.0, abs=1e-10)


def test_u_geometric(geo_ev):
    assert sc.solve_u(geo_ev, 1, 0.0) == pytest.approx(1.0, abs=1e-10)
    # psi'(u) = -1/u, so u = a**{rho} in general
    for fr in (0.25, 0.5, 0.9):
        assert sc.solve_u(geo_ev, 1, fr) == pytest.approx(2.0**fr, rel=1e-10)


def test_u_jump_across_integer_rho(ev, test_off):
    lo, hi = sc.u_bracket(ev, 1)
    assert hi / lo == pytest.approx(test_off.mean_a, rel=1e-10)


def test_eps_too_large(test_off, imm_one, ev, geo_off, geo_imm, geo_ev):
    with pytest.raises(sc.ScaleError):
        sc.solve_scales(test_off, imm_one, ev, 1.5)
    # a = 2: no root omega > 1 once log(1/eps) <= 1 + log(log 2)
    for eps in (0.6, 0.9):
        with pytest.raises(sc.ScaleError):
            sc.solve_scales(geo_off, geo_imm, geo_ev, eps)
    sc.solve_scales(geo_off, geo_imm, geo_ev, 0.5)


def test_scale_residuals_on_grid(test_off, imm_one, ev):
    a, log_a, nu = test_off.mean_a, test_off.log_a, imm_one.min_index_nu
    for eps in np.geomspace(1e-8, 1e-2, 13):
        s = sc.solve_scales(test_off, imm_one, ev, float(eps))
        assert abs(s.omega - math.log(s.omega) + math.log(log_a) + math.log(eps)) <= 1e-10
        assert abs(s.rho * a ** (-s.rho) / eps - 1) <= 1e-12
        assert abs(s.omega - s.rho * log_a) <= 1e-10
        assert abs(nu * ev.psi_d1(s.u) + a ** (-s.frac_rho)) <= 1e-8
        assert s.N == math.floor(s.rho) and 0 <= s.frac_rho < 1


@pytest.mark.parametrize("probs", [[0.5, 0.5], [0.2, 0.8], [0.9, 0.1], [0.6, 0.0, 0.4], [0.3, 0.3, 0.4]])
def test_gamma_difference_and_sign(probs):
    off = build_offspring(probs)
    lam1 = off.second_index_lambda - 1
    bracket = 1 / off.log_a + 1 / (lam1 * math.log(off.p1))
    for eps in (1e-3, 1e-6):
        big_l = -math.log(eps)
        assert sc.gamma(eps, off) - sc.gamma_s(eps, off) == pytest.approx(bracket * math.log(big_l), abs=1e-12)
    # bracket = log(a p1**(lam-1)) / (log a * log p1**(lam-1)), denominator negative
    assert np.sign(bracket) == -np.sign(math.log(off.mean_a * off.p1**lam1))


def test_rho_asymptotics(test_off):
    log_a = test_off.log_a
    vals = []
    for eps in (1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12):
        big_l = -math.log(eps)
        rho = sc.solve_rho(eps, log_a)
        vals.append((rho * log_a - big_l - math.log(big_l)) / math.log(log_a))
    dist = np.abs(np.array(vals) + 1)
    assert np.all(np.diff(dist) < 0)


def test_branching_balance_bounded(test_off, imm_one, ev):
    c2 = [sc.fluctuation_c2(test_off, sc.solve_scales(test_off, imm_one, ev, float(e)))
          for e in np.geomspace(1e-8, 1e-3, 11)]
    assert min(c2) > 0 and max(c2) / min(c2) < 10


def test_tail_predictor_leading_order(test_off, imm_one, ev):
    eps = 1e-4
    s = sc.solve_scales(test_off, imm_one, ev, eps)
    ratio = sc.predict_tail_W_immigration(test_off, imm_one, ev, eps) / (-imm_one.sigma * s.omega**2)
    assert 0.8 <= ratio <= 1.2


def test_m_hat_periodic(test_off, imm_one, ev):
    s = sc.solve_scales(test_off, imm_one, ev, 1e-4)
    terms = sc.saddle_terms(test_off, imm_one, ev, s.u)
    m1a, m2a = sc.m_hat(test_off, imm_one, s.rho, terms)
    m1b, m2b = sc.m_hat(test_off, imm_one, s.rho + 1, terms)
    assert abs(m1a - m1b) <= 1e-8 and abs(m2a - m2b) <= 1e-8


@pytest.mark.parametrize("eps", [1e-4, 1e-6])
def test_tail_predictor_geometric_hand_assembly(geo_off, geo_imm, geo_ev, eps):
    """All ingredients in closed form: phi(u) = 1/(1+u), S(phi(u)) = 1/u, psi''(u) = 1/u**2."""
    s = sc.solve_scales(geo_off, geo_imm, geo_ev, eps)
    fr, rho = s.frac_rho, s.rho
    u = 2.0**fr
    n = np.arange(200)
    log_phi_star = float(np.sum(-np.log1p(u * 2.0 ** (-n))))
    f = [1 / (1 + u)]
    for _ in range(200):
        f.append(f[-1] / (2 - f[-1]))
    f = np.array(f)
    log_c = float(np.sum(np.arange(1, 201) * np.log1p(-f[1:] / 2)))
    log_s, psi2, lp1 = -math.log(u), 1 / u**2, math.log(0.5)
    m1 = lp1 / 2 * (1 - 2 * fr) + u * 2 ** (-fr) + log_s
    m2 = (log_phi_star + log_c - math.log(u) - 0.5 * math.log(2 * math.pi * psi2)
          + lp1 / 2 * (fr * fr - fr) - fr * log_s)
    omega = rho * math.log(2)
    hand = -geo_imm.sigma * omega**2 + omega * m1 / math.log(2) - 0.5 * math.log(omega) + 0.5 * math.log(math.log(2)) + m2
    assert abs(sc.predict_tail_W_immigration(geo_off, geo_imm, geo_ev, eps) - hand) <= 1e-10


def test_schroder_predictor_geometric(geo_off, geo_ev):
    eps = 1e-3
    pred = sc.predict_tail_W_schroder(geo_off, geo_ev, eps)
    assert abs(pred / -math.expm1(-eps) - 1) <= 0.02


def test_schroder_l_periodic(test_off, ev):
    for eps in (1e-2, 3e-4):
        assert schroder_l(ev, eps) == pytest.approx(schroder_l(ev, test_off.mean_a * eps), rel=1e-9)


def test_predict_joint_reduces_to_tail(test_off, imm_one, ev):
    """The two assemblies differ only by ``log Psi_{-1,N}`` and ``log(rho/N)/2``, both ``O(1/N)``."""
    for eps in (1e-3, 1e-4, 1e-5, 1e-8):
        s = sc.solve_scales(test_off, imm_one, ev, eps)
        diff = (sc.predict_joint(test_off, imm_one, ev, eps, -1, sol=s)
                - sc.predict_tail_W_immigration(test_off, imm_one, ev, eps, sol=s))
        log_psi = sc.log_psi_kn(test_off, imm_one, ev.phi(s.u).real, -1, s.N)
        assert abs(diff - 0.5 * math.log(s.rho / s.N) - log_psi) <= 1e-9
        assert abs(diff) <= 1.0 / s.N


def test_predict_joint_range(test_off, imm_one, ev):
    s = sc.solve_scales(test_off, imm_one, ev, 1e-3)
    with pytest.raises(ValueError):
        sc.predict_joint(test_off, imm_one, ev, 1e-3, s.N, sol=s)
    with pytest.raises(ValueError):
        sc.predict_joint(test_off, imm_one, ev, 1e-3, -2, sol=s)


def test_predict_joint_ratio_matches_fluctuation_law(test_off, imm_one, ev):
    worst = {}
    for eps in (1e-3, 1e-5):
        s = sc.solve_scales(test_off, imm_one, ev, eps)
        base = sc.predict_joint(test_off, imm_one, ev, eps, -1, sol=s)
        worst[eps] = max(abs(math.exp(sc.predict_joint(test_off, imm_one, ev, eps, math.floor(s.gamma) + x, sol=s) - base)
                             - sc.predict_fluctuation(test_off, imm_one, ev, eps, x, sol=s)) for x in range(-2, 4))
    assert worst[1e-5] < worst[1e-3] and worst[1e-5] < 0.05


def test_predict_joint_vs_inversion(test_off, imm_one, ev):
    errs = []
    for eps in (1e-3, 1e-4, 1e-5):
        s = sc.solve_scales(test_off, imm_one, ev, eps)
        pred = sc.predict_joint(test_off, imm_one, ev, eps, -1, sol=s)
        exact = joint_prob(ev, imm_one, eps, -1, sol=s).log_value
        errs.append(abs(math.expm1(pred - exact)))
    assert errs[-1] <= 0.15 and np.all(np.diff(errs) < 0)


def test_fluctuation_law_shape(test_off, imm_one, ev):
    s = sc.solve_scales(test_off, imm_one, ev, 1e-5)
    xs = range(-40, 41)
    v = np.array([sc.predict_fluctuation(test_off, imm_one, ev, 1e-5, x, sol=s) for x in xs])
    assert np.all(np.diff(v) <= 0) and np.all(np.diff(v[35:46]) < 0)
    assert v[0] > 1 - 1e-6 and v[-1] < 1e-12
    lp1 = (test_off.second_index_lambda - 1) * math.log(test_off.p1)
    dev = [abs(math.log(-math.expm1(math.log(sc.predict_fluctuation(test_off, imm_one, ev, 1e-5, -x, sol=s)))) / x - lp1)
           for x in (10, 20, 40)]
    # the deviation is (log c)/x: it halves when x doubles, so the limit is exactly (lambda-1) log p1
    assert np.all(np.diff(dev) < 0)
    assert dev[2] * 40 == pytest.approx(dev[1] * 20, rel=1e-3)


def test_fluctuation_constants(test_off, imm_one, ev):
    assert test_off.a_rate_constant == 1.0
    lo, hi = sc.fluctuation_range(test_off, imm_one, ev, np.geomspace(1e-8, 1e-3, 11))
    assert 0 < lo <= hi < math.inf


def test_schroder_conditional_basic(test_off, ev):
    eps = 1e-4
    v0 = sc.predict_K_conditional_schroder(test_off, ev, eps, 0)
    assert 0 < v0 < 1
    n = math.floor(sc.gamma_s(eps, test_off))
    assert sc.predict_K_conditional_schroder(test_off, ev, eps, -n - 1) == 1.0
    vals = [sc.predict_K_conditional_schroder(test_off, ev, eps, x) for x in range(-3, 6)]
    assert np.all(np.diff(vals) < 0)


def test_schroder_conditional_limit_form(geo_off, geo_ev):
    # exponential W: the exact identity and its limit form are close already at moderate eps
    eps = 1e-4
    for x in (-1, 0, 2):
        exact = sc.predict_K_conditional_schroder(geo_off, geo_ev, eps, x)
        limit = sc.predict_K_conditional_schroder_limit(geo_off, geo_ev, eps, x)
        assert abs(exact - limit) < 1e-3


def test_two_immigrant_minimum(test_off):
    imm2 = build_immigration([0.0, 1.0], test_off)
    from gwtails.laplace import PhiEvaluator

    ev = PhiEvaluator(test_off)
    s = sc.solve_scales(test_off, imm2, ev, 1e-4)
    assert abs(2 * ev.psi_d1(s.u) + test_off.mean_a ** (-s.frac_rho)) <= 1e-8
    assert gf.big_f(test_off, imm2, ev.phi(s.u).real).real > 0
