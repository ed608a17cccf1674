import math

import numpy as np
import pytest
from scipy import integrate

from fpa_autobid.auction_core import XOS, TypeSet, make_instance
from fpa_autobid.bid_profiles import FiniteProfile
from fpa_autobid.equilibrium import DeviationSet, best_response_dynamics, verify_mne
from fpa_autobid.smoothness_rmp import (SmoothnessParams, bound_min_type, bound_P, bound_Pt_eta, bound_Q_common,
                                        bound_Q_eta, brute_force_objective, calibration_feasible, claim_f,
                                        curve_rows, curves_csv, deviation_type_t, deviation_type_zero, gamma,
                                        lambda_of, lifting_check, mu_feasible, mu_lower, mu_star, mu_upper,
                                        poa_rmp_lower_bound, poa_upper_bound, pt_eta_boundary, rmp_objective,
                                        smoothness_check, smoothness_deviation, zeta)
from fpa_autobid.special_math import DomainError, beta_threshold, theta_threshold

E = math.e


def admissible_mus(t, eta, k=4):
    if t == 0:
        return list(np.linspace(0.05, 1, k) * mu_upper(0.0, eta))
    lo = mu_lower(t, eta) if t < 1 else 0.2
    return [lo * f for f in np.geomspace(1, 20, k)]


# -- parameters ----------------------------------------------------------------


def test_feasible_regions():
    assert mu_feasible(1.0, 0.0, 0.01)
    assert mu_feasible(0.0, 0.5, 2.0) and not mu_feasible(0.0, 0.5, 2.01)
    t, eta = 0.5, 0.2
    assert mu_feasible(t, eta, mu_lower(t, eta)) and not mu_feasible(t, eta, 0.99 * mu_lower(t, eta))
    with pytest.raises(DomainError):
        SmoothnessParams.make(0.0, 0.5, 3.0)


def test_lambda_formulas():
    assert lambda_of(1.0, 0.0, 1.0) == pytest.approx(1 - 1 / E)
    assert lambda_of(0.0, 0.3, 1.2) == 1.2
    t, eta, mu = 0.5, 0.2, 2.0
    assert lambda_of(t, eta, mu) == pytest.approx((mu / t) * (1 - (1 - t * eta) * math.exp(-t / mu)))


# -- deviation distributions -------------------------------------------------------


def test_type_zero_uniform():
    X = deviation_type_zero(1.0, 0.0, 1.0)
    for z in (0.0, 0.25, 0.8):
        assert X.cdf(z) == pytest.approx(z)
    assert X.atom == pytest.approx(0.0)


def test_type_zero_no_atom_at_max_mu():
    X = deviation_type_zero(1.0, 0.5, 2.0)
    assert X.atom == pytest.approx(0.0, abs=1e-15)
    assert X.cdf(0.5) == pytest.approx(0.0, abs=1e-15)
    assert X.cdf(0.75) == pytest.approx(0.5)


@pytest.mark.parametrize("eta", [0.0, 0.3, 0.7])
def test_type_zero_reaches_one(eta):
    for mu in admissible_mus(0.0, eta):
        assert deviation_type_zero(1.3, eta, mu).cdf(1.3) == 1.0
        assert deviation_type_zero(1.3, eta, mu).cdf_fn(1.3) == pytest.approx(1.0)


def test_gamma_examples():
    t, eta = 0.6, 0.3
    assert gamma(mu_lower(t, eta), t, eta) == pytest.approx(1.0)
    assert gamma(1.0, 1.0, 0.0) == pytest.approx(1 - 1 / E)
    assert gamma(1e6, 0.5, 0.4) == pytest.approx(0.4, abs=1e-6)


def test_type_t_density():
    X = deviation_type_t(1.0, 1.0, 0.0, 1.0)
    assert X.hi == pytest.approx(1 - 1 / E)
    for z in (0.0, 0.3, 0.6):
        assert X.pdf(z) == pytest.approx(1 / (1 - z))


@pytest.mark.parametrize("t", [0.2, 0.5, 0.9, 1.0])
@pytest.mark.parametrize("eta", [0.0, 0.4])
def test_type_t_mass_and_pointwise_roi(t, eta):
    v = 0.8
    for mu in admissible_mus(t, eta):
        X = deviation_type_t(v, t, eta, mu)
        total, _ = integrate.quad(X.pdf, X.lo, X.hi, epsabs=1e-13, epsrel=1e-12, limit=1000)
        assert total == pytest.approx(1.0, abs=1e-9)
        assert X.hi <= gamma(mu, t, eta) * v + 1e-15 <= v + 1e-15
        assert X.lo == pytest.approx(eta * v)


# -- smoothness inequality ---------------------------------------------------------


def test_smoothness_tight_case():
    assert smoothness_check(0.0, 0.0, 1.0, 1.0, [0.5, 0.5], rw=0) == pytest.approx(0.0, abs=1e-12)


def test_smoothness_trivial_when_price_high():
    t, eta, mu = 1.0, 0.0, 1.0
    g = gamma(mu, t, eta)
    # the competing bid is at or above gamma v, the deviation never wins
    assert smoothness_check(t, eta, mu, 1.0, [0.0, g + 0.01]) >= 0


def test_smoothness_unsold_rejected():
    with pytest.raises(DomainError):
        smoothness_check(1.0, 0.5, 1.0, 1.0, [0.1, 0.2])


def test_smoothness_grid_property():
    rng = np.random.default_rng(0)
    worst = math.inf
    for t in np.linspace(0, 1, 20):
        for eta in np.linspace(0, 0.9, 10):
            mus = admissible_mus(float(t), float(eta), 20)
            for mu in mus:
                X = smoothness_deviation(1.0, float(t), float(eta), float(mu))
                assert 0.0 <= X.lo <= X.hi <= 1.0 + 1e-12
                r = eta
                aw = float(rng.uniform(r, 1.2))
                other = float(rng.uniform(0, aw))
                bids = [other, aw] if rng.random() < 0.5 else [aw, other]
                worst = min(worst, smoothness_check(float(t), float(eta), float(mu), 1.0, bids, rw=0))
    assert worst >= -1e-9


# -- calibration and objective -------------------------------------------------------


def test_calibration_examples():
    assert calibration_feasible([1.0], [1.0], [1.0])
    assert not calibration_feasible([1.0], [1.0], [0.0])
    assert calibration_feasible([0.5], [1.0], [0.0])
    assert not calibration_feasible([0.0], [1.0], [1.0])


def test_objective_examples():
    assert rmp_objective([1.0], [1.0], [0.0]) == pytest.approx(0.5)
    assert rmp_objective([1 - 1 / E], [1.0], [1.0]) == pytest.approx(1 - 1 / E)


def test_objective_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(15):
        k = int(rng.integers(1, 4))
        T = rng.choice([0.0, 0.3, 0.6, 1.0], k, replace=False)
        lam = rng.uniform(0.2, 1.2, k)
        mu = rng.uniform(0.2, 1.5, k)
        assert brute_force_objective(lam, mu, T) == pytest.approx(rmp_objective(lam, mu, T), abs=2e-3)


def test_objective_rejects_nonpositive():
    with pytest.raises(DomainError):
        rmp_objective([0.0], [1.0], [1.0])


# -- closed forms ----------------------------------------------------------------------


def test_mu_star_examples():
    mu, lam = mu_star(1 - 1 / E, [1.0])
    assert mu[0] == pytest.approx(1.0) and lam[0] == pytest.approx(1 - 1 / E)
    for w in (0.1, 0.5, 0.9):
        mu, lam = mu_star(w, [0.0])
        assert mu[0] == 1.0 and lam[0] == 1.0


def test_mu_star_properties():
    rng = np.random.default_rng(2)
    for _ in range(50):
        T = np.unique(np.round(rng.uniform(0, 1, int(rng.integers(1, 4))), 2))
        T = T[T > 0]
        if len(T) == 0:
            continue
        w = float(rng.uniform(0.01, min(T.max(), 0.99)))
        mu, lam = mu_star(w, T)
        L = -math.log1p(-w)
        assert lam.min() == pytest.approx(w / L, rel=1e-12)
        assert np.max(mu / lam) == pytest.approx(T.max() / w, rel=1e-12)


def test_poa_rmp_lower_bound_examples():
    v, _ = poa_rmp_lower_bound([1.0], 1 - 1 / E)
    assert v == pytest.approx(min(1 - 1 / E, (1 - 1 / E) / (2 - 1 / E)))
    assert v == pytest.approx(0.3873, abs=1e-4)
    v, _ = poa_rmp_lower_bound([0.5], 0.5)
    assert v == pytest.approx(0.5)


@pytest.mark.parametrize("tmax", [0.3, 0.7, theta_threshold(), 0.85, 0.95, 1.0])
def test_poa_rmp_consistency(tmax):
    from fpa_autobid.smoothness_rmp import omega_main
    v, _ = poa_rmp_lower_bound([0.0, tmax], omega_main(tmax))
    assert 1 / v <= bound_P(tmax) + 1e-9


def test_bound_P():
    assert bound_P(0.0) == 2.0
    assert bound_P(1.0) == pytest.approx(2.1885, abs=5e-4)
    th = theta_threshold()
    assert abs(bound_P(th - 1e-8) - bound_P(th + 1e-8)) <= 1e-6


def test_claim_f():
    th = theta_threshold()
    for z in np.linspace(th + 1e-6, 1.0, 50):
        f = claim_f(z)
        assert f < z
        assert abs(f + z + math.log(1 - f)) <= 1e-9


def test_bound_Q_common():
    assert bound_Q_common(1.0) == pytest.approx(E / (E - 1), abs=1e-12)
    assert bound_Q_common(0.0) == 2.0
    assert bound_Q_common(0.3) == pytest.approx(1 - 0.7 * math.log(0.7) / 0.3)
    assert bound_Q_common(0.3) == pytest.approx(1.8322, abs=1e-4)


def test_bound_Pt_eta():
    assert bound_Pt_eta(0.0, 0.5) == 1.5
    assert bound_Pt_eta(1.0, 0.0) == pytest.approx(E / (E - 1))
    t = 0.7
    eb = pt_eta_boundary(t)
    assert eb == pytest.approx((1 - E * 0.3) / 0.7)
    first = E / (E - 1 + t * eb)
    second = 1 + ((1 - t) / t) * math.log((1 - t * eb) / (1 - t))
    assert abs(first - second) <= 1e-9
    assert bound_Pt_eta(t, eb) == pytest.approx(first, abs=1e-9)


def test_Pt_eta_at_zero_is_Q():
    for t in np.linspace(0, 1, 101):
        assert bound_Pt_eta(float(t), 0.0) == pytest.approx(bound_Q_common(float(t)), abs=1e-9)


def test_bound_Q_eta():
    assert bound_Q_eta(0.0) == pytest.approx(2.1885, abs=5e-4)
    assert bound_Q_eta(0.0) == pytest.approx(bound_P(1.0), abs=1e-9)
    assert abs(bound_Q_eta(0.999) - 1) <= 0.01
    qs = [bound_Q_eta(float(e)) for e in np.linspace(0, 0.99, 100)]
    assert all(b <= a + 1e-12 for a, b in zip(qs, qs[1:]))
    assert 1 < zeta(0.5) < 2


def test_bound_min_type():
    b = beta_threshold()
    assert bound_min_type(1.0) == pytest.approx(E / (E - 1))
    assert bound_min_type(b) == pytest.approx(1 / b ** 2, abs=1e-9)
    assert 1 / b ** 2 == pytest.approx(1.823, abs=1e-3)
    assert E / (E - 1) <= bound_min_type(0.85) <= 1 / b ** 2
    with pytest.raises(DomainError):
        bound_min_type(0.7)


# -- program search -------------------------------------------------------------------


def test_upper_bound_examples():
    assert poa_upper_bound(TypeSet([0.0]), 0.0, True).implied_poa_upper == pytest.approx(2.0, abs=1e-9)
    assert poa_upper_bound(TypeSet([0.0, 1.0]), 0.0, True).implied_poa_upper == pytest.approx(bound_P(1.0), abs=1e-6)
    assert poa_upper_bound(TypeSet([1.0]), 0.0, False).implied_poa_upper == pytest.approx(E / (E - 1), abs=1e-9)


@pytest.mark.parametrize("T", [[0.0], [1.0], [0.0, 1.0], [0.9]])
def test_upper_bound_matches_P(T):
    sol = poa_upper_bound(TypeSet(T), 0.0, True)
    assert sol.implied_poa_upper <= bound_P(max(T)) + 1e-6
    assert sol.implied_poa_upper == pytest.approx(bound_P(max(T)), abs=1e-4)


def test_upper_bound_certificate_is_feasible():
    sol = poa_upper_bound(TypeSet([0.3, 0.8]), 0.2, True)
    for t, m in zip(sol.types, sol.mu):
        assert mu_feasible(t, 0.2, m, 1e-9)
    assert calibration_feasible(sol.delta, sol.mu, sol.types, 1e-12)
    assert rmp_objective(sol.lam, sol.mu, sol.types) == pytest.approx(sol.objective)
    assert sol.to_json()["implied_poa_upper"] == pytest.approx(1 / sol.objective)


def test_upper_bound_reserves():
    assert poa_upper_bound(TypeSet([0.0, 1.0]), 0.3, False).implied_poa_upper == pytest.approx(bound_Q_eta(0.3), abs=1e-6)
    assert poa_upper_bound(TypeSet([1.0]), 0.3, False).implied_poa_upper == pytest.approx(bound_Pt_eta(1.0, 0.3), abs=1e-6)
    assert poa_upper_bound(TypeSet([0.0]), 0.4, False).implied_poa_upper == pytest.approx(1.6, abs=1e-6)


# -- curves ----------------------------------------------------------------------------


def test_curves_fig1a():
    rows = curve_rows("fig1a", 200)
    at_one = {c: v for x, v, c in rows if x == 1.0}
    assert at_one["P"] == pytest.approx(2.1885, abs=5e-4)
    assert at_one["Q"] == pytest.approx(1.58198, abs=1e-5)


def test_curves_fig1b_zero_line():
    for x, v, c in curve_rows("fig1b", 50):
        if c == "P_t=0":
            assert v == pytest.approx(2 - x)


def test_curves_q_eta_and_header():
    rows = curve_rows("q_eta", 10)
    assert rows[0][0] == 0.0 and rows[0][1] == pytest.approx(2.1885, abs=5e-4)
    assert curves_csv("q_eta", 5).splitlines()[0] == "x,value,curve"
    with pytest.raises(ValueError):
        curve_rows("fig9")


# -- lifting ---------------------------------------------------------------------------


def _random_xos_instance(rng, n=2, m=2):
    vals = [XOS(tuple(tuple(np.round(rng.uniform(0, 1, m), 2)) for _ in range(2))) for _ in range(n)]
    return make_instance(vals, sigmas=list(rng.choice([0.0, 0.5, 1.0], n)))


def test_lifting_inequality_on_verified_equilibria():
    rng = np.random.default_rng(4)
    checked = 0
    for _ in range(300):
        inst = _random_xos_instance(rng)
        dyn = best_response_dynamics(inst, step=0.05)
        if not dyn.converged:
            continue
        B = FiniteProfile.pure(dyn.final)
        if verify_mne(inst, B, DeviationSet(step=0.05)).verdict != "verified":
            continue
        lhs, rhs = lifting_check(inst, B)
        assert lhs <= rhs + 1e-9
        checked += 1
    assert checked >= 3


def test_lifting_inequality_on_correlated_profiles():
    # the per-auction inequality needs only that every item sells
    rng = np.random.default_rng(8)
    for _ in range(200):
        inst = _random_xos_instance(rng, 3, 2)
        atoms = [(np.round(rng.uniform(0, 1, (3, 2)), 2), p) for p in (0.3, 0.7)]
        lhs, rhs = lifting_check(inst, FiniteProfile(atoms))
        assert lhs <= rhs + 1e-9
