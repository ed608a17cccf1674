import math

import pytest

from fpa_autobid import constructions
from fpa_autobid.auction_core import liquid_welfare, optimal_allocation
from fpa_autobid.bid_profiles import expected_outcome_stats
from fpa_autobid.smoothness_rmp import bound_P
from fpa_autobid.special_math import DomainError, lambert_w0, theta_threshold

E = math.e


def test_registry_names():
    assert set(constructions.names()) == {
        "universal_budget", "budget_commontype", "budgetfree_hybrid", "reserve_valuemax", "reserve_hightype",
        "cce_not_well_supported", "submod_mne"}
    with pytest.raises(KeyError):
        constructions.get("nope")


@pytest.mark.parametrize("name", constructions.names())
def test_default_parameters_verify(name):
    rep = constructions.verify(name, tol=1e-7)
    assert rep.feasible
    assert rep.verdict == "verified", rep.notes
    assert rep.ratio_error <= 1e-6
    assert rep.ratio >= rep.claimed_ratio - 1e-6
    assert rep.well_supported == rep.well_supported_claim
    assert rep.ok


@pytest.mark.parametrize("name", constructions.names())
def test_ratio_recomputed_from_stats(name):
    # OPT / LW from the outcome statistics, bypassing the verifier
    inst, B, claimed = constructions.build(name)
    st = expected_outcome_stats(inst, B)
    lw = sum(min(inst.taus[i] * st.value[i], inst.budgets[i]) for i in range(inst.n))
    opt = optimal_allocation(inst)[1]
    assert opt / lw == pytest.approx(claimed, abs=1e-6)


def test_universal_budget_instance():
    inst, B, ratio = constructions.build("universal_budget")
    assert ratio == 2.0
    assert inst.budgets[0] == 1.0 and math.isinf(inst.budgets[1])
    assert liquid_welfare(inst, B) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("t", [0.85, 0.95, 1.0])
def test_commontype_tight_against_P(t):
    rep = constructions.verify("budget_commontype", {"t": t})
    assert rep.verdict == "verified"
    assert bound_P(t) - rep.ratio <= 1e-4
    assert rep.ratio <= bound_P(t) + 1e-9
    assert rep.upper_bound == pytest.approx(bound_P(t), abs=1e-12)


def test_commontype_at_one():
    rep = constructions.verify("budget_commontype", {"t": 1.0})
    assert rep.ratio == pytest.approx(2.1885, abs=1e-4)
    assert rep.ratio == pytest.approx(bound_P(1.0), abs=1e-6)


def test_commontype_suboptimal_a_still_verifies():
    rep = constructions.verify("budget_commontype", {"t": 1.0, "a": 0.3})
    assert rep.verdict == "verified"
    assert rep.upper_bound is None
    assert rep.ratio < bound_P(1.0)


@pytest.mark.parametrize("params", [{"t": theta_threshold() - 0.01}, {"t": 1.0, "a": 0.5}, {"t": 0.9, "a": 0.05}])
def test_commontype_rejects_out_of_range(params):
    with pytest.raises(DomainError):
        constructions.build("budget_commontype", params)


@pytest.mark.parametrize("t", [0.5, 0.9, 1.0])
def test_budgetfree_hybrid(t):
    rep = constructions.verify("budgetfree_hybrid", {"t": t})
    assert rep.verdict == "verified"
    assert rep.ratio == pytest.approx(bound_P(t), abs=1e-4)


@pytest.mark.parametrize("eta", [0.0, 0.3, 0.6])
def test_reserve_valuemax(eta):
    rep = constructions.verify("reserve_valuemax", {"eta": eta})
    assert rep.verdict == "verified"
    assert rep.ratio == pytest.approx(2 - eta, abs=1e-6)
    assert rep.eta == pytest.approx(eta, abs=1e-12)


def test_reserve_valuemax_rejects_eps():
    with pytest.raises(DomainError):
        constructions.build("reserve_valuemax", {"eta": 0.5, "eps": 0.6})


@pytest.mark.parametrize("t,eta", [(1.0, 0.0), (1.0, 0.2), (1.0, 0.5), (0.9, 0.1)])
def test_reserve_hightype(t, eta):
    rep = constructions.verify("reserve_hightype", {"t": t, "eta": eta})
    assert rep.verdict == "verified"
    assert rep.ratio == pytest.approx(E / (E - 1 + eta), abs=1e-6)


def test_reserve_hightype_eta_ceiling():
    t = 0.9
    cap = (1 - E * (1 - t)) / t
    constructions.build("reserve_hightype", {"t": t, "eta": cap})
    with pytest.raises(DomainError):
        constructions.build("reserve_hightype", {"t": t, "eta": cap + 1e-3})


def test_cce_not_well_supported():
    rep = constructions.verify("cce_not_well_supported", {"r": 0.2})
    assert rep.verdict == "verified"
    assert rep.equilibrium_class == "CCE"
    assert not rep.well_supported
    assert rep.ratio == pytest.approx(E / (E - 1), abs=1e-9)


def test_submod_mne():
    rep = constructions.verify("submod_mne", {"eps": 0.01})
    assert rep.verdict == "verified"
    assert not rep.well_supported
    assert rep.ratio == pytest.approx(100.5, abs=1e-9)


def test_report_json():
    d = constructions.verify("universal_budget").to_json()
    assert d["ok"] is True and d["name"] == "universal_budget"


class TestClaimDomain:
    def test_t_one(self):
        r = constructions.claim_domain_check(1.0)
        assert r.a_star == pytest.approx(0.1586, abs=1e-4)
        assert r.a_star == pytest.approx(-lambert_w0(-math.exp(-2)), abs=1e-15)
        assert r.in_domain and 0 < r.a_star <= 1 / E

    def test_identity_residual(self):
        r = constructions.claim_domain_check(0.9)
        assert r.ratio_identity_residual <= 1e-9
        assert r.in_domain

    def test_near_threshold(self):
        r = constructions.claim_domain_check(theta_threshold() + 1e-6)
        assert r.margin > 0
        assert r.in_domain

    def test_below_threshold(self):
        with pytest.raises(DomainError):
            constructions.claim_domain_check(theta_threshold() - 1e-3)
