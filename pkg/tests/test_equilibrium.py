import itertools
import math

import numpy as np
import pytest

from fpa_autobid import constructions
from fpa_autobid.auction_core import INF, AuctionTieRule, Outcome, TieBreakRule, make_instance
from fpa_autobid.bid_profiles import FiniteComponent, FiniteProfile, ProductProfile, marginal_excluding
from fpa_autobid.equilibrium import (INCONCLUSIVE, REFUTED, VERIFIED, DeviationSet, best_response_dynamics,
                                     check_feasible, expected_gain_deviation, gain, h_deviation,
                                     lw_lower_bound_check, verify_ce_finite, verify_cce, verify_mne,
                                     well_supported)
from fpa_autobid.special_math import lambert_w0

E = math.e
A1 = -lambert_w0(-math.exp(-2.0))


def outcome(alloc, pay):
    return Outcome(tuple(alloc), np.array(pay, dtype=float))


# -- gains and constraints ---------------------------------------------------


@pytest.mark.parametrize("sigma,pay,expected", [(0.0, 5.0, 1.0), (1.0, 0.4, 0.6), (0.3, 1.0, 0.7)])
def test_gain(sigma, pay, expected):
    inst = make_instance([[1.0]], sigmas=[sigma])
    assert gain(inst, 0, outcome([0], [[pay]])) == pytest.approx(expected)


def test_zero_bids_slack():
    # positive reserves: nothing sells, slacks are (0, budget)
    inst = make_instance([[1.0, 1.0], [0.0, 1.0]], budgets=[1.0, INF], reserves=[0.1, 0.1])
    rep = check_feasible(inst, FiniteProfile.pure(np.zeros((2, 2))))
    assert list(rep.roi_slack) == [0.0, 0.0]
    assert rep.budget_slack[0] == 1.0 and math.isinf(rep.budget_slack[1])
    assert rep.feasible()


def test_zero_bids_free_items():
    # zero reserves: ties hand out items at price 0, ROI slack is the won value
    inst = make_instance([[1.0, 1.0], [0.0, 1.0]], budgets=[1.0, INF])
    rep = check_feasible(inst, FiniteProfile.pure(np.zeros((2, 2))))
    assert list(rep.roi_slack) == [2.0, 0.0]
    assert rep.budget_slack[0] == 1.0


def test_commontype_budget_binds():
    inst, B, _ = constructions.build("budget_commontype", {"t": 1.0})
    rep = check_feasible(inst, B)
    assert rep.budget_slack[0] == pytest.approx(0.0, abs=1e-12)
    assert rep.feasible()


def test_overbid_violates_roi():
    inst = make_instance([[0.4], [0.0]])
    rep = check_feasible(inst, FiniteProfile.pure([[0.8], [0.0]]))
    assert rep.roi_slack[0] == pytest.approx(-0.4)
    assert not rep.feasible()


# -- deviations ----------------------------------------------------------------


def test_zero_deviation_never_wins():
    inst, B, _ = constructions.build("cce_not_well_supported", {"r": 0.2})
    assert expected_gain_deviation(inst, 0, [0.0], marginal_excluding(B, 0)) == 0.0
    inst = make_instance([[1.0, 1.0], [1.0, 1.0]], tiebreak=TieBreakRule((AuctionTieRule((1, 0)),) * 2))
    B = ProductProfile([FiniteComponent.pure([0.3, 0.3]), FiniteComponent.pure([0.0, 0.0])])
    assert expected_gain_deviation(inst, 1, [0.0, 0.0], marginal_excluding(B, 1)) == 0.0


@pytest.mark.parametrize("r", [0.0, 0.2, 0.5])
def test_reserve_plateau(r):
    inst, B, _ = constructions.build("cce_not_well_supported", {"r": r} if r > 0 else {"r": 1e-9})
    M = marginal_excluding(B, 0)
    r = inst.reserves[0]
    for b in np.linspace(r, (E - 1 + r) / E, 7):
        assert expected_gain_deviation(inst, 0, [b], M) == pytest.approx((1 - r) / E, abs=1e-9)
    # above the plateau the gain drops
    assert expected_gain_deviation(inst, 0, [(E - 1 + r) / E + 0.05], M) < (1 - r) / E


def test_commontype_plateau():
    inst, B, _ = constructions.build("budget_commontype", {"t": 1.0})
    M = marginal_excluding(B, 0)
    for b in np.linspace(0.0, 1 - A1, 9)[1:]:
        assert expected_gain_deviation(inst, 0, [0.0, b], M) == pytest.approx(1 + A1, abs=1e-9)
    # at b = 0 the tie on item 2 goes to agent 2, so only item 1 is won
    assert expected_gain_deviation(inst, 0, [0.0, 0.0], M) == pytest.approx(1.0, abs=1e-12)
    assert expected_gain_deviation(inst, 0, [0.0, 1e-8], M) == pytest.approx(1 + A1, abs=1e-7)


# -- CCE -----------------------------------------------------------------------


def test_cce_not_well_supported_verified():
    inst, B, _ = constructions.build("cce_not_well_supported", {"r": 0.2})
    rep = verify_cce(inst, B, DeviationSet(step=0.01))
    assert rep.verdict == VERIFIED
    assert rep.sufficient_cce
    assert rep.epsilon <= 1e-9
    assert not rep.well_supported


def test_universal_budget_verified():
    inst, B, _ = constructions.build("universal_budget")
    rep = verify_cce(inst, B)
    assert rep.verdict == VERIFIED
    assert rep.ratio == 2.0
    # unconstrained deviations gain, constrained mixtures do not
    assert rep.method == "constrained_mixture_lp"
    assert np.all(rep.constrained_dev_gain <= rep.eq_gain + 1e-7)


def test_underbid_refuted():
    rule = TieBreakRule((AuctionTieRule((1, 0)),))
    inst = make_instance([[1.0], [0.0]], tiebreak=rule)
    rep = verify_cce(inst, FiniteProfile.pure([[0.0], [0.0]]))
    assert rep.verdict == REFUTED
    assert rep.witness["agent"] == 0
    assert rep.witness["gain"] > rep.witness["eq_gain"]


def test_infeasible_profile_refuted():
    inst = make_instance([[0.4], [0.0]])
    rep = verify_cce(inst, FiniteProfile.pure([[0.8], [0.0]]))
    assert rep.verdict == REFUTED
    assert rep.method == "feasibility"


def test_truncated_search_is_inconclusive():
    inst, B, _ = constructions.build("universal_budget")
    rep = verify_cce(inst, B, DeviationSet(max_candidates=2))
    assert rep.verdict == INCONCLUSIVE


def _confirm(inst, i, B, mixture):
    """Independent recomputation of a mixture witness: gain and aggregate constraints."""
    M = marginal_excluding(B, i)
    from fpa_autobid.bid_profiles import deviation_stats
    val = pay = 0.0
    for part in mixture:
        s = deviation_stats(inst, i, np.array(part["bid"]), M)
        val += part["prob"] * s.value[i]
        pay += part["prob"] * s.payment[i]
    return val - inst.sigmas[i] * pay, pay <= inst.taus[i] * val + 1e-9 and pay <= inst.budgets[i] + 1e-9


def test_refutations_are_reconfirmed():
    rng = np.random.default_rng(0)
    seen = 0
    for _ in range(40):
        inst = make_instance([rng.uniform(0, 1, 2) for _ in range(2)], sigmas=list(rng.choice([0.0, 1.0], 2)))
        B = FiniteProfile.pure(np.round(rng.uniform(0, 1, (2, 2)) * 0.5, 2))
        rep = verify_cce(inst, B, DeviationSet(step=0.05))
        if rep.verdict == REFUTED and rep.witness is not None:
            seen += 1
            g, ok = _confirm(inst, rep.witness["agent"], B, rep.witness["mixture"])
            assert ok
            assert g > rep.witness["eq_gain"] + 1e-7
    assert seen > 5


# -- MNE -----------------------------------------------------------------------


def test_hybrid_mne():
    inst, B, _ = constructions.build("budgetfree_hybrid", {"t": 1.0})
    assert verify_mne(inst, B).verdict == VERIFIED


def test_submod_mne():
    inst, B, _ = constructions.build("submod_mne", {"eps": 0.01})
    rep = verify_mne(inst, B)
    assert rep.verdict == VERIFIED
    assert not rep.well_supported
    assert rep.unsold[1] == 1.0


def test_pne_refuted_as_mne_by_mixture():
    # pure deviations cannot help agent 1, a 50/50 mixture can
    inst = make_instance([[0.5, 0.3], [0.7, 0.0]], sigmas=[0.0, 0.0])
    B = FiniteProfile.pure([[0.0, 0.2], [0.7, 0.2]])
    rep = verify_mne(inst, B, DeviationSet(step=0.1))
    assert rep.verdict == REFUTED
    assert rep.method == "constrained_mixture_lp"
    w = rep.witness
    assert w["agent"] == 0
    assert w["gain"] == pytest.approx(0.55)
    assert len(w["mixture"]) == 2
    # every single pure deviation winning item i alone is infeasible
    for b in (0.7, 0.8):
        dev = np.array([b, 0.2])
        from fpa_autobid.bid_profiles import deviation_stats
        s = deviation_stats(inst, 0, dev, marginal_excluding(B, 0))
        assert s.payment[0] > s.value[0]


def test_mne_rejects_correlated():
    inst = make_instance([[1.0], [1.0]])
    B = FiniteProfile([([[0.1], [0.2]], 0.5), ([[0.2], [0.1]], 0.5)])
    with pytest.raises(TypeError):
        verify_mne(inst, B)


# -- CE ------------------------------------------------------------------------


def test_ce_contains_mne():
    inst, B, _ = constructions.build("reserve_valuemax")
    assert verify_mne(inst, B).verdict == VERIFIED
    rep = verify_ce_finite(inst, B)
    assert rep.verdict == VERIFIED


def test_ce_aggregate_roi_swap():
    inst = make_instance([[0.2, 0.5], [0.2, 0.0]], sigmas=[0.0, 0.0])
    B = FiniteProfile([([[0.0, 0.7], [0.2, 0.7]], 0.5), ([[0.2, 0.3], [0.2, 0.3]], 0.5)])
    assert check_feasible(inst, B).feasible()
    rep = verify_ce_finite(inst, B, DeviationSet(step=0.1))
    assert rep.verdict == REFUTED
    assert rep.witness["recommendation"] == [0.0, 0.7]
    assert rep.witness["swap_to"][0] == pytest.approx(0.2)
    # the swapped atom alone overpays, the full support does not
    assert 0.2 + 0.7 > 0.2 + 0.5


def test_ce_single_atom_reduces_to_pure():
    inst = make_instance([[1.0, 0.3], [0.6, 0.5]])
    for b in ([[0.6, 0.0], [0.6, 0.0]], [[0.3, 0.0], [0.6, 0.0]]):
        B = FiniteProfile.pure(b)
        assert verify_ce_finite(inst, B).verdict == verify_cce(inst, B).verdict


def test_h_deviation():
    inst = make_instance([[1.0, 1.0]], reserves=[0.3, 0.0])
    assert np.array_equal(h_deviation(inst, [0.1, 0.2]), [0.3, 0.2])


def test_not_well_supported_ce_refuted():
    # budget-free additive, finite profiles leaving an item unsold that someone values above the reserve
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(40):
        n, m = 2, 2
        vals = np.round(rng.uniform(0.3, 1, (n, m)), 2)
        r = np.round(rng.uniform(0.05, 0.25, m), 2)
        inst = make_instance(vals.tolist(), reserves=list(r), sigmas=list(rng.choice([0.0, 0.5, 1.0], n)))
        atoms = [(np.round(rng.uniform(0, 1, (n, m)) * vals, 2), 0.5) for _ in range(2)]
        atoms[0][0][:, 0] = np.minimum(atoms[0][0][:, 0], r[0] / 2)
        B = FiniteProfile(atoms)
        ws, _ = well_supported(inst, B)
        if ws or not check_feasible(inst, B).feasible():
            continue
        checked += 1
        assert verify_ce_finite(inst, B, DeviationSet(step=0.05)).verdict == REFUTED
    assert checked >= 10


# -- well-supportedness ----------------------------------------------------------


def test_zero_reserves_well_supported():
    inst = make_instance([[1.0], [0.5]])
    ws, unsold = well_supported(inst, FiniteProfile.pure([[0.0], [0.0]]))
    assert ws and unsold[0] == 0.0


def test_reserve_cce_not_well_supported():
    r = 0.2
    inst, B, _ = constructions.build("cce_not_well_supported", {"r": r})
    ws, unsold = well_supported(inst, B)
    assert not ws
    assert unsold[0] == pytest.approx(B.X.cdf(r), abs=1e-12)
    assert unsold[0] == pytest.approx(1 / E, abs=1e-12)


def test_submod_unsold():
    inst, B, _ = constructions.build("submod_mne")
    ws, unsold = well_supported(inst, B)
    assert not ws and unsold[1] == 1.0


# -- dynamics ------------------------------------------------------------------


def test_dynamics_single_agent():
    res = best_response_dynamics(make_instance([[1.0]]), step=0.1)
    assert res.converged
    assert res.final[0, 0] == 0.0


def test_dynamics_equal_values_recorded():
    inst = make_instance([[1.0], [1.0]])
    res = best_response_dynamics(inst, step=0.1, max_rounds=60)
    assert res.converged or res.cycle or res.rounds == 60
    if res.converged:
        top = res.final.max()
        assert top >= 1.0 - 0.1 - 1e-9


def test_dynamics_universal_budget_fixed_point():
    inst, B, _ = constructions.build("universal_budget")
    b = B.atoms[0][0]
    res = best_response_dynamics(inst, step=0.05, init=b)
    assert res.converged and res.rounds == 1
    assert np.array_equal(res.final, b)


def test_dynamics_deterministic():
    inst = make_instance([[0.8, 0.3], [0.5, 0.6]], sigmas=[1.0, 0.0])
    a = best_response_dynamics(inst, seed=3)
    b = best_response_dynamics(inst, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a.trajectory, b.trajectory))


# -- liquid welfare lower bound ------------------------------------------------------


def test_lw_bound_delta_zero():
    inst, B, _ = constructions.build("budget_commontype", {"t": 1.0})
    res = lw_lower_bound_check(inst, B, 0, [0.0, 0.0], 0.0)
    assert res.residual == pytest.approx(res.lhs - res.payment)
    assert res.residual >= -1e-12


def test_lw_bound_delta_one_on_mne():
    inst, B, _ = constructions.build("submod_mne")
    for i in range(2):
        res = lw_lower_bound_check(inst, B, i, B.atoms[0][0][i], 1.0)
        assert res.residual >= -1e-9


def test_lw_bound_commontype_half():
    inst, B, _ = constructions.build("budget_commontype", {"t": 1.0})
    assert lw_lower_bound_check(inst, B, 0, [0.0, 0.0], 0.5).residual >= -1e-9


def test_lw_bound_delta_range():
    inst, B, _ = constructions.build("universal_budget")
    with pytest.raises(ValueError):
        lw_lower_bound_check(inst, B, 0, [0.0, 0.0], 1.5)


@pytest.mark.parametrize("name", constructions.names())
def test_lw_bound_sweep(name):
    inst, B, _ = constructions.build(name)
    for i in range(inst.n):
        cands, _ = DeviationSet(step=0.05).candidates(inst, i, marginal_excluding(B, i).cells())
        devs = [np.zeros(inst.m)] + [np.array(c) for c in itertools.product(*[c[::max(1, len(c) // 6)] for c in cands])]
        for d in devs:
            for delta in (0.0, 0.25, 0.5, 0.75, 1.0):
                res = lw_lower_bound_check(inst, B, i, d, delta)
                if res.deviation_feasible:
                    assert res.residual >= -1e-9


def test_report_json():
    inst, B, _ = constructions.build("universal_budget")
    d = verify_cce(inst, B).to_json()
    assert d["verdict"] == VERIFIED and d["ratio"] == 2.0
    assert isinstance(d["eq_gain"], list)
