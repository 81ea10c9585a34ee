"""Scenario construction, candidate screening, and the expansion loop."""

from dataclasses import replace

import pytest

from gridxpand.builder import BuildError, CandidateSet
from gridxpand.costs import default_cost_database
from gridxpand.scenarios import (
    EngineConfig,
    expansion_loop,
    make_scenario,
    promote_candidates,
    screening_flows,
    select_candidates,
    size_cs_capacity,
    storage_cs_sites,
)

from conftest import (
    NOON_CF,
    brute_force_milp,
    chain_feeder,
    cs_unit,
    day_map,
    feeder_line_upgrade,
    flat,
    hours,
    storage_unit,
)


def test_make_scenario_base_identity():
    net = chain_feeder(loads={"b2": day_map(("average",), flat(0.1))})
    scen = make_scenario(net, "base")
    assert scen.network is net
    assert scen.scale_factor == 1.0
    assert not scen.pre_existing_violation


def test_make_scenario_linear_scan_stops_before_first_violation():
    # loading hits 1.0 exactly at x2.05, so x2.1 is the first violating step
    net = chain_feeder(loads={"b2": day_map(("average",), flat(0.2))},
                       line_caps=[0.41], head_cap=2.0,
                       line_rx=[(1e-4, 1e-4)], head_rx=(1e-4, 1e-4))
    scen = make_scenario(net, "highload", step=0.1)
    assert scen.scale_factor == pytest.approx(2.0)
    assert not scen.pre_existing_violation
    # halving the step refines the factor by at most one coarse step
    fine = make_scenario(net, "highload", step=0.05)
    assert abs(fine.scale_factor - scen.scale_factor) <= 0.1 + 1e-9
    assert fine.scale_factor == pytest.approx(2.05)


def test_make_scenario_flags_pre_existing_violation():
    net = chain_feeder(loads={"b2": day_map(("average",), flat(0.5))},
                       line_caps=[0.4])
    scen = make_scenario(net, "highload")
    assert scen.pre_existing_violation
    assert scen.scale_factor == 1.0


def test_make_scenario_highpv_without_rooftop_flags_limit():
    net = chain_feeder(loads={"b2": day_map(("average",), flat(0.1))})
    scen = make_scenario(net, "highpv")
    assert scen.hit_scan_limit
    assert scen.scale_factor == 1.0


def test_make_scenario_scales_the_right_quantity():
    days = ("average",)
    from conftest import rooftop_unit
    net = chain_feeder(loads={"b2": day_map(days, flat(0.2))},
                       line_caps=[1.5], head_cap=2.0,
                       solar=(rooftop_unit("b2", 0.1, day_map(days, NOON_CF)),))
    hl = make_scenario(net, "highload", step=0.5, max_iter=2)
    assert hl.network.bus("b2").active_load["average"][0] == pytest.approx(
        0.2 * hl.scale_factor)
    assert hl.network.rooftop_units()[0].installed_capacity == pytest.approx(0.1)
    hp = make_scenario(net, "highpv", step=0.5, max_iter=2)
    assert hp.network.rooftop_units()[0].installed_capacity == pytest.approx(
        0.1 * hp.scale_factor)
    assert hp.network.bus("b2").active_load["average"][0] == pytest.approx(0.2)


def test_select_candidates_threshold_rule():
    net = chain_feeder(loads={"b2": day_map(("average",), flat(0.38))},
                       line_caps=[0.4], head_cap=2.0,
                       line_rx=[(1e-3, 1e-3)], head_rx=(1e-3, 1e-3))
    cand = select_candidates(net, screening_flows(net))
    assert cand.reconductor_segments == ("l1",)  # loading 0.95
    assert not cand.feeder_head_upgrade  # head at 0.19


def test_select_candidates_quiet_feeder_keeps_only_sites():
    net = chain_feeder(n_load_buses=3,
                       loads={"b4": day_map(("average",), flat(0.05))},
                       line_caps=[0.4, 0.4, 0.4])
    cand = select_candidates(net, screening_flows(net))
    assert cand.reconductor_segments == ()
    assert cand.vr_sites == ()
    assert not cand.feeder_head_upgrade
    assert cand.storage_sites == ("b1", "b2", "b4")
    assert cand.cs_sites == cand.storage_sites


def test_select_candidates_voltage_margin_flags_adjacent_segments():
    # drop of ~0.18 in squared volts puts b2 within 0.01 pu of the floor
    # under the boosted screening pass
    net = chain_feeder(n_load_buses=2,
                       loads={"b2": day_map(("average",), flat(0.3))},
                       line_caps=[0.5, 0.5], line_rx=[(0.34, 0.02), (0.01, 0.01)],
                       head_rx=(1e-3, 1e-3), head_cap=2.0)
    flows = screening_flows(net)
    v_b2 = min(f.voltage("b2") for f in flows if f.tap_rule == "peak")
    assert 0.95 - 0.01 < v_b2 < 0.96  # near the floor, not violating
    cand = select_candidates(net, screening_flows(net))
    assert set(cand.vr_sites) == {"l1", "l2"}  # parent and child of b2


def test_storage_sites_head_median_deepest():
    net = chain_feeder(n_load_buses=3,
                       loads={"b4": day_map(("average",), flat(0.05))})
    assert storage_cs_sites(net) == ("b1", "b2", "b4")


def test_size_cs_capacity_prefers_file_value():
    net = chain_feeder(loads={"b2": day_map(("average",), flat(0.2))},
                       cs_capacity_mw=1.5)
    assert size_cs_capacity(net) == pytest.approx(0.15)
    net2 = chain_feeder(loads={"b2": day_map(("average",), flat(0.2))})
    assert size_cs_capacity(net2) == pytest.approx(0.2)  # MDL fallback


def test_promotion_creates_missing_units():
    db = default_cost_database()
    days = ("average",)
    net = chain_feeder(loads={"b2": day_map(days, flat(0.2))},
                       solar=(cs_unit("b2", day_map(days, NOON_CF), invest_cap=0.5),))
    cand = CandidateSet(storage_sites=("b1", "b2"), cs_sites=("b1", "b2"))
    out = promote_candidates(net, cand, db, with_cs=True, cs_capacity=0.2)
    assert {u.bus for u in out.storage_units} == {"b1", "b2"}
    assert {u.bus for u in out.cs_units()} == {"b1", "b2"}
    for u in out.storage_units:
        assert u.duration == db.bess.duration_h
        assert u.annual_cost_per_mw == pytest.approx(db.bess_annual_cost_per_mw())


def test_expansion_loop_clean_feeder_invests_nothing():
    net = chain_feeder(loads={"b2": day_map(("average",), flat(0.1))})
    result = expansion_loop(net, make_scenario(net, "base"), with_cs=False,
                            config=EngineConfig(solver_gap=0.0))
    assert result.status == "resolved"
    assert result.iterations == 1
    assert result.decisions.investment_cost == pytest.approx(0.0, abs=1e-9)
    assert result.residual_slack_mwh == pytest.approx(0.0, abs=1e-9)
    sol, cand, iters = result  # iterates as the documented triple
    assert iters == 1


def test_expansion_loop_single_reconductoring_matches_brute_force():
    net, cand, kw = feeder_line_upgrade()
    cfg = EngineConfig(solver_gap=0.0)
    result = expansion_loop(net, make_scenario(net, "base"), with_cs=False, config=cfg)
    assert result.status == "resolved"
    assert result.iterations <= 2
    assert result.decisions.line_options["l1"][0] == 1  # the upgrade, not keep
    brute, _ = brute_force_milp(result.model)
    assert result.solution.objective == pytest.approx(brute, rel=1e-6)
    assert result.verification_residual <= 1e-6
    assert result.verification_violations == ()


def test_expansion_loop_exhaustion_reports_unresolved():
    net = chain_feeder(loads={"b2": day_map(("average",), flat(3.0))},
                       head_cap=0.8, head_upgrade=0.1, head_cost=16_263.0,
                       line_caps=[0.5])
    net = replace(net, kv_base=12.47)
    seg = net.segment("l1")
    object.__setattr__(seg, "length_miles", 1.0)
    object.__setattr__(seg, "placement", "rural-OH")
    cfg = EngineConfig(solver_gap=0.0, storage_invest_cap_mw=1.0, max_rounds=6)
    initial = select_candidates(net, screening_flows(net), cfg)
    result = expansion_loop(net, make_scenario(net, "base"), with_cs=False, config=cfg)
    assert result.status == "unresolved"
    assert result.residual_slack_mwh > 1.0
    assert not result.solution.resolved
    assert initial.issubset(result.candidates)  # candidates only ever grow


def test_cs_sizing_is_fixed_across_scenarios():
    days = ("average",)
    net = chain_feeder(
        loads={"b2": day_map(days, hours((12, 0.2), (12, 0.3)))},
        line_caps=[1.0], head_cap=2.0,
        storage=(storage_unit("b1"), storage_unit("b2")),
        solar=(cs_unit("b1", day_map(days, NOON_CF)),
               cs_unit("b2", day_map(days, NOON_CF))),
        curtail_price=25.0,
    )
    base_run = expansion_loop(net, make_scenario(net, "base"), with_cs=True)
    hl_run = expansion_loop(net, make_scenario(net, "highload", step=0.5, max_iter=1),
                            with_cs=True)
    rhs_base = [c.rhs for c in base_run.model.constraints if c.tag == "Eq32"]
    rhs_hl = [c.rhs for c in hl_run.model.constraints if c.tag == "Eq32"]
    assert rhs_base == rhs_hl == [pytest.approx(0.2)]


def test_expansion_loop_rejects_zero_capacity_cs():
    net = chain_feeder(loads={"b2": day_map(("average",), flat(0.0))})
    with pytest.raises(BuildError, match="zero"):
        expansion_loop(net, make_scenario(net, "base"), with_cs=True)
