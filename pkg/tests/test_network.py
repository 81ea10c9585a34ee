"""Feeder model: ingestion, validation, radiality, minimum daily load."""

import json

import numpy as np
import pytest

from gridxpand.network import (
    FeederFormatError,
    ProfileCoverageError,
    RadialityError,
    load_feeder,
    minimum_daily_load,
    network_from_json,
    networks_equal,
    save_feeder,
)

from conftest import chain_feeder, day_map, flat, hours, rooftop_unit


def minimal_doc():
    zeros = [0.0] * 24
    load = [0.2] * 24
    return {
        "base_mva": 10.0,
        "v_ref": 1.0,
        "days": [{"label": "average", "weight": 363}],
        "buses": [
            {"id": "src", "active_load": {"average": zeros},
             "reactive_load": {"average": zeros}},
            {"id": "b1", "active_load": {"average": load},
             "reactive_load": {"average": zeros}},
        ],
        "segments": [
            {"id": "fh", "from_bus": "src", "to_bus": "b1", "resistance": 0.001,
             "reactance": 0.01,
             "kind": {"type": "feeder_head", "base_capacity_mva": 10.0}},
        ],
    }


def test_minimal_two_bus_feeder():
    net = network_from_json(minimal_doc())
    assert len(net.buses) == 2
    assert len(net.segments) == 1
    assert net.source_bus == "src"
    assert net.segment("fh").to_bus == "b1"


def test_cycle_detected_by_count():
    doc = minimal_doc()
    doc["buses"].append({"id": "b2", "active_load": {"average": [0.0] * 24},
                         "reactive_load": {"average": [0.0] * 24}})
    line = {"id": "l1", "from_bus": "b1", "to_bus": "b2", "resistance": 0.01,
            "reactance": 0.01, "kind": {"type": "fixed", "capacity_mva": 1.0}}
    doc["segments"].append(line)
    doc["segments"].append(dict(line, id="dup"))
    with pytest.raises(RadialityError, match="tree"):
        network_from_json(doc)


def test_cycle_detected_by_double_parent():
    doc = minimal_doc()
    doc["buses"].append({"id": "b2", "active_load": {"average": [0.0] * 24},
                         "reactive_load": {"average": [0.0] * 24}})
    doc["segments"].append({"id": "l1", "from_bus": "b1", "to_bus": "b2",
                            "resistance": 0.01, "reactance": 0.01,
                            "kind": {"type": "fixed", "capacity_mva": 1.0}})
    doc["segments"].append({"id": "l2", "from_bus": "src", "to_bus": "b2",
                            "resistance": 0.01, "reactance": 0.01,
                            "kind": {"type": "fixed", "capacity_mva": 1.0}})
    doc["buses"].append({"id": "b3", "active_load": {"average": [0.0] * 24},
                         "reactive_load": {"average": [0.0] * 24}})
    with pytest.raises(RadialityError, match="two incoming"):
        network_from_json(doc)


def test_disconnected_bus_named():
    # self-parented island keeps the edge count right but stays unreachable
    doc = minimal_doc()
    doc["buses"].append({"id": "island", "active_load": {"average": [0.0] * 24},
                         "reactive_load": {"average": [0.0] * 24}})
    doc["segments"].append({"id": "loop", "from_bus": "island", "to_bus": "island",
                            "resistance": 0.01, "reactance": 0.01,
                            "kind": {"type": "fixed", "capacity_mva": 1.0}})
    with pytest.raises(RadialityError, match="island"):
        network_from_json(doc)


def test_profile_gap_names_day():
    doc = minimal_doc()
    doc["days"].append({"label": "peak_load", "weight": 1})
    with pytest.raises(ProfileCoverageError, match="peak_load"):
        network_from_json(doc)


def test_parse_error_reports_line(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "base_mva": 10.0,\n broken\n}\n')
    with pytest.raises(FeederFormatError, match="line 3"):
        load_feeder(str(bad))


def test_tutorial_total_peak_load(tutorial_path, tutorial_net):
    # independent sum straight from the file document
    doc = json.load(open(tutorial_path))
    by_hand = max(
        sum(b["active_load"]["peak_load"][h] for b in doc["buses"])
        for h in range(24)
    )
    computed = max(tutorial_net.total_active_load("peak_load", h) * tutorial_net.base_mva
                   for h in range(24))
    assert computed == pytest.approx(by_hand, abs=1e-9)


def test_roundtrip_save_load(tutorial_net, tmp_path):
    p1 = tmp_path / "one.json"
    p2 = tmp_path / "two.json"
    save_feeder(tutorial_net, str(p1))
    again = load_feeder(str(p1))
    assert networks_equal(tutorial_net, again)
    save_feeder(again, str(p2))
    assert p1.read_text() == p2.read_text()


def test_orientation_depths(tutorial_net):
    depths = tutorial_net.depths()
    for seg in tutorial_net.segments:
        assert depths[seg.to_bus] == depths[seg.from_bus] + 1


def test_mdl_flat_load():
    net = chain_feeder(loads={"b2": day_map(("average",), flat(0.5))})
    assert minimum_daily_load(net, "average") == pytest.approx(5.0)


def test_mdl_rooftop_noon_dip():
    cf = hours((12, 0.0), (1, 1.0), (11, 0.0))
    net = chain_feeder(
        loads={"b2": day_map(("average",), flat(0.5))},
        solar=(rooftop_unit("b2", 0.2, {"average": cf}),),
    )
    assert minimum_daily_load(net, "average") == pytest.approx(3.0)


def test_mdl_tutorial_matches_scan(tutorial_net):
    net = tutorial_net
    netload = np.zeros(24)
    for b in net.buses:
        netload += b.active_load["average"]
    for u in net.solar_units:
        if u.role == "rooftop_existing":
            netload -= u.installed_capacity * u.capacity_factor["average"]
    assert minimum_daily_load(net, "average") == pytest.approx(
        float(netload.min()) * net.base_mva, abs=1e-12)


def test_mdl_permutation_sensitivity():
    # equals the brute-force minimum regardless of hour ordering
    rng = np.random.default_rng(5)
    prof = rng.uniform(0.1, 0.9, size=24)
    net = chain_feeder(loads={"b2": {"average": prof}})
    assert minimum_daily_load(net, "average") == pytest.approx(prof.min() * 10.0)
    shuffled = prof.copy()
    rng.shuffle(shuffled)
    net2 = chain_feeder(loads={"b2": {"average": shuffled}})
    assert minimum_daily_load(net2, "average") == pytest.approx(
        minimum_daily_load(net, "average"))


def test_keep_option_must_match_impedance():
    doc = minimal_doc()
    doc["buses"].append({"id": "b2", "active_load": {"average": [0.0] * 24},
                         "reactive_load": {"average": [0.0] * 24}})
    doc["segments"].append({
        "id": "l1", "from_bus": "b1", "to_bus": "b2", "resistance": 0.01,
        "reactance": 0.02,
        "kind": {"type": "candidate_upgrade", "options": [
            {"capacity_mva": 4.0, "resistance": 0.5, "reactance": 0.02,
             "annual_cost_per_mva": 0.0},
        ]},
    })
    with pytest.raises(FeederFormatError, match="keep-as-is"):
        network_from_json(doc)


def test_candidate_needs_exactly_one_zero_cost_option():
    doc = minimal_doc()
    doc["buses"].append({"id": "b2", "active_load": {"average": [0.0] * 24},
                         "reactive_load": {"average": [0.0] * 24}})
    doc["segments"].append({
        "id": "l1", "from_bus": "b1", "to_bus": "b2", "resistance": 0.01,
        "reactance": 0.02,
        "kind": {"type": "candidate_upgrade", "options": [
            {"capacity_mva": 4.0, "resistance": 0.01, "reactance": 0.02,
             "annual_cost_per_mva": 2.0},
        ]},
    })
    with pytest.raises(FeederFormatError, match="zero-cost"):
        network_from_json(doc)


def test_voltage_band_and_tap_invariants():
    doc = minimal_doc()
    doc["buses"][1]["vmin"] = 1.10
    with pytest.raises(FeederFormatError, match="vmin"):
        network_from_json(doc)
    doc = minimal_doc()
    doc["segments"][0]["kind"]["tap_min"] = 1.02
    doc["segments"][0]["kind"]["tap_max"] = 1.05
    with pytest.raises(FeederFormatError, match="tap"):
        network_from_json(doc)


def test_capacity_factor_range_checked():
    doc = minimal_doc()
    doc["solar"] = [{"id": "pv", "bus": "b1", "role": "rooftop_existing",
                     "installed_capacity_mw": 1.0,
                     "capacity_factor": {"average": [1.5] * 24}}]
    with pytest.raises(FeederFormatError, match="0, 1"):
        network_from_json(doc)
