import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alcc.data import SyntheticProfileSpec, generate_synthetic_pv, synthetic_population
from alcc.ddpg import DdpgConfig, make_agent
from alcc.environment import EnvConfig, profile_accels
from alcc.evaluation import (
    DriverRecord,
    EvalSetup,
    ScriptedController,
    _build_report,
    compare_scenarios,
    compare_strategies,
    evaluate_policy,
    format_summary,
    generalization_suite,
    improvement_percent,
    summarize,
    write_report_table,
)
from alcc.vehicle import EnergyCoefficients, trip_energy

POP = synthetic_population(n=200, seed=1)
PV = generate_synthetic_pv(SyntheticProfileSpec(seed=21))
DRIVERS = POP.drivers()[:12]


def setup(noise=True):
    return EvalSetup(EnvConfig(), POP, noise=noise)


def pv_replay(mode="reference", pv=PV):
    acc = profile_accels(pv, 300, 0.1)
    return ScriptedController(mode, lambda obs, k: acc[k])


def gentle(mode="reference"):
    # Closes the PV gap a little while staying collision free.
    return ScriptedController(mode, lambda obs, k: 0.3 * obs[2 if mode == "reference" else 3])


def test_improvement_formula():
    assert improvement_percent(200.0, 150.0) == 25.0
    assert improvement_percent(100.0, 110.0) == pytest.approx(-10.0)


def test_reference_cav_energy_is_identical_across_drivers_without_noise():
    agent = make_agent("reference", DdpgConfig(hidden=(16, 8)), seed=3)
    recs = evaluate_policy(agent, DRIVERS, PV, setup(noise=False), mode="reference")
    assert len({r.cav_energy for r in recs}) == 1
    assert len({r.hdv_energy for r in recs}) > 1


def test_pv_replay_costs_the_pv_trip_energy():
    recs = evaluate_policy(pv_replay(), DRIVERS[:3], PV, setup())
    pv_energy = trip_energy(EnergyCoefficients(), PV[:300], profile_accels(PV, 300, 0.1), 0.1)
    for r in recs:
        assert r.cav_energy == pytest.approx(pv_energy, rel=1e-9)


def test_same_seed_same_records_and_worker_independence():
    agent = make_agent("proposed", DdpgConfig(hidden=(16, 8)), seed=2)
    a = evaluate_policy(agent, DRIVERS, PV, setup(), seed=5)
    b = evaluate_policy(agent, DRIVERS, PV, setup(), seed=5)
    c = evaluate_policy(agent, DRIVERS, PV, setup(), seed=5, workers=2)
    d = evaluate_policy(agent, DRIVERS, PV, setup(), seed=6)
    assert a == b == c
    assert a != d


def test_mode_mismatch_rejected():
    with pytest.raises(ValueError):
        evaluate_policy(gentle("reference"), DRIVERS, PV, setup(), mode="proposed")


def test_replaying_pv_with_equal_spacing_matches_direct_following():
    rep = compare_scenarios(pv_replay("proposed"), DRIVERS, PV, setup(), seed=1, match_initial_gap=True)
    a = rep.records["scenario_A"]
    b = rep.records["scenario_B"]
    for ra, rb in zip(a, b):
        assert ra.hdv_energy == pytest.approx(rb.hdv_energy, rel=1e-9)
    assert max(abs(v) for v in rep.improvements.values()) < 1e-6


def test_scenario_b_defaults_to_driver_equilibrium_gap():
    default = compare_scenarios(pv_replay("proposed"), DRIVERS[:4], PV, setup(noise=False))
    matched = compare_scenarios(pv_replay("proposed"), DRIVERS[:4], PV, setup(noise=False), match_initial_gap=True)
    assert [r.hdv_energy for r in default.records["scenario_B"]] != [r.hdv_energy for r in matched.records["scenario_B"]]


def test_empty_driver_list_gives_empty_report():
    rep = compare_scenarios(gentle("proposed"), [], PV, setup())
    assert rep.records == {"scenario_B": [], "scenario_A": []}
    s = rep.summary
    assert s.count == 0 and s.excluded_collisions == 0
    assert "no comparable drivers" in format_summary(rep)


def test_policy_against_itself_improves_by_zero():
    c = gentle()
    rep = compare_strategies(c, c, DRIVERS, PV, setup(), seed=3)
    assert set(rep.improvements.values()) == {0.0}


def test_energy_closure_and_summary_consistency():
    rep = compare_strategies(gentle("proposed"), pv_replay(), DRIVERS, PV, setup(), seed=2)
    for recs in rep.records.values():
        for r in recs:
            assert r.total_energy == r.cav_energy + r.hdv_energy
    assert len(rep.records["proposed"]) == len(rep.records["reference"])
    recomputed = [
        improvement_percent(b.total_energy, c.total_energy)
        for b, c in zip(rep.records["reference"], rep.records["proposed"])
    ]
    s = rep.summary
    assert s.mean == pytest.approx(np.mean(recomputed))
    assert s.minimum == min(recomputed) and s.maximum == max(recomputed)
    assert s.positive_fraction == pytest.approx(np.mean(np.array(recomputed) > 0))


def test_collisions_are_excluded_and_counted():
    crash = ScriptedController("reference", lambda obs, k: 3.0)
    rep = compare_strategies(gentle("proposed"), crash, DRIVERS[:3], PV, setup())
    assert all(r.collided for r in rep.records["reference"])
    assert rep.summary.excluded_collisions == 3 and rep.summary.count == 0
    assert np.isnan(rep.mean_energy("reference", "total_energy"))


def test_generalization_suite_needs_two_profiles():
    c = gentle()
    with pytest.raises(ValueError):
        generalization_suite(c, c, DRIVERS, [PV], setup())
    held = [generate_synthetic_pv(SyntheticProfileSpec(seed=s)) for s in (31, 32)]
    reps = generalization_suite(gentle("proposed"), c, DRIVERS[:3], held, setup())
    assert [r.label for r in reps] == ["profile_0", "profile_1"]


def test_training_profile_as_control_matches_direct_comparison():
    p, r = gentle("proposed"), pv_replay()
    direct = compare_strategies(p, r, DRIVERS[:4], PV, setup(), seed=9)
    suite = generalization_suite(p, r, DRIVERS[:4], [PV, PV], setup(), seed=9)
    assert suite[0].improvements == direct.improvements


def test_summary_and_table_output(tmp_path):
    rep = compare_strategies(gentle("proposed"), pv_replay(), DRIVERS, PV, setup(), label="demo")
    text = format_summary(rep)
    for row in ("most improvement", "least improvement", "mean"):
        assert row in text
    write_report_table(rep, tmp_path / "t.csv")
    write_report_table(rep, tmp_path / "t.csv", append=True)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("report,condition,driver")
    assert len(lines) == 1 + 2 * 2 * len(DRIVERS)


@settings(max_examples=30)
@given(
    base=st.lists(st.floats(1.0, 1e5), min_size=1, max_size=20),
    ratio=st.floats(0.5, 1.5),
)
def test_summary_fractions_are_consistent(base, ratio):
    b = [DriverRecord(i, 25.0, 1.2, 0.0, x) for i, x in enumerate(base)]
    c = [DriverRecord(i, 25.0, 1.2, 0.0, x * ratio) for i, x in enumerate(base)]
    s = summarize(_build_report("ref", b, "prop", c, "hdv"))
    assert s.count == len(base)
    assert s.positive_fraction + s.negative_fraction <= 1.0 + 1e-12
    assert s.minimum <= s.mean <= s.maximum
