import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lemclear.io_cli import bundled_scenario_dir, load_scenario
from lemclear.model import (
    Bus,
    Line,
    NetworkModel,
    RawScenario,
    Scenario,
    from_per_unit,
    reactive_from_pf,
    to_per_unit,
    validate_network,
)


def two_bus(pcc=(True, False), lines=None):
    return NetworkModel(
        buses=(Bus(1, 0.9, 1.1, pcc[0]), Bus(2, 0.9, 1.1, pcc[1])),
        lines=lines if lines is not None else (Line(1, 2, 0.01, 0.02, 1.0),),
    )


class TestValidateNetwork:
    def test_minimal_radial_feeder_passes(self):
        assert validate_network(two_bus()).ok

    def test_triangle_fails_with_cycle(self):
        net = NetworkModel(
            buses=(Bus(1, is_pcc=True), Bus(2), Bus(3)),
            lines=(Line(1, 2, 0.01, 0.02, 1), Line(2, 3, 0.01, 0.02, 1),
                   Line(3, 1, 0.01, 0.02, 1)),
        )
        rep = validate_network(net)
        assert not rep.ok
        assert any("cycle detected" in f for f in rep.failures())

    def test_bundled_69_bus_topology_passes(self):
        sc = load_scenario(bundled_scenario_dir("ieee69"))
        assert len(sc.network.buses) == 69
        assert len(sc.network.lines) == 68
        assert validate_network(sc.network).ok

    def test_missing_pcc_named(self):
        rep = validate_network(two_bus(pcc=(False, False)))
        assert any("missing PCC" in f for f in rep.failures())

    def test_duplicate_pcc_named(self):
        rep = validate_network(two_bus(pcc=(True, True)))
        assert any("multiple PCC" in f for f in rep.failures())

    def test_negative_resistance_named(self):
        rep = validate_network(two_bus(lines=(Line(1, 2, -0.01, 0.02, 1.0),)))
        assert any("negative impedance" in f for f in rep.failures())

    def test_disconnected_bus_named(self):
        net = NetworkModel(
            buses=(Bus(1, is_pcc=True), Bus(2), Bus(3), Bus(4)),
            lines=(Line(1, 2, 0.01, 0.02, 1), Line(3, 4, 0.01, 0.02, 1),
                   Line(1, 3, 0.0, 0.0, 1)),
        )
        # snip bus 2's line into a self-contained pair to break connectivity
        net = NetworkModel(
            buses=net.buses,
            lines=(Line(1, 3, 0.01, 0.02, 1), Line(3, 4, 0.01, 0.02, 1),
                   Line(3, 4, 0.01, 0.02, 1)),
        )
        rep = validate_network(net)
        assert not rep.ok
        assert any("disconnected" in f or "cycle" in f for f in rep.failures())

    def test_seeded_defects_on_bundled_feeder(self):
        sc = load_scenario(bundled_scenario_dir("ieee69"))
        net = sc.network
        cycle = NetworkModel(
            buses=net.buses, lines=net.lines + (Line(5, 27, 0.1, 0.1, 1.0),),
            base_mva=net.base_mva, base_kv=net.base_kv,
        )
        assert any("cycle" in f for f in validate_network(cycle).failures())
        dup = NetworkModel(
            buses=tuple(Bus(b.id, b.vmin, b.vmax, b.is_pcc or b.id == 2) for b in net.buses),
            lines=net.lines, base_mva=net.base_mva, base_kv=net.base_kv,
        )
        assert any("multiple PCC" in f for f in validate_network(dup).failures())
        bad_r = NetworkModel(
            buses=net.buses,
            lines=(Line(net.lines[0].from_bus, net.lines[0].to_bus, -1e-4,
                        net.lines[0].x, net.lines[0].s_max),) + net.lines[1:],
            base_mva=net.base_mva, base_kv=net.base_kv,
        )
        assert any("negative impedance" in f for f in validate_network(bad_r).failures())


def make_si_scenario():
    net = NetworkModel(
        buses=(Bus(1, 1.0, 1.0, True), Bus(2, 0.9, 1.1)),
        lines=(Line(1, 2, 0.5, 1.0, 2.0),),
        base_mva=10.0,
        base_kv=12.66,
    )
    T = 4
    return RawScenario(
        scenario=Scenario(
            network=net,
            prosumers=(),
            horizon=T,
            dt=1.0,
            wem_price=np.array([50.0, 40.0, 30.0, 20.0]),
            loss_cost=np.full(T, 15.0),
            background={2: np.array([0.1, 0.2, 0.3, 0.4])},
        ),
        units="si",
    )


class TestPerUnit:
    def test_power_ratio(self):
        sc = to_per_unit(make_si_scenario())
        # 0.1 MW on a 10 MVA base
        assert sc.background_at(2)[0] == pytest.approx(0.01, abs=1e-15)

    def test_zero_resistance_stays_zero(self):
        raw = make_si_scenario()
        raw = RawScenario(
            scenario=Scenario(
                network=NetworkModel(
                    buses=raw.scenario.network.buses,
                    lines=(Line(1, 2, 0.0, 1.0, 2.0),),
                    base_mva=10.0,
                    base_kv=12.66,
                ),
                prosumers=(),
                horizon=4,
                dt=1.0,
                wem_price=raw.scenario.wem_price,
                loss_cost=raw.scenario.loss_cost,
            ),
            units="si",
        )
        assert to_per_unit(raw).network.lines[0].r == 0.0

    def test_impedance_base(self):
        sc = to_per_unit(make_si_scenario())
        z_base = 12.66**2 / 10.0
        assert sc.network.lines[0].r == pytest.approx(0.5 / z_base, rel=1e-12)
        assert sc.network.lines[0].r == pytest.approx(0.031196, rel=1e-3)

    def test_price_scaling_keeps_costs_in_currency(self):
        sc = to_per_unit(make_si_scenario())
        # 50 currency/MWh on a 10 MVA base: one per-unit-hour is 10 MWh
        assert sc.wem_price[0] == pytest.approx(500.0, rel=1e-12)

    def test_idempotent_on_per_unit(self):
        sc = to_per_unit(make_si_scenario())
        again = to_per_unit(RawScenario(scenario=sc, units="per_unit"))
        assert again is sc

    def test_round_trip_identity(self):
        sc = to_per_unit(make_si_scenario())
        back = to_per_unit(from_per_unit(sc))
        assert np.allclose(back.wem_price, sc.wem_price, rtol=1e-12)
        assert np.allclose(back.background_at(2), sc.background_at(2), rtol=1e-12)
        assert back.network.lines[0].r == pytest.approx(sc.network.lines[0].r, rel=1e-12)
        assert back.network.lines[0].s_max == pytest.approx(sc.network.lines[0].s_max, rel=1e-12)

    def test_nonpositive_base_rejected(self):
        raw = make_si_scenario()
        bad = RawScenario(
            scenario=Scenario(
                network=NetworkModel(
                    buses=raw.scenario.network.buses,
                    lines=raw.scenario.network.lines,
                    base_mva=0.0,
                    base_kv=12.66,
                ),
                prosumers=(),
                horizon=4,
                dt=1.0,
                wem_price=raw.scenario.wem_price,
                loss_cost=raw.scenario.loss_cost,
            ),
            units="si",
        )
        with pytest.raises(ValueError):
            to_per_unit(bad)


class TestReactiveFromPf:
    def test_unity_pf(self):
        assert reactive_from_pf(1.0, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_zero_power(self):
        assert reactive_from_pf(0.0, 0.85) == 0.0

    def test_085_lag(self):
        assert reactive_from_pf(1.0, 0.85) == pytest.approx(
            math.tan(math.acos(0.85)), rel=1e-12
        )
        assert reactive_from_pf(1.0, 0.85) == pytest.approx(0.6197, abs=1e-4)

    def test_pf_out_of_range(self):
        with pytest.raises(ValueError):
            reactive_from_pf(1.0, 0.0)
        with pytest.raises(ValueError):
            reactive_from_pf(1.0, 1.5)

    @settings(deadline=None, max_examples=60)
    @given(
        p=st.floats(min_value=1e-6, max_value=1e3),
        pf1=st.floats(min_value=0.05, max_value=1.0),
        pf2=st.floats(min_value=0.05, max_value=1.0),
    )
    def test_monotone_decreasing_in_pf(self, p, pf1, pf2):
        lo, hi = sorted((pf1, pf2))
        if lo == hi:
            return
        assert reactive_from_pf(p, lo) >= reactive_from_pf(p, hi)


def test_bundled_scenarios_round_trip():
    for name in ("six_bus", "ieee69"):
        sc = load_scenario(bundled_scenario_dir(name))
        back = to_per_unit(from_per_unit(sc))
        assert np.allclose(back.wem_price, sc.wem_price, rtol=1e-12)
        for a, b in zip(sc.network.lines, back.network.lines):
            assert b.r == pytest.approx(a.r, rel=1e-12, abs=1e-18)
            assert b.x == pytest.approx(a.x, rel=1e-12, abs=1e-18)
            assert b.s_max == pytest.approx(a.s_max, rel=1e-12)
        for p, q in zip(sc.prosumers, back.prosumers):
            assert np.allclose(p.baseline_load, q.baseline_load, rtol=1e-12)
