import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lemclear.market import (
    ConvergenceTrace,
    MessageBus,
    audit_privacy,
    check_stop,
    run_clearing,
)
from lemclear.model import (
    AdmmConfig,
    Bus,
    Line,
    NetworkModel,
    Prosumer,
    PvUnit,
    Scenario,
    StorageDevice,
)
from lemclear.prosumer import ProsumerInput, solve_subproblem_III, validate_schedule

T = 24


def small_scenario(eps=1e-6):
    net = NetworkModel(
        buses=(Bus(1, 1.0, 1.0, True), Bus(2, 0.9, 1.1), Bus(3, 0.9, 1.1)),
        lines=(Line(1, 2, 0.01, 0.02, 1.0), Line(2, 3, 0.015, 0.03, 1.0)),
    )
    prices = np.array([30.0, 28, 25, 20, 22, 26, 35, 45, 55, 60, 58, 55,
                       50, 48, 47, 50, 60, 75, 90, 85, 70, 55, 45, 35])
    pv_cf = np.clip(np.sin((np.arange(T) - 6) / 12 * np.pi), 0, None)
    bess = StorageDevice("bess", 0.02, 0.02, 0.95, 0.95, e0=0.01, soc_min=0.004,
                         soc_max=0.04, window=(0, 23), e_trip=0.01, throughput_cost=2.0)
    pv = PvUnit(p_forecast=0.03 * pv_cf, s_inv=0.04, pf=0.95)
    p1 = Prosumer(id="a1", bus_id=2, baseline_load=np.full(T, 0.05),
                  pvs=(pv,), storages=(bess,))
    p2 = Prosumer(id="a2", bus_id=3, baseline_load=np.full(T, 0.04), storages=(bess,))
    return Scenario(
        network=net, prosumers=(p1, p2), horizon=T, dt=1.0,
        wem_price=prices, loss_cost=np.full(T, 15.0),
        admm=AdmmConfig(eps1=eps, eps2=eps),
        background={3: np.full(T, 0.02)}, bus_pf={2: 0.85, 3: 0.85},
    )


class TestCheckStop:
    def test_zero_residuals(self):
        assert check_stop(np.zeros(5), 1e-12)

    def test_above_threshold(self):
        assert not check_stop(np.array([1e-3, 0.0]), 1e-4)

    def test_boundary_inclusive(self):
        assert check_stop(np.array([1e-4]), 1e-4)

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            check_stop(np.zeros(1), 0.0)

    @settings(deadline=None, max_examples=40)
    @given(st.lists(st.floats(min_value=-1, max_value=1), min_size=1, max_size=8),
           st.floats(min_value=1e-9, max_value=1.0))
    def test_matches_infinity_norm(self, res, eps):
        assert check_stop(np.array(res), eps) == (max(abs(r) for r in res) <= eps)


class TestRunClearing:
    def test_zero_scenario_fixed_point_in_one_iteration(self):
        net = NetworkModel(
            buses=(Bus(1, 1.0, 1.0, True), Bus(2, 0.9, 1.1)),
            lines=(Line(1, 2, 0.01, 0.02, 1.0),),
        )
        sc = Scenario(
            network=net,
            prosumers=(Prosumer(id="a", bus_id=2, baseline_load=np.zeros(T)),),
            horizon=T, dt=1.0, wem_price=np.zeros(T), loss_cost=np.zeros(T),
            admm=AdmmConfig(eps1=1e-8, eps2=1e-8),
        )
        res = run_clearing(sc)
        assert res.status == "converged"
        assert res.outer_iterations == 1
        # the origin is quadratic-flat, so signals resolve to sqrt(tol) scale
        assert np.max(np.abs(res.p_ug)) <= 1e-4
        assert np.max(np.abs(res.schedules["a"].p_net)) <= 1e-8
        assert all(np.max(np.abs(v)) <= 1e-8 for v in res.lambda_p.values())

    def test_converges_within_envelope(self):
        res = run_clearing(small_scenario(), prosumer_solver="exact")
        assert res.status == "converged"
        assert res.outer_iterations <= 20
        assert all(n <= 10 for n in res.inner_iterations_per_outer)

    def test_converged_consensus_bound(self):
        sc = small_scenario()
        res = run_clearing(sc, prosumer_solver="exact")
        bound = sc.admm.eps1 / sc.admm.rho + 1e-9
        for a in res.p_tilde:
            assert np.max(np.abs(res.p_tilde[a] - res.schedules[a].p_net)) <= bound

    def test_p_ug_reconstruction(self):
        sc = small_scenario()
        res = run_clearing(sc, prosumer_solver="exact")
        recon = res.p_loss_tilde + sc.total_background()
        for a in sorted(res.p_tilde):
            recon = recon + res.p_tilde[a]
        assert np.max(np.abs(recon - res.p_ug)) <= 1e-12

    def test_costs_recomputed_from_primitives(self):
        sc = small_scenario()
        res = run_clearing(sc, prosumer_solver="exact")
        lmo = float(np.sum(res.p_ug * sc.wem_price) * sc.dt)
        dso = float(np.sum(res.p_loss * sc.loss_cost) * sc.dt)
        assert res.costs["lmo"] == pytest.approx(lmo, rel=1e-6)
        assert res.costs["dso"] == pytest.approx(dso, rel=1e-6)
        for a, sched in res.schedules.items():
            expect = float(np.sum(sched.p_net * res.dlmp[sc.prosumers[0].bus_id if a == "a1" else 3]) * sc.dt)
            expect += sched.cost_devices
            assert res.costs["prosumers"][a] == pytest.approx(expect, rel=1e-6, abs=1e-9)

    def test_deterministic_replay_bit_identical(self):
        sc = small_scenario()
        a = run_clearing(sc, prosumer_solver="exact", log_messages=True)
        b = run_clearing(sc, prosumer_solver="exact", log_messages=True)
        assert a.trace.digest() == b.trace.digest()
        assert a.trace.messages == b.trace.messages
        for pid in a.schedules:
            assert np.array_equal(a.schedules[pid].p_net, b.schedules[pid].p_net)

    def test_schedule_order_invariance(self):
        sc = small_scenario()
        a = run_clearing(sc, prosumer_solver="exact")
        b = run_clearing(sc, prosumer_solver="exact", prosumer_order=["a2", "a1"])
        assert a.trace.digest() == b.trace.digest()

    def test_bad_order_rejected(self):
        with pytest.raises(ValueError):
            run_clearing(small_scenario(), prosumer_order=["a1"])

    def test_iteration_replay_reproduces_outputs(self):
        sc = small_scenario()
        res = run_clearing(sc, prosumer_solver="exact")
        pros = {p.id: p for p in sc.prosumers}
        for io in res.trace.replay:
            for a, pn in io.p_net.items():
                inp = ProsumerInput(
                    lambda_lem=io.lambda_lem[a],
                    p_tilde=None if io.p_tilde is None else io.p_tilde[a],
                    lambda_p=io.lambda_p[a],
                )
                redo = solve_subproblem_III(pros[a], inp, sc.admm, sc.dt, T, mode="exact")
                assert np.max(np.abs(redo.p_net - pn)) <= 1e-9

    def test_all_schedules_feasible(self):
        sc = small_scenario()
        res = run_clearing(sc, prosumer_solver="exact")
        for p in sc.prosumers:
            assert validate_schedule(p, res.schedules[p.id], sc.dt) == []

    def test_empty_market_degenerates_to_background_flow(self):
        sc = small_scenario()
        empty = Scenario(
            network=sc.network, prosumers=(), horizon=T, dt=1.0,
            wem_price=sc.wem_price, loss_cost=sc.loss_cost, admm=sc.admm,
            background=sc.background, bus_pf=sc.bus_pf,
        )
        res = run_clearing(empty)
        assert res.status == "converged"
        assert res.outer_iterations == 1
        assert np.allclose(res.p_ug, empty.total_background() + res.p_loss_tilde)


class TestPrivacy:
    def test_standard_run_passes(self):
        res = run_clearing(small_scenario(), prosumer_solver="exact", log_messages=True)
        rep = audit_privacy(res.trace)
        assert rep.ok
        assert rep.messages_checked > 0

    def test_instrumented_leak_fails_naming_field(self):
        res = run_clearing(small_scenario(), prosumer_solver="exact", log_messages=True)
        leaky = ConvergenceTrace(
            outer=res.trace.outer,
            inner=res.trace.inner,
            messages=[dict(m) for m in res.trace.messages],
        )
        bad = dict(leaky.messages[3])
        payload = dict(bad["payload"])
        payload["soc"] = [0.1, 0.2]
        bad["payload"] = payload
        leaky.messages[3] = bad
        rep = audit_privacy(leaky)
        assert not rep.ok
        assert any("soc" in issue for issue in rep.issues)

    def test_unknown_message_type_fails(self):
        trace = ConvergenceTrace(messages=[{
            "type": "DsoToProsumer", "sender": "dso", "recipient": "a",
            "outer": 1, "inner": 0, "payload": {},
        }])
        rep = audit_privacy(trace)
        assert not rep.ok

    def test_empty_trace_passes_vacuously_with_warning(self):
        rep = audit_privacy(ConvergenceTrace())
        assert rep.ok
        assert rep.warnings

    def test_bus_rejects_unknown_type(self):
        bus = MessageBus(log=True)
        with pytest.raises(ValueError):
            bus.send("a", "b", "SecretChannel", {}, outer=1)


class TestTraceReproducibility:
    def test_stop_decisions_follow_recorded_residuals(self):
        sc = small_scenario(eps=1e-6)
        res = run_clearing(sc, prosumer_solver="exact")
        # outer: stopped exactly when the recorded dual step met eps1
        for rec in res.trace.outer[:-1]:
            assert rec.dual_step > sc.admm.eps1
        assert (res.status == "converged") == (
            res.trace.outer[-1].dual_step <= sc.admm.eps1
        )
        # inner: each pass before the last of an outer round exceeded eps2
        by_outer: dict[int, list] = {}
        for rec in res.trace.inner:
            by_outer.setdefault(rec.k, []).append(rec)
        for k, recs in by_outer.items():
            for rec in recs[:-1]:
                assert rec.loss_dual_step > sc.admm.eps2
            if len(recs) < sc.admm.max_inner:
                assert recs[-1].loss_dual_step <= sc.admm.eps2
