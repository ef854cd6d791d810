import numpy as np
import pytest
import scipy.sparse as sp

from lemclear.socp import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    ConicProgram,
    Free,
    NonNeg,
    SecondOrder,
    check_kkt,
    dual_sensitivity_probe,
    dump_program,
    solve_socp,
)


def norm_cone_program():
    # min x0 subject to x0 >= ||(3, 4)||
    A = sp.csr_matrix(np.array([[0.0, 1, 0], [0, 0, 1]]))
    return ConicProgram(
        c=np.array([1.0, 0, 0]), A=A, b=np.array([3.0, 4]), cones=(SecondOrder(3),)
    )


def simplex_lp():
    # min x1 + x2 subject to x1 + x2 = 1, x >= 0
    return ConicProgram(
        c=np.array([1.0, 1.0]),
        A=sp.csr_matrix(np.array([[1.0, 1.0]])),
        b=np.array([1.0]),
        cones=(NonNeg(2),),
    )


def seeded_programs(n_programs=50, seed=42):
    """Random feasible cone programs: b is built from an interior point, and
    a strictly positive quadratic diagonal keeps every instance bounded."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_programs):
        cones = []
        if rng.integers(0, 3):
            cones.append(Free(int(rng.integers(1, 3))))
        cones.append(NonNeg(int(rng.integers(1, 6))))
        for _ in range(int(rng.integers(0, 3))):
            cones.append(SecondOrder(int(rng.integers(2, 5))))
        n = sum(c.size for c in cones)
        m = int(rng.integers(1, max(2, n // 2 + 1)))
        Am = rng.normal(size=(m, n))
        x0 = np.zeros(n)
        off = 0
        for cb in cones:
            if cb.kind == "free":
                x0[off : off + cb.size] = rng.normal(size=cb.size)
            elif cb.kind == "nonneg":
                x0[off : off + cb.size] = rng.uniform(0.5, 2, size=cb.size)
            else:
                t = rng.normal(size=cb.size)
                t[0] = np.linalg.norm(t[1:]) + rng.uniform(0.5, 2)
                x0[off : off + cb.size] = t
            off += cb.size
        out.append(
            ConicProgram(
                c=rng.normal(size=n),
                A=sp.csr_matrix(Am),
                b=Am @ x0,
                cones=tuple(cones),
                q=rng.uniform(0.1, 1.0, size=n),
            )
        )
    return out


class TestSolveBasics:
    def test_euclidean_norm(self):
        s = solve_socp(norm_cone_program(), tol=1e-8)
        assert s.status == OPTIMAL
        assert s.obj == pytest.approx(5.0, abs=1e-6)

    def test_equality_determined_free(self):
        A = np.array([[2.0, 1.0], [1.0, 3.0]])
        prog = ConicProgram(
            c=np.array([1.0, 1.0]),
            A=sp.csr_matrix(A),
            b=np.array([3.0, 5.0]),
            cones=(Free(2),),
        )
        s = solve_socp(prog, tol=1e-8)
        assert s.status == OPTIMAL
        assert np.allclose(s.x, np.linalg.solve(A, [3.0, 5.0]), atol=1e-8)

    def test_lp_dual_is_one(self):
        s = solve_socp(simplex_lp(), tol=1e-8)
        assert s.status == OPTIMAL
        assert s.obj == pytest.approx(1.0, abs=1e-7)
        assert s.y[0] == pytest.approx(1.0, abs=1e-6)

    def test_infeasible_classified(self):
        prog = ConicProgram(
            c=np.array([1.0, 1.0]),
            A=sp.csr_matrix(np.array([[1.0, 1.0]])),
            b=np.array([-1.0]),
            cones=(NonNeg(2),),
        )
        assert solve_socp(prog, tol=1e-8).status == INFEASIBLE

    def test_unbounded_classified(self):
        prog = ConicProgram(
            c=np.array([-1.0, 0.0]),
            A=sp.csr_matrix(np.array([[1.0, -1.0]])),
            b=np.array([0.0]),
            cones=(NonNeg(2),),
        )
        assert solve_socp(prog, tol=1e-8).status == UNBOUNDED

    def test_zero_variable_program(self):
        prog = ConicProgram(
            c=np.zeros(0), A=sp.csr_matrix((0, 0)), b=np.zeros(0), cones=(), c0=3.5
        )
        s = solve_socp(prog, tol=1e-8)
        assert s.status == OPTIMAL
        assert s.obj == 3.5

    def test_deterministic(self):
        progs = seeded_programs(3, seed=5)
        for p in progs:
            a = solve_socp(p, tol=1e-8)
            b = solve_socp(p, tol=1e-8)
            assert np.array_equal(a.x, b.x)
            assert np.array_equal(a.y, b.y)

    def test_bad_tolerance_rejected(self):
        with pytest.raises(ValueError):
            solve_socp(simplex_lp(), tol=0.0)


class TestStrongDuality:
    def test_fifty_seeded_programs(self):
        tol = 1e-8
        for i, prog in enumerate(seeded_programs(50)):
            s = solve_socp(prog, tol=tol)
            assert s.status == OPTIMAL, f"program {i}: {s.status}"
            assert s.residuals["gap"] <= 10 * tol * (1 + abs(s.obj)), f"program {i}"

    def test_scaling_invariance(self):
        for i, prog in enumerate(seeded_programs(10, seed=7)):
            base = solve_socp(prog, tol=1e-9)
            alpha = 3.7
            scaled = ConicProgram(
                c=prog.c * alpha, A=prog.A, b=prog.b, cones=prog.cones,
                q=prog.q * alpha, c0=prog.c0 * alpha,
            )
            s2 = solve_socp(scaled, tol=1e-9)
            assert s2.status == OPTIMAL
            assert np.allclose(s2.x, base.x, atol=1e-5), f"program {i}"
            assert np.allclose(s2.y, alpha * base.y, rtol=1e-4, atol=1e-5), f"program {i}"


class TestCheckKkt:
    def test_consistent_with_solver_contract(self):
        prog = norm_cone_program()
        s = solve_socp(prog, tol=1e-8)
        rep = check_kkt(prog, s)
        assert rep["primal"] <= 1e-7
        assert rep["dual"] <= 1e-7
        assert rep["gap"] <= 1e-6

    def test_perturbed_point_flagged(self):
        prog = norm_cone_program()
        s = solve_socp(prog, tol=1e-8)
        s.x = s.x.copy()
        s.x[1] += 1e-3
        rep = check_kkt(prog, s)
        assert rep["primal"] >= 1e-4

    def test_zero_variable_program(self):
        prog = ConicProgram(
            c=np.zeros(0), A=sp.csr_matrix((0, 0)), b=np.zeros(0), cones=()
        )
        rep = check_kkt(prog, solve_socp(prog))
        assert all(v == 0.0 for v in rep.values())

    def test_requires_optimal(self):
        prog = ConicProgram(
            c=np.array([1.0, 1.0]),
            A=sp.csr_matrix(np.array([[1.0, 1.0]])),
            b=np.array([-1.0]),
            cones=(NonNeg(2),),
        )
        with pytest.raises(ValueError):
            check_kkt(prog, solve_socp(prog))


class TestSensitivityProbe:
    def test_lp_dual_certified(self):
        prog = simplex_lp()
        s = solve_socp(prog, tol=1e-9)
        pr = dual_sensitivity_probe(prog, s, 0, delta=1e-5, tol=1e-9)
        assert pr.conclusive
        assert pr.estimate == pytest.approx(1.0, abs=1e-4)
        assert pr.estimate == pytest.approx(pr.dual, rel=1e-3)

    def test_seeded_equality_duals(self):
        hits = 0
        for prog in seeded_programs(8, seed=11):
            s = solve_socp(prog, tol=1e-10)
            if s.status != OPTIMAL:
                continue
            idx = int(np.argmax(np.abs(s.y)))
            if abs(s.y[idx]) < 1e-4:
                continue
            pr = dual_sensitivity_probe(prog, s, idx, delta=1e-5, tol=1e-10)
            if not pr.conclusive:
                continue
            hits += 1
            assert pr.estimate == pytest.approx(pr.dual, rel=1e-3, abs=1e-6)
        assert hits >= 4  # most probes must actually run

    def test_zero_delta_rejected(self):
        prog = simplex_lp()
        s = solve_socp(prog)
        with pytest.raises(ValueError, match="delta must be positive"):
            dual_sensitivity_probe(prog, s, 0, delta=0.0)


def test_dump_program_grammar(tmp_path):
    prog = norm_cone_program()
    path = tmp_path / "prog.txt"
    dump_program(prog, str(path))
    text = path.read_text().splitlines()
    assert text[0] == "VARS 3"
    assert text[1] == "EQS 2"
    assert any(line.startswith("CONES soc:3") for line in text)
    assert sum(1 for line in text if line.startswith("A ")) == prog.A.nnz
