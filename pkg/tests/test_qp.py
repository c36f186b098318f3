import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from homotopy_planner.qp import QPError, QPProblem, QPSolver, solve_qp

INF = np.inf


def make_problem(P, q, A, l, u):
    return QPProblem(
        p_mat=sp.csc_matrix(np.atleast_2d(P), dtype=float),
        q=np.asarray(q, dtype=float),
        a_mat=sp.csc_matrix(np.atleast_2d(A), dtype=float),
        l=np.asarray(l, dtype=float),
        u=np.asarray(u, dtype=float),
    )


def active_set_oracle(P, q, A, l, u):
    """Enumerate active subsets, solve each equality KKT, keep the best."""
    P, q, A = np.atleast_2d(P), np.asarray(q, float), np.atleast_2d(A)
    l, u = np.asarray(l, float), np.asarray(u, float)
    m = A.shape[0]
    best = None
    sides_per_row = []
    for i in range(m):
        opts = [None]
        if np.isfinite(l[i]):
            opts.append(("l", l[i]))
        if np.isfinite(u[i]) and not (np.isfinite(l[i]) and u[i] == l[i]):
            opts.append(("u", u[i]))
        if np.isfinite(l[i]) and np.isfinite(u[i]) and l[i] == u[i]:
            opts = [("l", l[i])]
        sides_per_row.append(opts)
    n = P.shape[0]
    for combo in itertools.product(*sides_per_row):
        rows = [i for i, c in enumerate(combo) if c is not None]
        G = A[rows]
        b = np.array([combo[i][1] for i in rows])
        k = len(rows)
        kkt = np.block([[P + 1e-12 * np.eye(n), G.T],
                        [G, -1e-12 * np.eye(k)]]) if k else P + 1e-12 * np.eye(n)
        rhs = np.concatenate([-q, b])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            continue
        x = sol[:n]
        ax = A @ x
        if np.any(ax < l - 1e-7) or np.any(ax > u + 1e-7):
            continue
        obj = 0.5 * x @ P @ x + q @ x
        if best is None or obj < best - 1e-12:
            best = obj
    return best


class TestBasics:
    def test_single_bound_active(self):
        prob = make_problem([[2.0]], [0.0], [[1.0]], [3.0], [INF])
        res = solve_qp(prob)
        assert res.status == "optimal"
        assert res.x[0] == pytest.approx(3.0, abs=1e-7)
        assert res.objective == pytest.approx(9.0, abs=1e-6)
        assert res.kkt_residual <= 1e-7

    def test_zero_input_rollout(self):
        # vars: s0 v0 s1 v1 u0; dynamics rows fix the chain, terminal free
        P = np.zeros((5, 5))
        P[4, 4] = 2.0
        A = np.array([
            [1, 0, 0, 0, 0],   # s0 = 0
            [0, 1, 0, 0, 0],   # v0 = 1
            [-1, -1, 1, 0, 0],  # s1 = s0 + v0 (dT=1)
            [0, -1, 0, 1, -1],  # v1 = v0 + u0
        ], dtype=float)
        b = np.array([0.0, 1.0, 0.0, 0.0])
        prob = make_problem(P, np.zeros(5), A, b, b)
        res = solve_qp(prob)
        assert res.status == "optimal"
        assert res.x[4] == pytest.approx(0.0, abs=1e-8)
        assert res.x[2] == pytest.approx(1.0, abs=1e-8)

    def test_min_effort_transfer_matches_hand_kkt(self):
        # full state form, dT=1, N=2: s:0 -> 2 with v0=0 fixed, terminal s(2)=2
        # vars: s0 v0 s1 v1 s2 v2 u0 u1
        n = 8
        P = np.zeros((n, n))
        P[6, 6] = P[7, 7] = 2.0
        rows = [
            ([(0, 1)], 0.0),             # s0 = 0
            ([(1, 1)], 0.0),             # v0 = 0
            ([(2, 1), (0, -1), (1, -1)], 0.0),   # s1 = s0 + v0
            ([(3, 1), (1, -1), (6, -1)], 0.0),   # v1 = v0 + u0
            ([(4, 1), (2, -1), (3, -1)], 0.0),   # s2 = s1 + v1
            ([(5, 1), (3, -1), (7, -1)], 0.0),   # v2 = v1 + u1
            ([(4, 1)], 2.0),             # terminal s2 = 2
        ]
        A = np.zeros((len(rows), n))
        b = np.zeros(len(rows))
        for i, (coeffs, rhs) in enumerate(rows):
            for j, v in coeffs:
                A[i, j] = v
            b[i] = rhs
        res = solve_qp(make_problem(P, np.zeros(n), A, b, b))
        # independent oracle: reduced 2-variable equality-constrained QP,
        # min u0^2 + u1^2 s.t. u0 = 2 (since s2 = u0 with these dynamics)
        kkt = np.array([[2.0, 0.0, 1.0], [0.0, 2.0, 0.0], [1.0, 0.0, 0.0]])
        u_star = np.linalg.solve(kkt, [0.0, 0.0, 2.0])[:2]
        assert res.status == "optimal"
        assert res.x[6] == pytest.approx(u_star[0], abs=1e-8)
        assert res.x[7] == pytest.approx(u_star[1], abs=1e-8)
        assert res.objective == pytest.approx(u_star @ u_star, abs=1e-8)

    def test_infeasible_rows_detected(self):
        prob = make_problem([[2.0]], [0.0], [[1.0], [1.0]], [1.0, -INF], [INF, 0.0])
        res = solve_qp(prob)
        assert res.status == "infeasible"

    def test_crossed_bounds_short_circuit(self):
        prob = make_problem([[2.0]], [0.0], [[1.0]], [1.0], [0.0])
        res = solve_qp(prob)
        assert res.status == "infeasible"

    def test_indefinite_rejected(self):
        with pytest.raises(QPError):
            solve_qp(make_problem([[-1.0]], [0.0], [[1.0]], [0.0], [1.0]))


class TestOracle:
    def test_random_boxes_match_active_set_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            n = rng.integers(1, 4)
            m = rng.integers(1, 4)
            L = rng.normal(size=(n, n))
            P = L @ L.T + np.diag(rng.uniform(0, 1, n))
            q = rng.normal(size=n)
            A = np.vstack([rng.normal(size=(m, n)), np.eye(n)])
            lo = np.concatenate([rng.uniform(-3, -1, m), np.full(n, -5.0)])
            hi = np.concatenate([rng.uniform(1, 3, m), np.full(n, 5.0)])
            oracle = active_set_oracle(P, q, A, lo, hi)
            res = solve_qp(make_problem(P, q, A, lo, hi))
            assert res.status == "optimal"
            assert res.objective == pytest.approx(oracle, abs=1e-6)
            assert res.kkt_residual <= 1e-7

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_residual_contract(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        L = rng.normal(size=(n, n))
        P = L @ L.T
        q = rng.normal(size=n)
        A = np.eye(n)
        lo = np.full(n, -2.0)
        hi = np.full(n, 2.0)
        res = solve_qp(make_problem(P, q, A, lo, hi))
        assert res.status == "optimal"
        assert res.kkt_residual <= 1e-7


class TestReuse:
    def test_bound_updates_reuse_factorization(self):
        prob = make_problem([[2.0, 0.0], [0.0, 2.0]], [0.0, 0.0],
                            np.eye(2), [-1.0, -1.0], [1.0, 1.0])
        solver = QPSolver(prob)
        r1 = solver.solve()
        assert r1.x == pytest.approx([0.0, 0.0], abs=1e-8)
        r2 = solver.solve(l=np.array([0.5, -1.0]), u=np.array([1.0, 1.0]))
        assert r2.x[0] == pytest.approx(0.5, abs=1e-7)
        r3 = solver.solve(l=np.array([0.25, 0.25]), u=np.array([0.25, 0.25]),
                          warm=(r2.x, r2.y))
        assert r3.x == pytest.approx([0.25, 0.25], abs=1e-7)

    def test_deterministic_repeat(self):
        prob = make_problem([[2.0, 0.0], [0.0, 0.0]], [1.0, -1.0],
                            np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]),
                            [-INF, -2.0, -2.0], [1.5, 2.0, 2.0])
        a = solve_qp(prob)
        b = solve_qp(prob)
        assert a.status == b.status == "optimal"
        assert np.array_equal(a.x, b.x)
        assert a.iterations == b.iterations


class TestFeasibilityProblems:
    def test_zero_objective_feasible(self):
        A = np.array([[1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        prob = make_problem(np.zeros((2, 2)), np.zeros(2), A,
                            [1.0, -INF, -INF], [INF, 10.0, 10.0])
        res = solve_qp(prob)
        assert res.status == "optimal"
        assert res.x[0] - res.x[1] >= 1.0 - 1e-7
        assert res.kkt_residual <= 1e-7

    def test_zero_objective_infeasible_chain(self):
        # x0 >= x1 + 1, x1 >= x0 + 1: cyclic, infeasible
        A = np.array([[1.0, -1.0], [-1.0, 1.0]])
        prob = make_problem(np.zeros((2, 2)), np.zeros(2), A,
                            [1.0, 1.0], [INF, INF])
        res = solve_qp(prob)
        assert res.status == "infeasible"
