"""Penalized fitting: sampling operator, TV prox, solver, and the oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

import splinetool as st
from splinetool.errors import DidNotConverge, GridMismatch, TooLarge
from splinetool.fit import (
    SolverConfig,
    build_sampling,
    fit,
    make_problem,
    objective,
    oracle_fit,
    prune_knots,
    tv1d_prox,
)

from conftest import random_fit_problem, random_spline


class TestSampling:
    def test_rows_are_unit_vectors_on_nodes(self):
        g = st.make_grid([0, 1, 2, 3])
        op = build_sampling(g, g.t)
        assert np.allclose(op.dense(), np.eye(4))

    def test_triangle_weights(self):
        op = build_sampling(st.make_grid([0, 1, 2]), [0.25])
        assert np.allclose(op.dense(), [[0.75, 0.25, 0.0]])

    def test_adjoint_identity(self, rng):
        g = st.make_grid(np.sort(rng.uniform(-3, 3, 7)))
        op = build_sampling(g, rng.uniform(-4, 4, 11))
        f = rng.normal(size=7)
        u = rng.normal(size=11)
        assert abs(op.apply(f) @ u - f @ op.adjoint(u)) < 1e-12

    def test_rows_sum_to_one(self, rng):
        g = st.make_grid(np.sort(rng.uniform(-3, 3, 5)))
        op = build_sampling(g, rng.uniform(-6, 6, 20))
        assert np.abs(op.dense().sum(axis=1) - 1.0).max() < 1e-12

    def test_matches_spline_eval(self, rng):
        sp = random_spline(rng)
        xs = rng.uniform(-5, 5, 40)
        op = build_sampling(sp.grid, xs)
        assert np.abs(op.apply(sp.f) - st.eval_spline(sp, xs)).max() < 1e-12


class TestObjective:
    def test_collinear_interpolation_is_free(self):
        g = st.make_grid([-1, 0, 1, 2])
        problem = make_problem([[0, 1], [1, 3]], grid=g, lam=123.0)
        sp = st.NodalSpline(g, 1.0 + 2.0 * g.t)
        total, data, reg = objective(problem, sp)
        assert total == 0.0 and data == 0.0 and reg == 0.0

    def test_zero_spline(self):
        problem = make_problem([[0, 1]], grid=[-1, 0, 1], lam=0.0)
        sp = st.NodalSpline(problem.grid, np.zeros(3))
        assert objective(problem, sp)[0] == 1.0

    def test_hat_with_reg(self):
        g = st.make_grid([0, 1, 2])
        problem = make_problem([[1, 1]], grid=g, lam=1.0)
        hat = st.NodalSpline(g, [0, 1, 0])
        total, data, reg = objective(problem, hat)
        assert (total, data, reg) == (2.0, 0.0, 2.0)

    def test_grid_mismatch(self):
        problem = make_problem([[0, 1]], grid=[-1, 0, 1], lam=0.0)
        sp = st.NodalSpline(st.make_grid([-1, 0, 2]), np.zeros(3))
        with pytest.raises(GridMismatch):
            objective(problem, sp)


def _tv_kkt_holds(y, lam, x, tol=1e-8):
    """Exact optimality certificate for the 1-D TV prox."""
    r = y - x
    scale = 1.0 + np.abs(y).max()
    if abs(r.sum()) > tol * scale:
        return False
    q = -np.cumsum(r[:-1]) / lam
    if np.any(np.abs(q) > 1.0 + tol):
        return False
    d = np.diff(x)
    pos = (d > 1e-10) & (q < 1.0 - tol)
    neg = (d < -1e-10) & (q > -1.0 + tol)
    return not (pos.any() or neg.any())


class TestTvProx:
    def test_zero_weight_is_identity(self, rng):
        y = rng.normal(size=10)
        assert np.array_equal(tv1d_prox(y, 0.0), y)

    def test_huge_weight_gives_mean(self, rng):
        y = rng.normal(size=10)
        out = tv1d_prox(y, 1e6)
        assert np.abs(out - y.mean()).max() < 1e-9

    def test_kkt_certificate_random(self, rng):
        for _ in range(400):
            n = int(rng.integers(1, 15))
            y = rng.normal(0, rng.uniform(0.1, 5.0), n)
            lam = float(rng.uniform(1e-3, 3.0))
            x = tv1d_prox(y, lam)
            if n > 1:
                assert _tv_kkt_holds(y, lam, x), (y.tolist(), lam)

    @settings(deadline=None, max_examples=100)
    @given(
        hst.lists(hst.floats(min_value=-10, max_value=10), min_size=2, max_size=12),
        hst.floats(min_value=1e-3, max_value=5.0),
    )
    def test_kkt_certificate_hypothesis(self, values, lam):
        y = np.asarray(values)
        x = tv1d_prox(y, lam)
        assert _tv_kkt_holds(y, lam, x)

    def test_clip_after_tv_is_exact_box_prox(self, rng):
        # verified against an interior-point solve of the same subproblem
        import cvxopt

        cvxopt.solvers.options["show_progress"] = False
        for _ in range(40):
            n = int(rng.integers(2, 9))
            v = rng.normal(0, 2, n)
            lam = float(rng.uniform(0.01, 2.0))
            lo, hi = sorted(rng.uniform(-2, 2, 2))
            ours = np.clip(tv1d_prox(v, lam), lo, hi)

            dim = n + (n - 1)
            quad = np.zeros((dim, dim))
            quad[:n, :n] = np.eye(n)
            lin = np.concatenate((-v, lam * np.ones(n - 1)))
            diff = np.zeros((n - 1, dim))
            for j in range(n - 1):
                diff[j, j] = -1.0
                diff[j, j + 1] = 1.0
                diff[j, n + j] = -1.0
            diff2 = diff.copy()
            diff2[:, :n] *= -1.0
            eye = np.zeros((n, dim))
            eye[:, :n] = np.eye(n)
            gmat = np.vstack((diff, diff2, eye, -eye))
            hvec = np.concatenate(
                (np.zeros(2 * (n - 1)), np.full(n, hi), np.full(n, -lo))
            )
            sol = cvxopt.solvers.qp(
                cvxopt.matrix(quad),
                cvxopt.matrix(lin),
                cvxopt.matrix(gmat),
                cvxopt.matrix(hvec),
                options={"abstol": 1e-12, "reltol": 1e-12, "feastol": 1e-12},
            )
            ref = np.array(sol["x"]).ravel()[:n]
            assert np.abs(ours - ref).max() < 1e-6


class TestFit:
    def test_exact_affine_fit(self):
        problem = make_problem(
            [[0, 0], [1, 1]], grid=[-1, 0, 1, 2], lam=0.5,
            bounds=st.SlopeBounds(0, 1),
        )
        result = fit(problem)
        assert result.objective < 1e-8
        assert np.abs(result.spline.f - problem.grid.t).max() < 1e-5
        assert result.max_slope_violation <= 1e-8

    def test_slope_capped_two_point(self):
        # minimize a^2 + (a + s - 2)^2 with s <= 1: optimum s = 1, a = 0.5
        problem = make_problem(
            [[0, 0], [1, 2]], grid=[0, 1], lam=0.0,
            bounds=st.SlopeBounds(s_max=1.0),
        )
        result = fit(problem)
        assert abs(result.objective - 0.5) < 1e-8
        assert np.abs(result.spline.f - [0.5, 1.5]).max() < 1e-6

    def test_large_lambda_reaches_regression_line(self):
        # least-squares line through the three points is y = 1/3
        problem = make_problem([[0, 0], [1, 1], [2, 0]], lam=1e8)
        result = fit(problem)
        assert result.reg_term <= 1e-6
        assert np.abs(result.spline.f - 1.0 / 3.0).max() < 1e-4

    def test_default_grid_pads_data(self):
        problem = make_problem([[0, 0], [1, 1], [2, 0]], lam=1.0)
        assert np.array_equal(problem.grid.t, [-1, 0, 1, 2, 3])

    def test_grid_must_span_data(self):
        with pytest.raises(ValueError):
            make_problem([[0, 0], [2, 1]], grid=[0, 1], lam=0.0)

    def test_did_not_converge_carries_result(self):
        problem = make_problem([[0, 0], [0.5, 3], [1, -1]], lam=1.0)
        with pytest.raises(DidNotConverge) as info:
            fit(problem, SolverConfig(tol=1e-10, max_iters=3))
        assert info.value.result is not None
        assert info.value.result.spline.grid.n == problem.grid.n

    def test_objective_identity(self, rng):
        for _ in range(10):
            problem = random_fit_problem(rng)
            result = fit(problem)
            assert abs(
                result.objective - (result.data_term + problem.lam * result.reg_term)
            ) <= 1e-10 * (1.0 + result.objective)

    def test_bitwise_deterministic(self, rng):
        problem = random_fit_problem(rng)
        a = fit(problem)
        b = fit(problem)
        assert np.array_equal(a.spline.f, b.spline.f)
        assert a.objective == b.objective and a.iterations == b.iterations

    def test_null_space_neutrality(self, rng):
        problem = random_fit_problem(rng)
        problem = make_problem(
            np.column_stack((problem.x, problem.y)),
            grid=problem.grid.t, lam=1.0,
        )  # unconstrained slopes
        base = fit(problem)
        shift = 0.7 - 1.3 * problem.x
        shifted = make_problem(
            np.column_stack((problem.x, problem.y + shift)),
            grid=problem.grid.t, lam=1.0,
        )
        moved = fit(shifted)
        # fitted values shift by exactly the affine function (they are the
        # unique part of the solution); objectives coincide
        base_vals = st.eval_spline(base.spline, problem.x)
        moved_vals = st.eval_spline(moved.spline, problem.x)
        assert np.abs(moved_vals - (base_vals + shift)).max() < 1e-6
        assert abs(moved.objective - base.objective) < 1e-8 * (1 + base.objective)

    def test_lambda_path_monotone_reg(self):
        data = [[-2, 0.5], [-1, -1.0], [0, 2.0], [1, 1.5], [2, -0.5], [3, 1.0]]
        regs = []
        for lam in (0.01, 0.1, 1.0, 10.0, 100.0, 1e8):
            regs.append(fit(make_problem(data, lam=lam)).reg_term)
        assert all(b <= a + 1e-9 for a, b in zip(regs, regs[1:]))

    def test_interpolation_consistency(self, rng):
        problem = random_fit_problem(rng)
        result = fit(problem)
        fitted = st.eval_spline(result.spline, problem.x)
        rerun = make_problem(
            np.column_stack((problem.x, fitted)),
            grid=problem.grid.t,
            lam=0.0,
            bounds=problem.bounds,
        )
        assert fit(rerun).data_term <= 1e-10


class TestPruneKnots:
    def test_affine_collapses_to_two_nodes(self):
        g = st.make_grid(np.linspace(0, 1, 100))
        sp = st.NodalSpline(g, 3.0 + 2.0 * g.t)
        assert prune_knots(sp, 1e-10).grid.n == 2

    def test_hat_unchanged(self):
        hat = st.NodalSpline(st.make_grid([0, 1, 2]), [0, 1, 0])
        assert prune_knots(hat, 1e-10) is hat

    def test_tiny_jump_removed(self):
        # slope jumps at the interior nodes: 2, 1e-13, 1
        g = st.make_grid([0, 1, 2, 3, 4])
        s = np.array([1.0, 1.0, 3.0, 3.0 + 1e-13, 4.0 + 1e-13])
        sp = st.from_slopes(g, s, 0.0)
        out = prune_knots(sp, 1e-12)
        assert out.grid.n == 4
        assert 2.0 not in out.grid.t

    def test_sup_norm_deviation_bound(self, rng):
        for _ in range(20):
            sp = random_spline(rng)
            tol = 0.05
            out = prune_knots(sp, tol)
            xs = np.linspace(sp.grid.t[0], sp.grid.t[-1], 500)
            dev = np.abs(st.eval_spline(out, xs) - st.eval_spline(sp, xs)).max()
            diameter = sp.grid.t[-1] - sp.grid.t[0]
            removed = sp.grid.n - out.grid.n
            assert dev <= removed * tol * diameter + 1e-12


class TestOracleFit:
    def test_agrees_on_worked_examples(self):
        cases = [
            make_problem(
                [[0, 0], [1, 1]], grid=[-1, 0, 1, 2], lam=0.5,
                bounds=st.SlopeBounds(0, 1),
            ),
            make_problem(
                [[0, 0], [1, 2]], grid=[0, 1], lam=0.0,
                bounds=st.SlopeBounds(s_max=1.0),
            ),
            make_problem([[0, 0], [1, 1], [2, 0]], lam=1e8),
        ]
        for problem in cases:
            a = fit(problem).objective
            b = oracle_fit(problem, budget=5000).objective
            assert abs(a - b) <= 1e-6 * (1.0 + b)

    def test_least_squares_case(self, rng):
        # square well-posed sampling, no penalty: normal equations apply
        g = st.make_grid([0, 1, 2, 3])
        y = rng.normal(size=4)
        problem = make_problem(np.column_stack((g.t, y)), grid=g, lam=0.0)
        result = oracle_fit(problem, budget=100)
        assert abs(result.objective) < 1e-8

    def test_dimension_cap(self):
        g = np.linspace(0, 1, 20)
        problem = make_problem([[0.2, 1], [0.8, 0]], grid=g, lam=1.0)
        with pytest.raises(TooLarge):
            oracle_fit(problem, budget=10)

    def test_random_agreement_small(self, rng):
        for _ in range(15):
            problem = random_fit_problem(rng)
            result = fit(problem)
            ref = oracle_fit(problem, budget=5000)
            gap = abs(result.objective - ref.objective) / (1.0 + ref.objective)
            assert gap <= 1e-6
            assert result.max_slope_violation <= 1e-8
