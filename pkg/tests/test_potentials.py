"""Potential constructions, reweighting, and the brute-force prox."""

import numpy as np
import pytest

import splinetool as st
from splinetool.errors import (
    LambdaOutOfRange,
    NotNondecreasing,
    WeakConvexityTooLarge,
)

from conftest import random_nondecreasing_spline, random_spline

SOFT = st.NodalSpline(st.make_grid([-2, -1, 1, 2]), [-1, 0, 0, 1])
IDENT = st.NodalSpline(st.make_grid([-1, 1]), [-1, 1])


class TestPotentialFromDerivative:
    def test_identity_gives_half_square(self):
        pot = st.potential_from_derivative(IDENT)
        assert st.eval_potential(pot, 3.0) == 4.5
        assert pot.convexity.kind == "strong" and pot.convexity.rho == 1.0

    def test_relu_gives_one_sided_square(self):
        relu = st.NodalSpline(st.make_grid([-1, 0, 1]), [0, 0, 1])
        pot = st.potential_from_derivative(relu)
        ys = np.linspace(-3, 3, 101)
        want = np.where(ys >= 0, 0.5 * ys**2, 0.0)
        assert np.abs(st.eval_potential(pot, ys) - want).max() < 1e-12
        assert pot.convexity.kind == "convex"

    def test_soft_threshold_finite_difference(self):
        pot = st.potential_from_derivative(SOFT)
        assert pot.convexity.kind == "convex"
        h = 1e-6
        ys = np.linspace(-3, 3, 201) + 0.0001  # stay off the knots
        fd = (st.eval_potential(pot, ys + h) - st.eval_potential(pot, ys - h)) / (2 * h)
        assert np.abs(fd - st.eval_spline(SOFT, ys)).max() < 1e-6

    def test_weakly_convex_classification(self):
        sp = st.NodalSpline(st.make_grid([0, 1, 2]), [0, -0.5, 0.5])
        pot = st.potential_from_derivative(sp)
        assert pot.convexity.kind == "weak" and pot.convexity.rho == 0.5

    def test_derivative_round_trip_random(self, rng):
        for _ in range(30):
            sp = random_spline(rng)
            pot = st.potential_from_derivative(sp)
            assert st.eval_potential(pot, 0.0) == 0.0
            knots = sp.grid.t
            ys = rng.uniform(knots[0] - 2, knots[-1] + 2, 60)
            ys = ys[np.min(np.abs(ys[:, None] - knots[None, :]), axis=1) > 1e-3]
            h = 1e-4
            fd = (
                st.eval_potential(pot, ys + h) - st.eval_potential(pot, ys - h)
            ) / (2 * h)
            assert np.abs(fd - st.eval_spline(sp, ys)).max() < 1e-6


class TestPotentialFromProx:
    def test_identity_gives_zero_potential(self):
        pot = st.potential_from_prox(IDENT)
        ys = np.linspace(-5, 5, 41)
        assert np.abs(st.eval_potential(pot, ys)).max() == 0.0

    def test_soft_threshold_gives_abs(self):
        pot = st.potential_from_prox(SOFT)
        assert np.array_equal(pot.breakpoints, [0.0])
        assert np.array_equal(pot.pieces, [[0.0, -1.0, 0.0], [0.0, 1.0, 0.0]])
        ys = np.linspace(-4, 4, 81)
        assert np.abs(st.eval_potential(pot, ys) - np.abs(ys)).max() == 0.0

    def test_half_slope_gives_square(self):
        # resolvent of phi' = y maps x to x/2, checked against the oracle
        half = st.NodalSpline(st.make_grid([-1, 1]), [-0.5, 0.5])
        pot = st.potential_from_prox(half)
        assert pot.convexity.kind == "strong" and pot.convexity.rho == 1.0
        assert abs(st.numeric_prox_oracle(pot, 4.0) - 2.0) < 2e-4

    def test_decreasing_rejected(self):
        dec = st.NodalSpline(st.make_grid([0, 1]), [1, 0])
        with pytest.raises(NotNondecreasing):
            st.potential_from_prox(dec)

    def test_flat_tail_rejected(self):
        clipper = st.NodalSpline(st.make_grid([0, 1, 2]), [0, 1, 1])
        with pytest.raises(ValueError):
            st.potential_from_prox(clipper)

    def test_weak_convexity_rho(self, rng):
        for _ in range(100):
            sp = random_nondecreasing_spline(rng)
            pot = st.potential_from_prox(sp)
            _, hi = st.slope_range(sp)
            want = max(0.0, 1.0 - 1.0 / hi)
            assert abs(pot.rho_weak - want) < 1e-12

    def test_prox_round_trip(self, rng):
        for _ in range(40):
            sp = random_nondecreasing_spline(rng)
            pot = st.potential_from_prox(sp)
            for x in rng.uniform(-4, 4, 10):
                got = st.numeric_prox_oracle(pot, float(x))
                assert abs(got - st.eval_spline(sp, x)) < 2e-4

    def test_antisymmetric_gives_symmetric_potential(self, rng):
        # an antisymmetric map has a symmetric potential, via either route
        for _ in range(20):
            n = int(rng.integers(1, 4))
            half_t = np.sort(rng.uniform(0.2, 3.0, n))
            half_f = np.sort(rng.uniform(0.1, 2.0, n))
            t = np.concatenate((-half_t[::-1], half_t))
            f = np.concatenate((-half_f[::-1], half_f))
            sp = st.NodalSpline(st.make_grid(t), f)
            ys = rng.uniform(0, 4, 40)
            for pot in (
                st.potential_from_prox(sp),
                st.potential_from_derivative(sp),
            ):
                assert np.abs(
                    st.eval_potential(pot, ys) - st.eval_potential(pot, -ys)
                ).max() < 1e-12


class TestReweightProx:
    def test_soft_threshold_reweighting(self):
        curve = st.PwlCurve([[-2, -1], [-1, 0], [1, 0], [2, 1]])
        out = st.reweight_prox(curve, 2.0)
        assert np.array_equal(out.points, [[-3, -1], [-2, 0], [2, 0], [3, 1]])

    def test_lambda_one_is_identity(self, rng):
        sp = random_nondecreasing_spline(rng)
        curve = st.minimal_curve(st.spline_curve(sp))
        out = st.reweight_prox(curve, 1.0)
        assert np.abs(out.points - curve.points).max() == 0.0

    def test_identity_curve_fixed_for_any_lambda(self):
        curve = st.PwlCurve([[0, 0], [1, 1]])
        out = st.reweight_prox(curve, 5.0)
        assert np.array_equal(out.points, curve.points)

    def test_lambda_cap_for_expansive_curves(self):
        curve = st.PwlCurve([[0, 0], [1, 2]])  # slope 2, cap = 2
        st.reweight_prox(curve, 1.9)
        with pytest.raises(LambdaOutOfRange):
            st.reweight_prox(curve, 2.0)

    def test_nonpositive_lambda_rejected(self):
        with pytest.raises(LambdaOutOfRange):
            st.reweight_prox(st.PwlCurve([[0, 0], [1, 1]]), 0.0)

    def test_decreasing_rejected(self):
        with pytest.raises(NotNondecreasing):
            st.reweight_prox(st.PwlCurve([[0, 1], [1, 0]]), 2.0)

    def test_output_strictly_increasing(self, rng):
        for _ in range(50):
            sp = random_nondecreasing_spline(rng)
            curve = st.minimal_curve(st.spline_curve(sp))
            _, hi = st.slope_range(sp)
            cap = hi / (hi - 1.0) if hi > 1 else 4.0
            lam = float(rng.uniform(0.05, 0.98)) * min(cap, 4.0)
            out = st.reweight_prox(curve, lam)
            assert np.all(np.diff(out.x) > 0)

    def test_reweight_matches_scaled_potential(self, rng):
        for _ in range(15):
            sp = random_nondecreasing_spline(rng, s_cap=2.5)
            curve = st.minimal_curve(st.spline_curve(sp))
            pot = st.potential_from_prox(sp)
            _, hi = st.slope_range(sp)
            cap = hi / (hi - 1.0) if hi > 1 else 3.0
            lam = float(rng.uniform(0.1, 0.95 * min(cap, 3.0)))
            scaled = st.scale_potential(pot, lam)
            reweighted = st.reweight_prox(curve, lam)
            for x in rng.uniform(-3, 3, 8):
                direct = st.eval_curve(reweighted, float(x))
                brute = st.numeric_prox_oracle(scaled, float(x))
                assert abs(direct - brute) < 2e-4


class TestNumericProxOracle:
    def test_abs_examples(self):
        pot = st.potential_from_prox(SOFT)
        assert abs(st.numeric_prox_oracle(pot, 3.0) - 2.0) < 1e-8
        assert abs(st.numeric_prox_oracle(pot, 0.5)) < 1e-8

    def test_quadratic(self):
        pot = st.potential_from_derivative(IDENT)
        assert abs(st.numeric_prox_oracle(pot, 4.0) - 2.0) < 1e-8

    def test_weak_convexity_cap(self):
        sp = st.NodalSpline(st.make_grid([-1, 1]), [1, -1])  # slope -1
        pot = st.potential_from_derivative(sp)
        with pytest.raises(WeakConvexityTooLarge):
            st.numeric_prox_oracle(pot, 0.5)

    def test_accuracy_scales_with_grid_step(self):
        pot = st.potential_from_derivative(IDENT)
        for step in (1e-3, 1e-5):
            got = st.numeric_prox_oracle(pot, 1.0, grid_step=step)
            assert abs(got - 0.5) <= step


class TestEvalPotential:
    def test_normalization_always_zero(self, rng):
        for _ in range(20):
            pot = st.potential_from_derivative(random_spline(rng))
            assert st.eval_potential(pot, 0.0) == 0.0

    def test_nd_input_matches_flat_eval(self, rng):
        # regression: coefficient gathering must track the input layout
        pot = st.potential_from_derivative(random_spline(rng))
        ys = rng.uniform(-4, 4, (5, 7))
        flat = st.eval_potential(pot, ys.ravel()).reshape(5, 7)
        assert np.array_equal(st.eval_potential(pot, ys), flat)

    def test_derivative_uses_upper_branch_at_kinks(self):
        pot = st.potential_from_prox(SOFT)
        assert st.eval_potential_derivative(pot, 2.0) == 1.0
        assert st.eval_potential_derivative(pot, 0.0) == 1.0  # upper branch

    def test_potential_json_round_trip(self, rng):
        from splinetool import serialize

        for _ in range(10):
            sp = random_nondecreasing_spline(rng)
            pot = st.potential_from_prox(sp)
            clone = serialize.potential_from_json(serialize.potential_to_json(pot))
            ys = rng.uniform(-5, 5, 100)
            assert np.abs(
                st.eval_potential(clone, ys) - st.eval_potential(pot, ys)
            ).max() < 1e-12
