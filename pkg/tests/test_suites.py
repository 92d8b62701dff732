"""Task suites (toy benchmark, quadratics, scaled variants) and normalization."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from taskbalance.core import InvalidInputError, finite_diff_grad
from taskbalance.metrics import pareto_residual
from taskbalance.suites import (
    LOSS_FLOOR,
    NormalizationState,
    capture_baseline,
    denormalize_losses,
    fresh_normalization,
    get_suite,
    normalize,
    quad_suite,
    random_quad_suite,
    scaled_suite,
    toy2_eval,
    toy2_suite,
)


class TestToy2:
    def test_origin_losses_are_zero(self):
        losses, _ = toy2_eval([0.0, 0.0])
        np.testing.assert_allclose(losses, [0.0, 0.0], atol=1e-15)

    def test_reference_point(self):
        losses, _ = toy2_eval([0.0, 10.0])
        np.testing.assert_allclose(losses, [0.6916, 7.5034], atol=1e-3)

    @pytest.mark.parametrize("x", [(1.0, 1.0), (-2.0, 3.0), (4.0, -5.0),
                                   (0.5, -0.5), (-6.0, 2.5)])
    def test_gradients_match_finite_differences(self, x):
        suite = toy2_suite()
        x = np.asarray(x, dtype=float)
        G = suite.eval_grads(x)
        for i in range(2):
            fd = finite_diff_grad(lambda v, i=i: float(suite.eval_losses(v)[i]),
                                  x, h=1e-6)
            assert np.linalg.norm(G[i] - fd) <= 1e-4 * max(
                1.0, np.linalg.norm(fd))

    def test_clamped_gate_gives_zero_subgradient(self):
        # For x2 < 0 the first gate is clamped at 0: the log branch cannot
        # influence either loss, so d l2 / d x1 only sees the quadratic part.
        _, G = toy2_eval([0.0, -2.0])
        th_half = np.tanh(-1.0)
        expected_dl2_dx1 = (-th_half) * 0.2 * (0.0 + 7.0)
        assert G[1, 0] == pytest.approx(expected_dl2_dx1, rel=1e-12)

    def test_boundary_derivative_passes(self):
        # At x2 = 0 both gates sit exactly at their clamp boundary; the
        # derivative convention keeps the pass-through branch, so the origin
        # is not an artificial dead point.
        _, G = toy2_eval([0.0, 0.0])
        assert abs(G[0, 1]) > 0.0
        assert abs(G[1, 1]) > 0.0

    def test_suite_metadata(self):
        suite = toy2_suite()
        assert suite.num_tasks == 2
        assert suite.dim == 2
        assert suite.lower_level_solution is None


class TestQuadSuite:
    def two_task_1d(self):
        return quad_suite(matrices=[[[1.0]], [[1.0]]],
                          centers=[[0.0], [2.0]])

    def test_equal_weights_midpoint(self):
        suite = self.two_task_1d()
        xstar = suite.lower_level_solution([0.5, 0.5])
        np.testing.assert_allclose(xstar, [1.0], atol=1e-14)
        losses = suite.eval_losses(xstar)
        assert float(np.array([0.5, 0.5]) @ losses) == pytest.approx(0.5)

    def test_vertex_weight_recovers_task_optimum(self):
        suite = self.two_task_1d()
        np.testing.assert_allclose(suite.lower_level_solution([1.0, 0.0]),
                                   [0.0], atol=1e-14)
        np.testing.assert_allclose(suite.lower_level_solution([0.0, 1.0]),
                                   [2.0], atol=1e-14)

    def test_closed_form_is_stationary(self):
        rng = np.random.default_rng(3)
        suite = random_quad_suite(3, 4, rng)
        w = np.array([0.2, 0.5, 0.3])
        xstar = suite.lower_level_solution(w)
        grad = suite.eval_grads(xstar).T @ w
        assert np.linalg.norm(grad) <= 1e-10

    def test_losses_and_grads_consistent(self):
        rng = np.random.default_rng(7)
        suite = random_quad_suite(4, 5, rng)
        x = rng.uniform(-2, 2, size=5)
        G = suite.eval_grads(x)
        for i in range(4):
            fd = finite_diff_grad(lambda v, i=i: float(suite.eval_losses(v)[i]),
                                  x, h=1e-5)
            assert np.linalg.norm(G[i] - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))

    def test_offsets_shift_losses_only(self):
        base = quad_suite([[[1.0]], [[1.0]]], [[0.0], [2.0]])
        shifted = quad_suite([[[1.0]], [[1.0]]], [[0.0], [2.0]],
                             offsets=[1.0, 3.0])
        x = np.array([0.7])
        np.testing.assert_allclose(shifted.eval_losses(x),
                                   base.eval_losses(x) + [1.0, 3.0])
        np.testing.assert_allclose(shifted.eval_grads(x), base.eval_grads(x))

    def test_non_spd_matrix_rejected(self):
        with pytest.raises(InvalidInputError):
            quad_suite([[[-1.0]]], [[0.0]])
        with pytest.raises(InvalidInputError):
            quad_suite([[[1.0, 2.0], [0.0, 1.0]]], [[0.0, 0.0]])

    def test_negative_offset_rejected(self):
        with pytest.raises(InvalidInputError):
            quad_suite([[[1.0]]], [[0.0]], offsets=[-1.0])

    def test_pareto_front_endpoints(self):
        suite = self.two_task_1d()
        np.testing.assert_allclose(suite.pareto_front_point(0.0), [0.0],
                                   atol=1e-14)
        np.testing.assert_allclose(suite.pareto_front_point(1.0), [2.0],
                                   atol=1e-14)


class TestScaledSuite:
    def test_identity_scales(self):
        base = random_quad_suite(2, 3, np.random.default_rng(0))
        scaled = scaled_suite(base, [1.0, 1.0])
        x = np.array([0.3, -0.4, 1.1])
        np.testing.assert_allclose(scaled.eval_losses(x), base.eval_losses(x))
        np.testing.assert_allclose(scaled.eval_grads(x), base.eval_grads(x))

    def test_loss_and_grad_ratio(self):
        base = random_quad_suite(2, 3, np.random.default_rng(1))
        scaled = scaled_suite(base, [1.0, 1000.0])
        x = np.array([0.3, -0.4, 1.1])
        np.testing.assert_allclose(scaled.eval_losses(x),
                                   base.eval_losses(x) * [1.0, 1000.0])
        np.testing.assert_allclose(scaled.eval_grads(x)[1],
                                   base.eval_grads(x)[1] * 1000.0)

    def test_pareto_set_invariance(self):
        # With zero offsets, positive per-task rescaling does not move the
        # Pareto set: every base front point stays Pareto-stationary.
        base = quad_suite([[[2.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 2.0]]],
                          [[0.0, 0.0], [2.0, 1.0]])
        scaled = scaled_suite(base, [3.0, 0.01])
        for t in np.linspace(0.0, 1.0, 9):
            x = base.pareto_front_point(float(t))
            assert pareto_residual(scaled.eval_grads(x)) <= 1e-18

    def test_scaled_lower_level_solution(self):
        base = random_quad_suite(2, 3, np.random.default_rng(2))
        s = np.array([2.0, 5.0])
        scaled = scaled_suite(base, s)
        w = np.array([0.3, 0.7])
        xstar = scaled.lower_level_solution(w)
        grad = scaled.eval_grads(xstar).T @ w
        assert np.linalg.norm(grad) <= 1e-10

    def test_bad_scales_rejected(self):
        base = toy2_suite()
        with pytest.raises(InvalidInputError):
            scaled_suite(base, [1.0, -1.0])
        with pytest.raises(InvalidInputError):
            scaled_suite(base, [1.0])


class TestNormalization:
    def test_rescale_freezes_at_step_zero(self):
        state = fresh_normalization("rescale", 2)
        state = capture_baseline([2.0, 4.0], state, step=0)
        np.testing.assert_allclose(state.baseline, [2.0, 4.0])
        state = capture_baseline([100.0, 100.0], state, step=5)
        np.testing.assert_allclose(state.baseline, [2.0, 4.0])

    def test_log_refreshes_on_epoch_boundary(self):
        state = fresh_normalization("log", 2, epoch_length=10)
        state = capture_baseline([2.0, 4.0], state, step=0)
        state = capture_baseline([8.0, 16.0], state, step=7)
        np.testing.assert_allclose(state.baseline, [2.0, 4.0])
        state = capture_baseline([8.0, 16.0], state, step=10)
        np.testing.assert_allclose(state.baseline, [8.0, 16.0])

    def test_zero_loss_hits_floor(self):
        state = fresh_normalization("rescale", 2)
        state = capture_baseline([0.0, 5.0], state, step=0)
        np.testing.assert_allclose(state.baseline, [LOSS_FLOOR, 5.0])

    def test_baseline_uses_magnitude(self):
        state = fresh_normalization("rescale", 2)
        state = capture_baseline([-3.0, 5.0], state, step=0)
        np.testing.assert_allclose(state.baseline, [3.0, 5.0])

    def test_rescale_at_baseline_gives_one(self):
        state = NormalizationState(mode="rescale", baseline=np.array([2.0, 4.0]))
        losses, grads = normalize([2.0, 4.0], np.eye(2), state)
        np.testing.assert_allclose(losses, [1.0, 1.0])
        np.testing.assert_allclose(grads, np.diag([0.5, 0.25]))

    def test_log_at_baseline_gives_zero(self):
        state = NormalizationState(mode="log", baseline=np.array([2.0, 4.0]))
        losses, _ = normalize([2.0, 4.0], np.eye(2), state)
        np.testing.assert_allclose(losses, [0.0, 0.0], atol=1e-15)

    def test_log_at_e_times_baseline_gives_one(self):
        b = np.array([2.0, 4.0])
        state = NormalizationState(mode="log", baseline=b)
        raw = np.e * b
        losses, grads = normalize(raw, np.eye(2), state)
        np.testing.assert_allclose(losses, [1.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(grads, np.diag(1.0 / raw))

    def test_none_mode_is_identity(self):
        state = fresh_normalization("none", 2)
        losses, grads = normalize([2.0, 4.0], np.eye(2), state)
        np.testing.assert_allclose(losses, [2.0, 4.0])
        np.testing.assert_allclose(grads, np.eye(2))
        assert capture_baseline([9.0, 9.0], state, 0) is state

    @pytest.mark.parametrize("mode", ["none", "rescale", "log"])
    def test_denormalize_roundtrip(self, mode):
        state = NormalizationState(mode=mode, baseline=np.array([2.0, 4.0]))
        raw = np.array([3.0, 0.5])
        losses, _ = normalize(raw, np.zeros((2, 2)), state)
        np.testing.assert_allclose(denormalize_losses(losses, state), raw,
                                   rtol=1e-12)

    @given(st.lists(st.floats(min_value=0.1, max_value=100.0), min_size=2,
                    max_size=2),
           st.lists(st.floats(min_value=0.1, max_value=100.0), min_size=2,
                    max_size=2))
    def test_rescale_roundtrip_property(self, baseline, raw):
        state = NormalizationState(mode="rescale",
                                   baseline=np.asarray(baseline))
        losses, _ = normalize(raw, np.zeros((2, 2)), state)
        np.testing.assert_allclose(denormalize_losses(losses, state), raw,
                                   rtol=1e-10)

    def test_invalid_mode_rejected(self):
        with pytest.raises(InvalidInputError):
            fresh_normalization("standardize", 2)

    def test_negative_step_rejected(self):
        state = fresh_normalization("rescale", 2)
        with pytest.raises(InvalidInputError):
            capture_baseline([1.0, 1.0], state, step=-1)


class TestGetSuite:
    def test_toy2_lookup(self):
        assert get_suite("toy2").name == "toy2"

    def test_quad_lookup(self):
        suite = get_suite("quad", matrices=[[[1.0]], [[1.0]]],
                          centers=[[0.0], [2.0]])
        assert suite.num_tasks == 2

    def test_unknown_rejected(self):
        with pytest.raises(InvalidInputError):
            get_suite("cubic")
