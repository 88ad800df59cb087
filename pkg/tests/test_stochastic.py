"""Tests for the stochastic primitives and discrete reflection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.errors import DimensionMismatch, NotPositiveDefinite, OutsideWedge, PreconditionViolated
from src.problems.catalog import THREESTATION_PROFILE
from src.stochastic import (
    BrownianSpec,
    CovarianceMatrix,
    MMatrix,
    NormalMethod,
    TimeGrid,
    WedgeChart,
    cholesky,
    is_m_matrix,
    reflect_path,
    reflect_step,
    reflect_step_enumerate,
    replication_stream,
    sample_increments,
    spectral_radius,
)

THREESTATION_R = np.array([[1.0, 0.0], [0.0, 1.0]])


class TestCholesky:
    """Tests for covariance factorization."""

    @pytest.mark.parametrize(
        "matrix",
        [np.eye(2), np.array([[2.0, -1.0], [-1.0, 2.0]]), np.array([[1.0, 0.5], [0.5, 2.0]])],
    )
    def test_reconstructs_covariance(self, matrix):
        """Test L @ L.T equals A to round-off."""
        lower = cholesky(CovarianceMatrix(matrix))
        assert np.allclose(np.triu(lower, 1), 0.0)
        assert np.max(np.abs(lower @ lower.T - matrix)) <= 1e-10 * np.abs(matrix).max()

    def test_identity(self):
        """Test the identity factors to itself."""
        assert np.array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_indefinite_matrix_rejected(self):
        """Test an indefinite covariance raises NotPositiveDefinite."""
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_asymmetric_matrix_rejected(self):
        """Test an asymmetric matrix is rejected at construction."""
        with pytest.raises(NotPositiveDefinite):
            CovarianceMatrix(np.array([[1.0, 0.2], [0.0, 1.0]]))

    def test_non_square_rejected(self):
        """Test a non-square covariance raises DimensionMismatch."""
        with pytest.raises(DimensionMismatch):
            CovarianceMatrix(np.ones((2, 3)))


class TestSpectralRadius:
    """Tests for the Perron root and M-matrix check."""

    def test_zero_matrix(self):
        """Test the zero matrix has radius zero."""
        assert spectral_radius(np.zeros((3, 3))) == 0.0

    def test_permutation_scaled(self):
        """Test [[0,2],[2,0]] has radius two."""
        assert spectral_radius(np.array([[0.0, 2.0], [2.0, 0.0]])) == pytest.approx(2.0, abs=1e-9)

    def test_nilpotent(self):
        """Test a strictly lower-triangular matrix has radius zero."""
        q = np.eye(6, k=-1)
        assert spectral_radius(q) == 0.0

    def test_matches_eigenvalues(self):
        """Test agreement with a dense eigenvalue solve."""
        rng = np.random.default_rng(3)
        q = rng.random((5, 5))
        expected = np.max(np.abs(np.linalg.eigvals(q)))
        assert spectral_radius(q) == pytest.approx(expected, rel=1e-8)

    def test_negative_entries_rejected(self):
        """Test negative entries raise PreconditionViolated."""
        with pytest.raises(PreconditionViolated):
            spectral_radius(np.array([[0.0, -1.0], [0.0, 0.0]]))

    def test_is_m_matrix_examples(self):
        """Test identity and bidiagonal matrices pass, [[1,-2],[-2,1]] fails."""
        assert is_m_matrix(np.eye(2))
        assert is_m_matrix(np.eye(6) - np.eye(6, k=-1))
        assert not is_m_matrix(np.array([[1.0, -2.0], [-2.0, 1.0]]))

    def test_positive_off_diagonal_is_not_m_matrix(self):
        """Test R with a positive off-diagonal entry is rejected."""
        assert not is_m_matrix(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_mmatrix_wrapper(self):
        """Test MMatrix exposes Q and validates its input."""
        m = MMatrix(np.array([[1.0, 0.0], [-1.0, 1.0]]))
        assert np.array_equal(m.Q, np.array([[0.0, 0.0], [1.0, 0.0]]))
        with pytest.raises(PreconditionViolated):
            MMatrix(np.array([[1.0, -2.0], [-2.0, 1.0]]))


class TestSampleIncrements:
    """Tests for batched Brownian increments."""

    def test_shape_and_determinism(self):
        """Test the output shape and that a fixed seed reproduces the batch."""
        spec = BrownianSpec(xi=np.zeros(2), cov=CovarianceMatrix(np.eye(2)))
        grid = TimeGrid.from_steps(1.0, 8)
        a = sample_increments(spec, grid, 5, seed=11)
        b = sample_increments(spec, grid, 5, seed=11)
        assert a.shape == (5, 8, 2)
        assert np.array_equal(a, b)

    def test_split_batches_match(self):
        """Test that splitting a batch by first_replication leaves paths unchanged."""
        spec = BrownianSpec(xi=np.array([0.3]), cov=CovarianceMatrix(np.eye(1)))
        grid = TimeGrid.from_steps(1.0, 4)
        full = sample_increments(spec, grid, 4, seed=5)
        head = sample_increments(spec, grid, 2, seed=5)
        tail = sample_increments(spec, grid, 2, seed=5, first_replication=2)
        assert np.array_equal(full, np.concatenate([head, tail]))

    def test_moments(self):
        """Test per-step mean xi*dt and covariance A*dt."""
        cov = np.array([[2.0, -1.0], [-1.0, 2.0]])
        spec = BrownianSpec(xi=np.array([-1.0, 0.0]), cov=CovarianceMatrix(cov))
        grid = TimeGrid.from_steps(2.5, 25)
        samples = sample_increments(spec, grid, 4000, seed=1).reshape(-1, 2)
        n = samples.shape[0]
        stderr = np.sqrt(np.diag(cov) * grid.dt / n)
        assert np.all(np.abs(samples.mean(axis=0) - np.array([-0.1, 0.0])) < 4 * stderr)
        assert np.allclose(np.cov(samples.T), cov * grid.dt, atol=0.01)

    def test_inverse_cdf_method(self):
        """Test the inverse-CDF normals are standard."""
        spec = BrownianSpec(xi=np.zeros(1), cov=CovarianceMatrix(np.eye(1)))
        grid = TimeGrid.from_steps(1.0, 100)
        samples = sample_increments(spec, grid, 1000, seed=2, method=NormalMethod.INVERSE_CDF)
        assert abs(samples.mean()) < 4 * np.sqrt(0.01 / samples.size)
        assert samples.var() == pytest.approx(0.01, rel=0.03)

    def test_zero_steps(self):
        """Test a degenerate grid yields no increments."""
        spec = BrownianSpec(xi=np.zeros(1), cov=CovarianceMatrix(np.eye(1)))
        assert sample_increments(spec, TimeGrid.from_steps(0.0, 0), 3, seed=0).shape == (3, 0, 1)

    def test_empty_batch_rejected(self):
        """Test batch < 1 raises PreconditionViolated."""
        spec = BrownianSpec(xi=np.zeros(1), cov=CovarianceMatrix(np.eye(1)))
        with pytest.raises(PreconditionViolated):
            sample_increments(spec, TimeGrid.from_steps(1.0, 2), 0, seed=0)

    def test_time_grid_consistency(self):
        """Test num_steps * dt must equal the horizon."""
        with pytest.raises(PreconditionViolated):
            TimeGrid(horizon=1.0, dt=0.3, num_steps=3)

    def test_replication_streams_differ_by_purpose(self):
        """Test extra purpose keys give independent streams."""
        a = replication_stream(0, 3).random(4)
        b = replication_stream(0, 3, 1).random(4)
        assert not np.array_equal(a, b)


class TestReflectStep:
    """Tests for one discrete Skorokhod step."""

    def test_one_dimensional_push(self):
        """Test w=1, dx=-2 pushes by one to the origin."""
        result = reflect_step(np.array([1.0]), np.array([-2.0]), np.eye(1))
        assert result.dy == pytest.approx([1.0])
        assert result.w_next == pytest.approx([0.0])

    def test_interior_step(self):
        """Test an interior step does not push."""
        result = reflect_step(np.array([1.0]), np.array([0.5]), np.eye(1))
        assert result.dy == pytest.approx([0.0])
        assert result.w_next == pytest.approx([1.5])

    def test_tandem_corner(self):
        """Test the tandem corner step pushes both coordinates."""
        r = np.array([[1.0, 0.0], [-1.0, 1.0]])
        result = reflect_step(np.zeros(2), np.array([-1.0, 0.0]), r)
        assert result.dy == pytest.approx([1.0, 1.0])
        assert result.w_next == pytest.approx([0.0, 0.0])

    def test_dimension_mismatch(self):
        """Test state and matrix dimensions must agree."""
        with pytest.raises(DimensionMismatch):
            reflect_step(np.zeros(3), np.zeros(3), np.eye(2))

    @settings(max_examples=200, deadline=None)
    @given(
        q=arrays(np.float64, (3, 3), elements=st.floats(0.0, 0.3)),
        w=arrays(np.float64, (3,), elements=st.floats(0.0, 5.0)),
        dx=arrays(np.float64, (3,), elements=st.floats(-5.0, 5.0)),
    )
    def test_matches_enumeration(self, q, w, dx):
        """Test the fixed point equals active-set enumeration and is complementary."""
        np.fill_diagonal(q, 0.0)
        r = np.eye(3) - q
        fast = reflect_step(w, dx, r)
        slow = reflect_step_enumerate(w, dx, r)
        assert np.allclose(fast.dy, slow.dy, rtol=0.0, atol=1e-10)
        assert np.allclose(fast.w_next, slow.w_next, rtol=0.0, atol=1e-10)
        assert np.all(fast.w_next >= 0)
        assert np.all(fast.dy >= 0)
        assert np.max(np.abs(fast.dy * fast.w_next)) < 1e-8


class TestReflectPath:
    """Tests for batched path reflection."""

    def test_zero_increments_keep_interior_state(self):
        """Test zero increments from an interior point leave W constant and Y zero."""
        path = reflect_path(np.array([1.0, 2.0]), np.zeros((3, 10, 2)), np.eye(2), dt=0.1)
        assert np.all(path.states == np.array([1.0, 2.0]))
        assert np.all(path.pushes == 0.0)

    def test_negative_drift_pushes_at_unit_rate(self):
        """Test pure negative drift from 0 accumulates Y(T) = T with W at zero."""
        dt = 0.01
        increments = np.full((1, 100, 1), -dt)
        path = reflect_path(np.zeros(1), increments, np.eye(1), dt=dt)
        assert np.allclose(path.states, 0.0)
        assert path.cumulative_pushes[0, -1, 0] == pytest.approx(1.0)

    def test_tandem_path_invariants(self):
        """Test non-negativity, monotone Y and complementarity on random tandem paths."""
        r = np.array([[1.0, 0.0], [-1.0, 1.0]])
        spec = BrownianSpec(xi=np.array([-1.0, 0.0]), cov=CovarianceMatrix(np.array([[2.0, -1.0], [-1.0, 2.0]])))
        grid = TimeGrid.from_steps(1.0, 64)
        inc = sample_increments(spec, grid, 50, seed=9)
        path = reflect_path(np.zeros(2), inc, r, dt=grid.dt, xi=spec.xi)
        assert np.all(path.states >= 0)
        assert np.all(np.diff(path.cumulative_pushes, axis=1) >= 0)
        assert np.max(np.abs(path.pushes * path.states[:, 1:])) < 1e-8
        assert np.allclose(path.brownian, inc - spec.xi * grid.dt)

    def test_control_drift(self):
        """Test a constant control drift enters as G theta dt."""
        path = reflect_path(
            np.array([1.0]), np.zeros((1, 4, 1)), np.eye(1), dt=0.25, theta=np.array([1.0, 0.0]), G=np.array([[1.0, -1.0]])
        )
        assert path.states[0, -1, 0] == pytest.approx(2.0)

    def test_theta_without_g_rejected(self):
        """Test theta needs a control matrix."""
        with pytest.raises(PreconditionViolated):
            reflect_path(np.zeros(1), np.zeros((1, 1, 1)), np.eye(1), dt=1.0, theta=np.ones(1))

    def test_per_step_schedule(self):
        """Test a drift schedule that switches control halfway along the path."""
        theta = np.zeros((3, 4, 2))
        theta[:, :2, 0] = 1.0
        theta[:, 2:, 1] = 1.0
        path = reflect_path(
            np.ones(1), np.zeros((3, 4, 1)), np.eye(1), dt=0.5, theta=theta, G=np.array([[1.0, -1.0]]), b=1.0
        )
        assert np.allclose(path.states[:, :, 0], [1.0, 1.5, 2.0, 1.5, 1.0])
        assert np.all(path.pushes == 0.0)

    def test_state_feedback_schedule(self):
        """Test a callable schedule is evaluated at the current state of each step."""

        def push_down_above_one(w):
            return np.where(w > 1.0, 1.0, 0.0)

        path = reflect_path(
            np.array([[2.0], [0.5]]),
            np.zeros((2, 8, 1)),
            np.eye(1),
            dt=0.25,
            theta=push_down_above_one,
            G=-np.eye(1),
            b=1.0,
        )
        assert np.allclose(path.states[0, :, 0], [2.0, 1.75, 1.5, 1.25, 1.0, 1.0, 1.0, 1.0, 1.0])
        assert np.all(path.states[1] == 0.5)

    @pytest.mark.parametrize("theta", [np.array([-5.0, 0.0]), np.array([0.0, 3.0])])
    def test_rates_outside_bounds_rejected(self, theta):
        """Test rates must lie in [0, b]."""
        with pytest.raises(PreconditionViolated):
            reflect_path(
                np.zeros(1), np.zeros((1, 2, 1)), np.eye(1), dt=0.1, theta=theta, G=np.array([[1.0, -1.0]]), b=2.0
            )

    def test_feedback_rates_checked_each_step(self):
        """Test a callable returning a negative rate is rejected."""

        def negative(w):
            return -np.ones_like(w)

        with pytest.raises(PreconditionViolated):
            reflect_path(np.zeros(1), np.zeros((1, 2, 1)), np.eye(1), dt=0.1, theta=negative, G=np.eye(1))

    def test_negative_initial_state_rejected(self):
        """Test initial states must lie in the orthant."""
        with pytest.raises(PreconditionViolated):
            reflect_path(-np.ones(1), np.zeros((1, 1, 1)), np.eye(1), dt=1.0)

    @settings(max_examples=50, deadline=None)
    @given(
        w0=st.floats(0.0, 2.0),
        steps=arrays(np.float64, (40,), elements=st.floats(-0.5, 0.5)),
    )
    def test_one_dimensional_closed_form(self, w0, steps):
        """Test Y(T) = max(0, max_s(-w0 - X(s))) on the orthant of R^1."""
        path = reflect_path(np.array([w0]), steps.reshape(1, -1, 1), np.eye(1), dt=0.1)
        x = np.concatenate([[0.0], np.cumsum(steps)])
        expected_y = max(0.0, np.max(-w0 - x))
        assert path.cumulative_pushes[0, -1, 0] == pytest.approx(expected_y, abs=1e-10)
        assert path.states[0, -1, 0] == pytest.approx(w0 + x[-1] + expected_y, abs=1e-10)


class TestWedgeChart:
    """Tests for the planar wedge chart."""

    @pytest.fixture
    def chart(self):
        return WedgeChart.from_profile(THREESTATION_PROFILE, THREESTATION_R)

    def test_rays_map_to_axes(self, chart):
        """Test points on the two boundary rays land on the orthant axes."""
        assert chart.to_orthant(np.array([0.0, 5.0]))[0] == pytest.approx(0.0, abs=1e-12)
        assert chart.to_orthant(np.array([4.0, 3.0]))[1] == pytest.approx(0.0, abs=1e-12)

    def test_round_trip(self, chart):
        """Test interior points round-trip through the chart."""
        w = np.array([2.0, 3.0])
        assert np.allclose(chart.from_orthant(chart.to_orthant(w)), w, atol=1e-12)

    def test_outside_point_rejected(self, chart):
        """Test a point below the lower ray raises OutsideWedge."""
        with pytest.raises(OutsideWedge):
            chart.to_orthant(np.array([4.0, 0.0]))

    def test_pushes_stay_in_wedge(self, chart):
        """Test reflected steps from random boundary points stay in the wedge."""
        rng = np.random.default_rng(4)
        w = np.column_stack([np.zeros(200), rng.random(200) * 5])
        dx = rng.normal(size=(200, 2))
        result = chart.reflect_step(w, dx, THREESTATION_R)
        assert np.all(chart.contains(result.w_next, tol=1e-9))
        assert np.all(result.dy >= 0)
