"""Tests for the Markov-chain approximation."""

import csv

import numpy as np
import pytest

from src.errors import ConfigInvalid, DimensionMismatch, GridTooCoarse, InvalidProbabilities
from src.mca import McaGrid, build_mca, kushner_stencil, mca_solve, project_to_state_space
from src.problems import ControlProblem, LinearCost, make_example
from src.simulation import DiffusionSimConfig, simulate_policy_value
from src.solver import (
    NoControlPolicy,
    RegionPolicy,
    SolverConfig,
    agreement_fraction,
    extract_policy,
    heatmap_grid,
    region_labels,
    train,
)
from src.solver.policy import OUTSIDE
from src.stochastic import CovarianceMatrix


def _moments(stencil, h1, h2):
    steps = np.array(stencil.moves, dtype=float) * [h1, h2]
    mean = stencil.probabilities @ steps
    second = np.einsum("k,ki,kj->ij", stencil.probabilities, steps, steps)
    return mean, second


class TestStencil:
    """Tests for the local-consistency stencil."""

    def test_zero_drift_identity(self):
        """Test the symmetric four-point stencil."""
        stencil = kushner_stencil(np.eye(2), np.zeros(2), 0.1, 0.1)
        assert len(stencil.moves) == 4
        assert np.allclose(stencil.probabilities, 0.25)
        assert stencil.dt == pytest.approx(0.005)

    def test_rows_sum_to_one(self):
        """Test probabilities are a distribution."""
        stencil = kushner_stencil(np.array([[1.0, 0.5], [0.5, 2.0]]), np.array([-0.5, -1.0]), 0.1, 0.1)
        assert stencil.probabilities.sum() == pytest.approx(1.0)
        assert np.all(stencil.probabilities >= 0)

    def test_local_consistency(self):
        """Test the mean is drift*dt and the cross moment is cov12*dt."""
        cov = np.array([[1.0, 0.5], [0.5, 2.0]])
        drift = np.array([-0.5, -1.0])
        stencil = kushner_stencil(cov, drift, 0.1, 0.1)
        mean, second = _moments(stencil, 0.1, 0.1)
        assert np.allclose(mean, drift * stencil.dt)
        assert second[0, 1] == pytest.approx(cov[0, 1] * stencil.dt)
        assert second[0, 0] == pytest.approx(cov[0, 0] * stencil.dt + 0.1 * 0.5 * stencil.dt)

    def test_negative_correlation_uses_anti_diagonal(self):
        """Test negative cross covariance moves along (1, -1)."""
        stencil = kushner_stencil(np.array([[2.0, -1.0], [-1.0, 2.0]]), np.zeros(2), 0.1, 0.1)
        assert (1, -1) in stencil.moves and (1, 1) not in stencil.moves

    def test_threestation_ratio(self):
        """Test the three-station covariance is admissible at the default grid ratio."""
        cov = np.array([[50.0, 54.0], [54.0, 69.0]])
        stencil = kushner_stencil(cov, np.array([-5.0, -5.0]), 0.1, 0.108)
        assert stencil.probabilities.sum() == pytest.approx(1.0)

    def test_invalid_ratio(self):
        """Test a grid ratio that cannot absorb the cross covariance."""
        with pytest.raises(InvalidProbabilities):
            kushner_stencil(np.array([[1.0, 0.9], [0.9, 1.0]]), np.zeros(2), 0.1, 1.0)

    def test_planar_only(self):
        """Test non-planar input is rejected."""
        with pytest.raises(DimensionMismatch):
            kushner_stencil(np.eye(3), np.zeros(3), 0.1, 0.1)


class TestGrid:
    """Tests for the box grid and projection."""

    def test_threestation_truncation(self):
        """Test the three-station box at steps 0.1 and 0.108 has 400 cells per axis."""
        grid = McaGrid.from_truncation(0.1, 0.108, 40.0, 43.2)
        assert (grid.n1, grid.n2) == (400, 400)
        assert grid.nodes().shape == (401, 401, 2)

    def test_invalid_grid(self):
        """Test non-positive steps raise GridTooCoarse."""
        with pytest.raises(GridTooCoarse):
            McaGrid(h1=0.0, h2=0.1, n1=4, n2=4)

    def test_orthant_projection(self):
        """Test a point left of the axis is pushed back along its reflection column."""
        problem = make_example("crisscross")
        moved, dy = project_to_state_space(problem, np.array([[-1.0, 2.0]]))
        assert np.allclose(moved, [[0.0, 2.0]])
        assert np.allclose(dy, [[1.0, 0.0]])

    def test_wedge_projection(self):
        """Test points outside the wedge land inside it."""
        problem = make_example("threestation")
        moved, dy = project_to_state_space(problem, np.array([[4.0, 0.0], [6.0, 1.0]]))
        assert np.all(problem.state_space.contains(moved, tol=1e-9))
        assert np.all(dy >= -1e-12)


class TestSolve:
    """Tests for value and policy iteration on the chain."""

    @pytest.fixture
    def free_problem(self):
        return ControlProblem(
            name="free",
            xi=np.zeros(2),
            cov=CovarianceMatrix(np.eye(2)),
            G=np.eye(2),
            c=np.zeros(2),
            h=LinearCost(np.zeros(2)),
            gamma=0.1,
            b=10.0,
        )

    @pytest.fixture
    def crisscross_chain(self):
        return build_mca(make_example("crisscross"), McaGrid(h1=0.25, h2=0.25, n1=8, n2=8))

    def test_zero_cost_means_no_control(self, free_problem):
        """Test h = 0 gives a zero value and continuation everywhere."""
        chain = build_mca(free_problem, McaGrid(h1=0.5, h2=0.5, n1=4, n2=4))
        solution = mca_solve(chain)
        assert np.allclose(solution.values, 0.0)
        assert np.all(solution.labels == 0)

    def test_continuation_rows_are_stochastic(self, crisscross_chain):
        """Test each continuation row sums to one."""
        sums = np.asarray(crisscross_chain.continuation.sum(axis=1)).ravel()
        assert np.allclose(sums, 1.0)
        assert 0 < crisscross_chain.beta < 1

    def test_value_and_policy_iteration_agree(self, crisscross_chain):
        """Test both solvers reach the same values and mostly the same regions."""
        by_policy = mca_solve(crisscross_chain, method="policy")
        by_value = mca_solve(crisscross_chain, method="value", eps=1e-10)
        assert np.allclose(by_policy.values, by_value.values, atol=1e-6)
        assert agreement_fraction(by_policy.labels, by_value.labels) >= 0.95
        assert by_policy.method == "policy" and by_value.method == "value"

    def test_values_nonnegative(self, crisscross_chain):
        """Test the value of a nonnegative-cost problem is nonnegative."""
        solution = mca_solve(crisscross_chain)
        assert np.all(solution.values >= -1e-12)
        assert solution.values.shape == (9, 9)

    def test_policy_and_export(self, crisscross_chain, tmp_path):
        """Test the region policy and its CSV."""
        solution = mca_solve(crisscross_chain)
        policy = solution.policy()
        assert isinstance(policy, RegionPolicy)
        path = solution.export_labels(tmp_path / "regions.csv")
        with path.open() as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["w1", "w2", "control_index", "active"]
        assert len(rows) == 1 + 81 * 2

    def test_wedge_labels_outside(self):
        """Test nodes outside the wedge are labelled OUTSIDE with NaN values."""
        problem = make_example("threestation")
        chain = build_mca(problem, McaGrid(h1=1.0, h2=1.08, n1=8, n2=8))
        solution = mca_solve(chain)
        outside = ~problem.state_space.contains(chain.grid.nodes())
        assert outside.any()
        assert np.all(solution.labels[outside] == OUTSIDE)
        assert np.all(np.isnan(solution.values[outside]))

    def test_unknown_method(self, crisscross_chain):
        """Test an unknown solver method raises ConfigInvalid."""
        with pytest.raises(ConfigInvalid):
            mca_solve(crisscross_chain, method="newton")

    def test_planar_only(self):
        """Test a one-dimensional problem is rejected."""
        with pytest.raises(DimensionMismatch):
            build_mca(make_example("oned"), McaGrid(h1=0.1, h2=0.1, n1=2, n2=2))


@pytest.fixture(scope="module")
def threestation_case1():
    problem = make_example("threestation", case="1")
    chain = build_mca(problem, McaGrid.from_truncation(0.5, 0.54, 40.0, 43.2))
    return problem, mca_solve(chain)


@pytest.mark.slow
class TestReferenceSolutions:
    """Chain solutions against known thresholds, regions and costs."""

    def test_decoupled_embedding_recovers_oned_threshold(self):
        """Test each coordinate of a decoupled planar problem switches at the 1-D threshold."""
        h = 0.02
        problem = make_example("parallel", d=2)
        grid = McaGrid.from_truncation(h, h, 2.0, 2.0)
        solution = mca_solve(build_mca(problem, grid))
        column = solution.labels[:, grid.n2 // 2]
        # label 3 is the downward push of the first coordinate
        threshold = grid.xs[np.argmax(column == 3)]
        assert (column == 3).any()
        assert threshold == pytest.approx(0.722331, abs=2 * h)

    def test_case1_rejects_only_class_c(self, threestation_case1):
        """Test case 1 uses the class C rejection and no other rejection."""
        _, solution = threestation_case1
        used = set(np.unique(solution.labels).tolist())
        assert used & {4, 5, 6} == {6}

    def test_case1_costs(self, threestation_case1):
        """Test the simulated cost is near 67.7 with control and 102.7 without."""
        problem, solution = threestation_case1
        config = DiffusionSimConfig.for_problem(problem, reps=100_000, seed=7)
        controlled = simulate_policy_value(problem, solution.policy(), config, workers=None)
        free = simulate_policy_value(problem, NoControlPolicy(problem), config, workers=None)
        assert controlled.mean == pytest.approx(67.7, rel=0.015)
        assert free.mean == pytest.approx(102.7, rel=0.015)

    def test_case1_agrees_with_trained_policy(self, threestation_case1):
        """Test the chain and the trained networks label at least 90% of the window alike."""
        problem, solution = threestation_case1
        g_net = train(problem, SolverConfig.for_problem(problem)).g_net
        _, _, points = heatmap_grid(problem, [(0.0, 40.0), (0.0, 43.2)], 101)
        chain_labels = region_labels(solution.policy(), points)
        trained_labels = region_labels(extract_policy(g_net, problem), points)
        assert agreement_fraction(chain_labels, trained_labels) >= 0.9
