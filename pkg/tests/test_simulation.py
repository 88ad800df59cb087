"""Tests for the queueing and diffusion simulators."""

import numpy as np
import pytest

from src.errors import ConfigInvalid, DimensionMismatch, PreconditionViolated
from src.mdp import (
    MdpAction,
    Transition,
    TruncatedMdp,
    build_crisscross_mdp,
    build_tandem_mdp,
    evaluate_policy,
    value_iteration,
)
from src.problems import ControlProblem, LinearCost, make_example
from src.simulation import (
    BlockTotals,
    ControlMode,
    CostEstimate,
    DiffusionChainPolicy,
    DiffusionCrissCrossPolicy,
    DiffusionSimConfig,
    DiffusionTandemPolicy,
    LinearBoundaryPolicy,
    MdpQueuePolicy,
    NeverIdlePolicy,
    QueuePolicy,
    StaticPriorityPolicy,
    action_chain,
    action_crisscross,
    action_tandem,
    block_plan,
    crisscross_model,
    lbp_grid_search,
    lbp_idle,
    mm1_model,
    pooled_stderr,
    run_blocks,
    series_model,
    simulate_discounted,
    simulate_policy_value,
    tandem_model,
    tune_safety_stock,
)
from src.simulation.policies import IDLE, SERVE_CLASS1, SERVE_CLASS2
from src.simulation.queueing import discount_weight
from src.solver import NoControlPolicy, SolverConfig, ThresholdPolicy, train
from src.stochastic import CovarianceMatrix


def _constant_gradient(*values):
    """Gradient stand-in returning the same vector at every state."""
    row = np.asarray(values, dtype=float)
    return lambda w: np.broadcast_to(row, np.shape(w)[:-1] + row.shape).copy()


class _ServeEverything(QueuePolicy):
    name = "serve_everything"

    def service(self, q):
        return np.ones(np.shape(q), dtype=bool)


class TestResults:
    """Tests for estimate aggregation and block planning."""

    def test_from_blocks(self):
        """Test mean and standard error over pooled blocks."""
        blocks = [BlockTotals.from_samples(1, np.array([3.0, 5.0])), BlockTotals.from_samples(0, np.array([1.0, 3.0]))]
        estimate = CostEstimate.from_blocks(blocks, horizon=10.0)
        assert estimate.mean == pytest.approx(3.0)
        assert estimate.stderr == pytest.approx(np.sqrt(2.0 / 3.0))
        assert estimate.replications == 4
        assert CostEstimate.from_blocks(reversed(blocks), 10.0) == estimate

    def test_breakdown_is_averaged(self):
        """Test per-component totals become per-replication means."""
        block = BlockTotals.from_samples(0, np.array([1.0, 3.0]), {"a": np.array([1.0, 1.0])})
        estimate = CostEstimate.from_blocks([block], 1.0)
        assert estimate.breakdown == {"a": 1.0}
        assert estimate.to_dict()["breakdown"] == {"a": 1.0}

    def test_empty_and_within(self):
        """Test the empty estimate and the k-sigma check."""
        assert CostEstimate.from_blocks([], 1.0).mean == 0.0
        estimate = CostEstimate(mean=10.0, stderr=1.0, replications=100, horizon=1.0)
        assert estimate.within(12.9)
        assert not estimate.within(13.1)

    def test_pooled_stderr(self):
        """Test independent standard errors add in quadrature."""
        a = CostEstimate(mean=1.0, stderr=3.0, replications=10, horizon=1.0)
        b = CostEstimate(mean=2.0, stderr=4.0, replications=10, horizon=1.0)
        assert pooled_stderr(a, b) == pytest.approx(5.0)

    def test_block_plan(self):
        """Test replications are split into full blocks plus a remainder."""
        assert block_plan(2500, 1000) == [(0, 1000), (1, 1000), (2, 500)]
        assert block_plan(1000) == [(0, 1000)]
        with pytest.raises(PreconditionViolated):
            block_plan(0)

    def test_run_blocks_keeps_task_order(self):
        """Test results come back in task order with and without a pool."""
        assert run_blocks(abs, [-1, -2, 3], workers=1) == [1, 2, 3]
        assert run_blocks(abs, [-1, -2, 3], workers=2) == [1, 2, 3]


class TestQueueSimulation:
    """Tests for the event-driven queueing simulator."""

    def test_discount_weight(self):
        """Test the closed-form discount integral."""
        assert discount_weight(0.5, np.array(0.0), np.array(np.inf)) == pytest.approx(2.0)
        assert discount_weight(1.0, np.array(1.0), np.array(2.0)) == pytest.approx(np.exp(-1) - np.exp(-2))

    def test_zero_holding(self):
        """Test zero holding cost gives an exactly zero estimate."""
        model = mm1_model(h=0.0, r=1.0)
        estimate = simulate_discounted(model, NeverIdlePolicy(model), horizon=20.0, reps=50)
        assert estimate.mean == 0.0 and estimate.stderr == 0.0

    def test_horizon_precondition(self):
        """Test r T below 14 is rejected."""
        model = mm1_model()
        with pytest.raises(PreconditionViolated):
            simulate_discounted(model, NeverIdlePolicy(model), horizon=100.0, reps=10)

    def test_initial_state_shape(self):
        """Test the initial state needs one count per class."""
        model = mm1_model(r=1.0)
        with pytest.raises(DimensionMismatch):
            simulate_discounted(model, NeverIdlePolicy(model), horizon=20.0, reps=10, initial=(1, 2))

    def test_deterministic(self):
        """Test a fixed seed reproduces the estimate."""
        model = tandem_model(r=0.5)
        policy = NeverIdlePolicy(model)
        a = simulate_discounted(model, policy, horizon=30.0, reps=40, seed=5, block_size=16)
        b = simulate_discounted(model, policy, horizon=30.0, reps=40, seed=5, block_size=16)
        assert a == b
        assert set(a.breakdown) == {"holding_class1", "holding_class2"}

    def test_mm1_matches_exact_evaluation(self):
        """Test the M/M/1 estimate against the exact discounted cost of the chain."""
        lam, mu, r = 0.5, 1.0, 1.0
        chain = TruncatedMdp(
            caps=(60,),
            holding=np.ones(1),
            r=r,
            actions=[MdpAction("serve", (), (Transition((-1,), mu, source=0),))],
            arrivals=(Transition((1,), lam),),
        )
        _, table = value_iteration(chain, eps=1e-8)
        exact = evaluate_policy(chain, table)[0]
        model = mm1_model(lam=lam, m=1.0 / mu, r=r)
        estimate = simulate_discounted(model, NeverIdlePolicy(model), horizon=20.0, reps=4000, seed=1)
        assert abs(estimate.mean - exact) <= 4 * estimate.stderr + 1e-3

    def test_empty_buffer_service_rejected(self):
        """Test a policy serving empty buffers is caught."""
        model = mm1_model(r=1.0)
        with pytest.raises(PreconditionViolated):
            simulate_discounted(model, _ServeEverything(model), horizon=20.0, reps=2)

    def test_model_validation(self):
        """Test malformed networks are rejected."""
        with pytest.raises(PreconditionViolated):
            series_model(d=2, h=(1.0, 1.0), r=0.0)
        with pytest.raises(DimensionMismatch):
            series_model(d=3, h=(1.0, 1.0))

    def test_crisscross_workload(self):
        """Test the scaled workload of the criss-cross model."""
        model = crisscross_model()
        assert np.allclose(model.workload(np.array([20.0, 20.0, 20.0])), [1.0, 2.0])
        assert model.num_stations == 2
        assert model.classes_at(0) == [0, 1]


class TestQueuePolicies:
    """Tests for the translated scheduling policies."""

    def test_action_tandem(self):
        """Test server 1 works only when G1 > G2 and its buffer is non-empty."""
        q = np.array([[3, 1], [0, 1]])
        assert action_tandem(q, _constant_gradient(2.0, 1.0), 400.0).tolist() == [True, False]
        assert action_tandem(q, _constant_gradient(1.0, 1.0), 400.0).tolist() == [False, False]

    def test_action_chain_last_server(self):
        """Test the last server idles only when empty."""
        q = np.array([[0, 0, 2], [1, 1, 0]])
        assert action_chain(q, _constant_gradient(0.0, 1.0, 2.0), 400.0, 3).tolist() == [True, False]
        with pytest.raises(PreconditionViolated):
            action_chain(q, _constant_gradient(0.0, 1.0, 2.0), 400.0, 4)

    def test_action_crisscross_idle(self):
        """Test station 1 idles with q1 = 0 and G1 < 0."""
        decision = action_crisscross(np.array([0, 5, 5]), _constant_gradient(-1.0, 1.0), 400.0, s=2)
        assert decision.tolist() == [IDLE]

    def test_action_crisscross_safety_stock(self):
        """Test class 1 has priority once buffer 3 exceeds the safety stock."""
        s = 2
        decision = action_crisscross(np.array([2, 3, s + 1]), _constant_gradient(1.0, 1.0), 400.0, s=s)
        assert decision.tolist() == [SERVE_CLASS1]

    def test_action_crisscross_class2(self):
        """Test class 2 has priority with an empty buffer 3 and G2 >= 0."""
        decision = action_crisscross(np.array([2, 3, 0]), _constant_gradient(1.0, 0.0), 400.0, s=0)
        assert decision.tolist() == [SERVE_CLASS2]
        with pytest.raises(PreconditionViolated):
            action_crisscross(np.array([2, 3, 0]), _constant_gradient(1.0, 0.0), 400.0, s=-1)

    def test_crisscross_policy_service(self):
        """Test the policy serves one class at station 1 and keeps station 2 busy."""
        model = crisscross_model()
        policy = DiffusionCrissCrossPolicy(model, _constant_gradient(1.0, 0.0), s=0)
        assert policy.service(np.array([[2, 3, 0], [2, 3, 4]])).tolist() == [
            [False, True, False],
            [True, False, True],
        ]
        assert policy.describe()["safety_stock"] == 0

    def test_static_priority(self):
        """Test priority order and the never-idle default."""
        model = crisscross_model()
        q = np.array([[1, 1, 1], [0, 1, 0]])
        assert StaticPriorityPolicy(model, (1, 0, 2)).service(q).tolist() == [[False, True, True], [False, True, False]]
        assert NeverIdlePolicy(model).service(q).tolist() == [[True, False, True], [False, True, False]]
        with pytest.raises(PreconditionViolated):
            StaticPriorityPolicy(model, (0, 0, 1))

    def test_chain_policy(self):
        """Test decreasing gradients keep every station busy, increasing ones idle the upstream."""
        model = series_model(d=3, h=(1.0, 1.0, 1.0))
        q = np.array([[1, 1, 1]])
        assert DiffusionChainPolicy(model, _constant_gradient(3.0, 2.0, 1.0)).service(q).tolist() == [[True] * 3]
        assert DiffusionChainPolicy(model, _constant_gradient(1.0, 2.0, 3.0)).service(q).tolist() == [
            [False, False, True]
        ]

    def test_mdp_policy(self):
        """Test the tabulated policy drives the simulator and checks dimensions."""
        _, table = value_iteration(build_tandem_mdp(cap=2, r=0.1), eps=1e-4)
        model = tandem_model()
        policy = MdpQueuePolicy(model, table)
        q = np.array([[0, 0], [5, 5]])
        assert np.array_equal(policy.service(q), table.served_classes(q))
        with pytest.raises(DimensionMismatch):
            MdpQueuePolicy(mm1_model(), table)


class TestLinearBoundary:
    """Tests for linear boundary policies and their tuning."""

    def test_zero_downstream_weight_never_idles(self):
        """Test beta_{i+1} = 0 never idles the odd station."""
        W = np.array([[0.0, 0.0], [5.0, 9.0]])
        assert not lbp_idle(1, W, (1.0, 0.0)).any()

    def test_threshold(self):
        """Test beta = (0, 1.7) idles exactly when W2 >= 1/1.7."""
        W = np.array([[1.0, 0.58], [1.0, 0.6]])
        assert lbp_idle(1, W, (0.0, 1.7)).tolist() == [False, True]
        with pytest.raises(PreconditionViolated):
            lbp_idle(2, W, (0.0, 1.7))

    def test_policy_service(self):
        """Test W = q / sqrt(n) feeds the idling rule."""
        model = tandem_model()
        policy = LinearBoundaryPolicy(model, (0.0, 1.7))
        assert policy.service(np.array([[5, 20], [5, 1]])).tolist() == [[False, True], [True, True]]
        with pytest.raises(PreconditionViolated):
            LinearBoundaryPolicy(model, (0.0, -1.0))

    def test_grid_search(self):
        """Test a tiny staged search returns a grid point and one stage per pair."""
        model = tandem_model(r=0.1)
        result = lbp_grid_search(model, reps=20, odd_range=(0.0,), even_range=(0.5, 1.0), horizon=150.0)
        assert result.beta[0] == 0.0 and result.beta[1] in (0.5, 1.0)
        assert len(result.stages) == 1 and result.stages[0]["candidates"] == 2
        assert result.to_dict()["estimate"]["replications"] == 20
        with pytest.raises(PreconditionViolated):
            lbp_grid_search(series_model(d=3, h=(1.0, 1.0, 1.0)), reps=1)

    def test_safety_stock(self):
        """Test the cheapest candidate is selected."""
        model = crisscross_model(r=0.1)
        best, estimates = tune_safety_stock(
            model, _constant_gradient(1.0, 1.0), candidates=(0, 1), reps=10, horizon=150.0
        )
        assert set(estimates) == {0, 1}
        assert estimates[best].mean == min(e.mean for e in estimates.values())


class TestDiffusionSimulation:
    """Tests for the time-discretized diffusion simulator."""

    @pytest.fixture
    def free_problem(self):
        return ControlProblem(
            name="free",
            xi=np.zeros(2),
            cov=CovarianceMatrix(np.eye(2)),
            G=np.eye(2),
            c=np.zeros(2),
            h=LinearCost(np.zeros(2)),
            gamma=1.0,
            b=10.0,
        )

    def test_zero_costs(self, free_problem):
        """Test zero holding and control costs give a zero estimate."""
        config = DiffusionSimConfig(dt=0.01, unit_steps=(0.01,), reps=10, horizon=1.0)
        estimate = simulate_policy_value(free_problem, NoControlPolicy(free_problem), config)
        assert estimate.mean == 0.0

    def test_family_defaults(self):
        """Test per-family time steps and unit pushes."""
        three = DiffusionSimConfig.for_problem(make_example("threestation"))
        assert three.dt == pytest.approx(0.0015625)
        assert three.unit_steps == (0.1, 0.108)
        tandem = DiffusionSimConfig.for_problem(make_example("tandem"), reps=5)
        assert (tandem.dt, tandem.unit_steps, tandem.reps) == (1e-3, (0.01,), 5)
        with pytest.raises(ConfigInvalid):
            DiffusionSimConfig.for_problem(make_example("tandem"), steps_per_unit=3)

    def test_resolve(self):
        """Test the default horizon and broadcast unit steps."""
        problem = make_example("tandem")
        config = DiffusionSimConfig.for_problem(problem).resolve(problem)
        assert config.horizon == pytest.approx(np.log(1e6) / 4.0)
        assert config.unit_steps == (0.01, 0.01)
        assert config.num_steps == int(np.ceil(config.horizon / config.dt - 1e-9))

    def test_invalid_config(self):
        """Test non-positive discretization parameters are rejected."""
        with pytest.raises(ConfigInvalid):
            DiffusionSimConfig(dt=0.0, unit_steps=(0.01,))
        with pytest.raises(ConfigInvalid):
            DiffusionSimConfig(dt=0.01, unit_steps=(0.0,))

    @pytest.mark.parametrize("mode", [ControlMode.SINGULAR, "drift"])
    def test_paths_are_deterministic(self, mode):
        """Test a fixed seed reproduces the estimate in both control modes."""
        problem = make_example("oned")
        config = DiffusionSimConfig(dt=0.01, unit_steps=(0.01,), reps=20, horizon=2.0, seed=3, mode=mode)
        a = simulate_policy_value(problem, NoControlPolicy(problem), config)
        b = simulate_policy_value(problem, NoControlPolicy(problem), config)
        assert a == b
        assert a.mean > 0

    def test_active_control_costs(self):
        """Test an active threshold pays control cost and lowers the holding cost."""
        problem = make_example("oned")
        config = DiffusionSimConfig(dt=0.01, unit_steps=(0.01,), reps=20, horizon=2.0, seed=1)
        controlled = simulate_policy_value(problem, ThresholdPolicy.parallel(problem, 0.5), config)
        free = simulate_policy_value(problem, NoControlPolicy(problem), config)
        assert controlled.breakdown["control_2"] > 0
        assert controlled.breakdown["holding_w1"] < free.breakdown["holding_w1"]

    @pytest.mark.slow
    def test_reflected_brownian_motion(self):
        """Test the uncontrolled 1-D cost against 2 E int e^{-t} |B_t| dt = sqrt(2)."""
        problem = ControlProblem(
            name="rbm",
            xi=np.zeros(1),
            cov=CovarianceMatrix(np.eye(1)),
            G=np.array([[1.0, -1.0]]),
            c=np.array([0.0, 1.0]),
            h=LinearCost(np.array([2.0])),
            gamma=1.0,
            b=10.0,
        )
        config = DiffusionSimConfig(dt=1e-3, unit_steps=(0.01,), reps=2000, horizon=10.0, seed=0)
        estimate = simulate_policy_value(problem, NoControlPolicy(problem), config)
        assert abs(estimate.mean - np.sqrt(2.0)) <= 4 * estimate.stderr + 0.05


@pytest.mark.slow
class TestQueueingPipelines:
    """End-to-end cost comparisons on the queueing benchmarks."""

    def test_tandem_policies(self):
        """Test never-idle costs at least 3% more than the MDP policy and the diffusion policy is within 1%."""
        model = tandem_model()
        _, table = value_iteration(build_tandem_mdp(cap=200), eps=0.1)
        problem = make_example("tandem")
        g_net = train(problem, SolverConfig.for_problem(problem)).g_net
        costs = {
            name: simulate_discounted(model, policy, reps=50_000, seed=11, workers=None)
            for name, policy in [
                ("never_idle", NeverIdlePolicy(model)),
                ("mdp", MdpQueuePolicy(model, table)),
                ("diffusion", DiffusionTandemPolicy(model, g_net)),
            ]
        }
        assert costs["never_idle"].mean >= 1.03 * costs["mdp"].mean
        assert costs["diffusion"].mean == pytest.approx(costs["mdp"].mean, rel=0.01)

    def test_six_queue_linear_boundary(self):
        """Test the tuned six-station boundary policy costs about 6924."""
        model = series_model(d=6)
        policy = LinearBoundaryPolicy(model, (0.0, 1.7, 0.6, 2.1, 0.5, 2.5))
        estimate = simulate_discounted(model, policy, reps=50_000, seed=3, workers=None)
        assert abs(estimate.mean - 6924.0) <= 3 * np.hypot(estimate.stderr, 2.7)

    def test_crisscross_mdp_beats_diffusion(self):
        """Test the cap-60 MDP policy is no worse than the diffusion policy and within 2% of it."""
        model = crisscross_model(case="IIA")
        _, table = value_iteration(build_crisscross_mdp(case="IIA", caps=60), eps=0.1)
        problem = make_example("crisscross", case="IIA")
        g_net = train(problem, SolverConfig.for_problem(problem)).g_net
        best, by_stock = tune_safety_stock(model, g_net, reps=20_000, seed=5, workers=None)
        mdp = simulate_discounted(model, MdpQueuePolicy(model, table), reps=20_000, seed=5, workers=None)
        diffusion = by_stock[best]
        assert mdp.mean <= diffusion.mean + 3 * pooled_stderr(mdp, diffusion)
        assert diffusion.mean <= 1.02 * mdp.mean
