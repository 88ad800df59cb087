"""Time-discretized simulation of a controlled reflected diffusion.

Each step adds an Euler increment of X and then applies unit-step pushes:
reflection columns while the state is outside the state space, active
control columns while it sits in an active region. Pushes repeat until the
state is readmitted and no control is active.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np

from src.errors import ConfigInvalid
from src.mca.chain import jump_length, project_to_state_space
from src.observability import traced
from src.problems.catalog import ControlProblem, Formulation, Orthant
from src.problems.costs import LinearCost
from src.simulation.parallel import DEFAULT_BLOCK_SIZE, block_plan, run_blocks
from src.simulation.results import BlockTotals, CostEstimate
from src.solver.policy import ControlPolicy
from src.stochastic.core import replication_stream

logger = logging.getLogger(__name__)

DISCOUNT_TRUNCATION = 1e-6
MAX_PUSHES = 10_000

# (dt, unit steps) per catalog family
_FAMILY_DISCRETIZATION: dict[str, tuple[float, tuple[float, ...]]] = {
    "parallel": (3.125e-5, (0.01,)),
    "oned": (3.125e-5, (0.01,)),
    "oned_reflected": (3.125e-5, (0.01,)),
    "threestation": (0.0015625, (0.1, 0.108)),
}
_DEFAULT_DISCRETIZATION = (1e-3, (0.01,))


class ControlMode(Enum):
    """Unit-step singular pushes, or drift at rate b for one time step."""

    SINGULAR = "singular"
    DRIFT = "drift"


@dataclass(frozen=True)
class DiffusionSimConfig:
    """Discretization of one diffusion-level run.

    ``horizon`` defaults to ln(1/1e-6) / gamma so that the truncated tail
    is below 1e-6 of the discount mass.
    """

    dt: float
    unit_steps: tuple[float, ...]
    reps: int = 1000
    horizon: float | None = None
    seed: int = 0
    block_size: int = DEFAULT_BLOCK_SIZE
    initial: tuple[float, ...] | None = None
    mode: ControlMode = ControlMode.SINGULAR
    max_pushes: int = MAX_PUSHES

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ConfigInvalid(f"dt must be positive (got {self.dt})")
        if not self.unit_steps or any(u <= 0 for u in self.unit_steps):
            raise ConfigInvalid("unit steps must be positive", unit_steps=self.unit_steps)
        if self.reps < 1:
            raise ConfigInvalid(f"reps must be >= 1 (got {self.reps})")
        object.__setattr__(self, "unit_steps", tuple(float(u) for u in self.unit_steps))
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", ControlMode(self.mode))

    @classmethod
    def for_problem(cls, problem: ControlProblem, **overrides: Any) -> "DiffusionSimConfig":
        """Family defaults for dt and unit steps, with keyword overrides."""
        dt, steps = _FAMILY_DISCRETIZATION.get(problem.name, _DEFAULT_DISCRETIZATION)
        overrides.setdefault("dt", dt)
        overrides["unit_steps"] = tuple(overrides.get("unit_steps", steps))
        if overrides.get("initial") is not None:
            overrides["initial"] = tuple(float(x) for x in overrides["initial"])
        try:
            return cls(**overrides)
        except TypeError as e:
            raise ConfigInvalid(f"unknown simulation option: {e}") from e

    def resolve(self, problem: ControlProblem) -> "DiffusionSimConfig":
        """Fill in the horizon and broadcast unit steps to the problem dimension."""
        steps = self.unit_steps if len(self.unit_steps) == problem.d else self.unit_steps[:1] * problem.d
        if len(steps) != problem.d:
            raise ConfigInvalid("unit steps need one entry per dimension", d=problem.d)
        horizon = self.horizon if self.horizon is not None else np.log(1 / DISCOUNT_TRUNCATION) / problem.gamma
        return replace(self, unit_steps=tuple(steps), horizon=float(horizon))

    @property
    def num_steps(self) -> int:
        assert self.horizon is not None
        return int(np.ceil(self.horizon / self.dt - 1e-9))


def _violations(problem: ControlProblem, w: np.ndarray) -> np.ndarray:
    """Boolean (B, d): reflection column k must push."""
    if isinstance(problem.state_space, Orthant):
        return w < 0
    chart = problem.state_space.chart
    violated_rays = (w @ chart.B.T) < 0
    out = np.zeros_like(violated_rays)
    out[:, list(chart.R_assoc)] = violated_rays
    return out


@dataclass
class _Pushes:
    """Unit displacements and costs of every pushing direction."""

    reflection: np.ndarray
    reflection_cost: np.ndarray
    control: np.ndarray
    control_cost: np.ndarray
    reflection_keys: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, problem: ControlProblem, steps: np.ndarray) -> "_Pushes":
        r = problem.reflection_matrix
        g = problem.G
        refl_len = np.array([jump_length(r, k, steps) for k in range(r.shape[1])])
        ctrl_len = np.array([jump_length(g, j, steps) for j in range(problem.p)])
        prefix = "reflection" if problem.formulation is Formulation.WITH_REFLECTION else "control"
        return cls(
            reflection=(r * refl_len).T,
            reflection_cost=problem.boundary_penalty * refl_len,
            control=(g * ctrl_len).T,
            control_cost=problem.c * ctrl_len,
            reflection_keys=[f"{prefix}_{k + 1}" for k in range(r.shape[1])],
        )


@dataclass(frozen=True)
class DiffusionSimTask:
    problem: ControlProblem
    policy: ControlPolicy
    config: DiffusionSimConfig
    block: int
    count: int


def simulate_block(task: DiffusionSimTask) -> BlockTotals:
    problem, policy, config = task.problem, task.policy, task.config
    d, p, n = problem.d, problem.p, task.count
    rng = replication_stream(config.seed, task.block)
    scale = problem.cholesky_factor * np.sqrt(config.dt)
    pushes = _Pushes.build(problem, np.asarray(config.unit_steps))
    linear_h = problem.h.h if isinstance(problem.h, LinearCost) else None

    w = np.zeros((n, d)) if config.initial is None else np.tile(np.asarray(config.initial, float), (n, 1))
    holding = np.zeros((n, d)) if linear_h is not None else np.zeros((n, 1))
    control_cost = np.zeros((n, p))
    reflection_cost = np.zeros((n, len(pushes.reflection_cost)))
    stuck = 0

    for step in range(config.num_steps):
        disc = np.exp(-problem.gamma * step * config.dt)
        if linear_h is not None:
            holding += disc * config.dt * w * linear_h
        else:
            holding[:, 0] += disc * config.dt * problem.h(w)

        w = w + problem.xi * config.dt + rng.standard_normal((n, d)) @ scale.T

        if config.mode is ControlMode.DRIFT:
            inside = problem.state_space.contains(w)
            theta = np.where(inside[:, None], policy.rates(w), 0.0)
            w = w + theta @ problem.G.T * config.dt
            control_cost += disc * theta * problem.c * config.dt
            w, dy = _project(problem, w)
            reflection_cost += disc * dy * problem.boundary_penalty
            continue

        for _ in range(config.max_pushes):
            violated = _violations(problem, w)
            outside = violated.any(axis=1)
            active = np.zeros((n, p), dtype=bool)
            if not outside.all():
                rows = ~outside
                active[rows] = policy.active_controls(w[rows])
            if not outside.any() and not active.any():
                break
            w = w + violated @ pushes.reflection + active @ pushes.control
            reflection_cost += disc * violated * pushes.reflection_cost
            control_cost += disc * active * pushes.control_cost
        else:
            stuck += 1
            w, dy = _project(problem, w)
            reflection_cost += disc * dy * problem.boundary_penalty

    if stuck:
        logger.warning(f"Block {task.block}: push loop hit its cap in {stuck} steps")

    breakdown = {}
    if linear_h is not None:
        breakdown.update({f"holding_w{i + 1}": holding[:, i] for i in range(d)})
    else:
        breakdown["holding"] = holding[:, 0]
    breakdown.update({f"control_{j + 1}": control_cost[:, j] for j in range(p)})
    for k, key in enumerate(pushes.reflection_keys):
        breakdown[key] = breakdown.get(key, 0.0) + reflection_cost[:, k]
    total = holding.sum(axis=1) + control_cost.sum(axis=1) + reflection_cost.sum(axis=1)
    return BlockTotals.from_samples(task.block, total, breakdown)


def _project(problem: ControlProblem, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    outside = ~problem.state_space.contains(w)
    dy = np.zeros((w.shape[0], problem.reflection_matrix.shape[1]))
    if outside.any():
        moved, pushed = project_to_state_space(problem, w[outside])
        w = w.copy()
        w[outside] = moved
        dy[outside] = pushed
    return w, dy


@traced("diffusion.simulate_policy_value")
def simulate_policy_value(
    problem: ControlProblem,
    policy: ControlPolicy,
    config: DiffusionSimConfig,
    workers: int | None = 1,
) -> CostEstimate:
    """Discounted running plus control cost of ``policy`` from ``config.initial`` (origin by default).

    Args:
        problem: the control problem.
        policy: gradient, region or threshold policy.
        config: time step, unit steps, replications and seed.
        workers: process count for replication blocks.

    Returns:
        CostEstimate with per-coordinate holding and per-control breakdown.
    """
    config = config.resolve(problem)
    tasks = [
        DiffusionSimTask(problem, policy, config, block, count)
        for block, count in block_plan(config.reps, config.block_size)
    ]
    logger.info(
        f"Simulating {problem.name} diffusion: {config.reps} reps, dt={config.dt}, "
        f"{config.num_steps} steps, mode={config.mode.value}"
    )
    estimate = CostEstimate.from_blocks(run_blocks(simulate_block, tasks, workers), config.horizon)
    logger.info(f"{problem.name} diffusion cost: {estimate.mean:.4f} +/- {estimate.stderr:.4f}")
    return estimate
