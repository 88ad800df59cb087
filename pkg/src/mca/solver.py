"""Dynamic programming on the chain: value or policy iteration."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import identity, vstack
from scipy.sparse.linalg import spsolve

from src.errors import ConfigInvalid, NonConvergence
from src.mca.chain import McaChain
from src.observability import traced
from src.solver.policy import HEATMAP_HEADER, OUTSIDE, RegionPolicy

logger = logging.getLogger(__name__)

IMPROVEMENT_TOL = 1e-10
MAX_VALUE_SWEEPS = 1_000_000
MAX_POLICY_ROUNDS = 200


@dataclass
class McaSolution:
    """Values and region labels on the full box grid (NaN / OUTSIDE off the state space).

    Labels are 0 where the chain continues and j + 1 where control j jumps.
    """

    chain: McaChain
    values: np.ndarray
    labels: np.ndarray
    iterations: int
    method: str

    def policy(self) -> RegionPolicy:
        grid = self.chain.grid
        return RegionPolicy(self.chain.problem, grid.xs, grid.ys, self.labels)

    def export_labels(self, path: str | Path) -> Path:
        """Region labels in the heatmap CSV layout."""
        problem = self.chain.problem
        grid = self.chain.grid
        controls = np.flatnonzero(problem.control_mask)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(HEATMAP_HEADER)
            for i, x in enumerate(grid.xs):
                for j, y in enumerate(grid.ys):
                    label = self.labels[i, j]
                    if label == OUTSIDE:
                        continue
                    for control in controls:
                        writer.writerow([f"{x:.6f}", f"{y:.6f}", int(control), int(label == control + 1)])
        logger.info(f"Wrote region labels to {path}")
        return path


def _option_values(chain: McaChain, values: np.ndarray) -> np.ndarray:
    """(1 + p, S): continuation first, then one row per control jump."""
    out = np.empty((1 + len(chain.jumps), chain.num_states))
    out[0] = chain.continuation_cost + chain.beta * (chain.continuation @ values)
    for j, (matrix, cost) in enumerate(zip(chain.jumps, chain.jump_costs)):
        out[j + 1] = np.inf if matrix is None else cost + matrix @ values
    return out


def _choose(options: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Greedy choice keeping the current option unless another is strictly better."""
    best = np.argmin(options, axis=0)
    cols = np.arange(options.shape[1])
    keep = options[current, cols] <= options[best, cols] + IMPROVEMENT_TOL * (1 + np.abs(options[best, cols]))
    return np.where(keep, current, best)


def _to_grid(chain: McaChain, state_values: np.ndarray, fill: float | int, dtype: type) -> np.ndarray:
    out = np.full(chain.state_of.shape, fill, dtype=dtype)
    inside = chain.state_of >= 0
    out[inside] = state_values[chain.state_of[inside]]
    return out


def _value_iteration(chain: McaChain, eps: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray, int]:
    values = np.zeros(chain.num_states)
    for sweep in range(1, max_sweeps + 1):
        new_values = _option_values(chain, values).min(axis=0)
        diff = float(np.max(np.abs(new_values - values)))
        values = new_values
        if diff < eps:
            break
    else:
        raise NonConvergence("chain value iteration did not reach tolerance", eps=eps, sweeps=max_sweeps)
    choice = _choose(_option_values(chain, values), np.zeros(chain.num_states, dtype=int))
    return values, choice, sweep


def _evaluate(chain: McaChain, choice: np.ndarray) -> np.ndarray:
    rows = [chain.beta * chain.continuation]
    costs = [chain.continuation_cost]
    for matrix, cost in zip(chain.jumps, chain.jump_costs):
        rows.append(matrix if matrix is not None else chain.continuation * 0.0)
        costs.append(cost)
    n = chain.num_states
    pick = choice * n + np.arange(n)
    transition = vstack(rows).tocsr()[pick]
    cost = np.concatenate(costs)[pick]
    values = spsolve((identity(n, format="csc") - transition).tocsc(), cost)
    if not np.all(np.isfinite(values)):
        raise NonConvergence("policy evaluation produced non-finite values")
    return np.asarray(values)


def _policy_iteration(chain: McaChain, max_rounds: int) -> tuple[np.ndarray, np.ndarray, int]:
    choice = np.zeros(chain.num_states, dtype=int)
    for round_ in range(1, max_rounds + 1):
        values = _evaluate(chain, choice)
        new_choice = _choose(_option_values(chain, values), choice)
        changed = int(np.sum(new_choice != choice))
        logger.debug(f"policy iteration round {round_}: {changed} states changed")
        if changed == 0:
            return values, choice, round_
        choice = new_choice
    raise NonConvergence("policy iteration did not stabilize", rounds=max_rounds)


@traced("mca.solve")
def mca_solve(
    chain: McaChain,
    eps: float = 1e-6,
    method: str = "policy",
    max_iterations: int | None = None,
) -> McaSolution:
    """Solve the discretized control problem.

    Args:
        chain: output of ``build_mca``.
        eps: sup-norm tolerance for value iteration.
        method: ``policy`` (Howard iteration with sparse solves) or ``value``.
        max_iterations: cap on sweeps or rounds.

    Returns:
        McaSolution on the full box grid.
    """
    if method == "value":
        values, choice, iterations = _value_iteration(chain, eps, max_iterations or MAX_VALUE_SWEEPS)
    elif method == "policy":
        values, choice, iterations = _policy_iteration(chain, max_iterations or MAX_POLICY_ROUNDS)
    else:
        raise ConfigInvalid(f"unknown chain solver method: {method}", known=["policy", "value"])
    logger.info(f"Chain solved by {method} iteration in {iterations} iterations")
    return McaSolution(
        chain=chain,
        values=_to_grid(chain, values, np.nan, float),
        labels=_to_grid(chain, choice, OUTSIDE, int),
        iterations=iterations,
        method=method,
    )
