"""Value iteration, exact policy evaluation and table export."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix, diags
from scipy.sparse.linalg import spsolve

from src.errors import DimensionMismatch, NonConvergence
from src.mdp.model import TruncatedMdp
from src.observability import traced

logger = logging.getLogger(__name__)

MAX_SWEEPS = 200_000
LOG_EVERY = 1000


@dataclass
class TabularPolicy:
    """Action index per buffer vector of a truncated box.

    Attributes:
        actions: int array of shape caps + 1.
        action_names: label per action index.
        served: bool (A, k); buffer j is worked on under action a when non-empty.
    """

    actions: np.ndarray
    action_names: list[str]
    served: np.ndarray

    @property
    def caps(self) -> tuple[int, ...]:
        return tuple(s - 1 for s in self.actions.shape)

    def action_at(self, q: np.ndarray) -> np.ndarray:
        """Action index for buffer vectors ``q`` (..., k); states beyond the caps are clipped."""
        q = np.asarray(q, dtype=int)
        if q.shape[-1] != self.actions.ndim:
            raise DimensionMismatch("buffer vector length mismatch", q=q.shape, k=self.actions.ndim)
        clipped = np.clip(q, 0, np.asarray(self.caps))
        return self.actions[tuple(np.moveaxis(clipped, -1, 0))]

    def served_classes(self, q: np.ndarray) -> np.ndarray:
        """Boolean (..., k): buffers in service under the tabulated action."""
        q = np.asarray(q, dtype=int)
        return self.served[self.action_at(q)] & (q > 0)

    @classmethod
    def from_mdp(cls, mdp: TruncatedMdp, flat_actions: np.ndarray) -> "TabularPolicy":
        k = len(mdp.caps)
        served = np.zeros((len(mdp.actions), k), dtype=bool)
        for a, action in enumerate(mdp.actions):
            served[a, list(action.served_buffers)] = True
        return cls(
            actions=np.asarray(flat_actions, dtype=int).reshape(mdp.shape),
            action_names=mdp.action_names,
            served=served,
        )


def bellman_q(mdp: TruncatedMdp, values: np.ndarray) -> np.ndarray:
    """Action values (A, S) of one uniformized Bellman step; infeasible pairs are +inf."""
    lam = float(mdp.uniformization)
    base = mdp.holding_rate.copy()
    for event in mdp.arrivals:
        base += event.rate * (values[mdp.targets(event)] - values)
    base += lam * values
    out = np.empty((len(mdp.actions), mdp.num_states))
    for a, action in enumerate(mdp.actions):
        q = base.copy()
        for event in action.events:
            q += event.rate * (values[mdp.targets(event)] - values)
        out[a] = q / (lam + mdp.r)
    out[~mdp.feasible] = np.inf
    return out


def greedy_actions(mdp: TruncatedMdp, values: np.ndarray) -> np.ndarray:
    """First minimizing feasible action per state."""
    return np.argmin(bellman_q(mdp, np.asarray(values).ravel()), axis=0)


@traced("mdp.value_iteration")
def value_iteration(
    mdp: TruncatedMdp,
    eps: float = 0.1,
    max_sweeps: int = MAX_SWEEPS,
    history: list[float] | None = None,
) -> tuple[np.ndarray, TabularPolicy]:
    """Jacobi value iteration from zero until successive sup-norm differences drop below eps.

    Args:
        mdp: the truncated model.
        eps: stopping tolerance on max |V_{k+1} - V_k|.
        max_sweeps: hard cap; exceeding it raises NonConvergence.
        history: if given, receives the sup-norm difference of every sweep.

    Returns:
        (values shaped like the state box, greedy TabularPolicy).
    """
    values = np.zeros(mdp.num_states)
    beta = mdp.uniformization / (mdp.uniformization + mdp.r)
    logger.info(f"Value iteration on {mdp.name}: {mdp.num_states} states, modulus {beta:.6f}")
    for sweep in range(1, max_sweeps + 1):
        q = bellman_q(mdp, values)
        new_values = q.min(axis=0)
        diff = float(np.max(np.abs(new_values - values)))
        values = new_values
        if history is not None:
            history.append(diff)
        if sweep % LOG_EVERY == 0:
            logger.debug(f"sweep {sweep}: sup-norm difference {diff:.6g}")
        if diff < eps:
            logger.info(f"Value iteration converged after {sweep} sweeps (diff={diff:.3g})")
            break
    else:
        raise NonConvergence("value iteration did not reach tolerance", eps=eps, sweeps=max_sweeps)

    policy = TabularPolicy.from_mdp(mdp, greedy_actions(mdp, values))
    return values.reshape(mdp.shape), policy


def evaluate_policy(mdp: TruncatedMdp, policy: TabularPolicy) -> np.ndarray:
    """Exact discounted cost of a stationary policy by one sparse solve."""
    flat_actions = policy.actions.ravel()
    n = mdp.num_states
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    rates: list[np.ndarray] = []
    outflow = np.zeros(n)
    idx = np.arange(n)

    def add(event, where: np.ndarray) -> None:
        target = mdp.targets(event)
        moving = where & (target != idx)
        rows.append(idx[moving])
        cols.append(target[moving])
        rates.append(np.full(int(moving.sum()), event.rate))
        outflow[moving] += event.rate

    everywhere = np.ones(n, dtype=bool)
    for event in mdp.arrivals:
        add(event, everywhere)
    for a, action in enumerate(mdp.actions):
        chosen = flat_actions == a
        for event in action.events:
            add(event, chosen)

    jumps = csr_matrix(
        (np.concatenate(rates), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    system = diags(mdp.r + outflow) - jumps
    return np.asarray(spsolve(system.tocsc(), mdp.holding_rate)).reshape(mdp.shape)


def export_tables(
    values: np.ndarray,
    policy: TabularPolicy,
    out_dir: str | Path,
    axis: int = 0,
    index: int = 0,
) -> dict[str, Path]:
    """Write value/policy tables as .npy and a CSV slice at buffer[axis] == index."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"values": out_dir / "values.npy", "policy": out_dir / "policy.npy"}
    np.save(paths["values"], values)
    np.save(paths["policy"], policy.actions)

    value_slice = np.take(values, index, axis=axis)
    action_slice = np.take(policy.actions, index, axis=axis)
    free_axes = [i for i in range(values.ndim) if i != axis]
    paths["slice"] = out_dir / f"slice_q{axis + 1}_{index}.csv"
    with paths["slice"].open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([f"q{i + 1}" for i in free_axes] + ["value", "action"])
        for coords in np.ndindex(value_slice.shape):
            writer.writerow(
                [*coords, f"{value_slice[coords]:.6f}", policy.action_names[action_slice[coords]]]
            )
    logger.info(f"Exported MDP tables to {out_dir}")
    return paths
