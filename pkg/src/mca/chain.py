"""Locally consistent Markov chain on a planar grid.

Interior moves follow the standard nearest-neighbour stencil with diagonal
moves for the cross covariance. Points that leave the state space are
pushed back along the associated reflection columns; singular controls are
zero-time jumps along the columns of G.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from src.errors import DimensionMismatch, GridTooCoarse, InvalidProbabilities
from src.problems.catalog import ControlProblem, Orthant
from src.stochastic.reflection import reflect_step

logger = logging.getLogger(__name__)

PROBABILITY_TOL = 1e-12
NO_MOVE_TOL = 1e-12


@dataclass(frozen=True)
class McaGrid:
    """Box grid [0, n1*h1] x [0, n2*h2]."""

    h1: float
    h2: float
    n1: int
    n2: int

    def __post_init__(self) -> None:
        if self.h1 <= 0 or self.h2 <= 0:
            raise GridTooCoarse("grid steps must be positive", h1=self.h1, h2=self.h2)
        if self.n1 < 1 or self.n2 < 1:
            raise GridTooCoarse("grid needs at least one cell per axis", n1=self.n1, n2=self.n2)

    @classmethod
    def from_truncation(cls, h1: float, h2: float, upper1: float, upper2: float) -> "McaGrid":
        return cls(h1=h1, h2=h2, n1=int(round(upper1 / h1)), n2=int(round(upper2 / h2)))

    @property
    def steps(self) -> np.ndarray:
        return np.array([self.h1, self.h2])

    @property
    def xs(self) -> np.ndarray:
        return np.arange(self.n1 + 1) * self.h1

    @property
    def ys(self) -> np.ndarray:
        return np.arange(self.n2 + 1) * self.h2

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.n1 * self.h1, self.n2 * self.h2])

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (n1 + 1, n2 + 1, 2)."""
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.stack([gx, gy], axis=-1)


@dataclass(frozen=True)
class Stencil:
    """One-step displacements (in grid units), their probabilities and the time step."""

    moves: tuple[tuple[int, int], ...]
    probabilities: np.ndarray
    dt: float


def kushner_stencil(cov: np.ndarray, drift: np.ndarray, h1: float, h2: float) -> Stencil:
    """Transition probabilities matching drift*dt and cov*dt up to O(h).

    Raises:
        InvalidProbabilities: if the grid ratio cannot absorb the cross covariance.
    """
    a = np.asarray(cov, dtype=float)
    xi = np.asarray(drift, dtype=float)
    if a.shape != (2, 2) or xi.shape != (2,):
        raise DimensionMismatch("stencil is planar", cov=a.shape, drift=xi.shape)
    a12 = a[0, 1]
    cross = abs(a12) / (h1 * h2)
    q = a[0, 0] / h1**2 + a[1, 1] / h2**2 - cross + abs(xi[0]) / h1 + abs(xi[1]) / h2
    if q <= 0:
        raise InvalidProbabilities("degenerate stencil normalizer", q=q)

    axis1 = a[0, 0] / (2 * h1**2) - cross / 2
    axis2 = a[1, 1] / (2 * h2**2) - cross / 2
    weights = {
        (1, 0): axis1 + max(xi[0], 0.0) / h1,
        (-1, 0): axis1 + max(-xi[0], 0.0) / h1,
        (0, 1): axis2 + max(xi[1], 0.0) / h2,
        (0, -1): axis2 + max(-xi[1], 0.0) / h2,
    }
    diagonal = cross / 2
    if a12 >= 0:
        weights[(1, 1)] = weights[(-1, -1)] = diagonal
    else:
        weights[(1, -1)] = weights[(-1, 1)] = diagonal

    moves = tuple(m for m, w in weights.items() if w != 0.0)
    probs = np.array([weights[m] for m in moves]) / q
    if np.any(probs < -PROBABILITY_TOL) or np.any(probs > 1 + PROBABILITY_TOL):
        raise InvalidProbabilities(
            "grid ratio violates the cross-covariance condition",
            probabilities=dict(zip(map(str, moves), probs.tolist())),
        )
    probs = np.clip(probs, 0.0, 1.0)
    probs /= probs.sum()
    return Stencil(moves=moves, probabilities=probs, dt=1.0 / q)


@dataclass
class McaChain:
    """Discretized control problem on the nodes inside the state space.

    Attributes:
        problem: the continuous problem.
        grid: the box grid.
        state_of: (n1 + 1, n2 + 1) node -> state index, -1 outside.
        nodes: (S, 2) coordinates of the states.
        stencil: the interior stencil.
        beta: per-step discount exp(-gamma * dt).
        continuation: S x S transition matrix of one diffusion step.
        continuation_cost: running plus boundary cost of one step.
        jumps: per control, S x S interpolation matrix of the jump (None if unusable).
        jump_costs: per control, cost of one jump (+inf where the jump does not move).
    """

    problem: ControlProblem
    grid: McaGrid
    state_of: np.ndarray
    nodes: np.ndarray
    stencil: Stencil
    beta: float
    continuation: csr_matrix
    continuation_cost: np.ndarray
    jumps: list[csr_matrix | None] = field(default_factory=list)
    jump_costs: list[np.ndarray] = field(default_factory=list)

    @property
    def num_states(self) -> int:
        return int(self.nodes.shape[0])


def project_to_state_space(problem: ControlProblem, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Push points into the state space along the reflection columns.

    Returns:
        (projected points, pushes per reflection column).
    """
    r = problem.reflection_matrix
    points = np.asarray(points, dtype=float)
    if isinstance(problem.state_space, Orthant):
        result = reflect_step(np.zeros_like(points), points, r)
        return result.w_next, result.dy
    chart = problem.state_space.chart
    x = points @ chart.B.T
    result = reflect_step(np.zeros_like(x), x, chart.chart_reflection(r))
    dy = np.zeros(points.shape[:-1] + (r.shape[1],))
    dy[..., list(chart.R_assoc)] = result.dy
    return chart.from_orthant(result.w_next), dy


def _interpolate(grid: McaGrid, state_of: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear weights on the four surrounding states, renormalized over inside nodes."""
    u = np.clip(points / grid.steps, 0.0, [grid.n1, grid.n2])
    base = np.minimum(np.floor(u).astype(int), [grid.n1 - 1, grid.n2 - 1])
    f = u - base
    corners = ((0, 0), (1, 0), (0, 1), (1, 1))
    idx = np.empty(points.shape[:-1] + (4,), dtype=int)
    w = np.empty(points.shape[:-1] + (4,))
    for c, (di, dj) in enumerate(corners):
        idx[..., c] = state_of[base[..., 0] + di, base[..., 1] + dj]
        w[..., c] = (f[..., 0] if di else 1 - f[..., 0]) * (f[..., 1] if dj else 1 - f[..., 1])
    w[idx < 0] = 0.0
    total = w.sum(axis=-1)
    if np.any(total <= 0):
        raise GridTooCoarse("a grid cell has no node inside the state space")
    w /= total[..., None]
    return np.where(idx < 0, 0, idx), w


def _resolve(
    problem: ControlProblem, grid: McaGrid, state_of: np.ndarray, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Projection, box truncation (free) and interpolation of target points."""
    inside = problem.state_space.contains(points)
    projected = points.copy()
    push_cost = np.zeros(points.shape[0])
    if not np.all(inside):
        moved, dy = project_to_state_space(problem, points[~inside])
        projected[~inside] = moved
        push_cost[~inside] = dy @ problem.boundary_penalty
    projected = np.clip(projected, 0.0, grid.upper)
    idx, w = _interpolate(grid, state_of, projected)
    return idx, w, push_cost


def _to_matrix(idx: np.ndarray, w: np.ndarray, n: int) -> csr_matrix:
    rows = np.repeat(np.arange(idx.shape[0]), idx.shape[1])
    return csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, n))


def jump_length(G: np.ndarray, j: int, steps: np.ndarray) -> float:
    """Smallest displacement along column j that moves a full cell in some coordinate."""
    col = np.abs(G[:, j])
    moving = col > 0
    return float(np.min(steps[moving] / col[moving]))


def build_mca(problem: ControlProblem, grid: McaGrid) -> McaChain:
    """Discretize a planar problem on ``grid``.

    Args:
        problem: d = 2 problem on an orthant or wedge.
        grid: box grid; nodes outside the state space are dropped.

    Returns:
        McaChain ready for ``mca_solve``.
    """
    if problem.d != 2:
        raise DimensionMismatch("the chain approximation is planar", d=problem.d)
    stencil = kushner_stencil(problem.cov.matrix, problem.xi, grid.h1, grid.h2)

    all_nodes = grid.nodes()
    inside = problem.state_space.contains(all_nodes)
    state_of = np.full(inside.shape, -1, dtype=int)
    state_of[inside] = np.arange(int(inside.sum()))
    nodes = all_nodes[inside]
    n = nodes.shape[0]
    logger.info(
        f"Building chain on {grid.n1 + 1}x{grid.n2 + 1} grid ({n} states inside), dt={stencil.dt:.3g}"
    )

    cont_idx, cont_w, cont_push = [], [], np.zeros(n)
    for (di, dj), p in zip(stencil.moves, stencil.probabilities):
        target = nodes + np.array([di * grid.h1, dj * grid.h2])
        idx, w, push_cost = _resolve(problem, grid, state_of, target)
        cont_idx.append(idx)
        cont_w.append(p * w)
        cont_push += p * push_cost
    continuation = _to_matrix(np.concatenate(cont_idx, axis=1), np.concatenate(cont_w, axis=1), n)
    continuation_cost = problem.h(nodes) * stencil.dt + cont_push

    jumps: list[csr_matrix | None] = []
    jump_costs: list[np.ndarray] = []
    self_idx = np.arange(n)
    for j in range(problem.p):
        if not problem.control_mask[j]:
            jumps.append(None)
            jump_costs.append(np.full(n, np.inf))
            continue
        delta = jump_length(problem.G, j, grid.steps)
        idx, w, push_cost = _resolve(problem, grid, state_of, nodes + delta * problem.G[:, j])
        stays = np.sum(np.where(idx == self_idx[:, None], w, 0.0), axis=1) >= 1.0 - NO_MOVE_TOL
        cost = problem.c[j] * delta + push_cost
        cost[stays] = np.inf
        jumps.append(_to_matrix(idx, w, n))
        jump_costs.append(cost)

    return McaChain(
        problem=problem,
        grid=grid,
        state_of=state_of,
        nodes=nodes,
        stencil=stencil,
        beta=float(np.exp(-problem.gamma * stencil.dt)),
        continuation=continuation,
        continuation_cost=continuation_cost,
        jumps=jumps,
        jump_costs=jump_costs,
    )
