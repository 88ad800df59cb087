"""Residual training of paired value/gradient networks.

Reference paths are simulated under a constant nominal drift with boundary
reflection. Along each path the discretized Ito identity between V and its
gradient must hold; the mean squared defect is minimized jointly over both
networks with Adam.
"""

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import torch

from src.errors import DimensionMismatch, DivergedLoss
from src.observability import traced
from src.problems.catalog import ControlProblem, PenaltyKind
from src.solver.config import SolverConfig
from src.solver.networks import Mlp
from src.stochastic.core import replication_stream, sample_increments
from src.stochastic.reflection import ReflectedPath

logger = logging.getLogger(__name__)

INIT_STATE_STREAM = 1
PENALTY_STRIDE = 8


def hamiltonian_g(
    u: np.ndarray,
    c: np.ndarray,
    G: np.ndarray,
    b: float,
    theta_tilde: np.ndarray,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """min over theta in [0,b]^p of (c + G'u).theta, minus (G'u).theta_tilde.

    Args:
        u: gradient values, shape (..., d).
        c: control costs, shape (p,).
        G: control matrix, shape (d, p).
        b: rate bound.
        theta_tilde: nominal drift, shape (p,).
        mask: optional boolean (p,) of usable controls; others are held at zero.

    Returns:
        Array of shape (...,).
    """
    u = np.asarray(u, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if u.shape[-1] != G.shape[0]:
        raise DimensionMismatch("gradient and control matrix disagree", u=u.shape, G=G.shape)
    gu = u @ G
    coeff = np.minimum(0.0, np.asarray(c, dtype=float) + gu)
    if mask is not None:
        coeff = coeff * np.asarray(mask, dtype=float)
    return b * coeff.sum(axis=-1) - gu @ np.asarray(theta_tilde, dtype=float)


def _hamiltonian_torch(
    u: torch.Tensor, c: torch.Tensor, G: torch.Tensor, b: float, theta: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    gu = u @ G
    return b * (torch.clamp(c + gu, max=0.0) * mask).sum(dim=-1) - gu @ theta


@dataclass
class PathTensors:
    """Torch views of a reference batch plus the quantities the residual needs."""

    w0: torch.Tensor
    w_final: torch.Tensor
    w_running: torch.Tensor
    brownian: torch.Tensor
    pushes: torch.Tensor
    holding: torch.Tensor
    discount: torch.Tensor
    dt: float
    horizon: float

    @classmethod
    def from_path(cls, path: ReflectedPath, problem: ControlProblem) -> "PathTensors":
        k = path.num_steps
        running = path.states[:, :k]
        holding = problem.h(running) if k else np.zeros((path.num_paths, 0))
        times = np.arange(k) * path.dt
        as_t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=torch.float64)  # noqa: E731
        return cls(
            w0=as_t(path.states[:, 0]),
            w_final=as_t(path.states[:, -1]),
            w_running=as_t(running),
            brownian=as_t(path.brownian),
            pushes=as_t(path.pushes),
            holding=as_t(holding),
            discount=as_t(np.exp(-problem.gamma * times)),
            dt=path.dt,
            horizon=k * path.dt,
        )

    def penalty_states(self) -> torch.Tensor:
        d = self.w0.shape[-1]
        return torch.cat([self.w0, self.w_running[:, ::PENALTY_STRIDE].reshape(-1, d)])


def _problem_tensors(problem: ControlProblem, theta: np.ndarray) -> dict[str, torch.Tensor]:
    mask = problem.control_mask
    return {
        "c": torch.as_tensor(problem.c, dtype=torch.float64),
        "G": torch.as_tensor(problem.G, dtype=torch.float64),
        "theta": torch.as_tensor(np.where(mask, theta, 0.0), dtype=torch.float64),
        "mask": torch.as_tensor(mask.astype(float), dtype=torch.float64),
        "pi": torch.as_tensor(problem.boundary_penalty, dtype=torch.float64),
    }


def simulate_reference_batch(
    problem: ControlProblem, config: SolverConfig, seed: int, epoch: int = 0
) -> ReflectedPath:
    """N reference paths over [0, T] under the constant nominal drift.

    Initial states are uniform in the problem's initial-state box. Batch
    ``epoch`` uses replication indices epoch*N ... epoch*N + N - 1, so
    successive epochs see fresh, reproducible paths.
    """
    n = config.batch_size
    grid = config.grid
    rng = replication_stream(seed, epoch, INIT_STATE_STREAM)
    w = problem.sample_initial_states(rng, n)
    d = problem.d
    if grid.num_steps == 0:
        empty = np.zeros((n, 0, d))
        return ReflectedPath(states=w[:, None, :], pushes=empty, brownian=empty, dt=grid.dt)

    increments = sample_increments(
        problem.brownian, grid, n, seed, method=config.normal_method, first_replication=epoch * n
    )
    theta = np.where(problem.control_mask, config.theta_tilde, 0.0)
    control_dx = problem.G @ theta * grid.dt
    states = np.empty((n, grid.num_steps + 1, d))
    pushes = np.empty((n, grid.num_steps, d))
    states[:, 0] = w
    for k in range(grid.num_steps):
        step = problem.reflect_step(w, increments[:, k] + control_dx)
        w = step.w_next
        states[:, k + 1] = w
        pushes[:, k] = step.dy
    brownian = increments - problem.xi * grid.dt
    return ReflectedPath(states=states, pushes=pushes, brownian=brownian, dt=grid.dt)


def residuals(
    paths: ReflectedPath | PathTensors,
    v_net: Callable[[torch.Tensor], torch.Tensor],
    g_net: Callable[[torch.Tensor], torch.Tensor],
    problem: ControlProblem,
    b: float | None = None,
    theta: np.ndarray | None = None,
    gamma: float | None = None,
) -> torch.Tensor:
    """Per-path defect of the discretized reference identity, shape (N,)."""
    batch = paths if isinstance(paths, PathTensors) else PathTensors.from_path(paths, problem)
    bound = problem.b if b is None else b
    consts = _problem_tensors(problem, problem.theta_tilde if theta is None else theta)
    discount = batch.discount
    terminal = np.exp(-problem.gamma * batch.horizon)
    if gamma is not None:
        times = torch.arange(discount.shape[0], dtype=torch.float64) * batch.dt
        discount = torch.exp(-gamma * times)
        terminal = float(np.exp(-gamma * batch.horizon))

    lhs = terminal * v_net(batch.w_final) - v_net(batch.w0)
    n, k, d = batch.w_running.shape
    if k == 0:
        return lhs
    grads = g_net(batch.w_running.reshape(-1, d)).reshape(n, k, d)
    ham = _hamiltonian_torch(
        grads, consts["c"], consts["G"], bound, consts["theta"], consts["mask"]
    )
    stochastic = ((grads * batch.brownian).sum(dim=-1) * discount).sum(dim=-1)
    running = ((batch.holding + ham) * discount).sum(dim=-1) * batch.dt
    boundary = ((batch.pushes @ consts["pi"]) * discount).sum(dim=-1)
    return lhs - (stochastic - running - boundary)


def loss_residual(
    paths: ReflectedPath | PathTensors,
    v_net: Callable[[torch.Tensor], torch.Tensor],
    g_net: Callable[[torch.Tensor], torch.Tensor],
    problem: ControlProblem,
    b: float | None = None,
    theta: np.ndarray | None = None,
    gamma: float | None = None,
) -> torch.Tensor:
    """Mean squared defect over the batch."""
    return (residuals(paths, v_net, g_net, problem, b=b, theta=theta, gamma=gamma) ** 2).mean()


def shape_penalty(
    kind: PenaltyKind | str, g_net: Callable[[torch.Tensor], torch.Tensor], states: torch.Tensor
) -> torch.Tensor:
    """Penalty for gradient shapes known to hold at the optimum.

    - crisscross: G1 >= 0 where 2 w1 > w2, G2 >= 0 elsewhere.
    - threestation: G >= 0.
    - tandem_chain: d/dw_i (G_i - G_{i+1}) >= 0 for i < d.
    """
    kind = PenaltyKind(kind)
    if kind is PenaltyKind.NONE:
        return torch.zeros((), dtype=torch.float64)
    if kind is PenaltyKind.TANDEM_CHAIN:
        x = states.detach().clone().requires_grad_(True)
        out = g_net(x)
        total = torch.zeros((), dtype=torch.float64)
        for i in range(out.shape[-1] - 1):
            diff = (out[:, i] - out[:, i + 1]).sum()
            slope = torch.autograd.grad(diff, x, create_graph=True)[0][:, i]
            total = total + (torch.clamp(slope, max=0.0) ** 2).mean()
        return total

    out = g_net(states)
    neg = torch.clamp(out, max=0.0).abs()
    if kind is PenaltyKind.CRISSCROSS:
        lower = (2.0 * states[:, 0] > states[:, 1]).to(torch.float64)
        return ((neg[:, 0] * lower + neg[:, 1] * (1.0 - lower)) ** 2).mean()
    return (neg[:, 0] ** 2 + neg[:, 1] ** 2).mean()


def gradient_consistency(v_net: Mlp, g_net: Mlp, states: torch.Tensor) -> torch.Tensor:
    """Mean squared gap between the G-net and the input gradient of the V-net."""
    x = states.detach().clone().requires_grad_(True)
    grad_v = torch.autograd.grad(v_net(x).sum(), x, create_graph=True)[0]
    return ((g_net(x) - grad_v) ** 2).sum(dim=-1).mean()


class TrainResult(NamedTuple):
    v_net: Mlp
    g_net: Mlp
    loss_history: list[float]


@traced("solver.train")
def train(problem: ControlProblem, config: SolverConfig) -> TrainResult:
    """Fit V- and G-networks by minimizing the reference residual.

    Args:
        problem: the control problem.
        config: hyperparameters, e.g. from ``SolverConfig.for_problem``.

    Returns:
        TrainResult with both networks and the per-step residual loss.
    """
    config.validate()
    torch.manual_seed(config.seed)
    d = problem.d
    v_net = Mlp(d, 1, config.hidden_layers, config.neurons)
    g_net = Mlp(d, d, config.hidden_layers, config.neurons)
    optimizer = torch.optim.Adam(
        list(v_net.parameters()) + list(g_net.parameters()), lr=config.lr_schedule(0)
    )
    use_penalty = problem.penalty is not PenaltyKind.NONE and config.shape_weight > 0
    history: list[float] = []
    logger.info(
        f"Training on {problem.name} (d={d}, p={problem.p}) for {config.epochs} epochs x "
        f"{config.iterations} iterations"
    )

    for epoch in range(config.epochs):
        path = simulate_reference_batch(problem, config, config.seed, epoch)
        batch = PathTensors.from_path(path, problem)
        states = batch.penalty_states()
        for it in range(config.iterations):
            step = epoch * config.iterations + it
            for group in optimizer.param_groups:
                group["lr"] = config.lr_schedule(step)

            residual = loss_residual(
                batch, v_net, g_net, problem, b=config.bound_at(step), theta=config.theta_tilde
            )
            total = residual
            if use_penalty:
                total = total + config.shape_weight * shape_penalty(problem.penalty, g_net, states)
            decay_weight = config.decay_weight_at(step)
            if decay_weight > 0:
                total = total + decay_weight * gradient_consistency(v_net, g_net, states)
            if not torch.isfinite(total):
                raise DivergedLoss("training loss is not finite", step=step, epoch=epoch)

            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            history.append(float(residual.detach()))

            if config.log_every and step % config.log_every == 0:
                logger.debug(
                    f"step {step}: residual={history[-1]:.6g}, total={float(total.detach()):.6g}, "
                    f"b={config.bound_at(step):.3g}"
                )
        logger.info(f"Epoch {epoch + 1}/{config.epochs} done, residual={history[-1]:.6g}")

    return TrainResult(v_net=v_net, g_net=g_net, loss_history=history)
