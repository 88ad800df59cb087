"""Scheduling policies for the queueing simulator.

Every policy maps a batch of buffer vectors (B, k) to a boolean (B, k)
array of classes in service: at most one class per station, never an empty
buffer. Diffusion-based policies read the trained gradient at M q / sqrt(n).
"""

import logging
from abc import ABC, abstractmethod
from typing import Callable, Sequence

import numpy as np

from src.errors import DimensionMismatch, PreconditionViolated
from src.mdp.value_iteration import TabularPolicy
from src.problems.costs import CRISSCROSS_PROFILE
from src.simulation.queueing import QueueModel
from src.solver.networks import Mlp

logger = logging.getLogger(__name__)

GradientFn = Mlp | Callable[[np.ndarray], np.ndarray]


def _gradient(g_net: GradientFn, w: np.ndarray) -> np.ndarray:
    if isinstance(g_net, Mlp):
        return g_net.evaluate(w)
    return np.asarray(g_net(w), dtype=float)


def action_tandem(q: np.ndarray, g_net: GradientFn, n: float) -> np.ndarray:
    """True where server 1 works: q1 > 0 and G1(q/sqrt(n)) > G2(q/sqrt(n))."""
    return action_chain(q, g_net, n, 1)


def action_chain(q: np.ndarray, g_net: GradientFn, n: float, i: int) -> np.ndarray:
    """True where server i (1-based) works.

    Server i < d idles iff q_i = 0 or G_i <= G_{i+1} at q / sqrt(n); the last
    server idles only when empty.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    d = q.shape[-1]
    if not 1 <= i <= d:
        raise PreconditionViolated(f"station index out of range (got {i}, d={d})")
    nonempty = q[..., i - 1] > 0
    if i == d:
        return nonempty
    g = _gradient(g_net, q / np.sqrt(n))
    return nonempty & (g[..., i - 1] > g[..., i])


IDLE, SERVE_CLASS1, SERVE_CLASS2 = 0, 1, 2


def action_crisscross(
    q: np.ndarray, g_net: GradientFn, n: float, s: int, profile: np.ndarray | None = None
) -> np.ndarray:
    """Station-1 decision: IDLE, SERVE_CLASS1 or SERVE_CLASS2.

    Idle if q1 = 0 and G1(w) < 0. Otherwise give priority to class 1 when
    q3 > s or G2(w) < 0, else to class 2.
    """
    if s < 0:
        raise PreconditionViolated(f"safety stock must be non-negative (got {s})")
    q = np.atleast_2d(np.asarray(q, dtype=float))
    m = CRISSCROSS_PROFILE if profile is None else profile
    g = _gradient(g_net, (q / np.sqrt(n)) @ m.T)
    q1, q2, q3 = q[..., 0] > 0, q[..., 1] > 0, q[..., 2]

    idle = ~q1 & (g[..., 0] < 0)
    class1_first = (q3 > s) | (g[..., 1] < 0)
    serve1 = np.where(class1_first, q1, q1 & ~q2)
    serve2 = np.where(class1_first, ~q1 & q2, q2)
    out = np.full(q.shape[:-1], IDLE, dtype=int)
    out[serve2 & ~idle] = SERVE_CLASS2
    out[serve1 & ~idle] = SERVE_CLASS1
    return out


class QueuePolicy(ABC):
    """Vectorized scheduling rule for one queueing model."""

    name = "policy"

    def __init__(self, model: QueueModel):
        self.model = model

    @abstractmethod
    def service(self, q: np.ndarray) -> np.ndarray:
        """Boolean (B, k) of classes in service."""

    def describe(self) -> dict:
        return {"policy": self.name, "model": self.model.name}


class StaticPriorityPolicy(QueuePolicy):
    """Each station serves its first non-empty class in ``order``."""

    name = "static_priority"

    def __init__(self, model: QueueModel, order: Sequence[int] | None = None):
        super().__init__(model)
        self.order = tuple(range(model.num_classes)) if order is None else tuple(order)
        if sorted(self.order) != list(range(model.num_classes)):
            raise PreconditionViolated("priority order must be a permutation of the classes", order=self.order)

    def service(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q)
        out = np.zeros(q.shape, dtype=bool)
        for station in range(self.model.num_stations):
            taken = np.zeros(q.shape[0], dtype=bool)
            for c in self.order:
                if self.model.station_of[c] != station:
                    continue
                pick = ~taken & (q[:, c] > 0)
                out[:, c] = pick
                taken |= pick
        return out

    def describe(self) -> dict:
        return {**super().describe(), "order": [c + 1 for c in self.order]}


class NeverIdlePolicy(StaticPriorityPolicy):
    """Work-conserving; ties at multiclass stations go to the lower class index."""

    name = "never_idle"

    def __init__(self, model: QueueModel):
        super().__init__(model, None)


class MdpQueuePolicy(QueuePolicy):
    """Tabulated MDP policy; states beyond the caps use the boundary entry."""

    name = "mdp"

    def __init__(self, model: QueueModel, table: TabularPolicy):
        super().__init__(model)
        if table.actions.ndim != model.num_classes:
            raise DimensionMismatch("policy table and model disagree", table=table.actions.ndim, k=model.num_classes)
        self.table = table

    def service(self, q: np.ndarray) -> np.ndarray:
        return self.table.served_classes(q)


class DiffusionChainPolicy(QueuePolicy):
    """Series stations: server i idles iff q_i = 0 or G_i <= G_{i+1}."""

    name = "diffusion_chain"

    def __init__(self, model: QueueModel, g_net: GradientFn):
        super().__init__(model)
        if model.num_classes != model.num_stations:
            raise PreconditionViolated("chain policy needs one class per station")
        self.g_net = g_net

    def service(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q)
        d = q.shape[-1]
        out = q > 0
        g = _gradient(self.g_net, q / np.sqrt(self.model.n))
        out[:, : d - 1] &= g[:, : d - 1] > g[:, 1:]
        return out


class DiffusionTandemPolicy(DiffusionChainPolicy):
    name = "diffusion_tandem"


class DiffusionCrissCrossPolicy(QueuePolicy):
    """Translated criss-cross policy with safety stock ``s`` on buffer 3."""

    name = "diffusion_crisscross"

    def __init__(self, model: QueueModel, g_net: GradientFn, s: int = 0):
        super().__init__(model)
        if model.num_classes != 3:
            raise PreconditionViolated("criss-cross policy needs the three-class model")
        self.g_net = g_net
        self.s = int(s)

    def service(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q)
        decision = action_crisscross(q, self.g_net, self.model.n, self.s, self.model.profile)
        out = np.zeros(q.shape, dtype=bool)
        out[:, 0] = decision == SERVE_CLASS1
        out[:, 1] = decision == SERVE_CLASS2
        out[:, 2] = q[:, 2] > 0
        return out

    def describe(self) -> dict:
        return {**super().describe(), "safety_stock": self.s}
