"""Linear boundary policies for series queues and their staged tuning."""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.errors import PreconditionViolated
from src.simulation.policies import DiffusionCrissCrossPolicy, QueuePolicy
from src.simulation.queueing import DEFAULT_HORIZON, QueueModel, simulate_discounted
from src.simulation.results import CostEstimate

logger = logging.getLogger(__name__)

ODD_RANGE = tuple(np.round(np.arange(0.0, 1.0 + 1e-9, 0.1), 10))
EVEN_RANGE = tuple(np.round(np.arange(0.4, 3.6 + 1e-9, 0.1), 10))
SAFETY_STOCKS = (0, 1, 2, 3, 4)


def lbp_idle(i: int, W: np.ndarray, beta: Sequence[float], queue: np.ndarray | None = None) -> np.ndarray:
    """True where odd station i (1-based) idles: empty buffer or beta_i W_i + 1 <= beta_{i+1} W_{i+1}."""
    W = np.asarray(W, dtype=float)
    beta = np.asarray(beta, dtype=float)
    d = W.shape[-1]
    if i % 2 == 0 or not 1 <= i < d:
        raise PreconditionViolated(f"linear boundary rule applies to odd stations below d (got {i})")
    idle = beta[i - 1] * W[..., i - 1] + 1.0 <= beta[i] * W[..., i]
    if queue is not None:
        idle = idle | (np.asarray(queue)[..., i - 1] <= 0)
    return idle


class LinearBoundaryPolicy(QueuePolicy):
    """Odd stations idle on the affine workload rule; even stations never idle.

    Odd stations not listed in ``active`` are work-conserving too.
    """

    name = "linear_boundary"

    def __init__(self, model: QueueModel, beta: Sequence[float], active: Sequence[int] | None = None):
        super().__init__(model)
        d = model.num_classes
        self.beta = np.asarray(beta, dtype=float)
        if self.beta.shape != (d,) or np.any(self.beta < 0):
            raise PreconditionViolated("beta needs one non-negative entry per station", beta=self.beta)
        odd = list(range(1, d, 2))
        self.active = tuple(odd if active is None else active)
        if any(i % 2 == 0 or i >= d for i in self.active):
            raise PreconditionViolated("only odd stations below d may idle", active=self.active)

    def service(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q)
        out = q > 0
        w = q / np.sqrt(self.model.n)
        for i in self.active:
            out[:, i - 1] &= ~lbp_idle(i, w, self.beta, q)
        return out

    def describe(self) -> dict:
        return {**super().describe(), "beta": self.beta.tolist(), "active": list(self.active)}


@dataclass
class LbpSearchResult:
    beta: np.ndarray
    estimate: CostEstimate
    stages: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "estimate": self.estimate.to_dict(), "stages": self.stages}


def lbp_grid_search(
    model: QueueModel,
    reps: int = 10_000,
    seed: int = 0,
    odd_range: Sequence[float] = ODD_RANGE,
    even_range: Sequence[float] = EVEN_RANGE,
    horizon: float | None = None,
    workers: int | None = 1,
) -> LbpSearchResult:
    """Stage-wise search over (beta_{2k-1}, beta_{2k}).

    Stage k tunes station pair k with the earlier pairs fixed at their best
    values and all later odd stations work-conserving. Candidates within a
    stage share the seed, hence common random numbers.
    """
    d = model.num_classes
    if d % 2:
        raise PreconditionViolated(f"staged search needs an even number of stations (got {d})")
    horizon = DEFAULT_HORIZON if horizon is None else horizon
    beta = np.zeros(d)
    stages: list[dict] = []
    best_estimate: CostEstimate | None = None

    for stage in range(d // 2):
        odd_station = 2 * stage + 1
        active = list(range(1, odd_station + 1, 2))
        best: tuple[float, float] | None = None
        stage_estimate: CostEstimate | None = None
        for b_odd, b_even in itertools.product(odd_range, even_range):
            candidate = beta.copy()
            candidate[2 * stage], candidate[2 * stage + 1] = b_odd, b_even
            estimate = simulate_discounted(
                model, LinearBoundaryPolicy(model, candidate, active), horizon, reps, seed, workers
            )
            if stage_estimate is None or estimate.mean < stage_estimate.mean:
                best, stage_estimate = (b_odd, b_even), estimate
        assert best is not None and stage_estimate is not None
        beta[2 * stage], beta[2 * stage + 1] = best
        best_estimate = stage_estimate
        stages.append(
            {
                "stage": stage + 1,
                "candidates": len(odd_range) * len(even_range),
                "beta": [float(b) for b in best],
                "cost": stage_estimate.mean,
            }
        )
        logger.info(f"LBP stage {stage + 1}: beta={best}, cost={stage_estimate.mean:.3f}")

    assert best_estimate is not None
    return LbpSearchResult(beta=beta, estimate=best_estimate, stages=stages)


def tune_safety_stock(
    model: QueueModel,
    g_net,
    candidates: Sequence[int] = SAFETY_STOCKS,
    reps: int = 10_000,
    seed: int = 0,
    horizon: float | None = None,
    workers: int | None = 1,
) -> tuple[int, dict[int, CostEstimate]]:
    """Pick the criss-cross safety stock with the lowest simulated cost."""
    horizon = DEFAULT_HORIZON if horizon is None else horizon
    estimates = {
        int(s): simulate_discounted(
            model, DiffusionCrissCrossPolicy(model, g_net, s), horizon, reps, seed, workers
        )
        for s in candidates
    }
    best = min(estimates, key=lambda s: estimates[s].mean)
    logger.info(f"Safety stock {best} selected ({estimates[best].mean:.3f})")
    return best, estimates
