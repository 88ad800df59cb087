"""Monte-Carlo cost estimates and their aggregation across replication blocks."""

from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np


@dataclass
class BlockTotals:
    """Sufficient statistics of one replication block."""

    block: int
    count: int
    total: float
    total_sq: float
    breakdown: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_samples(cls, block: int, samples: np.ndarray, breakdown: dict[str, np.ndarray] | None = None) -> "BlockTotals":
        samples = np.asarray(samples, dtype=float)
        return cls(
            block=block,
            count=int(samples.size),
            total=float(samples.sum()),
            total_sq=float(np.square(samples).sum()),
            breakdown={k: float(np.sum(v)) for k, v in (breakdown or {}).items()},
        )


@dataclass
class CostEstimate:
    """Discounted-cost estimate: mean with standard error over replications."""

    mean: float
    stderr: float
    replications: int
    horizon: float
    breakdown: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_blocks(cls, blocks: Iterable[BlockTotals], horizon: float) -> "CostEstimate":
        """Combine blocks in block order, so the result does not depend on scheduling."""
        ordered = sorted(blocks, key=lambda b: b.block)
        n = sum(b.count for b in ordered)
        if n == 0:
            return cls(mean=0.0, stderr=0.0, replications=0, horizon=horizon)
        total = 0.0
        total_sq = 0.0
        breakdown: dict[str, float] = {}
        for b in ordered:
            total += b.total
            total_sq += b.total_sq
            for key, value in b.breakdown.items():
                breakdown[key] = breakdown.get(key, 0.0) + value
        mean = total / n
        var = max(total_sq - n * mean**2, 0.0) / (n - 1) if n > 1 else 0.0
        return cls(
            mean=mean,
            stderr=float(np.sqrt(var / n)),
            replications=n,
            horizon=horizon,
            breakdown={k: v / n for k, v in sorted(breakdown.items())},
        )

    @classmethod
    def from_samples(cls, samples: np.ndarray, horizon: float) -> "CostEstimate":
        return cls.from_blocks([BlockTotals.from_samples(0, samples)], horizon)

    def within(self, value: float, k: float = 3.0) -> bool:
        """True if ``value`` lies within k standard errors of the mean."""
        return abs(self.mean - value) <= k * self.stderr

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "replications": self.replications,
            "horizon": self.horizon,
            "breakdown": dict(self.breakdown),
        }


def pooled_stderr(a: CostEstimate, b: CostEstimate) -> float:
    """Standard error of a.mean - b.mean for independent estimates."""
    return float(np.hypot(a.stderr, b.stderr))
