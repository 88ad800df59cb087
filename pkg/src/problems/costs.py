"""Holding-cost functions and the workload/queue-length maps."""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from src.errors import DimensionMismatch, InfeasibleWorkload, PreconditionViolated, UnknownCase

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-10

# criss-cross workload profile and per-class holding rates
CRISSCROSS_PROFILE = np.array([[0.5, 0.5, 0.0], [0.0, 1.0, 1.0]])
CRISSCROSS_CASES: dict[str, tuple[float, float, float]] = {
    "IIA": (1.0, 1.0, 1.0),
    "IIB": (1.0, 1.0, 1.5),
    "IIC": (1.5, 1.0, 1.0),
    "IID": (1.5, 1.0, 1.5),
}


class HoldingCost:
    """Base class; subclasses evaluate h(w) for w of shape (..., d)."""

    dim: int

    def __call__(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearCost(HoldingCost):
    """h(w) = h . w"""

    h: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "h", np.atleast_1d(np.asarray(self.h, dtype=float)))

    @property
    def dim(self) -> int:  # type: ignore[override]
        return int(self.h.shape[0])

    def __call__(self, w: np.ndarray) -> np.ndarray:
        return np.asarray(w, dtype=float) @ self.h


@dataclass(frozen=True)
class WorkloadLpCost(HoldingCost):
    """h(w) = min{h_class . z : M z = w, z >= 0}, solved by basis enumeration.

    Every set of d linearly independent columns of M is a candidate basis;
    the optimum of a feasible bounded LP is attained at one of them.
    """

    h_class: np.ndarray
    M: np.ndarray

    def __post_init__(self) -> None:
        h = np.atleast_1d(np.asarray(self.h_class, dtype=float))
        m = np.atleast_2d(np.asarray(self.M, dtype=float))
        if m.shape[1] != h.shape[0]:
            raise DimensionMismatch("profile columns and class costs disagree", M=m.shape, h=h.shape)
        if np.any(m < 0):
            raise DimensionMismatch("workload profile must be entrywise non-negative", M=m)
        object.__setattr__(self, "h_class", h)
        object.__setattr__(self, "M", m)

    @property
    def dim(self) -> int:  # type: ignore[override]
        return int(self.M.shape[0])

    def bases(self) -> list[tuple[tuple[int, ...], np.ndarray]]:
        """Non-singular column subsets of M with their inverses."""
        out = []
        d, k = self.M.shape
        for cols in itertools.combinations(range(k), d):
            sub = self.M[:, cols]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            out.append((cols, np.linalg.inv(sub)))
        return out

    def solve(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Optimal values and minimizers z for a batch of workloads.

        Returns:
            Tuple (values, z) with shapes (...,) and (..., k).
        """
        w = np.asarray(w, dtype=float)
        if w.shape[-1] != self.dim:
            raise DimensionMismatch("workload dimension mismatch", w=w.shape, d=self.dim)
        flat = w.reshape(-1, self.dim)
        n = flat.shape[0]
        best = np.full(n, np.inf)
        best_z = np.zeros((n, self.M.shape[1]))
        scale = np.maximum(1.0, np.abs(flat).max(axis=1))
        for cols, inv in self.bases():
            z = flat @ inv.T
            feasible = np.all(z >= -FEASIBILITY_TOL * scale[:, None], axis=1)
            cost = z @ self.h_class[list(cols)]
            better = feasible & (cost < best - 1e-14)
            if np.any(better):
                best[better] = cost[better]
                best_z[better] = 0.0
                best_z[np.ix_(np.flatnonzero(better), list(cols))] = np.maximum(z[better], 0.0)
        if np.any(~np.isfinite(best)):
            bad = flat[~np.isfinite(best)][0]
            raise InfeasibleWorkload("workload lies outside the cone of the profile matrix", w=bad)
        return best.reshape(w.shape[:-1]), best_z.reshape(w.shape[:-1] + (self.M.shape[1],))

    def __call__(self, w: np.ndarray) -> np.ndarray:
        return self.solve(w)[0]


@dataclass(frozen=True)
class CrissCrossPiecewiseCost(HoldingCost):
    """Closed-form criss-cross holding cost for one of the four cost cases."""

    case: str

    def __post_init__(self) -> None:
        if self.case not in CRISSCROSS_CASES:
            raise UnknownCase(f"unknown criss-cross case: {self.case}", known=sorted(CRISSCROSS_CASES))

    @property
    def dim(self) -> int:  # type: ignore[override]
        return 2

    def __call__(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        w1, w2 = w[..., 0], w[..., 1]
        if np.any(w < -FEASIBILITY_TOL):
            raise InfeasibleWorkload("criss-cross workload must be non-negative")
        # upper branch: w2 >= 2 w1
        if self.case in ("IIA", "IIC"):
            upper = w2
        else:
            upper = -w1 + 1.5 * w2
        if self.case in ("IIA", "IIB"):
            lower = 2.0 * w1
        else:
            lower = 3.0 * w1 - 0.5 * w2
        return np.where(w2 >= 2.0 * w1, upper, lower)


def holding_cost(h: HoldingCost, w: np.ndarray) -> np.ndarray:
    """Evaluate a holding cost at one workload or a batch of workloads."""
    return h(w)


def zstar(w: np.ndarray) -> np.ndarray:
    """Cost-minimizing criss-cross queue-length configuration for workload w."""
    w = np.asarray(w, dtype=float)
    w1, w2 = w[..., 0], w[..., 1]
    return np.stack(
        [np.maximum(2.0 * w1 - w2, 0.0), np.minimum(2.0 * w1, w2), np.maximum(w2 - 2.0 * w1, 0.0)],
        axis=-1,
    )


@dataclass(frozen=True)
class WorkloadMap:
    """Scaled workload W = M q / sqrt(n) of a queue-length vector q."""

    M: np.ndarray
    n: float = 1.0

    def __post_init__(self) -> None:
        m = np.atleast_2d(np.asarray(self.M, dtype=float))
        if np.any(m < 0):
            raise DimensionMismatch("workload profile must be entrywise non-negative", M=m)
        if self.n < 1:
            raise PreconditionViolated(f"scaling parameter n must be >= 1 (got {self.n})")
        object.__setattr__(self, "M", m)

    def __call__(self, q: np.ndarray) -> np.ndarray:
        return np.asarray(q, dtype=float) @ self.M.T / np.sqrt(self.n)
