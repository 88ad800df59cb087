"""Bang-bang policies and region classifiers fed to the simulators."""

import csv
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from src.errors import DimensionMismatch
from src.problems.catalog import ControlProblem
from src.solver.networks import Mlp

logger = logging.getLogger(__name__)

HEATMAP_HEADER = ("w1", "w2", "control_index", "active")
OUTSIDE = -1


class ControlPolicy(ABC):
    """Maps states to the set of controls exercised at rate b."""

    def __init__(self, problem: ControlProblem, b: float | None = None):
        self.problem = problem
        self.b = problem.b if b is None else float(b)

    @abstractmethod
    def active_controls(self, w: np.ndarray) -> np.ndarray:
        """Boolean (..., p) mask of active control components."""

    def rates(self, w: np.ndarray) -> np.ndarray:
        """theta(w) in {0, b}^p."""
        return self.b * self.active_controls(w).astype(float)

    def _as_states(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape[-1] != self.problem.d:
            raise DimensionMismatch("state dimension mismatch", w=w.shape, d=self.problem.d)
        return w


class GradientPolicy(ControlPolicy):
    """theta_j(w) = b where (c + G' G_net(w))_j < 0, zero elsewhere."""

    def __init__(self, g_net: Mlp, problem: ControlProblem, b: float | None = None):
        super().__init__(problem, b)
        self.g_net = g_net

    @property
    def n(self) -> float | None:
        return self.problem.n

    def gradient(self, w: np.ndarray) -> np.ndarray:
        w = self._as_states(w)
        flat = self.g_net.evaluate(w.reshape(-1, self.problem.d))
        return flat.reshape(w.shape)

    def switching_function(self, w: np.ndarray) -> np.ndarray:
        """c + G' grad V(w), shape (..., p)."""
        return self.problem.c + self.gradient(w) @ self.problem.G

    def active_controls(self, w: np.ndarray) -> np.ndarray:
        return (self.switching_function(w) < 0) & self.problem.control_mask


def extract_policy(g_net: Mlp, problem: ControlProblem, b: float | None = None) -> GradientPolicy:
    return GradientPolicy(g_net, problem, b)


class NoControlPolicy(ControlPolicy):
    """Only boundary pushing; no control is ever exercised in the interior."""

    def active_controls(self, w: np.ndarray) -> np.ndarray:
        w = self._as_states(w)
        return np.zeros(w.shape[:-1] + (self.problem.p,), dtype=bool)


@dataclass(frozen=True)
class ThresholdRule:
    """Control ``control`` is active while w[coordinate] exceeds ``level``."""

    control: int
    coordinate: int
    level: float


class ThresholdPolicy(ControlPolicy):
    """Coordinate-wise threshold policy, e.g. the analytic 1-D or parallel optimum."""

    def __init__(self, problem: ControlProblem, rules: Sequence[ThresholdRule], b: float | None = None):
        super().__init__(problem, b)
        self.rules = tuple(rules)

    @classmethod
    def parallel(cls, problem: ControlProblem, level: float) -> "ThresholdPolicy":
        """Push every coordinate down above ``level`` (controls d..2d-1)."""
        d = problem.d
        return cls(problem, [ThresholdRule(d + i, i, level) for i in range(d)])

    def active_controls(self, w: np.ndarray) -> np.ndarray:
        w = self._as_states(w)
        out = np.zeros(w.shape[:-1] + (self.problem.p,), dtype=bool)
        for rule in self.rules:
            out[..., rule.control] |= w[..., rule.coordinate] > rule.level
        return out & self.problem.control_mask


class RegionPolicy(ControlPolicy):
    """Policy read off a planar label grid by nearest-cell lookup.

    Labels follow ``region_labels``: 0 for no control, j + 1 for control j.
    """

    def __init__(
        self,
        problem: ControlProblem,
        xs: np.ndarray,
        ys: np.ndarray,
        labels: np.ndarray,
        b: float | None = None,
    ):
        super().__init__(problem, b)
        if problem.d != 2:
            raise DimensionMismatch("region policies are planar", d=problem.d)
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.labels = np.asarray(labels, dtype=int)
        if self.labels.shape != (self.xs.size, self.ys.size):
            raise DimensionMismatch(
                "label grid does not match axes", labels=self.labels.shape, x=self.xs.size, y=self.ys.size
            )

    @staticmethod
    def _nearest(axis: np.ndarray, values: np.ndarray) -> np.ndarray:
        if axis.size == 1:
            return np.zeros(np.shape(values), dtype=int)
        idx = np.clip(np.searchsorted(axis, values), 1, axis.size - 1)
        left_closer = np.abs(values - axis[idx - 1]) <= np.abs(values - axis[idx])
        return np.where(left_closer, idx - 1, idx)

    def active_controls(self, w: np.ndarray) -> np.ndarray:
        w = self._as_states(w)
        i = self._nearest(self.xs, w[..., 0])
        j = self._nearest(self.ys, w[..., 1])
        label = self.labels[i, j]
        out = np.zeros(w.shape[:-1] + (self.problem.p,), dtype=bool)
        for control in range(self.problem.p):
            out[..., control] = label == control + 1
        return out


def region_labels(policy: ControlPolicy, points: np.ndarray) -> np.ndarray:
    """0 where no control is active, else 1 + the first active control.

    Points outside the problem's state space get ``OUTSIDE``.
    """
    points = np.asarray(points, dtype=float)
    active = policy.active_controls(points)
    labels = np.where(active.any(axis=-1), active.argmax(axis=-1) + 1, 0)
    inside = policy.problem.state_space.contains(points)
    return np.where(inside, labels, OUTSIDE)


def agreement_fraction(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Share of cells, inside the state space for both, with equal labels."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise DimensionMismatch("label grids differ in shape", a=a.shape, b=b.shape)
    valid = (a != OUTSIDE) & (b != OUTSIDE)
    if not valid.any():
        return 0.0
    return float(np.mean(a[valid] == b[valid]))


def heatmap_grid(
    problem: ControlProblem,
    ranges: Sequence[tuple[float, float]],
    resolution: int,
    anchor: np.ndarray | None = None,
    axes: tuple[int, ...] = (0, 1),
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evaluation points of a planar slice.

    Returns:
        (xs, ys, points) with points of shape (len(xs), len(ys), d). For a
        one-dimensional problem ys is the single value 0.
    """
    d = problem.d
    base = np.zeros(d) if anchor is None else np.asarray(anchor, dtype=float)
    xs = np.linspace(ranges[0][0], ranges[0][1], resolution)
    if d == 1:
        ys = np.zeros(1)
        points = np.broadcast_to(base, (resolution, 1, d)).copy()
        points[:, 0, 0] = xs
        return xs, ys, points
    ys = np.linspace(ranges[1][0], ranges[1][1], resolution)
    points = np.broadcast_to(base, (resolution, resolution, d)).copy()
    points[..., axes[0]] = xs[:, None]
    points[..., axes[1]] = ys[None, :]
    return xs, ys, points


def export_heatmap(
    policy: ControlPolicy,
    path: str | Path,
    ranges: Sequence[tuple[float, float]],
    resolution: int = 101,
    anchor: np.ndarray | None = None,
    axes: tuple[int, ...] = (0, 1),
) -> Path:
    """Write one row per grid point and usable control with a 0/1 activity flag."""
    problem = policy.problem
    xs, ys, points = heatmap_grid(problem, ranges, resolution, anchor, axes)
    active = policy.active_controls(points)
    controls = np.flatnonzero(problem.control_mask)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HEATMAP_HEADER)
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                for control in controls:
                    writer.writerow([f"{x:.6f}", f"{y:.6f}", int(control), int(active[i, j, control])])
    logger.info(f"Wrote {xs.size * ys.size} heatmap points to {path}")
    return path
