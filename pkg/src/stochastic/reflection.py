"""Discrete Skorokhod reflection on the orthant and on a planar wedge."""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.errors import DimensionMismatch, NonConvergence, OutsideWedge, PreconditionViolated

logger = logging.getLogger(__name__)

REFLECTION_TOL = 1e-12
REFLECTION_MAX_ITER = 100_000
CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class ReflectionStepResult:
    """Outcome of one reflected step."""

    w_next: np.ndarray
    dy: np.ndarray


@dataclass(frozen=True)
class ReflectedPath:
    """Discretized trajectory of a reflected (and possibly drift-controlled) process.

    Attributes:
        states: W at the grid points, shape (N, K+1, d).
        pushes: boundary pushing increments dY per step, shape (N, K, d).
        brownian: zero-drift Brownian increments dB per step, shape (N, K, d).
        dt: time step.
    """

    states: np.ndarray
    pushes: np.ndarray
    brownian: np.ndarray
    dt: float

    @property
    def num_paths(self) -> int:
        return int(self.states.shape[0])

    @property
    def num_steps(self) -> int:
        return int(self.pushes.shape[1])

    @property
    def cumulative_pushes(self) -> np.ndarray:
        """Y at the grid points, shape (N, K+1, d), starting from zero."""
        y = np.zeros_like(self.states)
        np.cumsum(self.pushes, axis=1, out=y[:, 1:])
        return y


def _as_reflection_matrix(R: np.ndarray) -> np.ndarray:
    r = np.atleast_2d(np.asarray(R, dtype=float))
    if r.shape[0] != r.shape[1]:
        raise DimensionMismatch("reflection matrix must be square", shape=r.shape)
    return r


def reflect_step(
    w: np.ndarray,
    dx: np.ndarray,
    R: np.ndarray,
    tol: float = REFLECTION_TOL,
    max_iter: int = REFLECTION_MAX_ITER,
) -> ReflectionStepResult:
    """Smallest dy >= 0 with w + dx + R dy >= 0.

    Vectorized over leading axes: ``w`` and ``dx`` have shape (..., d). Uses
    the fixed point dy <- max(0, Q dy - (w + dx)) with Q = I - R, which
    contracts because the spectral radius of Q is below one.
    """
    r = _as_reflection_matrix(R)
    d = r.shape[0]
    z = np.asarray(w, dtype=float) + np.asarray(dx, dtype=float)
    if z.shape[-1] != d:
        raise DimensionMismatch("state and reflection dimensions disagree", state=z.shape, R=r.shape)

    q = np.eye(d) - r
    dy = np.maximum(0.0, -z)
    if d > 1 and np.any(dy > 0):
        for iteration in range(max_iter):
            nxt = np.maximum(0.0, dy @ q.T - z)
            diff = np.max(np.abs(nxt - dy)) if nxt.size else 0.0
            dy = nxt
            if diff <= tol:
                break
        else:
            raise NonConvergence(
                "reflection fixed point did not converge", iterations=max_iter, residual=diff
            )

    w_next = z + dy @ r.T
    w_next[(w_next < 0) & (w_next >= -CLAMP_TOL)] = 0.0
    return ReflectionStepResult(w_next=w_next, dy=dy)


def reflect_step_enumerate(w: np.ndarray, dx: np.ndarray, R: np.ndarray) -> ReflectionStepResult:
    """Active-set enumeration of one reflection step (reference for small d).

    Tries every index set J, solves (w + dx + R dy)_J = 0 with dy outside J
    equal to zero, and returns the feasible complementary solution.
    """
    r = _as_reflection_matrix(R)
    z = np.asarray(w, dtype=float) + np.asarray(dx, dtype=float)
    d = r.shape[0]
    if d > 3:
        raise DimensionMismatch("enumeration is limited to d <= 3", d=d)
    for size in range(d + 1):
        for active in itertools.combinations(range(d), size):
            dy = np.zeros(d)
            if active:
                idx = list(active)
                dy[idx] = np.linalg.solve(r[np.ix_(idx, idx)], -z[idx])
            w_next = z + r @ dy
            if np.all(dy >= -1e-13) and np.all(w_next >= -1e-12):
                dy = np.maximum(dy, 0.0)
                return ReflectionStepResult(w_next=np.maximum(w_next, 0.0), dy=dy)
    raise NonConvergence("no complementary active set found", z=z)


DriftSchedule = Callable[[np.ndarray], np.ndarray]


def _check_rates(theta: np.ndarray, b: float | None) -> np.ndarray:
    if np.any(theta < 0.0):
        raise PreconditionViolated("control drift rates must be non-negative", min=float(theta.min()))
    if b is not None and np.any(theta > b):
        raise PreconditionViolated(f"control drift rates must not exceed b={b}", max=float(theta.max()))
    return theta


def reflect_path(
    w0: np.ndarray,
    increments: np.ndarray,
    R: np.ndarray,
    dt: float,
    xi: np.ndarray | None = None,
    theta: np.ndarray | DriftSchedule | None = None,
    G: np.ndarray | None = None,
    b: float | None = None,
) -> ReflectedPath:
    """Reflect a batch of paths step by step.

    Each step uses dx = dX + G theta dt, with theta taken at the current state.

    Args:
        w0: initial states, shape (N, d) or (d,).
        increments: increments of X, shape (N, K, d).
        R: reflection matrix (an M-matrix).
        dt: time step.
        xi: drift of X; used only to recover the zero-drift increments dB.
        theta: control drift rates. Either an array of shape (p,), (N, p) or
            (N, K, p) (one rate vector per step), or a callable mapping the
            current states (N, d) to rates (N, p).
        G: control matrix, required when ``theta`` is given.
        b: upper bound on the rates; when omitted only non-negativity is checked.

    Returns:
        ReflectedPath with states, pushes and Brownian increments.

    Raises:
        PreconditionViolated: negative initial states, rates outside [0, b],
            or theta without G.
    """
    r = _as_reflection_matrix(R)
    inc = np.asarray(increments, dtype=float)
    if inc.ndim != 3:
        raise DimensionMismatch("increments must have shape (N, K, d)", shape=inc.shape)
    n, k, d = inc.shape
    if d != r.shape[0]:
        raise DimensionMismatch("increments and reflection dimensions disagree", d=d, R=r.shape)

    w = np.broadcast_to(np.asarray(w0, dtype=float), (n, d)).copy()
    if np.any(w < -CLAMP_TOL):
        raise PreconditionViolated("initial states must be non-negative")

    g: np.ndarray | None = None
    schedule: np.ndarray | None = None
    if theta is not None:
        if G is None:
            raise PreconditionViolated("a control matrix G is required with theta")
        g = np.atleast_2d(np.asarray(G, dtype=float))
        if g.shape[0] != d:
            raise DimensionMismatch("control matrix rows must match the state dimension", G=g.shape, d=d)
        if not callable(theta):
            rates = _check_rates(np.asarray(theta, dtype=float), b)
            if rates.ndim == 3:
                if rates.shape[:2] != (n, k):
                    raise DimensionMismatch("per-step rates must have shape (N, K, p)", shape=rates.shape)
                schedule = rates
            else:
                schedule = np.broadcast_to(rates, (n, g.shape[1]))[:, None, :]

    states = np.empty((n, k + 1, d))
    pushes = np.empty((n, k, d))
    states[:, 0] = w
    for step in range(k):
        dx = inc[:, step]
        if g is not None:
            if schedule is not None:
                rates = schedule[:, step] if schedule.shape[1] > 1 else schedule[:, 0]
            else:
                rates = _check_rates(np.asarray(theta(w), dtype=float), b)  # type: ignore[operator]
            dx = dx + rates @ g.T * dt
        result = reflect_step(w, dx, r)
        w = result.w_next
        states[:, step + 1] = w
        pushes[:, step] = result.dy

    brownian = inc if xi is None else inc - np.asarray(xi, dtype=float) * dt
    return ReflectedPath(states=states, pushes=pushes, brownian=brownian, dt=dt)


@dataclass(frozen=True)
class WedgeChart:
    """Linear chart from a planar wedge onto the non-negative quadrant.

    Attributes:
        B: 2x2 matrix whose rows are the inward normals of the two boundary
            rays; ``B @ w >= 0`` iff w lies in the wedge.
        rays: unit directions of the two boundary rays, one per column.
        R_assoc: index of the reflection column associated with each ray.
    """

    B: np.ndarray
    rays: np.ndarray
    R_assoc: tuple[int, int] = (0, 1)

    def __post_init__(self) -> None:
        b = np.asarray(self.B, dtype=float)
        if b.shape != (2, 2) or abs(np.linalg.det(b)) < 1e-12:
            raise DimensionMismatch("wedge chart must be a non-singular 2x2 matrix", shape=b.shape)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "rays", np.asarray(self.rays, dtype=float))

    @classmethod
    def from_profile(
        cls, M: np.ndarray, R: np.ndarray, R_assoc: tuple[int, int] = (0, 1)
    ) -> "WedgeChart":
        """Build the chart of the cone generated by the columns of M.

        The extreme rays are the columns of M with the largest and smallest
        polar angle. Normal ``i`` is the inward normal of ray ``i``, scaled so
        that the reflection column associated with that ray has unit
        component along it.
        """
        m = np.asarray(M, dtype=float)
        r = np.asarray(R, dtype=float)
        angles = np.arctan2(m[1], m[0])
        upper = m[:, int(np.argmax(angles))]
        lower = m[:, int(np.argmin(angles))]
        rays = np.column_stack([upper / np.linalg.norm(upper), lower / np.linalg.norm(lower)])

        normals = []
        for ray_idx, ray in enumerate(rays.T):
            # inward normal of this ray: rotate by 90 degrees towards the other ray
            normal = np.array([ray[1], -ray[0]])
            other = rays[:, 1 - ray_idx]
            if normal @ other < 0:
                normal = -normal
            column = r[:, R_assoc[ray_idx]]
            scale = normal @ column
            if scale <= 0:
                raise OutsideWedge(
                    "associated reflection column does not point into the wedge",
                    ray=ray,
                    column=column,
                )
            normals.append(normal / scale)
        return cls(B=np.vstack(normals), rays=rays, R_assoc=R_assoc)

    def contains(self, w: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return np.all(np.asarray(w, dtype=float) @ self.B.T >= -tol, axis=-1)

    def to_orthant(self, w_wedge: np.ndarray) -> np.ndarray:
        """Chart coordinates x = B w; raises OutsideWedge outside the wedge."""
        w = np.asarray(w_wedge, dtype=float)
        if not np.all(self.contains(w)):
            raise OutsideWedge("point lies outside the wedge", w=w)
        x = w @ self.B.T
        return np.maximum(x, 0.0)

    def from_orthant(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ np.linalg.inv(self.B).T

    def chart_reflection(self, R: np.ndarray) -> np.ndarray:
        """Reflection matrix in chart coordinates, columns ordered by ray."""
        r = np.asarray(R, dtype=float)[:, list(self.R_assoc)]
        return self.B @ r

    def reflect_step(self, w: np.ndarray, dx: np.ndarray, R: np.ndarray) -> ReflectionStepResult:
        """Reflect in wedge coordinates by pushing along the associated columns."""
        r_chart = self.chart_reflection(R)
        x = np.asarray(w, dtype=float) @ self.B.T
        dx_chart = np.asarray(dx, dtype=float) @ self.B.T
        result = reflect_step(np.maximum(x, 0.0), dx_chart, r_chart)
        dy = np.zeros_like(result.dy)
        dy[..., list(self.R_assoc)] = result.dy
        return ReflectionStepResult(w_next=self.from_orthant(result.w_next), dy=dy)
