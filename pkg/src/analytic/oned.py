"""One-dimensional reference solutions.

``solve_singular_1d`` is the smooth-pasting closed form for a reflected
Brownian motion with an upper control barrier. ``solve_drift_1d`` solves the
bounded-rate (drift control) version of the same problem by monotone finite
differences and Howard policy iteration.
"""

import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from src.errors import GridTooCoarse, NonConvergence, PreconditionViolated
from src.observability import traced

logger = logging.getLogger(__name__)

ROOT_TOL = 1e-12
MAX_POLICY_ITERATIONS = 200
DOMAIN_MULTIPLE = 10.0


@dataclass(frozen=True)
class OneDSolution:
    """Threshold w* and constant C of the singular 1-D value function.

    On [0, w*] the value function is
    V(w) = (h/(r k)) exp(-k w) + h w / r + 2 C cosh(k w) with k = sqrt(2 r / a),
    and it continues linearly with slope c above w*.
    """

    w_star: float
    C: float
    h: float
    a: float
    c: float
    r: float

    @property
    def k(self) -> float:
        return float(np.sqrt(2.0 * self.r / self.a))

    def _inner(self, w: np.ndarray, order: int) -> np.ndarray:
        k, h, r, C = self.k, self.h, self.r, self.C
        if order == 0:
            return h / (r * k) * np.exp(-k * w) + h * w / r + 2.0 * C * np.cosh(k * w)
        if order == 1:
            return h / r * (1.0 - np.exp(-k * w)) + 2.0 * C * k * np.sinh(k * w)
        return h * k / r * np.exp(-k * w) + 2.0 * C * k * k * np.cosh(k * w)

    def value(self, w: np.ndarray | float) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        inner = self._inner(np.minimum(w, self.w_star), 0)
        return inner + self.c * np.maximum(w - self.w_star, 0.0)

    def derivative(self, w: np.ndarray | float) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return np.where(w <= self.w_star, self._inner(np.minimum(w, self.w_star), 1), self.c)

    def second_derivative(self, w: np.ndarray | float) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return np.where(w <= self.w_star, self._inner(np.minimum(w, self.w_star), 2), 0.0)


@traced("analytic.solve_singular_1d")
def solve_singular_1d(h: float, a: float, c: float, r: float) -> OneDSolution:
    """Smooth-pasting solution of the singular 1-D problem.

    Args:
        h: holding cost rate.
        a: variance of the Brownian motion.
        c: cost per unit of downward control.
        r: discount rate.

    Returns:
        OneDSolution with V'(w*) = c and V''(w*) = 0.
    """
    if not (h > r * c > 0) or a <= 0:
        raise PreconditionViolated("requires h > r c > 0 and a > 0", h=h, a=a, c=c, r=r)
    k = np.sqrt(2.0 * r / a)

    # V''(w*) = 0 fixes C; V'(w*) = c then reduces to (h/r)(1 - 1/cosh(k w)) = c
    def pasting(w: float) -> float:
        return h / r * (1.0 - 1.0 / np.cosh(k * w)) - c

    upper = 1.0 / k
    while pasting(upper) <= 0:
        upper *= 2.0
    w_star = brentq(pasting, 0.0, upper, xtol=ROOT_TOL, rtol=4 * np.finfo(float).eps)
    C = -(h / (r * k)) * np.exp(-k * w_star) / (2.0 * np.cosh(k * w_star))
    logger.info(f"Singular 1-D solution: w*={w_star:.6f}, C={C:.4f}")
    return OneDSolution(w_star=float(w_star), C=float(C), h=h, a=a, c=c, r=r)


@dataclass(frozen=True)
class DriftOneDSolution:
    """Threshold and value of the bounded-rate 1-D problem on a grid.

    Unpacks as ``(threshold, v0)``.
    """

    threshold: float
    v0: float
    grid: np.ndarray
    values: np.ndarray
    policy: np.ndarray

    def __iter__(self) -> Iterator[float]:
        yield self.threshold
        yield self.v0


def _far_field(h: float, a: float, c: float, r: float, b: float) -> tuple[float, float]:
    """Decay rate mu and intercept beta of the full-control solution.

    Where the control is on, V = h w / r + beta + B exp(mu w) with mu the
    negative root of (a/2) x^2 - b x - r = 0, so V' = h/r + mu (V - h w/r - beta).
    """
    mu = (b - np.sqrt(b * b + 2.0 * a * r)) / a
    beta = b * (c - h / r) / r
    return float(mu), float(beta)


def _assemble(
    grid: np.ndarray, theta: np.ndarray, h: float, a: float, c: float, r: float, b: float
) -> tuple[np.ndarray, np.ndarray]:
    """Banded matrix and right-hand side of (a/2)V'' - theta D V - r V = -h w - theta c."""
    n = grid.shape[0]
    dx = grid[1] - grid[0]
    diffusion = a / (2.0 * dx * dx)
    central = theta * dx <= a

    lower = np.where(central, diffusion + theta / (2.0 * dx), diffusion + theta / dx)
    upper = np.where(central, diffusion - theta / (2.0 * dx), diffusion)
    diag = np.where(central, -2.0 * diffusion - r, -2.0 * diffusion - theta / dx - r)
    rhs = -h * grid - theta * c

    # reflecting end: ghost node V_{-1} = V_1, no control at zero
    lower[0] = 0.0
    upper[0] = 2.0 * diffusion
    diag[0] = -2.0 * diffusion - r
    rhs[0] = 0.0
    # far end: Robin condition of the full-control solution through a ghost node
    mu, beta = _far_field(h, a, c, r, b)
    tail = h / r * grid[-1] + beta
    lower[-1] = 2.0 * diffusion + theta[-1] / dx
    upper[-1] = 0.0
    diag[-1] = -2.0 * diffusion + a / dx * mu - theta[-1] / dx - r
    rhs[-1] = -h * grid[-1] - theta[-1] * c - a / dx * (h / r - mu * tail)

    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return ab, rhs


def _control_slope(values: np.ndarray, grid: np.ndarray, theta_on: np.ndarray, a: float) -> np.ndarray:
    """Discrete V' used by the control term at each node when control is on."""
    dx = grid[1] - grid[0]
    backward = np.empty_like(values)
    backward[0] = 0.0
    backward[1:] = np.diff(values) / dx
    slope = backward.copy()
    central = theta_on * dx <= a
    interior = np.zeros_like(central)
    interior[1:-1] = central[1:-1]
    slope[interior] = (values[2:] - values[:-2])[interior[1:-1]] / (2.0 * dx)
    return slope


@traced("analytic.solve_drift_1d")
def solve_drift_1d(
    h: float,
    a: float,
    c: float,
    r: float,
    b: float,
    mesh: float | None = None,
    domain: float | None = None,
) -> DriftOneDSolution:
    """Bounded-rate 1-D control: rV = (a/2)V'' + h w + min over theta in [0, b] of theta (c - V').

    Args:
        h, a, c, r: problem data as in ``solve_singular_1d``.
        b: bound on the control rate.
        mesh: grid spacing; defaults to min(1e-3, a / b).
        domain: truncation point; defaults to ten times the singular threshold.

    Returns:
        DriftOneDSolution; the threshold is the smallest w with V'(w) > c.
    """
    if b <= 0:
        raise PreconditionViolated(f"control bound must be positive (got {b})")
    singular = solve_singular_1d(h, a, c, r)
    dx = mesh if mesh is not None else min(1e-3, a / b)
    length = domain if domain is not None else DOMAIN_MULTIPLE * singular.w_star
    n = int(np.ceil(length / dx)) + 1
    grid = np.arange(n) * dx

    theta = np.zeros(n)
    theta_on = np.full(n, float(b))
    for iteration in range(MAX_POLICY_ITERATIONS):
        ab, rhs = _assemble(grid, theta, h, a, c, r, b)
        values = solve_banded((1, 1), ab, rhs)
        slope = _control_slope(values, grid, theta_on, a)
        new_theta = np.where(slope > c + 1e-10, float(b), 0.0)
        new_theta[0] = 0.0
        if np.array_equal(new_theta, theta):
            break
        theta = new_theta
    else:
        raise NonConvergence("policy iteration did not settle", iterations=MAX_POLICY_ITERATIONS)
    logger.debug(f"Drift 1-D policy iteration converged in {iteration + 1} sweeps")

    # V' at cell midpoints, crossing c between consecutive midpoints
    mids = 0.5 * (grid[1:] + grid[:-1])
    dv = np.diff(values) / dx - c
    above = np.flatnonzero(dv > 0)
    if above.size == 0 or above[0] == 0:
        raise GridTooCoarse("threshold is not bracketed by the grid", mesh=dx, domain=length)
    j = above[0]
    threshold = mids[j - 1] + (mids[j] - mids[j - 1]) * (-dv[j - 1]) / (dv[j] - dv[j - 1])
    logger.info(f"Drift 1-D solution (b={b}): threshold={threshold:.4f}, V(0)={values[0]:.4f}")
    return DriftOneDSolution(
        threshold=float(threshold), v0=float(values[0]), grid=grid, values=values, policy=theta
    )
