"""Linear-algebra and random-path primitives.

Covariance factorization, M-matrix verification and batched Brownian
increments keyed by (seed, replication index) so that any worker can rebuild
the stream of any replication on its own.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtri

from src.errors import DimensionMismatch, NotPositiveDefinite, PreconditionViolated

logger = logging.getLogger(__name__)

POWER_ITERATION_CAP = 10_000
M_MATRIX_MARGIN = 1e-10


class NormalMethod(Enum):
    """How standard normals are produced from the replication stream."""

    ZIGGURAT = "ziggurat"
    INVERSE_CDF = "inverse_cdf"


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric positive-definite covariance of the driving Brownian motion."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        a = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DimensionMismatch("covariance must be a non-empty square matrix", shape=a.shape)
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(a).max())):
            raise NotPositiveDefinite("covariance is not symmetric")
        object.__setattr__(self, "matrix", a)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[0])


@dataclass(frozen=True)
class BrownianSpec:
    """Drift vector and covariance of X(t) = B(t) + xi t."""

    xi: np.ndarray
    cov: CovarianceMatrix

    def __post_init__(self) -> None:
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if xi.shape != (self.cov.dim,):
            raise DimensionMismatch(
                "drift and covariance dimensions disagree", xi=xi.shape, cov=self.cov.dim
            )
        object.__setattr__(self, "xi", xi)

    @property
    def dim(self) -> int:
        return self.cov.dim


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time discretization of [0, horizon]."""

    horizon: float
    dt: float
    num_steps: int

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise PreconditionViolated(f"dt must be positive (got {self.dt})")
        if self.num_steps < 0:
            raise PreconditionViolated(f"num_steps must be non-negative (got {self.num_steps})")
        if abs(self.num_steps * self.dt - self.horizon) > 1e-12:
            raise PreconditionViolated(
                f"num_steps * dt = {self.num_steps * self.dt} does not match horizon {self.horizon}"
            )

    @classmethod
    def from_steps(cls, horizon: float, num_steps: int) -> "TimeGrid":
        if num_steps == 0:
            if horizon != 0:
                raise PreconditionViolated(f"a positive horizon needs at least one step (got {horizon})")
            # degenerate grid: a single point, no increments
            return cls(horizon=0.0, dt=1.0, num_steps=0)
        return cls(horizon=horizon, dt=horizon / num_steps, num_steps=num_steps)

    @property
    def times(self) -> np.ndarray:
        """Left endpoints t_0, ..., t_{K-1}."""
        return np.arange(self.num_steps) * self.dt


def cholesky(cov: CovarianceMatrix | np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == cov."""
    if not isinstance(cov, CovarianceMatrix):
        cov = CovarianceMatrix(np.asarray(cov, dtype=float))
    try:
        return np.linalg.cholesky(cov.matrix)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite("covariance is not positive definite", cov=cov.matrix) from e


def spectral_radius(Q: np.ndarray, tol: float = 1e-12) -> float:
    """Perron root of a non-negative square matrix by power iteration.

    Iterates on I + Q (same Perron vector, root shifted by one, and aperiodic)
    from the all-ones vector and stops when the Collatz-Wielandt bounds meet.
    """
    q = np.atleast_2d(np.asarray(Q, dtype=float))
    if q.shape[0] != q.shape[1]:
        raise DimensionMismatch("matrix must be square", shape=q.shape)
    if np.any(q < 0):
        raise PreconditionViolated("spectral_radius expects an entrywise non-negative matrix")
    d = q.shape[0]

    # nilpotent matrices (e.g. strictly triangular) have Q^d 1 = 0
    reach = np.ones(d)
    for _ in range(d):
        reach = q @ reach
    if not np.any(reach > 0):
        return 0.0

    shifted = q + np.eye(d)
    x = np.ones(d)
    lower, upper = 0.0, np.inf
    for _ in range(POWER_ITERATION_CAP):
        y = shifted @ x
        ratios = y / x
        lower, upper = float(ratios.min()), float(ratios.max())
        if upper - lower <= tol * max(1.0, upper):
            break
        x = y / np.linalg.norm(y, ord=np.inf)
    else:
        logger.debug(f"power iteration hit cap with bracket [{lower}, {upper}]")
    return max(0.5 * (lower + upper) - 1.0, 0.0)


def is_m_matrix(R: np.ndarray) -> bool:
    """True iff R = I - Q with Q >= 0 and spectral radius of Q below one."""
    r = np.atleast_2d(np.asarray(R, dtype=float))
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise DimensionMismatch("reflection matrix must be square", shape=r.shape)
    q = np.eye(r.shape[0]) - r
    if np.any(q < -1e-12):
        return False
    return spectral_radius(np.clip(q, 0.0, None)) < 1.0 - M_MATRIX_MARGIN


@dataclass(frozen=True)
class MMatrix:
    """Reflection matrix R = I - Q with unit diagonal, Q >= 0 and rho(Q) < 1."""

    R: np.ndarray

    def __post_init__(self) -> None:
        r = np.atleast_2d(np.asarray(self.R, dtype=float))
        if r.shape[0] == r.shape[1] and not np.allclose(np.diag(r), 1.0):
            raise PreconditionViolated("M-matrix diagonal must equal one", R=r)
        if not is_m_matrix(r):
            raise PreconditionViolated("matrix is not an M-matrix", R=r)
        object.__setattr__(self, "R", r)

    @property
    def Q(self) -> np.ndarray:
        return np.eye(self.R.shape[0]) - self.R


def replication_stream(seed: int, index: int, *purpose: int) -> np.random.Generator:
    """Counter-based generator for one replication (or replication block).

    Extra ``purpose`` keys give further independent streams for the same
    index, e.g. initial states as opposed to increments.
    """
    key = (index, *purpose)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def standard_normals(
    rng: np.random.Generator,
    shape: tuple[int, ...],
    method: NormalMethod = NormalMethod.ZIGGURAT,
) -> np.ndarray:
    if method is NormalMethod.INVERSE_CDF:
        # open interval keeps ndtri finite
        u = rng.random(shape)
        return ndtri(np.clip(u, 1e-300, 1.0 - 1e-16))
    return rng.standard_normal(shape)


def sample_increments(
    spec: BrownianSpec,
    grid: TimeGrid,
    batch: int,
    seed: int,
    method: NormalMethod = NormalMethod.ZIGGURAT,
    first_replication: int = 0,
) -> np.ndarray:
    """Increments xi*dt + L*sqrt(dt)*zeta, shape (batch, num_steps, d).

    Replication ``first_replication + i`` always uses the same sub-stream, so
    a batch can be split across workers without changing any path.
    """
    if batch < 1:
        raise PreconditionViolated(f"batch must be >= 1 (got {batch})")
    d = spec.dim
    out = np.empty((batch, grid.num_steps, d))
    if grid.num_steps == 0:
        return out
    scale = cholesky(spec.cov) * np.sqrt(grid.dt)
    for i in range(batch):
        zeta = standard_normals(
            replication_stream(seed, first_replication + i), (grid.num_steps, d), method
        )
        out[i] = zeta @ scale.T
    out += spec.xi * grid.dt
    return out
