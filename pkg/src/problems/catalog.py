"""Control-problem datum and the catalog of worked examples."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from src.errors import DimensionMismatch, PreconditionViolated, UnknownCase
from src.problems.costs import (
    CRISSCROSS_CASES,
    CRISSCROSS_PROFILE,
    CrissCrossPiecewiseCost,
    HoldingCost,
    LinearCost,
    WorkloadLpCost,
)
from src.stochastic.core import BrownianSpec, CovarianceMatrix, cholesky, is_m_matrix
from src.stochastic.reflection import ReflectionStepResult, WedgeChart, reflect_step

logger = logging.getLogger(__name__)


class Formulation(Enum):
    """Whether boundary reflection is exogenous or carried by the first d controls."""

    WITH_REFLECTION = "with_reflection"
    WITHOUT_REFLECTION = "without_reflection"


class PenaltyKind(Enum):
    """Shape constraints known for an example's gradient."""

    NONE = "none"
    CRISSCROSS = "crisscross"
    THREESTATION = "threestation"
    TANDEM_CHAIN = "tandem_chain"


@dataclass(frozen=True)
class Orthant:
    """The non-negative orthant."""

    def contains(self, w: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return np.all(np.asarray(w) >= -tol, axis=-1)


@dataclass(frozen=True)
class Wedge:
    """A planar wedge with a chart onto the quadrant."""

    chart: WedgeChart

    def contains(self, w: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        return self.chart.contains(w, tol)


StateSpace = Orthant | Wedge


@dataclass(frozen=True)
class ControlProblem:
    """Full datum of a singular (or drift) control instance.

    Attributes:
        name: catalog family, e.g. ``tandem``.
        xi: drift of the driving Brownian motion.
        cov: its covariance.
        G: d x p control matrix.
        c: control cost rates.
        h: holding cost.
        gamma: discount rate.
        b: bound on drift-control rates.
        formulation: with or without exogenous reflection.
        R: reflection matrix (with-reflection formulation only).
        pi: boundary penalty rates (with-reflection formulation only).
        state_space: orthant or wedge.
        theta_tilde: nominal drift of the reference process.
        n: heavy-traffic scaling parameter (queueing examples).
        eliminated_controls: control columns fixed at zero.
        init_box: upper corner of the box initial states are drawn from.
        penalty: shape constraints used during training.
    """

    name: str
    xi: np.ndarray
    cov: CovarianceMatrix
    G: np.ndarray
    c: np.ndarray
    h: HoldingCost
    gamma: float
    b: float
    formulation: Formulation = Formulation.WITHOUT_REFLECTION
    R: np.ndarray | None = None
    pi: np.ndarray | None = None
    state_space: StateSpace = field(default_factory=Orthant)
    theta_tilde: np.ndarray | None = None
    n: float | None = None
    eliminated_controls: tuple[int, ...] = ()
    init_box: np.ndarray | None = None
    penalty: PenaltyKind = PenaltyKind.NONE
    case: str | None = None

    def __post_init__(self) -> None:
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        g = np.atleast_2d(np.asarray(self.G, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        d = xi.shape[0]
        if g.shape[0] != d or c.shape != (g.shape[1],):
            raise DimensionMismatch("inconsistent problem dimensions", xi=xi.shape, G=g.shape, c=c.shape)
        if self.gamma <= 0:
            raise PreconditionViolated(f"discount rate must be positive (got {self.gamma})")
        if self.b <= 0:
            raise PreconditionViolated(f"drift bound must be positive (got {self.b})")
        if np.any(c < 0):
            raise PreconditionViolated("control costs must be non-negative", c=c)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "G", g)
        object.__setattr__(self, "c", c)
        BrownianSpec(xi=xi, cov=self.cov)

        if self.formulation is Formulation.WITH_REFLECTION:
            if self.R is None:
                raise PreconditionViolated("with-reflection formulation needs a reflection matrix")
            object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
            pi = np.zeros(d) if self.pi is None else np.atleast_1d(np.asarray(self.pi, dtype=float))
            object.__setattr__(self, "pi", pi)
        elif g.shape[1] < d:
            raise PreconditionViolated("without-reflection formulation needs p >= d")

        theta = np.zeros(g.shape[1]) if self.theta_tilde is None else self.theta_tilde
        theta = np.broadcast_to(np.asarray(theta, dtype=float), (g.shape[1],)).copy()
        if np.any(theta < 0) or np.any(theta > self.b):
            raise PreconditionViolated("nominal drift must lie in [0, b]", theta_tilde=theta)
        object.__setattr__(self, "theta_tilde", theta)

        box = np.ones(d) if self.init_box is None else self.init_box
        object.__setattr__(self, "init_box", np.broadcast_to(np.asarray(box, dtype=float), (d,)).copy())

        if isinstance(self.state_space, Orthant):
            if not is_m_matrix(self.reflection_matrix):
                raise PreconditionViolated(
                    "reflection submatrix is not an M-matrix", R=self.reflection_matrix
                )
        elif not is_m_matrix(self.state_space.chart.chart_reflection(self.reflection_matrix)):
            raise PreconditionViolated("chart reflection is not an M-matrix")

    @property
    def d(self) -> int:
        return int(self.xi.shape[0])

    @property
    def p(self) -> int:
        return int(self.G.shape[1])

    @property
    def brownian(self) -> BrownianSpec:
        return BrownianSpec(xi=self.xi, cov=self.cov)

    @property
    def reflection_matrix(self) -> np.ndarray:
        if self.formulation is Formulation.WITH_REFLECTION:
            assert self.R is not None
            return self.R
        return self.G[:, : self.d]

    @property
    def boundary_penalty(self) -> np.ndarray:
        """Penalty rate per unit of boundary pushing."""
        if self.formulation is Formulation.WITH_REFLECTION:
            assert self.pi is not None
            return self.pi
        return self.c[: self.d]

    @property
    def control_mask(self) -> np.ndarray:
        """True for control columns that may be exercised."""
        mask = np.ones(self.p, dtype=bool)
        mask[list(self.eliminated_controls)] = False
        return mask

    @property
    def cholesky_factor(self) -> np.ndarray:
        return cholesky(self.cov)

    def reflect_step(self, w: np.ndarray, dx: np.ndarray) -> ReflectionStepResult:
        """One reflected step in the problem's state space."""
        if isinstance(self.state_space, Wedge):
            return self.state_space.chart.reflect_step(w, dx, self.reflection_matrix)
        return reflect_step(w, dx, self.reflection_matrix)

    def sample_initial_states(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform draws from the initial-state box intersected with the state space."""
        out = np.empty((0, self.d))
        while out.shape[0] < count:
            draw = rng.random((2 * count, self.d)) * self.init_box
            out = np.concatenate([out, draw[self.state_space.contains(draw)]])
        return out[:count]

    def describe(self) -> dict[str, Any]:
        """JSON-friendly summary of the datum."""
        return {
            "name": self.name,
            "case": self.case,
            "d": self.d,
            "p": self.p,
            "xi": self.xi.tolist(),
            "A": self.cov.matrix.tolist(),
            "G": self.G.tolist(),
            "c": self.c.tolist(),
            "gamma": self.gamma,
            "b": self.b,
            "formulation": self.formulation.value,
            "state_space": "wedge" if isinstance(self.state_space, Wedge) else "orthant",
            "theta_tilde": self.theta_tilde.tolist() if self.theta_tilde is not None else None,
            "n": self.n,
            "eliminated_controls": list(self.eliminated_controls),
        }


THREESTATION_PROFILE = np.array(
    [[2.0, 0.0, 2.0, 2.0, 0.0, 6.0, 4.0, 2.0], [3.0, 3.0, 3.0, 4.0, 1.0, 6.0, 3.0, 3.0]]
)
THREESTATION_HOLDING = np.array([6.0, 3.0, 6.0, 6.0, 1.0, 12.0, 7.0, 6.0])
THREESTATION_CASES: dict[str, tuple[float, float, float]] = {
    "1": (2.0, 1.0, 1.0),
    "2": (2.0, 1.0, 2.0),
    "3": (1.65, 1.0, 2.25),
}
MANYQUEUES_HOLDING = (3.0, 3.9, 2.0, 2.9, 1.0, 1.9)
QUEUEING_SCALE = 400.0
QUEUEING_INTEREST = 0.01


def _oned(b: float = 10.0) -> ControlProblem:
    return ControlProblem(
        name="oned",
        xi=np.zeros(1),
        cov=CovarianceMatrix(np.eye(1)),
        G=np.array([[1.0, -1.0]]),
        c=np.array([0.0, 1.0]),
        h=LinearCost(np.array([2.0])),
        gamma=0.1,
        b=b,
        init_box=np.array([2.0]),
    )


def _oned_reflected(b: float = 10.0) -> ControlProblem:
    return ControlProblem(
        name="oned_reflected",
        xi=np.zeros(1),
        cov=CovarianceMatrix(np.eye(1)),
        G=np.array([[-1.0]]),
        c=np.array([1.0]),
        h=LinearCost(np.array([2.0])),
        gamma=0.1,
        b=b,
        formulation=Formulation.WITH_REFLECTION,
        R=np.eye(1),
        pi=np.zeros(1),
        init_box=np.array([2.0]),
    )


def _parallel(d: int = 30, b: float = 10.0) -> ControlProblem:
    if d < 1:
        raise UnknownCase(f"parallel example needs d >= 1 (got {d})")
    eye = np.eye(d)
    return ControlProblem(
        name="parallel",
        case=str(d),
        xi=np.zeros(d),
        cov=CovarianceMatrix(eye),
        G=np.hstack([eye, -eye]),
        c=np.concatenate([np.zeros(d), np.ones(d)]),
        h=LinearCost(np.full(d, 2.0)),
        gamma=0.1,
        b=b,
        theta_tilde=np.concatenate([np.zeros(d), np.ones(d)]),
        init_box=np.full(d, 2.0),
    )


def _tandem(b: float = 20.0) -> ControlProblem:
    return ControlProblem(
        name="tandem",
        xi=np.array([-1.0, 0.0]),
        cov=CovarianceMatrix(np.array([[2.0, -1.0], [-1.0, 2.0]])),
        G=np.array([[1.0, 0.0], [-1.0, 1.0]]),
        c=np.zeros(2),
        h=LinearCost(np.array([1.0, 2.0])),
        gamma=QUEUEING_SCALE * QUEUEING_INTEREST,
        b=b,
        n=QUEUEING_SCALE,
        init_box=np.full(2, 3.0),
        penalty=PenaltyKind.TANDEM_CHAIN,
    )


def _crisscross(case: str = "IIA", b: float = 20.0) -> ControlProblem:
    if case not in CRISSCROSS_CASES:
        raise UnknownCase(f"unknown criss-cross case: {case}", known=sorted(CRISSCROSS_CASES))
    return ControlProblem(
        name="crisscross",
        case=case,
        xi=np.array([-0.5, -1.0]),
        cov=CovarianceMatrix(np.array([[1.0, 0.5], [0.5, 2.0]])),
        G=np.eye(2),
        c=np.zeros(2),
        h=WorkloadLpCost(h_class=np.array(CRISSCROSS_CASES[case]), M=CRISSCROSS_PROFILE),
        gamma=QUEUEING_SCALE * QUEUEING_INTEREST,
        b=b,
        theta_tilde=np.array([0.0, 0.5]),
        n=QUEUEING_SCALE,
        init_box=np.full(2, 3.0),
        penalty=PenaltyKind.CRISSCROSS,
    )


def _threestation(case: str = "1", b: float = 200.0) -> ControlProblem:
    case = str(case).removeprefix("case")
    if case not in THREESTATION_CASES:
        raise UnknownCase(f"unknown three-station case: {case}", known=sorted(THREESTATION_CASES))
    c4, c5, c6 = THREESTATION_CASES[case]
    G = np.array([[1.0, 0.0, 2.0, -1.0, -0.5, -1.5], [0.0, 1.0, 3.0, -1.5, -1.0, -1.5]])
    chart = WedgeChart.from_profile(THREESTATION_PROFILE, G[:, :2], R_assoc=(0, 1))
    return ControlProblem(
        name="threestation",
        case=case,
        xi=np.array([-5.0, -5.0]),
        cov=CovarianceMatrix(np.array([[50.0, 54.0], [54.0, 69.0]])),
        G=G,
        c=np.array([0.0, 0.0, 0.0, c4, c5, c6]),
        h=WorkloadLpCost(h_class=THREESTATION_HOLDING, M=THREESTATION_PROFILE),
        gamma=0.1,
        b=b,
        state_space=Wedge(chart),
        eliminated_controls=(2,),
        init_box=np.array([40.0, 43.2]),
        penalty=PenaltyKind.THREESTATION,
    )


def _manyqueues(
    d: int = 6, h: tuple[float, ...] | None = None, b: float = 20.0
) -> ControlProblem:
    if d < 2:
        raise UnknownCase(f"many-queues example needs d >= 2 (got {d})")
    rates = np.asarray(MANYQUEUES_HOLDING if h is None else h, dtype=float)
    if rates.shape != (d,):
        raise DimensionMismatch("holding rates must have one entry per queue", d=d, h=rates.shape)
    cov = 2.0 * np.eye(d) - np.eye(d, k=1) - np.eye(d, k=-1)
    G = np.eye(d) - np.eye(d, k=-1)
    xi = np.zeros(d)
    xi[0] = -1.0
    return ControlProblem(
        name="manyqueues",
        case=str(d),
        xi=xi,
        cov=CovarianceMatrix(cov),
        G=G,
        c=np.zeros(d),
        h=LinearCost(rates),
        gamma=QUEUEING_SCALE * QUEUEING_INTEREST,
        b=b,
        theta_tilde=np.full(d, 0.5),
        n=QUEUEING_SCALE,
        init_box=np.full(d, 3.0),
        penalty=PenaltyKind.TANDEM_CHAIN,
    )


_BUILDERS = {
    "oned": _oned,
    "oned_reflected": _oned_reflected,
    "parallel": _parallel,
    "tandem": _tandem,
    "crisscross": _crisscross,
    "threestation": _threestation,
    "manyqueues": _manyqueues,
}


def list_examples() -> list[str]:
    return sorted(_BUILDERS)


def make_example(name: str, **params: Any) -> ControlProblem:
    """Build a catalog instance.

    Args:
        name: one of ``list_examples()``.
        **params: family parameters: ``d`` (parallel, manyqueues), ``case``
            (crisscross, threestation), ``h`` (manyqueues) and ``b`` (all).

    Returns:
        The ControlProblem.
    """
    builder = _BUILDERS.get(name)
    if builder is None:
        raise UnknownCase(f"unknown example: {name}", known=list_examples())
    try:
        problem = builder(**params)
    except TypeError as e:
        raise UnknownCase(f"invalid parameters for {name}: {e}", params=sorted(params)) from e
    logger.debug(f"Built example {name} with d={problem.d}, p={problem.p}")
    return problem
