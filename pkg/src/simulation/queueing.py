"""Multiclass queueing networks with exponential primitives and their discounted cost.

Replications advance in lock-step within a block. At every transition the
policy is re-evaluated and the next event is drawn from an exponential race
over the arrival and in-service completion clocks, which is exact because
all primitives are memoryless.
"""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from src.errors import DimensionMismatch, PreconditionViolated, UnknownCase
from src.observability import traced
from src.problems.catalog import MANYQUEUES_HOLDING, QUEUEING_INTEREST, QUEUEING_SCALE
from src.problems.costs import CRISSCROSS_CASES, CRISSCROSS_PROFILE
from src.simulation.parallel import DEFAULT_BLOCK_SIZE, block_plan, run_blocks
from src.simulation.results import BlockTotals, CostEstimate
from src.stochastic.core import replication_stream

if TYPE_CHECKING:
    from src.simulation.policies import QueuePolicy

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 1400.0
# e^{-r T} must be negligible at termination
MIN_DISCOUNT_EXPONENT = 14.0


@dataclass(frozen=True)
class QueueModel:
    """Open multiclass network.

    Attributes:
        name: model label.
        station_of: serving station of each class.
        routing: class a job joins after service, or None if it leaves.
        arrival_rates: external arrival rate per class.
        mean_service: mean service time per class.
        holding: holding cost rate per class.
        r: interest rate.
        n: heavy-traffic scale; policies read states as M q / sqrt(n).
        profile: workload matrix M (identity when None).
    """

    name: str
    station_of: tuple[int, ...]
    routing: tuple[int | None, ...]
    arrival_rates: np.ndarray
    mean_service: np.ndarray
    holding: np.ndarray
    r: float = QUEUEING_INTEREST
    n: float = QUEUEING_SCALE
    profile: np.ndarray | None = None

    def __post_init__(self) -> None:
        k = len(self.station_of)
        for attr in ("arrival_rates", "mean_service", "holding"):
            value = np.atleast_1d(np.asarray(getattr(self, attr), dtype=float))
            if value.shape != (k,):
                raise DimensionMismatch(f"{attr} needs one entry per class", shape=value.shape, k=k)
            object.__setattr__(self, attr, value)
        if len(self.routing) != k:
            raise DimensionMismatch("routing needs one entry per class", routing=len(self.routing), k=k)
        if np.any(self.arrival_rates < 0) or np.any(self.mean_service <= 0) or np.any(self.holding < 0):
            raise PreconditionViolated("rates must be non-negative and service means positive")
        if self.r <= 0:
            raise PreconditionViolated(f"interest rate must be positive (got {self.r})")
        for start in range(k):
            seen, c = set(), start
            while c is not None:
                if c in seen:
                    raise PreconditionViolated("routing must be acyclic", start=start)
                seen.add(c)
                c = self.routing[c]
        if self.profile is not None:
            m = np.atleast_2d(np.asarray(self.profile, dtype=float))
            if m.shape[1] != k:
                raise DimensionMismatch("profile columns must match classes", profile=m.shape, k=k)
            object.__setattr__(self, "profile", m)

    @property
    def num_classes(self) -> int:
        return len(self.station_of)

    @property
    def num_stations(self) -> int:
        return max(self.station_of) + 1

    @property
    def service_rates(self) -> np.ndarray:
        return 1.0 / self.mean_service

    def classes_at(self, station: int) -> list[int]:
        return [c for c, s in enumerate(self.station_of) if s == station]

    def workload(self, q: np.ndarray) -> np.ndarray:
        """Scaled state M q / sqrt(n), shape (..., rows of M)."""
        q = np.asarray(q, dtype=float)
        scaled = q / np.sqrt(self.n)
        return scaled if self.profile is None else scaled @ self.profile.T

    def event_shifts(self) -> np.ndarray:
        """(2k, k): arrivals to each class, then service completions of each class."""
        k = self.num_classes
        shifts = np.zeros((2 * k, k), dtype=np.int64)
        shifts[np.arange(k), np.arange(k)] = 1
        for c, nxt in enumerate(self.routing):
            shifts[k + c, c] = -1
            if nxt is not None:
                shifts[k + c, nxt] = 1
        return shifts


def mm1_model(lam: float = 0.5, m: float = 1.0, h: float = 1.0, r: float = QUEUEING_INTEREST) -> QueueModel:
    return QueueModel(
        name="mm1",
        station_of=(0,),
        routing=(None,),
        arrival_rates=np.array([lam]),
        mean_service=np.array([m]),
        holding=np.array([h]),
        r=r,
    )


def tandem_model(
    lam: float = 0.95, m: float = 1.0, h: tuple[float, float] = (1.0, 2.0), r: float = QUEUEING_INTEREST
) -> QueueModel:
    return series_model(d=2, h=h, lam=lam, m=m, r=r, name="tandem")


def series_model(
    d: int = 6,
    h: tuple[float, ...] | None = None,
    lam: float = 0.95,
    m: float = 1.0,
    r: float = QUEUEING_INTEREST,
    name: str = "manyqueues",
) -> QueueModel:
    """d single-class stations in series."""
    holding = np.asarray(MANYQUEUES_HOLDING if h is None else h, dtype=float)
    if holding.shape != (d,):
        raise DimensionMismatch("one holding rate per station", d=d, h=holding.shape)
    arrivals = np.zeros(d)
    arrivals[0] = lam
    return QueueModel(
        name=name,
        station_of=tuple(range(d)),
        routing=tuple(list(range(1, d)) + [None]),
        arrival_rates=arrivals,
        mean_service=np.full(d, m),
        holding=holding,
        r=r,
    )


def crisscross_model(case: str = "IIA", r: float = QUEUEING_INTEREST) -> QueueModel:
    """Classes 1 and 2 at station 1; class 2 continues as class 3 at station 2."""
    if case not in CRISSCROSS_CASES:
        raise UnknownCase(f"unknown criss-cross case: {case}", known=sorted(CRISSCROSS_CASES))
    return QueueModel(
        name=f"crisscross-{case}",
        station_of=(0, 0, 1),
        routing=(None, 2, None),
        arrival_rates=np.array([1.0, 0.95, 0.0]),
        mean_service=np.array([0.5, 0.5, 1.0]),
        holding=np.asarray(CRISSCROSS_CASES[case], dtype=float),
        r=r,
        profile=CRISSCROSS_PROFILE,
    )


def check_service(model: QueueModel, q: np.ndarray, serving: np.ndarray) -> None:
    """Serving an empty buffer or two classes at one station is a policy bug."""
    if np.any(serving & (q <= 0)):
        raise PreconditionViolated("policy serves an empty buffer")
    for station in range(model.num_stations):
        if np.any(serving[:, model.classes_at(station)].sum(axis=1) > 1):
            raise PreconditionViolated("policy serves two classes at one station", station=station)


def discount_weight(r: float, t0: np.ndarray, t1: np.ndarray) -> np.ndarray:
    """Integral of e^{-r t} over [t0, t1]."""
    return (np.exp(-r * t0) - np.exp(-r * t1)) / r


@dataclass(frozen=True)
class QueueSimTask:
    model: QueueModel
    policy: "QueuePolicy"
    horizon: float
    seed: int
    block: int
    count: int
    initial: tuple[int, ...]


def simulate_block(task: QueueSimTask) -> BlockTotals:
    """Discounted holding cost of ``task.count`` replications."""
    model = task.model
    rng = replication_stream(task.seed, task.block)
    k = model.num_classes
    shifts = model.event_shifts()
    q = np.tile(np.asarray(task.initial, dtype=np.int64), (task.count, 1))
    t = np.zeros(task.count)
    cost = np.zeros((task.count, k))
    alive = np.ones(task.count, dtype=bool)
    arrivals = np.broadcast_to(model.arrival_rates, (task.count, k))

    while alive.any():
        serving = task.policy.service(q)
        check_service(model, q, serving)
        rates = np.concatenate([arrivals, serving * model.service_rates], axis=1)
        total = rates.sum(axis=1)
        clock = rng.standard_exponential(task.count)
        pick = rng.random(task.count) * total
        with np.errstate(divide="ignore"):
            dt = np.where(total > 0, clock / np.where(total > 0, total, 1.0), np.inf)

        t_next = np.minimum(t + dt, task.horizon)
        weight = np.where(alive, discount_weight(model.r, t, t_next), 0.0)
        cost += q * model.holding * weight[:, None]

        fire = alive & (t + dt < task.horizon)
        event = np.minimum((np.cumsum(rates, axis=1) <= pick[:, None]).sum(axis=1), 2 * k - 1)
        q[fire] += shifts[event[fire]]
        t = np.where(alive, t_next, t)
        alive = t < task.horizon

    breakdown = {f"holding_class{c + 1}": cost[:, c] for c in range(k)}
    return BlockTotals.from_samples(task.block, cost.sum(axis=1), breakdown)


@traced("queue.simulate_discounted")
def simulate_discounted(
    model: QueueModel,
    policy: "QueuePolicy",
    horizon: float = DEFAULT_HORIZON,
    reps: int = 1000,
    seed: int = 0,
    workers: int | None = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    initial: tuple[int, ...] | None = None,
) -> CostEstimate:
    """Estimate E int_0^T e^{-r t} h.Q(t) dt from empty (or ``initial``) buffers.

    Args:
        model: the queueing network.
        policy: scheduling policy with a vectorized ``service`` method.
        horizon: truncation time T; needs r T >= 14.
        reps: number of replications.
        seed: root seed; replication block b uses stream (seed, b).
        workers: process count (None or <= 0 for all cores).
        block_size: replications per block.
        initial: starting buffer contents.

    Returns:
        CostEstimate with per-class holding breakdown.
    """
    if horizon * model.r < MIN_DISCOUNT_EXPONENT:
        raise PreconditionViolated(
            "horizon too short for the discount rate",
            horizon=horizon,
            r=model.r,
            required=MIN_DISCOUNT_EXPONENT / model.r,
        )
    start = tuple([0] * model.num_classes) if initial is None else tuple(int(x) for x in initial)
    if len(start) != model.num_classes or min(start) < 0:
        raise DimensionMismatch("initial state needs one non-negative count per class", initial=start)
    tasks = [
        QueueSimTask(model, policy, horizon, seed, block, count, start)
        for block, count in block_plan(reps, block_size)
    ]
    logger.info(f"Simulating {model.name} under {policy.name}: {reps} reps, horizon {horizon}")
    estimate = CostEstimate.from_blocks(run_blocks(simulate_block, tasks, workers), horizon)
    logger.info(f"{model.name}/{policy.name}: {estimate.mean:.4f} +/- {estimate.stderr:.4f}")
    return estimate
