"""Uniformized, truncated continuous-time MDPs for the queueing benchmarks."""

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from src.errors import PreconditionViolated, UnknownCase
from src.problems.costs import CRISSCROSS_CASES

logger = logging.getLogger(__name__)

RATE_SLACK = 1e-12

# criss-cross primitives: class 1 leaves after station 1, class 2 becomes class 3
CRISSCROSS_ARRIVALS = (1.0, 0.95)
CRISSCROSS_SERVICE = (0.5, 0.5, 1.0)


@dataclass(frozen=True)
class Transition:
    """A jump by ``shift`` at ``rate``; needs buffer ``source`` non-empty if set."""

    shift: tuple[int, ...]
    rate: float
    source: int | None = None


@dataclass(frozen=True)
class MdpAction:
    """A service allocation.

    Attributes:
        name: label used in exports.
        serves: buffers that must be non-empty for the action to be feasible.
        events: service transitions active under the action. Events whose
            source buffer is empty are self-loops.
    """

    name: str
    serves: tuple[int, ...]
    events: tuple[Transition, ...]

    @property
    def served_buffers(self) -> tuple[int, ...]:
        return tuple(sorted({e.source for e in self.events if e.source is not None}))


@dataclass
class TruncatedMdp:
    """Buffer-box MDP with arrivals blocked at the caps.

    Transitions that would leave the box (an arrival or transfer into a full
    buffer) are turned into self-loops.
    """

    caps: tuple[int, ...]
    holding: np.ndarray
    r: float
    actions: list[MdpAction]
    arrivals: tuple[Transition, ...] = ()
    uniformization: float | None = None
    name: str = "mdp"
    events_cache: dict[Transition, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.caps = tuple(int(c) for c in self.caps)
        self.holding = np.asarray(self.holding, dtype=float)
        if any(c < 1 for c in self.caps):
            raise PreconditionViolated("buffer caps must be >= 1", caps=self.caps)
        if self.holding.shape != (len(self.caps),):
            raise PreconditionViolated("one holding rate per buffer", holding=self.holding.shape)
        if self.r <= 0:
            raise PreconditionViolated(f"interest rate must be positive (got {self.r})")
        if not self.actions:
            raise PreconditionViolated("an MDP needs at least one action")
        for event in self.all_events:
            if event.rate < 0:
                raise PreconditionViolated("transition rates must be non-negative", rate=event.rate)
            if len(event.shift) != len(self.caps):
                raise PreconditionViolated("shift length must match the buffer count", shift=event.shift)
        outflow = self.max_outflow
        if self.uniformization is None:
            self.uniformization = outflow
        if self.uniformization < outflow - RATE_SLACK:
            raise PreconditionViolated(
                "uniformization constant below the total outflow rate",
                uniformization=self.uniformization,
                outflow=outflow,
            )

    @property
    def all_events(self) -> list[Transition]:
        return list(self.arrivals) + [e for a in self.actions for e in a.events]

    @property
    def max_outflow(self) -> float:
        arrival_rate = sum(e.rate for e in self.arrivals)
        return arrival_rate + max(sum(e.rate for e in a.events) for a in self.actions)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.caps)

    @property
    def num_states(self) -> int:
        return int(np.prod(self.shape))

    @property
    def action_names(self) -> list[str]:
        return [a.name for a in self.actions]

    @cached_property
    def states(self) -> np.ndarray:
        """All buffer vectors in C order, shape (S, k)."""
        grids = np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @cached_property
    def holding_rate(self) -> np.ndarray:
        return self.states @ self.holding

    def targets(self, event: Transition) -> np.ndarray:
        """Flat index reached by ``event`` from every state (self when blocked)."""
        if event not in self.events_cache:
            states = self.states
            target = states + np.asarray(event.shift)
            ok = np.all((target >= 0) & (target <= np.asarray(self.caps)), axis=-1)
            if event.source is not None:
                ok &= states[:, event.source] > 0
            flat = np.arange(self.num_states)
            moved = np.ravel_multi_index(tuple(np.where(ok[:, None], target, states).T), self.shape)
            self.events_cache[event] = np.where(ok, moved, flat)
        return self.events_cache[event]

    @cached_property
    def feasible(self) -> np.ndarray:
        """Boolean (A, S): action a may be chosen in state s."""
        out = np.ones((len(self.actions), self.num_states), dtype=bool)
        for a, action in enumerate(self.actions):
            for buffer in action.serves:
                out[a] &= self.states[:, buffer] > 0
        if not out.any(axis=0).all():
            raise PreconditionViolated("some state has no feasible action")
        return out

    def describe(self) -> dict:
        return {
            "name": self.name,
            "caps": list(self.caps),
            "holding": self.holding.tolist(),
            "r": self.r,
            "uniformization": self.uniformization,
            "actions": self.action_names,
            "states": self.num_states,
        }


def build_tandem_mdp(
    lam: float = 0.95,
    m: float = 1.0,
    h: tuple[float, float] = (1.0, 2.0),
    r: float = 0.01,
    cap: int = 1000,
) -> TruncatedMdp:
    """Two stations in series, each with mean service time ``m``."""
    if lam * m >= 1:
        raise PreconditionViolated(f"tandem load must be below one (got {lam * m})")
    mu = 1.0 / m
    serve1 = Transition((-1, 1), mu, source=0)
    serve2 = Transition((0, -1), mu, source=1)
    actions = [
        MdpAction("serve_both", (0, 1), (serve1, serve2)),
        MdpAction("idle1_serve2", (1,), (serve2,)),
        MdpAction("serve1_idle2", (0,), (serve1,)),
        MdpAction("idle_both", (), ()),
    ]
    mdp = TruncatedMdp(
        caps=(cap, cap),
        holding=np.asarray(h, dtype=float),
        r=r,
        actions=actions,
        arrivals=(Transition((1, 0), lam),),
        uniformization=lam + 2.0 * mu,
        name="tandem",
    )
    logger.info(f"Built tandem MDP with {mdp.num_states} states (cap={cap})")
    return mdp


def build_crisscross_mdp(case: str = "IIA", caps: int | tuple[int, int, int] = 300, r: float = 0.01) -> TruncatedMdp:
    """Criss-cross network; station 2 always serves class 3 when it can."""
    if case not in CRISSCROSS_CASES:
        raise UnknownCase(f"unknown criss-cross case: {case}", known=sorted(CRISSCROSS_CASES))
    cap_vec = (caps,) * 3 if isinstance(caps, int) else tuple(caps)
    lam1, lam2 = CRISSCROSS_ARRIVALS
    mu1, mu2, mu3 = (1.0 / m for m in CRISSCROSS_SERVICE)
    serve1 = Transition((-1, 0, 0), mu1, source=0)
    serve2 = Transition((0, -1, 1), mu2, source=1)
    serve3 = Transition((0, 0, -1), mu3, source=2)
    actions = [
        MdpAction("serve1", (0,), (serve1, serve3)),
        MdpAction("serve2", (1,), (serve2, serve3)),
        MdpAction("idle", (), (serve3,)),
    ]
    mdp = TruncatedMdp(
        caps=cap_vec,
        holding=np.asarray(CRISSCROSS_CASES[case], dtype=float),
        r=r,
        actions=actions,
        arrivals=(Transition((1, 0, 0), lam1), Transition((0, 1, 0), lam2)),
        uniformization=lam1 + lam2 + max(mu1, mu2) + mu3,
        name=f"crisscross-{case}",
    )
    logger.info(f"Built criss-cross MDP {case} with {mdp.num_states} states (caps={cap_vec})")
    return mdp
