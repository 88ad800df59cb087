"""Training configuration and schedules for the neural solver."""

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from src.errors import ConfigInvalid
from src.problems.catalog import ControlProblem
from src.stochastic.core import NormalMethod, TimeGrid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PiecewiseSchedule:
    """Piecewise-constant value indexed by the global optimizer step.

    ``breakpoints`` lists (first_step, value) pairs with non-decreasing steps.
    """

    breakpoints: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        steps = [s for s, _ in self.breakpoints]
        if not steps or steps[0] != 0:
            raise ConfigInvalid("schedule must start at step 0", breakpoints=self.breakpoints)
        if any(b < a for a, b in zip(steps, steps[1:])):
            raise ConfigInvalid("schedule breakpoints must be non-decreasing", breakpoints=steps)

    def __call__(self, step: int) -> float:
        value = self.breakpoints[0][1]
        for start, v in self.breakpoints:
            if step >= start:
                value = v
        return value


@dataclass(frozen=True)
class RampSchedule:
    """min(target, start + step / divisor): bound ramp-up during training."""

    start: float
    divisor: float
    target: float

    def __call__(self, step: int) -> float:
        return min(self.target, self.start + step / self.divisor)


@dataclass(frozen=True)
class DecaySchedule:
    """(start - step / divisor)^+: weight of the gradient-consistency term."""

    start: float = 7.0
    divisor: float = 4800.0

    def __call__(self, step: int) -> float:
        return max(0.0, self.start - step / self.divisor)


# per-family training defaults
_FAMILY_DEFAULTS: dict[str, dict[str, Any]] = {
    "parallel": {
        "neurons": 300,
        "epochs": 135,
        "iterations": 6000,
        "lr": ((0, 5e-4), (9500, 3e-4), (22000, 1e-4)),
        "decay": DecaySchedule(),
    },
    "tandem": {
        "neurons": 50,
        "epochs": 34,
        "iterations": 6000,
        "lr": ((0, 5e-4), (3000, 3e-4), (9000, 1e-4)),
    },
    "crisscross": {
        "neurons": 50,
        "epochs": 34,
        "iterations": 6000,
        "lr": ((0, 5e-4), (3000, 3e-4), (9000, 1e-4)),
        "ramp": (4.0, 80.0),
    },
    "threestation": {
        "neurons": 100,
        "epochs": 40,
        "iterations": 6000,
        "lr": ((0, 5e-4), (19000, 3e-4), (44000, 1e-4), (70000, 3e-5)),
        "ramp": (40.0, 800.0),
    },
    "manyqueues": {
        "neurons": 100,
        "epochs": 52,
        "iterations": 9000,
        "lr": ((0, 5e-4), (3000, 3e-4), (9000, 1e-4), (100000, 5e-5), (150000, 2e-5)),
        "ramp": (4.0, 14400.0),
    },
}
_FAMILY_ALIASES = {"oned": "parallel", "oned_reflected": "parallel"}


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters of one training run.

    ``epochs`` outer passes each draw a fresh batch of reference paths and
    take ``iterations`` optimizer steps on it. Schedules are indexed by the
    global step ``epoch * iterations + iteration``.
    """

    b: float
    theta_tilde: np.ndarray
    horizon: float = 0.1
    num_steps: int = 64
    batch_size: int = 256
    iterations: int = 6000
    epochs: int = 34
    lr_schedule: PiecewiseSchedule = field(
        default_factory=lambda: PiecewiseSchedule(((0, 5e-4), (3000, 3e-4), (9000, 1e-4)))
    )
    hidden_layers: int = 3
    neurons: int = 50
    shape_weight: float = 1.0
    bound_ramp: RampSchedule | None = None
    decay: DecaySchedule | None = None
    seed: int = 0
    normal_method: NormalMethod = NormalMethod.ZIGGURAT
    log_every: int = 500

    @property
    def dt(self) -> float:
        return self.horizon / self.num_steps

    @property
    def total_steps(self) -> int:
        return self.epochs * self.iterations

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_steps(self.horizon, self.num_steps)

    def bound_at(self, step: int) -> float:
        return self.bound_ramp(step) if self.bound_ramp is not None else self.b

    def decay_weight_at(self, step: int) -> float:
        return self.decay(step) if self.decay is not None else 0.0

    def validate(self) -> None:
        problems = []
        if self.b <= 0:
            problems.append(f"b must be positive (got {self.b})")
        if np.any(self.theta_tilde < 0) or np.any(self.theta_tilde > self.b):
            problems.append("theta_tilde must lie in [0, b]")
        if self.horizon < 0 or self.num_steps < 0:
            problems.append("horizon and num_steps must be non-negative")
        if self.horizon > 0 and self.num_steps == 0:
            problems.append("a positive horizon needs num_steps >= 1")
        for name in ("batch_size", "iterations", "epochs", "hidden_layers", "neurons"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.shape_weight < 0:
            problems.append("shape_weight must be non-negative")
        if problems:
            raise ConfigInvalid("invalid solver configuration", problems=problems)

    @classmethod
    def for_problem(cls, problem: ControlProblem, **overrides: Any) -> "SolverConfig":
        """Defaults for a catalog problem, with keyword overrides.

        Args:
            problem: the catalog instance; its family selects the defaults.
            **overrides: any SolverConfig field. ``lr_schedule`` may be given as
                a list of (step, rate) pairs.
        """
        family = _FAMILY_ALIASES.get(problem.name, problem.name)
        defaults = _FAMILY_DEFAULTS.get(family, _FAMILY_DEFAULTS["tandem"])
        ramp = defaults.get("ramp")
        b = float(overrides.pop("b", problem.b))
        config = cls(
            b=b,
            theta_tilde=np.asarray(problem.theta_tilde, dtype=float),
            iterations=defaults["iterations"],
            epochs=defaults["epochs"],
            lr_schedule=PiecewiseSchedule(defaults["lr"]),
            neurons=defaults["neurons"],
            bound_ramp=RampSchedule(ramp[0], ramp[1], b) if ramp else None,
            decay=defaults.get("decay"),
        )
        if "lr_schedule" in overrides and not isinstance(overrides["lr_schedule"], PiecewiseSchedule):
            overrides["lr_schedule"] = PiecewiseSchedule(
                tuple((int(s), float(v)) for s, v in overrides["lr_schedule"])
            )
        if "theta_tilde" in overrides:
            overrides["theta_tilde"] = np.broadcast_to(
                np.asarray(overrides["theta_tilde"], dtype=float), (problem.p,)
            ).copy()
        if "normal_method" in overrides and isinstance(overrides["normal_method"], str):
            overrides["normal_method"] = NormalMethod(overrides["normal_method"])
        for key in ("bound_ramp", "decay"):
            if overrides.get(key) is False:
                overrides[key] = None
        try:
            config = replace(config, **overrides)
        except TypeError as e:
            raise ConfigInvalid(f"unknown solver option: {e}") from e
        config.validate()
        return config

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["theta_tilde"] = self.theta_tilde.tolist()
        data["lr_schedule"] = [list(bp) for bp in self.lr_schedule.breakpoints]
        data["normal_method"] = self.normal_method.value
        return data
