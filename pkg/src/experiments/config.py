"""Experiment files: loading, schema and validation.

An experiment file is JSON5 (plain JSON is accepted). Top-level keys:

    seed        int >= 0, root seed (the CLI ``--seed`` flag overrides it)
    output_dir  directory for artifacts (``--out`` and SCTL_OUTPUT_ROOT override it)
    problem     {"name": <catalog name>, "params": {...}} for diffusion-level commands
    solver      "nn" | "mdp" | "mca" | "analytic"
    nn          SolverConfig overrides (see SolverConfig.for_problem)
    mdp         {"model": "tandem" | "crisscross", "cap" | "caps", "case", "lam", "m", "h", "r", "eps",
                 "slice_axis", "slice_index"}
    mca         {"h1", "h2", "upper1", "upper2", "method", "eps", "max_iterations"}
    analytic    {"h", "a", "c", "r", optional "b" and "mesh" for the bounded-rate variant}
    simulation  {"reps", "horizon", "dt", "unit_steps", "block_size", "mode", "initial"}
    queue       {"model": "mm1" | "tandem" | "crisscross" | "manyqueues", model parameters,
                 "policy": queue policy spec}
    policy      diffusion-level policy spec: {"kind": "gradient", "checkpoint": path},
                {"kind": "none"}, {"kind": "threshold", "level" | "rules"},
                {"kind": "regions", "artifact": path}
    compare     {"policies": [spec, spec], "simulate": bool}
    heatmap     {"ranges": [[lo, hi], ...], "resolution", "anchor", "axes"}
    lbp         {"odd_range", "even_range", "safety_stocks", "tune": "beta" | "safety_stock"}
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import json5

from src.errors import ArtifactMissing, ConfigInvalid
from src.problems import ControlProblem, list_examples, make_example

logger = logging.getLogger(__name__)

SUBCOMMANDS = (
    "solve-nn",
    "solve-mdp",
    "solve-mca",
    "solve-1d",
    "simulate-queue",
    "simulate-diffusion",
    "tune-lbp",
    "compare",
    "export-heatmap",
)
SOLVERS = ("nn", "mdp", "mca", "analytic")
QUEUE_MODELS = ("mm1", "tandem", "crisscross", "manyqueues")
QUEUE_POLICIES = ("never_idle", "static_priority", "mdp", "diffusion", "lbp")
DIFFUSION_POLICIES = ("gradient", "none", "threshold", "regions")

# Commands that read a catalog problem
_NEEDS_PROBLEM = {"solve-nn", "solve-mca", "simulate-diffusion", "export-heatmap", "compare"}
_NEEDS_QUEUE = {"simulate-queue", "tune-lbp"}


@dataclass
class ExperimentConfig:
    """Parsed experiment file. Sections stay plain dicts until a handler resolves them."""

    seed: int = 0
    output_dir: str | None = None
    problem: dict[str, Any] = field(default_factory=dict)
    solver: str = "nn"
    nn: dict[str, Any] = field(default_factory=dict)
    mdp: dict[str, Any] = field(default_factory=dict)
    mca: dict[str, Any] = field(default_factory=dict)
    analytic: dict[str, Any] = field(default_factory=dict)
    simulation: dict[str, Any] = field(default_factory=dict)
    queue: dict[str, Any] = field(default_factory=dict)
    policy: dict[str, Any] = field(default_factory=dict)
    compare: dict[str, Any] = field(default_factory=dict)
    heatmap: dict[str, Any] = field(default_factory=dict)
    lbp: dict[str, Any] = field(default_factory=dict)
    source: str | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any], source: str | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigInvalid("experiment file must hold an object at the top level")
        known = {f for f in cls.__dataclass_fields__ if f != "source"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigInvalid(f"unknown experiment keys: {', '.join(unknown)}", unknown=unknown)
        config = cls(**data, source=source)
        for name in known - {"seed", "output_dir", "solver"}:
            if not isinstance(getattr(config, name), dict):
                raise ConfigInvalid(f"section '{name}' must be an object")
        return config

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        """Parse a JSON5 experiment file."""
        path = Path(path)
        if not path.exists():
            raise ArtifactMissing(f"experiment file not found: {path}", path=str(path))
        try:
            data = json5.loads(path.read_text(encoding="utf-8"))
        except ValueError as e:
            raise ConfigInvalid(f"cannot parse {path}: {e}", path=str(path)) from e
        logger.info(f"Loaded experiment file {path}")
        return cls.from_dict(data, source=str(path))

    def validate(self, subcommand: str | None = None) -> None:
        """Raise ConfigInvalid listing every problem found."""
        problems: list[str] = []
        if subcommand is not None and subcommand not in SUBCOMMANDS:
            problems.append(f"unknown subcommand: {subcommand}")
        if not isinstance(self.seed, int) or self.seed < 0:
            problems.append(f"seed must be a non-negative integer (got {self.seed!r})")
        if self.solver not in SOLVERS:
            problems.append(f"solver must be one of {SOLVERS} (got {self.solver!r})")

        if self.problem:
            name = self.problem.get("name")
            if name not in list_examples():
                problems.append(f"unknown problem '{name}'; known: {', '.join(list_examples())}")
        elif subcommand in _NEEDS_PROBLEM:
            problems.append(f"{subcommand} needs a 'problem' section")

        if subcommand in _NEEDS_QUEUE and self.queue.get("model") not in QUEUE_MODELS:
            problems.append(f"{subcommand} needs queue.model in {QUEUE_MODELS}")
        if self.queue.get("policy"):
            kind = self.queue["policy"].get("kind")
            if kind not in QUEUE_POLICIES:
                problems.append(f"queue.policy.kind must be one of {QUEUE_POLICIES} (got {kind!r})")
        if self.policy and self.policy.get("kind") not in DIFFUSION_POLICIES:
            problems.append(f"policy.kind must be one of {DIFFUSION_POLICIES}")
        if subcommand == "compare" and len(self.compare.get("policies", [])) != 2:
            problems.append("compare needs exactly two entries in compare.policies")

        problems += _check_positive(self.simulation, ("reps", "horizon", "dt", "block_size"), "simulation")
        problems += _check_positive(self.mca, ("h1", "h2", "upper1", "upper2", "eps"), "mca")
        problems += _check_positive(self.mdp, ("cap", "eps", "r"), "mdp")
        problems += _check_positive(self.analytic, ("a", "r", "b", "mesh"), "analytic")
        if self.mca.get("method", "policy") not in ("policy", "value"):
            problems.append("mca.method must be 'policy' or 'value'")
        if self.heatmap.get("resolution", 2) < 2:
            problems.append("heatmap.resolution must be >= 2")

        if problems:
            raise ConfigInvalid("invalid experiment configuration", problems=problems)

    def build_problem(self) -> ControlProblem:
        if not self.problem:
            raise ConfigInvalid("this command needs a 'problem' section")
        return make_example(self.problem["name"], **self.problem.get("params", {}))

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data.pop("source")
        return data


def _check_positive(section: dict[str, Any], keys: tuple[str, ...], prefix: str) -> list[str]:
    out = []
    for key in keys:
        if key not in section:
            continue
        value = section[key]
        if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
            out.append(f"{prefix}.{key} must be a positive number (got {value!r})")
    return out
