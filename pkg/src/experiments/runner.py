"""Experiment runner: routes subcommands to handlers and writes run artifacts."""

import json
import logging
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from src.errors import ConfigInvalid, ToolkitError
from src.experiments.config import ExperimentConfig
from src.experiments.handlers import HANDLERS, Handler, RunContext
from src.observability import traced

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
RESULT = "result.json"
ERROR = "error.json"


def build_id() -> str:
    """``git describe`` of the working tree, or ``unknown`` outside a checkout."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def write_json(path: Path, data: Any) -> Path:
    """Deterministic JSON: sorted keys, fixed indent, trailing newline."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2, default=_default) + "\n", encoding="utf-8")
    return path


def _default(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "value"):
        return value.value
    return str(value)


@dataclass
class RunOutcome:
    """Exit status and location of one run."""

    subcommand: str
    out_dir: Path
    status: int
    result: dict[str, Any] | None = None
    error: dict[str, Any] | None = None
    artifacts: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == 0


class ExperimentRunner:
    """Registry of subcommand handlers with manifest bookkeeping."""

    def __init__(self, register_defaults: bool = True):
        self._handlers: dict[str, Handler] = {}
        if register_defaults:
            for name, handler in HANDLERS.items():
                self.register_handler(name, handler)

    def register_handler(self, name: str, handler: Handler) -> None:
        """Register a handler under a subcommand name.

        Args:
            name: Subcommand name.
            handler: Callable taking a RunContext and returning a JSON-ready dict.
        """
        self._handlers[name] = handler
        logger.debug(f"Registered handler: {name}")

    def get_handler(self, name: str) -> Handler | None:
        return self._handlers.get(name)

    def list_handlers(self) -> list[str]:
        """List all registered subcommands."""
        return list(self._handlers.keys())

    @traced("runner.run")
    def run(
        self,
        subcommand: str,
        config: ExperimentConfig,
        out_dir: str | Path,
        seed: int | None = None,
        workers: int | None = 1,
    ) -> RunOutcome:
        """Run one subcommand and write manifest, result or error record.

        Args:
            subcommand: Registered subcommand name.
            config: Parsed experiment configuration.
            out_dir: Run directory; created if missing.
            seed: Overrides ``config.seed`` when given.
            workers: Replication parallelism.

        Returns:
            RunOutcome with status 0 on success, 2 for toolkit errors, 1 otherwise.
        """
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if seed is not None:
            config.seed = seed
        started = datetime.now(timezone.utc).isoformat()
        ctx = RunContext(config=config, out_dir=out_dir, seed=config.seed, workers=workers)

        result: dict[str, Any] | None = None
        error: dict[str, Any] | None = None
        status = 0
        try:
            handler = self.get_handler(subcommand)
            if handler is None:
                raise ConfigInvalid(f"unknown subcommand: {subcommand}", known=self.list_handlers())
            config.validate(subcommand)
            logger.info(f"Running {subcommand} (seed={config.seed}, workers={workers}) into {out_dir}")
            result = handler(ctx)
            write_json(ctx.path(RESULT), result)
        except ToolkitError as e:
            logger.error(f"{subcommand} failed: {e.message}", exc_info=True)
            error, status = e.to_record(), 2
        except Exception as e:
            logger.error(f"{subcommand} failed unexpectedly: {e}", exc_info=True)
            error, status = {"error": "internal_error", "message": str(e), "details": {}}, 1
        if error is not None:
            write_json(ctx.path(ERROR), error)

        write_json(
            out_dir / MANIFEST,
            {
                "subcommand": subcommand,
                "config": config.to_dict(),
                "config_source": config.source,
                "seed": config.seed,
                "workers": workers,
                "build": build_id(),
                "started_at": started,
                "finished_at": datetime.now(timezone.utc).isoformat(),
                "status": status,
                "artifacts": sorted(ctx.artifacts),
            },
        )
        return RunOutcome(subcommand, out_dir, status, result, error, list(ctx.artifacts))

    def execute_workflow(
        self,
        steps: list[dict[str, Any]],
        out_root: str | Path,
        workers: int | None = 1,
    ) -> list[RunOutcome]:
        """Run several subcommands in order, each in its own directory.

        Args:
            steps: Items with 'subcommand', 'config' (dict or ExperimentConfig),
                optional 'name' and 'required' (default True).
            out_root: Parent of the per-step run directories.

        Returns:
            Outcomes of the steps that ran; a failed required step stops the workflow.
        """
        outcomes = []
        for i, step in enumerate(steps):
            name = step.get("name", f"step_{i}")
            config = step["config"]
            if not isinstance(config, ExperimentConfig):
                config = ExperimentConfig.from_dict(config)
            logger.info(f"Executing workflow step: {name}")
            outcome = self.run(step["subcommand"], config, Path(out_root) / name, workers=workers)
            outcomes.append(outcome)
            if not outcome.ok and step.get("required", True):
                logger.error(f"Step {name} failed; stopping workflow")
                break
        return outcomes
