# Experiments package
from .config import SUBCOMMANDS, ExperimentConfig
from .handlers import RunContext, diffusion_policy, queue_policy
from .runner import ExperimentRunner, RunOutcome, build_id, write_json

__all__ = [
    "SUBCOMMANDS",
    "ExperimentConfig",
    "ExperimentRunner",
    "RunContext",
    "RunOutcome",
    "build_id",
    "diffusion_policy",
    "queue_policy",
    "write_json",
]
