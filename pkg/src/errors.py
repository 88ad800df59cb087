"""Exception hierarchy shared by all toolkit modules.

Every error carries a stable ``code`` so the CLI can emit a machine-readable
record without inspecting messages.
"""

from typing import Any


class ToolkitError(Exception):
    """Base class for all toolkit errors."""

    code = "toolkit_error"

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_record(self) -> dict[str, Any]:
        """Return a JSON-serializable error record."""
        return {
            "error": self.code,
            "message": self.message,
            "details": {k: _jsonable(v) for k, v in self.details.items()},
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


class NotPositiveDefinite(ToolkitError):
    """Covariance matrix has no Cholesky factor."""

    code = "not_positive_definite"


class DimensionMismatch(ToolkitError):
    """Array shapes are inconsistent."""

    code = "dimension_mismatch"


class NonConvergence(ToolkitError):
    """An iterative scheme hit its iteration cap."""

    code = "non_convergence"


class OutsideWedge(ToolkitError):
    """A point lies outside the wedge state space."""

    code = "outside_wedge"


class InfeasibleWorkload(ToolkitError):
    """A workload vector is not in the cone generated by the profile matrix."""

    code = "infeasible_workload"


class UnknownCase(ToolkitError):
    """Unknown example name or cost case."""

    code = "unknown_case"


class PreconditionViolated(ToolkitError):
    """Problem data violate a documented precondition."""

    code = "precondition_violated"


class GridTooCoarse(ToolkitError):
    """A finite-difference grid cannot resolve the requested quantity."""

    code = "grid_too_coarse"


class DivergedLoss(ToolkitError):
    """Training produced a non-finite loss."""

    code = "diverged_loss"


class InvalidProbabilities(ToolkitError):
    """A Markov-chain transition probability falls outside [0, 1]."""

    code = "invalid_probabilities"


class ConfigInvalid(ToolkitError):
    """An experiment configuration failed validation."""

    code = "config_invalid"


class ArtifactMissing(ToolkitError):
    """A required input artifact does not exist."""

    code = "artifact_missing"
