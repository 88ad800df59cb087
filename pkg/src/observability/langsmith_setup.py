"""LangSmith setup and tracing utilities for solver and simulation runs."""

import logging
import os
import time
from functools import wraps
from typing import Any, Callable, TypeVar

from langsmith import Client, traceable

logger = logging.getLogger(__name__)

_langsmith_client: Client | None = None

F = TypeVar("F", bound=Callable[..., Any])


def setup_langsmith(
    api_key: str | None = None,
    project: str = "singular-control",
    tracing_enabled: bool = False,
) -> bool:
    """Setup LangSmith for run tracing.

    Args:
        api_key: LangSmith API key. If None, uses LANGSMITH_API_KEY env var.
        project: Project name for organizing traces.
        tracing_enabled: Whether to enable tracing.

    Returns:
        True if tracing is active, False otherwise.
    """
    global _langsmith_client

    if api_key:
        os.environ["LANGSMITH_API_KEY"] = api_key

    os.environ["LANGSMITH_PROJECT"] = project
    os.environ["LANGSMITH_TRACING"] = str(tracing_enabled).lower()

    if not tracing_enabled:
        return False

    if not os.environ.get("LANGSMITH_API_KEY"):
        logger.warning("LANGSMITH_API_KEY not set. Tracing will be disabled.")
        os.environ["LANGSMITH_TRACING"] = "false"
        return False

    try:
        _langsmith_client = Client()
        logger.info(f"LangSmith initialized for project: {project}")
        return True
    except Exception as e:
        logger.error(f"Failed to initialize LangSmith: {e}")
        os.environ["LANGSMITH_TRACING"] = "false"
        return False


def get_langsmith_client() -> Client | None:
    """Get the LangSmith client instance."""
    return _langsmith_client


def summarize_inputs(inputs: dict[str, Any]) -> dict[str, Any]:
    """Replace arrays, tensors and modules by short descriptions."""
    summary: dict[str, Any] = {}
    for key, value in inputs.items():
        shape = getattr(value, "shape", None)
        if shape is not None:
            summary[key] = f"{type(value).__name__}{tuple(shape)}"
        elif isinstance(value, (str, int, float, bool)) or value is None:
            summary[key] = value
        else:
            summary[key] = type(value).__name__
    return summary


def traced(name: str | None = None) -> Callable[[F], F]:
    """Decorator that traces a run in LangSmith and logs its wall time.

    Args:
        name: Optional name for the trace; defaults to the function name.
    """

    def decorator(func: F) -> F:
        trace_name = name or func.__name__
        traced_func = traceable(
            name=trace_name, run_type="chain", process_inputs=summarize_inputs
        )(func)

        @wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            start = time.perf_counter()
            try:
                return traced_func(*args, **kwargs)
            finally:
                logger.debug(f"{trace_name} finished in {time.perf_counter() - start:.3f}s")

        return wrapper  # type: ignore[return-value]

    return decorator


def configure_logging(level: str = "INFO") -> None:
    """Configure root logging with the toolkit's standard format."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
