# Observability package
from .langsmith_setup import (
    configure_logging,
    get_langsmith_client,
    setup_langsmith,
    traced,
)

__all__ = ["configure_logging", "get_langsmith_client", "setup_langsmith", "traced"]
