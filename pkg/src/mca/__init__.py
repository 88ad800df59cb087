# Markov-chain approximation package
from .chain import McaChain, McaGrid, Stencil, build_mca, kushner_stencil, project_to_state_space
from .solver import McaSolution, mca_solve

__all__ = [
    "McaChain",
    "McaGrid",
    "McaSolution",
    "Stencil",
    "build_mca",
    "kushner_stencil",
    "mca_solve",
    "project_to_state_space",
]
