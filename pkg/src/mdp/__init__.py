# Queueing MDP benchmarks package
from .model import MdpAction, Transition, TruncatedMdp, build_crisscross_mdp, build_tandem_mdp
from .value_iteration import (
    TabularPolicy,
    bellman_q,
    evaluate_policy,
    export_tables,
    greedy_actions,
    value_iteration,
)

__all__ = [
    "MdpAction",
    "TabularPolicy",
    "Transition",
    "TruncatedMdp",
    "bellman_q",
    "build_crisscross_mdp",
    "build_tandem_mdp",
    "evaluate_policy",
    "export_tables",
    "greedy_actions",
    "value_iteration",
]
