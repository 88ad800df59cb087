# Monte-Carlo simulation package
from .diffusion import ControlMode, DiffusionSimConfig, simulate_policy_value
from .lbp import LbpSearchResult, LinearBoundaryPolicy, lbp_grid_search, lbp_idle, tune_safety_stock
from .parallel import block_plan, run_blocks
from .policies import (
    DiffusionChainPolicy,
    DiffusionCrissCrossPolicy,
    DiffusionTandemPolicy,
    MdpQueuePolicy,
    NeverIdlePolicy,
    QueuePolicy,
    StaticPriorityPolicy,
    action_chain,
    action_crisscross,
    action_tandem,
)
from .queueing import (
    QueueModel,
    crisscross_model,
    mm1_model,
    series_model,
    simulate_discounted,
    tandem_model,
)
from .results import BlockTotals, CostEstimate, pooled_stderr

__all__ = [
    "BlockTotals",
    "ControlMode",
    "CostEstimate",
    "DiffusionChainPolicy",
    "DiffusionCrissCrossPolicy",
    "DiffusionSimConfig",
    "DiffusionTandemPolicy",
    "LbpSearchResult",
    "LinearBoundaryPolicy",
    "MdpQueuePolicy",
    "NeverIdlePolicy",
    "QueueModel",
    "QueuePolicy",
    "StaticPriorityPolicy",
    "action_chain",
    "action_crisscross",
    "action_tandem",
    "block_plan",
    "crisscross_model",
    "lbp_grid_search",
    "lbp_idle",
    "mm1_model",
    "pooled_stderr",
    "run_blocks",
    "series_model",
    "simulate_discounted",
    "simulate_policy_value",
    "tandem_model",
    "tune_safety_stock",
]
