# Problem catalog package
from .catalog import (
    ControlProblem,
    Formulation,
    Orthant,
    PenaltyKind,
    Wedge,
    list_examples,
    make_example,
)
from .costs import (
    CrissCrossPiecewiseCost,
    HoldingCost,
    LinearCost,
    WorkloadLpCost,
    WorkloadMap,
    holding_cost,
    zstar,
)

__all__ = [
    "ControlProblem",
    "CrissCrossPiecewiseCost",
    "Formulation",
    "HoldingCost",
    "LinearCost",
    "Orthant",
    "PenaltyKind",
    "Wedge",
    "WorkloadLpCost",
    "WorkloadMap",
    "holding_cost",
    "list_examples",
    "make_example",
    "zstar",
]
