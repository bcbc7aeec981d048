"""Low-cost image classification networks built from micro-factorized
convolutions and dynamic shift-max activations, with static cost and
structure analysis tooling."""

from .analysis import (BUDGETS, CostReport, check_budget, count_costs,
                       sweep_tradeoff, verify_connectivity,
                       verify_factorization, verify_model, verify_rank)
from .dyshiftmax import DyShiftMax
from .microfac import (MicroFacDepthwise, MicroFacPointwise, adaptive_groups,
                       channel_shuffle, compute_groups, connectivity,
                       fit_groups, pick_group_pair)
from .models import (BlockSpec, ModelSpec, Network, VARIANTS, build_model,
                     model_spec)
from .module import Context, Module
from .tensor import ConvSpec, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "BUDGETS", "BlockSpec", "Context", "ConvSpec", "CostReport",
    "DyShiftMax", "MicroFacDepthwise", "MicroFacPointwise", "ModelSpec",
    "Module", "Network", "Tensor", "VARIANTS", "adaptive_groups",
    "build_model", "channel_shuffle", "check_budget", "compute_groups",
    "connectivity", "count_costs", "fit_groups", "model_spec", "no_grad",
    "pick_group_pair", "sweep_tradeoff", "verify_connectivity",
    "verify_factorization", "verify_model", "verify_rank", "__version__",
]
