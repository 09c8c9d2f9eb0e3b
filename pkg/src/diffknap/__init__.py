"""Differentiable 0/1 knapsack and top-k operators via smoothed dynamic programming."""

from diffknap.dp import ForwardTables, Mode, ProblemSpec, batch_forward, forward
from diffknap.errors import ConfigurationError, ContractError, DiffKnapError, EnumerationLimitError, ValidationError
from diffknap.operator import OperatorOutput, hard_argmax, operator, relaxed_operator
from diffknap.regularizers import Kind, Regularizer, smoothed_max2
from diffknap.sampler import RngState, log_prob, sample, sample_many
from diffknap.vjp import VjpWorkspace, directional_derivative, vjp

__all__ = [
    "ForwardTables",
    "Mode",
    "ProblemSpec",
    "batch_forward",
    "forward",
    "ConfigurationError",
    "ContractError",
    "DiffKnapError",
    "EnumerationLimitError",
    "ValidationError",
    "OperatorOutput",
    "hard_argmax",
    "operator",
    "relaxed_operator",
    "Kind",
    "Regularizer",
    "smoothed_max2",
    "RngState",
    "log_prob",
    "sample",
    "sample_many",
    "VjpWorkspace",
    "directional_derivative",
    "vjp",
]
