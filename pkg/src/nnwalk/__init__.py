"""Transient nearest-neighbour random walks on the non-negative integers."""

from nnwalk.model import DomainError, ModelSpecError, StepModel, big_lambda, iterated_log, lambda_fn, parse_model

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "ModelSpecError",
    "StepModel",
    "big_lambda",
    "iterated_log",
    "lambda_fn",
    "parse_model",
]
