"""From-scratch dense and graph neural network kernels with analytic gradients."""

from .params import ParameterSet, adam_step, init_uniform
from .ops import (
    linear,
    linear_backward,
    relu,
    relu_backward,
    dropout,
    dropout_backward,
    dot_decoder,
    dot_decoder_backward,
    weighted_bce,
    finite_diff_check,
)
from .layers import RelationAdjacency, incoming_adjacency, SageLayer, GatLayer, RgcnLayer
from .models import HeteroEncoder, LinkPredictor

__all__ = [
    "ParameterSet",
    "adam_step",
    "init_uniform",
    "linear",
    "linear_backward",
    "relu",
    "relu_backward",
    "dropout",
    "dropout_backward",
    "dot_decoder",
    "dot_decoder_backward",
    "weighted_bce",
    "finite_diff_check",
    "RelationAdjacency",
    "incoming_adjacency",
    "SageLayer",
    "GatLayer",
    "RgcnLayer",
    "HeteroEncoder",
    "LinkPredictor",
]
