"""Hybrid-spectrum graph pre-training and prompt tuning.

A filter bank of beta-shaped spectral kernels is applied to a graph's
normalized Laplacian, one lightweight encoder is pre-trained per kernel with
a contrastive objective, and downstream few-shot tasks are solved by grafting
small trainable prompt graphs onto the frozen backbone.
"""

from .graph import Graph, DatasetSplit, load_graph, save_graph, laplacian
from .spectral import FilterBank, beta_constant, filter_response
from .csbm import CsbmParams, generate
from .pretrain import PretrainConfig, PretrainedModel, pretrain, freeze
from .prompt import TuneConfig, PromptState, tune, predict

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "DatasetSplit",
    "load_graph",
    "save_graph",
    "laplacian",
    "FilterBank",
    "beta_constant",
    "filter_response",
    "CsbmParams",
    "generate",
    "PretrainConfig",
    "PretrainedModel",
    "pretrain",
    "freeze",
    "TuneConfig",
    "PromptState",
    "tune",
    "predict",
]
