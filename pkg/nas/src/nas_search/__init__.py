"""Latency-aware differentiable architecture search over a gated CNN
supernet; exchanges files (latency table in, graph + weights out) with
the secure inference runtime."""

from .config import ConfigError, DivergenceError, SearchConfig
from .data import load_dataset, split_train_val, toy_dataset
from .export import encode_fixed, export_weights, save_weights_fixed
from .finetune import accuracy, build_network, finetune
from .lut import Lut, arch_latency, latency_of_arch, load_lut
from .search import darts_step, extract_arch, make_optimizers, search
from .supernet import (
    GatedOp,
    Supernet,
    TrainableX2act,
    build_supernet,
    combination_counts,
    stpai_init,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DivergenceError",
    "SearchConfig",
    "Lut",
    "GatedOp",
    "Supernet",
    "TrainableX2act",
    "accuracy",
    "arch_latency",
    "build_network",
    "build_supernet",
    "combination_counts",
    "darts_step",
    "encode_fixed",
    "export_weights",
    "extract_arch",
    "finetune",
    "latency_of_arch",
    "load_dataset",
    "load_lut",
    "make_optimizers",
    "save_weights_fixed",
    "search",
    "split_train_val",
    "stpai_init",
    "toy_dataset",
]
