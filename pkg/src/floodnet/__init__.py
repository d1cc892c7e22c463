"""Desk-scale multimodal flood classifier with a from-scratch autodiff core."""

from .autodiff import ContractError, Graph, Node, ShapeError
from .config import ConfigError, ModelConfig
from .model import FloodNet, predict

__all__ = [
    "ContractError",
    "Graph",
    "Node",
    "ShapeError",
    "ConfigError",
    "ModelConfig",
    "FloodNet",
    "predict",
]

__version__ = "0.1.0"
