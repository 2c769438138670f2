"""Bidirectional information decoupling for multi-turn dialogue encoding."""

from .model import BidenModel, ModelConfig

__version__ = "0.1.0"

__all__ = ["BidenModel", "ModelConfig", "__version__"]
