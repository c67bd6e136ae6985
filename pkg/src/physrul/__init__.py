"""Stochastic physics estimation and physics-augmented LSTM RUL prediction."""

__version__ = "0.1.0"

from .harness import LstmRulRegressor, TrainConfig
from .physics import PhysicsEstimator

__all__ = ["LstmRulRegressor", "PhysicsEstimator", "TrainConfig", "__version__"]
