"""Adaptive two-exit CNN for activity recognition on low-power devices.

The pieces: a numpy CNN with an early exit (``model``), its training loop
(``trainer``), the preprocessing pipeline (``preprocess``), a decision-tree
exit predictor (``obp``), routing and cost accounting (``engine``) and
evaluation metrics (``metrics``).  ``cli`` ties them together.
"""
from .errors import ConfigError, DataError, MicroExitError, NumericalError, ShapeError
from .model import BASELINE, FOB, ExitPoint, ModelConfig, MultiOutputCnn, build, load, save

__version__ = "0.1.0"
