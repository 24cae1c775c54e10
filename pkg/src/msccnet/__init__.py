"""Multi-spectral class-center networks for face manipulation localization.

A small numpy-only reverse-mode tensor library drives a toy backbone,
multi-level feature aggregation and the multi-spectral class-center module;
around it sit an SSIM-based mask annotator, pooled segmentation metrics, a
procedural tamper corpus and a command line.
"""

from .annotate import AnnotationConfig, annotate_pair
from .config import RunConfig
from .estimator import MSCCNet, SpectralDecomposer, TamperAnnotator
from .exceptions import ConfigError, ContractError, DataIOError, MSCCError, NonFiniteLossError, UndefinedMetricError
from .network import NetworkConfig, TrainConfig
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "AnnotationConfig",
    "ConfigError",
    "ContractError",
    "DataIOError",
    "MSCCError",
    "MSCCNet",
    "NetworkConfig",
    "NonFiniteLossError",
    "RunConfig",
    "SpectralDecomposer",
    "TamperAnnotator",
    "Tensor",
    "TrainConfig",
    "UndefinedMetricError",
    "annotate_pair",
    "no_grad",
]
