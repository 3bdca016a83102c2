"""RGB-D camouflaged object detection: hierarchical texture/geometry
enhancement with adaptive fusion, on a from-scratch differentiable tensor
engine, plus the four-metric evaluation suite."""

from .network import AblationSwitches, ForwardOutput, MheNet, NetworkConfig
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "AblationSwitches",
    "ForwardOutput",
    "MheNet",
    "NetworkConfig",
    "Tensor",
    "backward",
    "no_grad",
    "__version__",
]
