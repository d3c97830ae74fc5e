"""flowseg: foreground branch segmentation trained entirely in simulation.

Procedurally generates domain-randomized orchard scenes, renders RGB
frame pairs with exact depth and flow supervision, estimates dense
optical flow classically, trains a small conditional-GAN segmentation
network on 6-channel RGB+flow inputs, and evaluates masks with IOU /
FP / FN metrics and Welch's t-test.
"""

__version__ = "0.1.0"

from .config import FlowParams, RunConfig, SceneConfig, TrainParams, load_config
from .flowfield import FlowField

__all__ = [
    "FlowField",
    "FlowParams",
    "RunConfig",
    "SceneConfig",
    "TrainParams",
    "load_config",
    "__version__",
]
