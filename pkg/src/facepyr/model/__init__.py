from .backbones import MobileNetV2Backbone, PreactResNet, TinyStub, build_backbone
from .context import CONTEXT_VARIANTS, build_context_module
from .detector import FaceDetector, LevelPrediction, flatten_predictions
from .fpn import FeaturePyramid

__all__ = [
    "CONTEXT_VARIANTS",
    "FaceDetector",
    "FeaturePyramid",
    "LevelPrediction",
    "MobileNetV2Backbone",
    "PreactResNet",
    "TinyStub",
    "build_backbone",
    "build_context_module",
    "flatten_predictions",
]
