"""Class-balanced hierarchical refinement for overlapping, imbalanced imagery."""

from .backbone import BackboneConfig, PyramidBackbone
from .data import BBox, CLASS_NAMES, DatasetManifest, LabelVector, Sample, is_positive
from .errors import ChrnetError, ConfigError, DataError, NumericalError
from .evalkit import average_precision, evaluate, pointing_localize
from .head import HeadConfig, RefinementHead, VARIANTS
from .loss import chr_loss, compute_gates, plain_bce_loss
from .model import RecognitionModel, build_model
from .synth import GlyphSpec, Scene, SubsetSpec, build_subsets, compose, generate_dataset, render_glyph
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "BackboneConfig",
    "CLASS_NAMES",
    "ChrnetError",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "GlyphSpec",
    "HeadConfig",
    "LabelVector",
    "NumericalError",
    "PyramidBackbone",
    "RecognitionModel",
    "RefinementHead",
    "Sample",
    "Scene",
    "SubsetSpec",
    "TrainConfig",
    "VARIANTS",
    "average_precision",
    "build_model",
    "build_subsets",
    "chr_loss",
    "compose",
    "compute_gates",
    "evaluate",
    "generate_dataset",
    "is_positive",
    "plain_bce_loss",
    "pointing_localize",
    "render_glyph",
    "train",
]
