"""Unsupervised instance segmentation of overlapping sperm in micrographs.

Heads and dye blocks are separated from tails by shape and colour indices,
overlapping tails are clustered with Con2Dis (distance x conformity x
connectivity affinity with a spectral readout), and heads and tail pieces
are spliced back together into complete instances.
"""

from .con2dis import Con2DisConfig, con2dis
from .config import PipelineConfig
from .errors import SegmentationError
from .head_filter import FilterThresholds, MaskClass, classify_mask, provide_heads
from .metrics import evaluate, miou_mdice, pair_optimal
from .pipeline import run_pipeline, segment_image
from .splice import SpliceThresholds, SpermInstance
from .synthgen import SynthSpec, generate

__version__ = "0.1.0"

__all__ = [
    "Con2DisConfig",
    "FilterThresholds",
    "MaskClass",
    "PipelineConfig",
    "SegmentationError",
    "SpermInstance",
    "SpliceThresholds",
    "SynthSpec",
    "classify_mask",
    "con2dis",
    "evaluate",
    "generate",
    "miou_mdice",
    "pair_optimal",
    "provide_heads",
    "run_pipeline",
    "segment_image",
]
