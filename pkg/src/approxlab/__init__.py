"""approxlab: desk-scale black-box malware-classifier approximation.

Serves a byte-feature "black-box" behind a label-only prediction API,
maps binaries onto Hilbert-curve pixel canvases, progressively trains
pixel-feature substitutes against the oracle, and measures prediction
agreement on a disjoint comparison set.
"""

from .approx import ApproxConfig, ApproxTrace, StopReason, progressive_approximate
from .augment import AugmentArm, augment_threefold, flip, rotate90
from .corpus import (
    BinarySample,
    DatasetPartition,
    Label,
    PeInfo,
    Source,
    partition,
    synth_corpus,
    validate_pe,
)
from .features import FeatureSpace, FeatureVector
from .hilbert import d2xy, xy2d
from .models import ModelKind, PredModel, TrainConfig, predict, evaluate
from .oracle import InProcessOracle, OracleClient, OracleServer, QueryLedger
from .render import ImageRepr, RenderConfig, RenderMode, shannon_entropy
from .similarity import SimilarityReport, compare_models, similarity_score

__version__ = "0.1.0"

__all__ = [
    "ApproxConfig",
    "ApproxTrace",
    "AugmentArm",
    "BinarySample",
    "DatasetPartition",
    "FeatureSpace",
    "FeatureVector",
    "ImageRepr",
    "InProcessOracle",
    "Label",
    "ModelKind",
    "OracleClient",
    "OracleServer",
    "PeInfo",
    "PredModel",
    "QueryLedger",
    "RenderConfig",
    "RenderMode",
    "SimilarityReport",
    "Source",
    "StopReason",
    "TrainConfig",
    "augment_threefold",
    "compare_models",
    "d2xy",
    "evaluate",
    "flip",
    "partition",
    "predict",
    "progressive_approximate",
    "rotate90",
    "shannon_entropy",
    "similarity_score",
    "synth_corpus",
    "validate_pe",
    "xy2d",
]
