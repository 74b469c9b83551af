"""ROI-pair image registration: candidate ROIs, prototype matching and dense field fitting."""

from .errors import *  # noqa: F401,F403
from .fit import FitConfig, FitReport, fit_ddf, pair_metrics, smoothness_loss
from .grid import BinaryMask, DisplacementField, GridImage, SoftMask, centroid, dice, tre, warp
from .match import MatchConfig, RoiPair, RoiPairSet, match_rois, select_pairs, similarity_matrix
from .pipeline import PipelineConfig, register_images
from .segment import RoiFilterConfig, SegmenterConfig, filter_rois, segment_everything
from .synth import SynthSpec, generate, score_pairing
from .volume import VolumeMatchConfig, VolumePairSet, register_volume

__version__ = "0.1.0"
