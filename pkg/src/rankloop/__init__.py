"""Preference-ranked fine-tuning loop for low-light image enhancement.

A tone-curve enhancer is pretrained on dark images, a CNN quality ranker
learns pairwise preferences (bootstrapped from a no-reference naturalness
metric, then from annotator votes), and the enhancer is fine-tuned against
the ranker's differentiable score, stage by stage. Includes an HTTP
annotation service for live votes, a deterministic simulated-annotator
panel for automated runs, and Thurstone-model study aggregation.
"""

from .bootstrap import NaturalnessScorer
from .enhancer import ContentFeatureExtractor, CurveEnhancer
from .ranker import QualityRanker, RankedPair, margin_ranking_loss
from .study import PreferenceMatrix, build_matrix, thurstone_scores

__version__ = "0.1.0"

__all__ = [
    "ContentFeatureExtractor",
    "CurveEnhancer",
    "NaturalnessScorer",
    "PreferenceMatrix",
    "QualityRanker",
    "RankedPair",
    "build_matrix",
    "margin_ranking_loss",
    "thurstone_scores",
    "__version__",
]
