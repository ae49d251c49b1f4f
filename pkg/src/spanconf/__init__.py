"""Span-level confidence estimation for generative sequence labeling.

Estimates how much to trust each labeled span produced by a beam-search
decoder, using statistics of the top-k candidates, and evaluates those
estimates with expected calibration error. Ships with an exactly solvable
reference model whose closed-form marginals serve as ground truth.
"""

from .beam import BeamCandidate, BeamResult, beam_search, force_score
from .calibration import (
    BinStats,
    CalibrationReport,
    assign_bin,
    compute_ece,
    reliability_table,
)
from .confidence import (
    METHODS,
    ConfidenceScore,
    MethodConfig,
    ScoredSpan,
    ada_agg_seq,
    adaptive_k,
    agg_seq,
    agg_span,
    score_all,
    span_prob,
)
from .refmodel import (
    HmmParams,
    HmmScorer,
    enumerate_all,
    exact_pattern_marginal,
    exact_span_marginal,
    perturb_temperature,
    posterior_next_tag,
    sample_corpus,
)
from .seqlabel import (
    GoldAnnotation,
    InputText,
    LabeledSpan,
    Tag,
    TagSequence,
    decode_si,
    encode_si,
    match_span,
    segment_spans,
)

__version__ = "0.1.0"

__all__ = [
    "BeamCandidate",
    "BeamResult",
    "BinStats",
    "CalibrationReport",
    "ConfidenceScore",
    "GoldAnnotation",
    "HmmParams",
    "HmmScorer",
    "InputText",
    "LabeledSpan",
    "METHODS",
    "MethodConfig",
    "ScoredSpan",
    "Tag",
    "TagSequence",
    "ada_agg_seq",
    "adaptive_k",
    "agg_seq",
    "agg_span",
    "assign_bin",
    "beam_search",
    "compute_ece",
    "decode_si",
    "encode_si",
    "enumerate_all",
    "exact_pattern_marginal",
    "exact_span_marginal",
    "force_score",
    "match_span",
    "perturb_temperature",
    "posterior_next_tag",
    "reliability_table",
    "sample_corpus",
    "score_all",
    "segment_spans",
    "span_prob",
]
