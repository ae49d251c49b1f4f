"""Span-level confidence estimators over beam search output.

Four methods, all producing a value in [0, 1] for each span of the top-1
candidate:

Span       product of the span's unit probabilities along the top-1
           decoding context.
AggSpan    the same span-conditional probability averaged over the unique
           decoding contexts present in the beam, weighted by each
           context's own probability and normalized by the total context
           mass.
AggSeq     probability-weighted fraction of the top-k candidates whose
           segmentation contains the span.
AdaAggSeq  AggSeq over an adaptive candidate count k' = max(2, min(a+b, k))
           where a counts the non-O spans of the top-1 candidate.

AggSpan treats "the span appears here" as a tag-pattern event without a
right boundary, matching its per-unit product semantics; AggSeq requires
the full labeled span, boundary included. With an exhaustive beam and an
exact scorer the two converge to the corresponding exact marginals, which
is what the reference-model oracle tests check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

from .beam import BeamCandidate, BeamResult, RawPrediction, force_score
from .errors import (
    AlignmentError,
    ConfigError,
    DecodeError,
    DegenerateInputError,
    FormatError,
    RangeError,
    UsageError,
)
from .refmodel import ScorerBase, logsumexp, span_pattern
from .seqlabel import InputText, LabeledSpan, TagSequence, decode_si, segment_spans

METHODS = ("Span", "AggSpan", "AggSeq", "AdaAggSeq")
AGGSPAN_MODES = ("rescoring", "trace")


@dataclass(frozen=True)
class ConfidenceScore:
    """A confidence value attached to one predicted span."""

    value: float
    method: str
    span: LabeledSpan
    effective_k: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.value <= 1.0):
            raise RangeError(f"confidence {self.value} outside [0, 1]")


@dataclass(frozen=True)
class MethodConfig:
    """Estimator selection plus its knobs.

    k is the candidate budget; b is the adaptive offset used only by
    AdaAggSeq; aggspan_mode picks between rescoring every unique context
    with a live scorer and tracing recorded log-probabilities.
    """

    method: str
    k: int = 5
    b: int = 1
    aggspan_mode: str = "rescoring"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.b < 0:
            raise ConfigError(f"b must be >= 0, got {self.b}")
        if self.method == "AdaAggSeq" and self.k < 2:
            raise ConfigError("AdaAggSeq needs k >= 2")
        if self.aggspan_mode not in AGGSPAN_MODES:
            raise ConfigError(f"unknown aggspan mode {self.aggspan_mode!r}")


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else v


def _pattern_matches(tags: TagSequence, span: LabeledSpan) -> bool:
    return tags[span.start:span.end] == span_pattern(span)


def _candidate_contains(tags: TagSequence, span: LabeledSpan) -> bool:
    """Whether the candidate's segmentation contains the span itself.

    Pattern match plus the right boundary: the tag at `end` must not
    extend the span with another I of the same label.
    """
    if not _pattern_matches(tags, span):
        return False
    if span.is_outside or span.end >= len(tags):
        return True
    nxt = tags[span.end]
    return not (nxt.kind == "I" and nxt.label == span.label)


def _require_span_in_top1(beam: BeamResult, span: LabeledSpan) -> BeamCandidate:
    top1 = beam.top1
    if span.end > len(top1.tags) or not _candidate_contains(top1.tags, span):
        raise UsageError(
            f"span [{span.start}, {span.end}) {span.label} is not in the top-1 segmentation"
        )
    return top1


def _unit_sum(cand: BeamCandidate, lo: int, hi: int) -> float:
    if cand.unit_logprobs is None:
        raise UsageError(
            "candidate carries no unit log-probabilities; "
            "only AggSeq and AdaAggSeq work on sequence-score-only files"
        )
    return sum(cand.unit_logprobs[lo:hi])


def span_prob(top1: BeamCandidate, span: LabeledSpan) -> ConfidenceScore:
    """Product of the span's unit probabilities in the top-1 candidate."""
    if span.end > len(top1.tags) or not _candidate_contains(top1.tags, span):
        raise UsageError(f"span [{span.start}, {span.end}) is not in the candidate")
    value = math.exp(_unit_sum(top1, span.start, span.end))
    return ConfidenceScore(value=_clamp01(value), method="Span", span=span, effective_k=1)


def agg_span(
    beam: BeamResult,
    span: LabeledSpan,
    scorer: ScorerBase | None = None,
    cfg: MethodConfig | None = None,
    x: InputText | None = None,
) -> ConfidenceScore:
    """Context-aggregated span probability.

    Contexts are the distinct tag prefixes covering [0, start) among the
    beam candidates, each weighted by the probability of generating it.
    In rescoring mode every unique context is teacher-forced through the
    scorer; in trace mode only candidates that themselves carry the span
    pattern contribute, reusing their recorded log-probabilities.
    """
    cfg = cfg or MethodConfig(method="AggSpan")
    _require_span_in_top1(beam, span)
    pattern = span_pattern(span)
    mode = cfg.aggspan_mode

    context_logps: list[float] = []
    span_logps: list[float] = []
    seen: set[TagSequence] = set()
    if mode == "rescoring":
        if scorer is None or x is None:
            raise UsageError("rescoring mode needs a scorer and the input text")
        for cand in beam.candidates:
            prefix = cand.tags[: span.start]
            if prefix in seen:
                continue
            seen.add(prefix)
            context_logps.append(_unit_sum(cand, 0, span.start))
            span_logps.append(sum(force_score(scorer, x, prefix, pattern)))
    else:
        for cand in beam.candidates:
            if not _pattern_matches(cand.tags, span):
                continue
            prefix = cand.tags[: span.start]
            if prefix in seen:
                continue
            seen.add(prefix)
            context_logps.append(_unit_sum(cand, 0, span.start))
            span_logps.append(_unit_sum(cand, span.start, span.end))
        if not context_logps:
            raise DegenerateInputError(
                f"no usable context for span [{span.start}, {span.end}) in trace mode"
            )

    if len(context_logps) == 1:
        # Single unique context: the quotient collapses to the plain
        # span-conditional, exactly.
        value = math.exp(span_logps[0])
    else:
        log_num = logsumexp([c + s for c, s in zip(context_logps, span_logps)])
        log_den = logsumexp(context_logps)
        value = math.exp(log_num - log_den)
    return ConfidenceScore(
        value=_clamp01(value), method="AggSpan", span=span,
        effective_k=len(beam.candidates),
    )


def agg_seq(beam: BeamResult, span: LabeledSpan, k: int) -> ConfidenceScore:
    """Probability-weighted frequency of the span among the top-k candidates."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    _require_span_in_top1(beam, span)
    used = beam.candidates[: min(k, len(beam.candidates))]
    all_logps = [c.total_logprob for c in used]
    hit_logps = [c.total_logprob for c in used if _candidate_contains(c.tags, span)]
    value = math.exp(logsumexp(hit_logps) - logsumexp(all_logps))
    return ConfidenceScore(
        value=_clamp01(value), method="AggSeq", span=span, effective_k=len(used)
    )


def adaptive_k(a: int, b: int, k: int) -> int:
    """Adaptive candidate count: max(2, min(a + b, k))."""
    if k < 2:
        raise ConfigError(f"adaptive aggregation needs k >= 2, got {k}")
    if a < 0 or b < 0:
        raise ConfigError("span count and offset must be nonnegative")
    return max(2, min(a + b, k))


def ada_agg_seq(beam: BeamResult, span: LabeledSpan, cfg: MethodConfig) -> ConfidenceScore:
    """AggSeq with the candidate count adapted to the top-1's complexity.

    The complexity measure a is the number of non-O spans in the top-1
    candidate, which equals its count of B tags.
    """
    a = sum(1 for t in beam.top1.tags if t.kind == "B")
    k_prime = adaptive_k(a, cfg.b, cfg.k)
    inner = agg_seq(beam, span, k_prime)
    return replace(inner, method="AdaAggSeq")


def score_all(
    beam: BeamResult,
    cfg: MethodConfig,
    scorer: ScorerBase | None = None,
    x: InputText | None = None,
) -> tuple[list[ConfidenceScore], int]:
    """Score every span of the top-1 candidate under one method.

    Returns the scores in left-to-right span order plus the number of
    spans that had to be skipped as degenerate (trace-mode AggSpan with
    no usable context).
    """
    if x is None:
        raise UsageError("score_all needs the input text to segment the top-1 candidate")
    try:
        spans = segment_spans(x.words, beam.top1.tags)
    except (AlignmentError, FormatError) as exc:
        raise DecodeError(f"top-1 candidate of {beam.input_id!r} is not decodable: {exc}") from exc
    scores: list[ConfidenceScore] = []
    degenerate = 0
    for span in spans:
        try:
            if cfg.method == "Span":
                scores.append(span_prob(beam.top1, span))
            elif cfg.method == "AggSpan":
                scores.append(agg_span(beam, span, scorer=scorer, cfg=cfg, x=x))
            elif cfg.method == "AggSeq":
                scores.append(agg_seq(beam, span, cfg.k))
            else:
                scores.append(ada_agg_seq(beam, span, cfg))
        except DegenerateInputError:
            degenerate += 1
    return scores, degenerate


# ---------------------------------------------------------------------------
# Replay: turning raw prediction records into validated beams under the
# drop policy. A malformed candidate disappears from both the numerator
# and denominator of every aggregation; if the record's own rank-1
# candidate is unusable the whole example is excluded.

@dataclass
class ResolveStats:
    dropped_candidates: int = 0
    decode_failures: int = 0

    def merged(self, other: "ResolveStats") -> "ResolveStats":
        return ResolveStats(
            dropped_candidates=self.dropped_candidates + other.dropped_candidates,
            decode_failures=self.decode_failures + other.decode_failures,
        )


def resolve_prediction(
    raw: RawPrediction,
    label_set: Sequence[str] | None = None,
) -> tuple[BeamResult | None, ResolveStats]:
    """Validate raw candidates and rebuild a BeamResult.

    Candidates are dropped when flagged malformed, when their tags fail to
    decode (count mismatch, unknown tag, BIO violation), when their scores
    are inconsistent or non-finite, or when they duplicate an earlier tag
    sequence. Survivors are re-ranked by descending total log-probability.
    """
    stats = ResolveStats()
    kept: list[tuple[TagSequence, tuple[float, ...] | None, float]] = []
    seen: set[TagSequence] = set()
    top1_dropped = False
    min_rank = min((c.rank for c in raw.candidates), default=None)
    for cand in raw.candidates:
        try:
            if cand.malformed:
                raise FormatError("flagged malformed at export")
            tags = decode_si(cand.tags, raw.n_words, label_set)
            if tags in seen:
                raise FormatError("duplicate tag sequence")
            # Constructor revalidates score consistency.
            BeamCandidate(rank=1, tags=tags, unit_logprobs=cand.unit_logprobs,
                          total_logprob=cand.total_logprob)
        except (AlignmentError, FormatError, ValueError):
            stats.dropped_candidates += 1
            if cand.rank == min_rank:
                top1_dropped = True
            continue
        seen.add(tags)
        kept.append((tags, cand.unit_logprobs, cand.total_logprob))
    if top1_dropped or not kept:
        stats.decode_failures += 1
        return None, stats
    kept.sort(key=lambda item: -item[2])
    if len(kept) > raw.k:
        raise FormatError(f"record {raw.input_id!r} has more candidates than its beam size")
    candidates = tuple(
        BeamCandidate(rank=i, tags=tags, unit_logprobs=units, total_logprob=total)
        for i, (tags, units, total) in enumerate(kept, start=1)
    )
    return BeamResult(input_id=raw.input_id, k=raw.k, candidates=candidates), stats


# ---------------------------------------------------------------------------
# Scored-spans file.

@dataclass(frozen=True)
class ScoredSpan:
    input_id: str
    span: LabeledSpan
    method: str
    confidence: float
    effective_k: int
    correct: bool | None = None


def write_scored(path, items: Sequence[ScoredSpan]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in items:
            rec = {
                "id": s.input_id,
                "start": s.span.start,
                "end": s.span.end,
                "label": s.span.label,
                "phrase": s.span.phrase,
                "method": s.method,
                "confidence": s.confidence,
                "effective_k": s.effective_k,
                "correct": s.correct,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_scored(path) -> list[ScoredSpan]:
    out: list[ScoredSpan] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                span = LabeledSpan(
                    start=int(rec["start"]), end=int(rec["end"]),
                    label=str(rec["label"]), phrase=str(rec["phrase"]),
                )
                out.append(
                    ScoredSpan(
                        input_id=str(rec["id"]),
                        span=span,
                        method=str(rec["method"]),
                        confidence=float(rec["confidence"]),
                        effective_k=int(rec["effective_k"]),
                        correct=None if rec.get("correct") is None else bool(rec["correct"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad scored-span record ({exc})") from exc
    return out
