"""Expected calibration error over scored, correctness-matched spans.

Spans are grouped into M equal-width confidence bins ((m-1)/M, m/M]; a
confidence of exactly 0.0 goes to bin 1 so every span is counted. The
error is the bin-count-weighted mean absolute gap between bin accuracy
and bin mean confidence. ECE_ALL covers every span, ECE_NO only spans
with a task label.

Binning is aggregated through per-bin sufficient statistics (count, sum
of correctness, sum of confidence), so partial results can be merged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .confidence import ConfidenceScore
from .errors import ConfigError, EmptyEvaluationError, RangeError, UsageError
from .seqlabel import LabeledSpan, match_span

VARIANTS = ("ALL", "NO")


def assign_bin(confidence: float, m_bins: int) -> int:
    """Bin index in 1..M for a confidence in [0, 1].

    Bins are right-closed; exactly 0.0 lands in bin 1 by convention.
    Boundary comparisons are done against m/M directly so that float
    rounding cannot move a value across its interval edge.
    """
    if m_bins < 1:
        raise ConfigError(f"bin count must be >= 1, got {m_bins}")
    if not (0.0 <= confidence <= 1.0):
        raise RangeError(f"confidence {confidence} outside [0, 1]")
    if confidence == 0.0:
        return 1
    m = math.ceil(confidence * m_bins)
    m = min(max(m, 1), m_bins)
    while m > 1 and confidence <= (m - 1) / m_bins:
        m -= 1
    while m < m_bins and confidence > m / m_bins:
        m += 1
    return m


@dataclass(frozen=True)
class BinStats:
    """Final statistics of one confidence bin; empty bins report None."""

    m: int
    count: int
    accuracy: float | None
    mean_confidence: float | None


@dataclass
class BinAccumulator:
    """Mergeable per-bin sufficient statistics."""

    m_bins: int
    counts: list[int] = field(default_factory=list)
    correct_sums: list[float] = field(default_factory=list)
    confidence_sums: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.counts:
            self.counts = [0] * self.m_bins
            self.correct_sums = [0.0] * self.m_bins
            self.confidence_sums = [0.0] * self.m_bins

    def add(self, confidence: float, correct: bool) -> None:
        i = assign_bin(confidence, self.m_bins) - 1
        self.counts[i] += 1
        self.correct_sums[i] += 1.0 if correct else 0.0
        self.confidence_sums[i] += confidence

    def merge(self, other: "BinAccumulator") -> None:
        if other.m_bins != self.m_bins:
            raise UsageError("cannot merge accumulators with different bin counts")
        for i in range(self.m_bins):
            self.counts[i] += other.counts[i]
            self.correct_sums[i] += other.correct_sums[i]
            self.confidence_sums[i] += other.confidence_sums[i]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def bin_stats(self) -> list[BinStats]:
        out = []
        for i in range(self.m_bins):
            n = self.counts[i]
            out.append(
                BinStats(
                    m=i + 1,
                    count=n,
                    accuracy=self.correct_sums[i] / n if n else None,
                    mean_confidence=self.confidence_sums[i] / n if n else None,
                )
            )
        return out

    def ece(self) -> float:
        n = self.total
        if n == 0:
            raise EmptyEvaluationError("no spans to evaluate")
        gap_sum = 0.0
        for i in range(self.m_bins):
            if self.counts[i]:
                acc = self.correct_sums[i] / self.counts[i]
                mc = self.confidence_sums[i] / self.counts[i]
                gap_sum += self.counts[i] * abs(acc - mc)
        return gap_sum / n


@dataclass(frozen=True)
class CalibrationReport:
    """ECE numbers and reliability bins for one method's scored spans."""

    method: str
    m_bins: int
    n_all: int
    n_non_o: int
    ece_all: float
    ece_no: float | None
    bins_all: list[BinStats]
    bins_no: list[BinStats]
    excluded_counts: dict[str, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        def bins(rows: list[BinStats]) -> list[dict]:
            return [
                {"m": b.m, "count": b.count, "accuracy": b.accuracy,
                 "mean_confidence": b.mean_confidence}
                for b in rows
            ]

        return {
            "method": self.method,
            "bins": self.m_bins,
            "n_all": self.n_all,
            "n_non_o": self.n_non_o,
            "ece_all": self.ece_all,
            "ece_no": self.ece_no,
            "bins_all": bins(self.bins_all),
            "bins_no": bins(self.bins_no),
            "excluded_counts": dict(sorted(self.excluded_counts.items())),
        }


def compute_ece(
    scored: Sequence[tuple[ConfidenceScore, bool]],
    m_bins: int = 10,
    variant: str = "ALL",
) -> CalibrationReport:
    """Bin the scored spans and compute both ECE variants.

    `variant` names the metric the caller requires: when its filtered
    span set is empty this raises EmptyEvaluationError. The other variant
    is still reported when computable (ece_no is None on an all-O set).
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    all_acc = BinAccumulator(m_bins)
    no_acc = BinAccumulator(m_bins)
    methods = set()
    for score, correct in scored:
        methods.add(score.method)
        all_acc.add(score.value, correct)
        if not score.span.is_outside:
            no_acc.add(score.value, correct)
    if len(methods) > 1:
        raise UsageError(f"mixed methods in one evaluation: {sorted(methods)}")
    required = all_acc if variant == "ALL" else no_acc
    if required.total == 0:
        raise EmptyEvaluationError(f"no spans left for the {variant} variant")
    return CalibrationReport(
        method=next(iter(methods)) if methods else "unknown",
        m_bins=m_bins,
        n_all=all_acc.total,
        n_non_o=no_acc.total,
        ece_all=all_acc.ece() if all_acc.total else math.nan,
        ece_no=no_acc.ece() if no_acc.total else None,
        bins_all=all_acc.bin_stats(),
        bins_no=no_acc.bin_stats(),
    )


@dataclass(frozen=True)
class ReliabilityRow:
    m: int
    lower: float
    upper: float
    count: int
    accuracy: float | None
    mean_confidence: float | None
    gap: float | None


def reliability_table(report: CalibrationReport, variant: str = "ALL") -> list[ReliabilityRow]:
    """Plot-ready rows, one per bin; empty bins carry None statistics."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    bins = report.bins_all if variant == "ALL" else report.bins_no
    rows = []
    for b in bins:
        gap = None
        if b.count:
            gap = b.accuracy - b.mean_confidence  # type: ignore[operator]
        rows.append(
            ReliabilityRow(
                m=b.m,
                lower=(b.m - 1) / report.m_bins,
                upper=b.m / report.m_bins,
                count=b.count,
                accuracy=b.accuracy,
                mean_confidence=b.mean_confidence,
                gap=gap,
            )
        )
    return rows


def write_reliability_csv(path, rows: Iterable[ReliabilityRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "lower", "upper", "count", "accuracy", "mean_confidence", "gap"])
        for r in rows:
            writer.writerow([
                r.m, repr(r.lower), repr(r.upper), r.count,
                "" if r.accuracy is None else repr(r.accuracy),
                "" if r.mean_confidence is None else repr(r.mean_confidence),
                "" if r.gap is None else repr(r.gap),
            ])


def span_f1(
    predicted: dict[str, Sequence[LabeledSpan]],
    gold: dict[str, Sequence[LabeledSpan]],
) -> float:
    """Micro F1 over non-O spans with exact matching.

    A diagnostic under our own convention; reported alongside calibration
    numbers, never used by them.
    """
    tp = 0
    n_pred = 0
    n_gold = sum(
        1 for spans in gold.values() for s in spans if not s.is_outside
    )
    for input_id, spans in predicted.items():
        gold_spans = gold.get(input_id)
        if gold_spans is None:
            raise UsageError(f"no gold annotation for id {input_id!r}")
        for s in spans:
            if s.is_outside:
                continue
            n_pred += 1
            if match_span(s, gold_spans):
                tp += 1
    if n_pred == 0 or n_gold == 0:
        return 0.0
    precision = tp / n_pred
    recall = tp / n_gold
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)
