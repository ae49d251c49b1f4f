"""Deterministic beam search over a next-tag scorer, plus the predictions
wire format.

The decoder keeps the k highest-scoring partial tag sequences per word.
Scores are raw sums of per-unit log-probabilities; there is no length
normalization because every candidate for one input has the same length
under the one-tag-per-word output format. Ties are broken by the
lexicographic order of tag indices so repeated runs produce identical
output.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, ConfigError, DegenerateInputError, FormatError
from .refmodel import ScorerBase
from .seqlabel import InputText, Tag, TagSequence

_TOTAL_TOL = 1e-6


@dataclass(frozen=True)
class BeamCandidate:
    """One decoded tag sequence with its per-word-unit log-probabilities.

    unit_logprobs may be None when the source only exposed sequence-level
    scores; such candidates support sequence-aggregation methods only.
    """

    rank: int
    tags: TagSequence
    unit_logprobs: tuple[float, ...] | None
    total_logprob: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.total_logprob):
            raise FormatError(f"candidate {self.rank} has non-finite total log-probability")
        if self.unit_logprobs is None:
            return
        if len(self.unit_logprobs) != len(self.tags):
            raise FormatError(
                f"candidate {self.rank} has {len(self.unit_logprobs)} unit log-probs "
                f"for {len(self.tags)} tags"
            )
        if not all(math.isfinite(v) for v in self.unit_logprobs):
            raise FormatError(f"candidate {self.rank} has non-finite unit log-probs")
        if abs(sum(self.unit_logprobs) - self.total_logprob) > _TOTAL_TOL:
            raise FormatError(
                f"candidate {self.rank} total log-prob disagrees with its unit sum"
            )

    @property
    def probability(self) -> float:
        return math.exp(self.total_logprob)


@dataclass(frozen=True)
class BeamResult:
    """The ranked top-k set for one input."""

    input_id: str
    k: int
    candidates: tuple[BeamCandidate, ...]

    def __post_init__(self) -> None:
        m = len(self.candidates)
        if not 1 <= m <= self.k:
            raise FormatError(f"{m} candidates for beam size {self.k}")
        seen = set()
        prev = math.inf
        for i, cand in enumerate(self.candidates, start=1):
            if cand.rank != i:
                raise FormatError(f"candidate ranks must be 1..{m}")
            if cand.total_logprob > prev:
                raise FormatError("candidates must be in descending score order")
            prev = cand.total_logprob
            if cand.tags in seen:
                raise FormatError("duplicate tag sequence in beam")
            seen.add(cand.tags)

    @property
    def top1(self) -> BeamCandidate:
        return self.candidates[0]


def beam_search(scorer: ScorerBase, x: InputText, k: int) -> BeamResult:
    """Width-k beam decode of one input.

    Zero-probability extensions are never expanded, so a scorer that
    forbids ill-formed BIO successors yields only decodable candidates.
    Ordering is by descending total log-probability with exact ties
    resolved lexicographically by tag index sequence.
    """
    if k < 1:
        raise ConfigError(f"beam size must be >= 1, got {k}")
    tag_count = len(scorer.tags)
    n = len(x.words)
    # Parallel state per surviving prefix.
    prefixes: list[tuple[int, ...]] = [()]
    tag_tuples: list[TagSequence] = [()]
    units: list[tuple[float, ...]] = [()]
    totals = np.zeros(1)
    for w in range(n):
        step = np.empty((len(prefixes), tag_count))
        for i, prefix_tags in enumerate(tag_tuples):
            step[i] = scorer.log_next_tag(x, prefix_tags)
        scores = totals[:, None] + step
        parent_idx, tag_idx = np.nonzero(np.isfinite(scores))
        if len(parent_idx) == 0:
            raise DegenerateInputError(f"no viable extension at position {w} of {x.id!r}")
        flat = scores[parent_idx, tag_idx]
        # Rank parents purely by prefix content so that equal-score ties
        # order extensions lexicographically over the whole sequence.
        lex_rank = np.empty(len(prefixes), dtype=int)
        for rank, i in enumerate(sorted(range(len(prefixes)), key=prefixes.__getitem__)):
            lex_rank[i] = rank
        order = np.lexsort((tag_idx, lex_rank[parent_idx], -flat))[:k]
        new_prefixes, new_tag_tuples, new_units = [], [], []
        for j in order:
            i, t = int(parent_idx[j]), int(tag_idx[j])
            new_prefixes.append(prefixes[i] + (t,))
            new_tag_tuples.append(tag_tuples[i] + (scorer.tags[t],))
            new_units.append(units[i] + (float(step[i, t]),))
        prefixes, tag_tuples, units = new_prefixes, new_tag_tuples, new_units
        totals = flat[order]
    candidates = tuple(
        BeamCandidate(rank=r, tags=tag_tuples[r - 1], unit_logprobs=units[r - 1],
                      total_logprob=float(totals[r - 1]))
        for r in range(1, len(prefixes) + 1)
    )
    return BeamResult(input_id=x.id, k=k, candidates=candidates)


def force_score(
    scorer: ScorerBase,
    x: InputText,
    prefix: TagSequence,
    continuation: Sequence[Tag],
) -> list[float]:
    """Teacher-forced log-probabilities of a continuation after a prefix.

    If some unit has probability zero the remaining conditionals are
    undefined; the tail is reported as -inf so the continuation's total
    stays log(0).
    """
    if len(prefix) + len(continuation) > len(x.words):
        raise AlignmentError(
            f"prefix plus continuation exceeds the {len(x.words)}-word input"
        )
    out: list[float] = []
    current = tuple(prefix)
    tag_pos = {tag: i for i, tag in enumerate(scorer.tags)}
    for pos, tag in enumerate(continuation):
        dist = scorer.log_next_tag(x, current)
        lp = float(dist[tag_pos[tag]])
        out.append(lp)
        if lp == -math.inf:
            out.extend([-math.inf] * (len(continuation) - pos - 1))
            break
        current = current + (tag,)
    return out


# ---------------------------------------------------------------------------
# Predictions file: one JSONL record per input. Replayed files may carry
# malformed candidates; those are kept verbatim here and filtered by the
# estimator's drop policy.

@dataclass(frozen=True)
class RawCandidate:
    rank: int
    tags: tuple[str, ...]
    unit_logprobs: tuple[float, ...] | None
    total_logprob: float
    malformed: bool = False


@dataclass(frozen=True)
class RawPrediction:
    input_id: str
    n_words: int
    k: int
    candidates: tuple[RawCandidate, ...] = field(default_factory=tuple)


def write_predictions(path, results: Iterable[BeamResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for res in results:
            rec = {
                "id": res.input_id,
                "n_words": len(res.candidates[0].tags),
                "k": res.k,
                "candidates": [
                    {
                        "rank": c.rank,
                        "tags": [str(t) for t in c.tags],
                        "unit_logprobs": list(c.unit_logprobs)
                        if c.unit_logprobs is not None
                        else None,
                        "total_logprob": c.total_logprob,
                    }
                    for c in res.candidates
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_predictions(path) -> list[RawPrediction]:
    """Parse a predictions file without judging candidate quality.

    Structural problems with a record (missing id or candidate list)
    raise FormatError; anything wrong inside a candidate is preserved for
    the downstream drop policy.
    """
    out: list[RawPrediction] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                cands = tuple(
                    RawCandidate(
                        rank=int(c["rank"]),
                        tags=tuple(str(t) for t in c["tags"]),
                        unit_logprobs=tuple(float(v) for v in c["unit_logprobs"])
                        if c.get("unit_logprobs") is not None
                        else None,
                        total_logprob=float(c["total_logprob"]),
                        malformed=bool(c.get("malformed", False)),
                    )
                    for c in rec["candidates"]
                )
                out.append(
                    RawPrediction(
                        input_id=str(rec["id"]),
                        n_words=int(rec["n_words"]),
                        k=int(rec["k"]),
                        candidates=cands,
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad predictions record ({exc})") from exc
    return out
