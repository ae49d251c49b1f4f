"""Domain types for sequence labeling plus the sentinel+tag output codec.

A labeled example is a list of words with one BIO tag per word. Tag
sequences segment into labeled spans: every maximal B/I run of one label
becomes a single span, and every O word stands alone as its own span, so
the spans always partition the sentence. Exact span matching compares
position, phrase, and label.

The output format is one tag token per input word; sentinels are implicit
by position on the output side, which keeps candidate-to-candidate span
alignment deterministic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import AlignmentError, FormatError, RangeError, UsageError

_TAG_RE = re.compile(r"^(?:O|[BI]-[A-Za-z0-9_]+)$")
_O_LABEL = "O"


@dataclass(frozen=True)
class Tag:
    """A single BIO tag: kind is one of O, B, I; label is absent iff O."""

    kind: str
    label: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("O", "B", "I"):
            raise FormatError(f"bad tag kind {self.kind!r}")
        if (self.kind == "O") != (self.label is None):
            raise FormatError(f"label must be absent iff kind is O, got {self}")

    def __str__(self) -> str:
        return self.kind if self.kind == "O" else f"{self.kind}-{self.label}"


O_TAG = Tag("O")

# A tag sequence is a plain tuple of tags; alignment against an input and
# BIO well-formedness are checked by the operations that need them.
TagSequence = tuple[Tag, ...]


def parse_tag(text: str, label_set: Sequence[str] | None = None) -> Tag:
    """Parse `O`, `B-<LABEL>`, or `I-<LABEL>` (case-sensitive).

    When label_set is given, labels outside it are rejected rather than
    coerced; silently accepting them would corrupt downstream metrics.
    """
    if not isinstance(text, str) or not _TAG_RE.match(text):
        raise FormatError(f"unparseable tag string {text!r}")
    if text == "O":
        return O_TAG
    kind, label = text.split("-", 1)
    if label_set is not None and label not in label_set:
        raise FormatError(f"unknown label {label!r} in tag {text!r}")
    return Tag(kind, label)


def parse_tags(texts: Iterable[str], label_set: Sequence[str] | None = None) -> TagSequence:
    return tuple(parse_tag(t, label_set) for t in texts)


def check_bio(tags: Sequence[Tag]) -> None:
    """Raise FormatError unless the sequence is BIO-well-formed.

    An I tag may only continue a B or I tag of the same label; it can
    never open the sequence or follow O.
    """
    prev: Tag | None = None
    for i, tag in enumerate(tags):
        if tag.kind == "I":
            if prev is None or prev.kind == "O" or prev.label != tag.label:
                raise FormatError(f"I-{tag.label} at position {i} does not continue a span")
        prev = tag


@dataclass(frozen=True)
class InputText:
    """An input sentence: an id and at least one whitespace-free word."""

    id: str
    words: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.words) == 0:
            raise FormatError(f"input {self.id!r} has no words")
        for w in self.words:
            if not w or any(c.isspace() for c in w):
                raise FormatError(f"input {self.id!r} has invalid word {w!r}")

    def __len__(self) -> int:
        return len(self.words)


@dataclass(frozen=True)
class LabeledSpan:
    """A contiguous word range with its label and the joined phrase.

    start is inclusive, end exclusive, both word indices. label is a task
    label, or "O" for an outside word.
    """

    start: int
    end: int
    label: str
    phrase: str

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise RangeError(f"bad span bounds [{self.start}, {self.end})")

    @property
    def is_outside(self) -> bool:
        return self.label == _O_LABEL


@dataclass(frozen=True)
class GoldAnnotation:
    """Ground-truth tags for one input id."""

    id: str
    tags: TagSequence


def segment_spans(words: Sequence[str], tags: Sequence[Tag]) -> list[LabeledSpan]:
    """Split a tagged sentence into labeled spans.

    Each maximal B/I run of one label becomes one span; each O word is its
    own span (consecutive O words are not merged). The spans partition
    [0, n) in left-to-right order.
    """
    if len(words) != len(tags):
        raise AlignmentError(f"{len(tags)} tags for {len(words)} words")
    check_bio(tags)
    spans: list[LabeledSpan] = []
    i = 0
    n = len(words)
    while i < n:
        tag = tags[i]
        if tag.kind == "O":
            spans.append(LabeledSpan(i, i + 1, _O_LABEL, words[i]))
            i += 1
            continue
        j = i + 1
        while j < n and tags[j].kind == "I" and tags[j].label == tag.label:
            j += 1
        spans.append(LabeledSpan(i, j, tag.label or _O_LABEL, " ".join(words[i:j])))
        i = j
    return spans


def tags_from_spans(spans: Sequence[LabeledSpan]) -> TagSequence:
    """Inverse of segment_spans for spans that partition [0, n)."""
    tags: list[Tag] = []
    pos = 0
    for span in spans:
        if span.start != pos:
            raise UsageError(f"spans do not partition the sentence at {pos}")
        if span.is_outside:
            if span.end != span.start + 1:
                raise UsageError("outside spans cover exactly one word")
            tags.append(O_TAG)
        else:
            tags.append(Tag("B", span.label))
            tags.extend(Tag("I", span.label) for _ in range(span.start + 1, span.end))
        pos = span.end
    return tuple(tags)


def encode_si(words: Sequence[str]) -> list[str]:
    """Input-side encoding: prepend a positional sentinel to every word."""
    if len(words) == 0:
        raise UsageError("cannot encode an empty input")
    out: list[str] = []
    for i, w in enumerate(words):
        out.append(f"<s{i}>")
        out.append(w)
    return out


def decode_si(
    output_units: Sequence[str],
    n: int,
    label_set: Sequence[str] | None = None,
) -> TagSequence:
    """Decode output units (one tag token per word) into a tag sequence.

    Raises AlignmentError when the unit count differs from n, FormatError
    for unknown tag strings or BIO violations. Callers replaying external
    candidate files decide what to do with failing candidates.
    """
    if len(output_units) != n:
        raise AlignmentError(f"{len(output_units)} output units for {n} words")
    tags = parse_tags(output_units, label_set)
    check_bio(tags)
    return tags


def match_span(pred: LabeledSpan, gold: Sequence[LabeledSpan]) -> bool:
    """Exact span match: position, phrase, and label all identical."""
    return any(g == pred for g in gold)


# ---------------------------------------------------------------------------
# File formats: gold corpus (JSONL) and label set (JSON list).

def read_gold(path) -> list[tuple[InputText, GoldAnnotation]]:
    items: list[tuple[InputText, GoldAnnotation]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                x = InputText(id=str(rec["id"]), words=tuple(rec["words"]))
                tags = parse_tags(rec["tags"])
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad gold record ({exc})") from exc
            if len(tags) != len(x.words):
                raise AlignmentError(f"{path}:{lineno}: tags misaligned for id {x.id!r}")
            check_bio(tags)
            items.append((x, GoldAnnotation(id=x.id, tags=tags)))
    return items


def write_gold(path, items: Iterable[tuple[InputText, GoldAnnotation]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, ann in items:
            rec = {"id": x.id, "words": list(x.words), "tags": [str(t) for t in ann.tags]}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_label_set(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list) or not all(isinstance(s, str) for s in data):
        raise FormatError(f"{path}: label set must be a JSON list of strings")
    return data


def write_label_set(path, labels: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(list(labels), fh)
        fh.write("\n")
