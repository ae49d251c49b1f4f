"""Sentinel+tag alignment between subword token streams and word units.

The output grammar marks every input word position with a sentinel token
<s0>, <s1>, ... followed by that position's tag, which the model may have
split into several subword pieces. Alignment groups the stream back into
one unit per word; a unit's log-probability is the sum of its member
token log-probabilities, sentinel included.
"""

from __future__ import annotations

import re
from typing import Sequence

SENTINEL_RE = re.compile(r"^<s(\d+)>$")

# Subword markers used by common tokenizers for word boundaries; they are
# not part of the tag text itself.
_PIECE_MARKERS = ("▁", "Ġ")


class AlignmentFailure(ValueError):
    """The token stream does not parse as sentinel+tag units."""


def build_si_input(words: Sequence[str]) -> str:
    """Model input text: each word prefixed by its positional sentinel."""
    if not words:
        raise ValueError("empty input")
    return " ".join(f"<s{i}> {w}" for i, w in enumerate(words))


def _clean(piece: str) -> str:
    for marker in _PIECE_MARKERS:
        piece = piece.replace(marker, "")
    return piece


def align_subwords(
    tokens: Sequence[tuple[str, float]],
    n_words: int,
    specials: Sequence[str] = ("</s>", "<pad>"),
) -> tuple[list[str], list[float]]:
    """Group (token, logprob) pairs into per-word units.

    Returns the tag string and summed log-probability of each unit.
    Raises AlignmentFailure when sentinels are missing, out of order, or
    a unit carries no tag pieces (a dangling sentinel at the end).
    """
    units: list[list[str]] = []
    sums: list[float] = []
    current: list[str] | None = None
    for text, logprob in tokens:
        if text in specials:
            break
        match = SENTINEL_RE.match(text)
        if match:
            index = int(match.group(1))
            if index != len(units):
                raise AlignmentFailure(f"sentinel <s{index}> out of order")
            if current is not None and not current:
                raise AlignmentFailure(f"unit {len(units) - 1} has no tag pieces")
            units.append([])
            sums.append(logprob)
            current = units[-1]
            continue
        if current is None:
            raise AlignmentFailure(f"token {text!r} before the first sentinel")
        current.append(_clean(text))
        sums[-1] += logprob
    if current is not None and not current:
        raise AlignmentFailure("dangling sentinel at sequence end")
    if len(units) != n_words:
        raise AlignmentFailure(f"{len(units)} units for {n_words} words")
    tags = ["".join(pieces) for pieces in units]
    if any(not t for t in tags):
        raise AlignmentFailure("empty tag text in a unit")
    return tags, sums
