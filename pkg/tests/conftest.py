"""Shared builders for randomized models, tag sequences, and beams."""

from __future__ import annotations

import math

import numpy as np

from spanconf.beam import BeamCandidate, BeamResult
from spanconf.refmodel import HmmParams
from spanconf.seqlabel import Tag, TagSequence, parse_tags

LABEL_POOL = ("X", "Y")


def tag_set_for(n_labels: int) -> tuple[Tag, ...]:
    tags: list[Tag] = [Tag("O")]
    for label in LABEL_POOL[:n_labels]:
        tags.append(Tag("B", label))
        tags.append(Tag("I", label))
    return tuple(tags)


def random_hmm(rng: np.random.Generator, n_labels: int, vocab_size: int) -> HmmParams:
    """Random parameter tables with the BIO zero structure enforced."""
    tags = tag_set_for(n_labels)
    t = len(tags)
    vocab = tuple(f"w{i}" for i in range(vocab_size))

    def masked_row(mask: np.ndarray) -> np.ndarray:
        row = np.zeros(len(mask))
        idx = np.flatnonzero(mask)
        row[idx] = rng.dirichlet(np.ones(len(idx)))
        return row

    init_mask = np.array([tag.kind != "I" for tag in tags])
    initial = masked_row(init_mask)
    transition = np.zeros((t, t))
    for i, prev in enumerate(tags):
        mask = np.array([
            tag.kind != "I" or (prev.kind in ("B", "I") and prev.label == tag.label)
            for tag in tags
        ])
        transition[i] = masked_row(mask)
    emission = rng.dirichlet(np.ones(vocab_size), size=t)
    return HmmParams(tags=tags, vocab=vocab, initial=initial,
                     transition=transition, emission=emission)


def random_bio_walk(
    rng: np.random.Generator,
    n: int,
    labels: tuple[str, ...] = LABEL_POOL,
    first: Tag | None = None,
) -> TagSequence:
    """Uniform random BIO-well-formed tag sequence of length n."""
    out: list[Tag] = []
    for w in range(n):
        if w == 0 and first is not None:
            out.append(first)
            continue
        options: list[Tag] = [Tag("O")]
        options.extend(Tag("B", lab) for lab in labels)
        prev = out[-1] if out else None
        if prev is not None and prev.kind in ("B", "I"):
            options.append(Tag("I", prev.label))
        out.append(options[rng.integers(len(options))])
    return tuple(out)


def synthetic_beam(
    input_id: str,
    k: int,
    cands: list[tuple[list[str] | TagSequence, float]],
    unit_overrides: dict[int, list[float]] | None = None,
) -> BeamResult:
    """Build a BeamResult from (tags, probability) pairs.

    Probabilities need not sum to one. Unit log-probs split the total
    evenly unless an override list is supplied for a candidate index.
    """
    rows = []
    for idx, (tags, prob) in enumerate(cands):
        if tags and isinstance(tags[0], str):
            tags = parse_tags(tags)
        tags = tuple(tags)
        if unit_overrides and idx in unit_overrides:
            units = tuple(unit_overrides[idx])
        else:
            units = tuple([math.log(prob) / len(tags)] * len(tags))
        rows.append((tags, units, sum(units)))
    rows.sort(key=lambda r: -r[2])
    return BeamResult(
        input_id=input_id,
        k=k,
        candidates=tuple(
            BeamCandidate(rank=i, tags=tags, unit_logprobs=units, total_logprob=total)
            for i, (tags, units, total) in enumerate(rows, start=1)
        ),
    )
