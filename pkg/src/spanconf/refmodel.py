"""Exactly solvable reference model: a first-order HMM over BIO tags.

The HMM plays the role of a conditional generator whose probabilities we
can compute in closed form. Its autoregressive scorer conditions on the
full input sentence through backward messages, the way an encoder-decoder
sees the whole input before emitting anything. Transitions that would
produce an ill-formed BIO sequence carry probability zero, so everything
the model generates is decodable.

All probability chains are computed in log space; linear-space values
appear only at API boundaries.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    CapacityError,
    ConfigError,
    DegenerateInputError,
    FormatError,
    RangeError,
    UsageError,
    VocabError,
)
from .seqlabel import GoldAnnotation, InputText, LabeledSpan, Tag, TagSequence, parse_tag

_ROW_SUM_TOL = 1e-9
DEFAULT_ENUMERATION_CAP = 200_000


def logsumexp(a: np.ndarray, axis: int | None = None):
    """Log of summed exponentials, tolerant of -inf entries."""
    a = np.asarray(a, dtype=float)
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def _log(table: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(table)


@dataclass(frozen=True, eq=False)
class HmmParams:
    """HMM parameter tables over an ordered tag set and word vocabulary.

    initial: (T,) start distribution over tags.
    transition: (T, T) row-stochastic tag-to-tag matrix.
    emission: (T, V) row-stochastic tag-to-word matrix.

    Rows must sum to one within 1e-9 and entries must be nonnegative.
    Any transition (or start weight) that would put an I tag after the
    sequence start, after O, or after a different label must be zero.
    """

    tags: tuple[Tag, ...]
    vocab: tuple[str, ...]
    initial: np.ndarray
    transition: np.ndarray
    emission: np.ndarray

    def __post_init__(self) -> None:
        t, v = len(self.tags), len(self.vocab)
        if t == 0 or v == 0:
            raise ConfigError("tag set and vocabulary must be non-empty")
        if len(set(self.tags)) != t or len(set(self.vocab)) != v:
            raise ConfigError("duplicate tags or vocabulary words")
        for name, arr, shape in (
            ("initial", self.initial, (t,)),
            ("transition", self.transition, (t, t)),
            ("emission", self.emission, (t, v)),
        ):
            arr = np.asarray(arr, dtype=float)
            object.__setattr__(self, name, arr)
            if arr.shape != shape:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {shape}")
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} has negative or non-finite entries")
            sums = arr.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > _ROW_SUM_TOL):
                raise ConfigError(f"{name} rows must sum to 1 within {_ROW_SUM_TOL}")
        for j, tag in enumerate(self.tags):
            if tag.kind != "I":
                continue
            if self.initial[j] != 0.0:
                raise ConfigError(f"initial weight on {tag} must be zero")
            for i, prev in enumerate(self.tags):
                ok = prev.kind in ("B", "I") and prev.label == tag.label
                if not ok and self.transition[i, j] != 0.0:
                    raise ConfigError(f"transition {prev} -> {tag} must be zero")
        object.__setattr__(self, "_tag_index", {tag: i for i, tag in enumerate(self.tags)})
        object.__setattr__(self, "_word_index", {w: i for i, w in enumerate(self.vocab)})
        object.__setattr__(self, "log_initial", _log(self.initial))
        object.__setattr__(self, "log_transition", _log(self.transition))
        object.__setattr__(self, "log_emission", _log(self.emission))

    @property
    def n_tags(self) -> int:
        return len(self.tags)

    def tag_index(self, tag: Tag) -> int:
        try:
            return self._tag_index[tag]  # type: ignore[attr-defined]
        except KeyError:
            raise UsageError(f"tag {tag} is not in the model tag set") from None

    def word_ids(self, words: Sequence[str]) -> np.ndarray:
        index = self._word_index  # type: ignore[attr-defined]
        try:
            return np.array([index[w] for w in words], dtype=int)
        except KeyError as exc:
            raise VocabError(f"word {exc.args[0]!r} is not in the model vocabulary") from None

    def to_json_dict(self) -> dict:
        return {
            "tag_set": [str(t) for t in self.tags],
            "vocab": list(self.vocab),
            "initial": self.initial.tolist(),
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "HmmParams":
        try:
            tags = tuple(parse_tag(t) for t in data["tag_set"])
            vocab = tuple(data["vocab"])
            return cls(
                tags=tags,
                vocab=vocab,
                initial=np.asarray(data["initial"], dtype=float),
                transition=np.asarray(data["transition"], dtype=float),
                emission=np.asarray(data["emission"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad model file structure ({exc})") from exc


def save_model(path, params: HmmParams) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params.to_json_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> HmmParams:
    with open(path, "r", encoding="utf-8") as fh:
        return HmmParams.from_json_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Message passing.

def _forward(params: HmmParams, word_ids: np.ndarray) -> np.ndarray:
    """alpha[w, t] = log P(words[0..w], tag_w = t)."""
    n = len(word_ids)
    alpha = np.full((n, params.n_tags), -np.inf)
    alpha[0] = params.log_initial + params.log_emission[:, word_ids[0]]
    for w in range(1, n):
        alpha[w] = (
            logsumexp(alpha[w - 1][:, None] + params.log_transition, axis=0)
            + params.log_emission[:, word_ids[w]]
        )
    return alpha


def _backward(params: HmmParams, word_ids: np.ndarray) -> np.ndarray:
    """beta[w, t] = log P(words[w+1..n-1] | tag_w = t)."""
    n = len(word_ids)
    beta = np.zeros((n, params.n_tags))
    for w in range(n - 2, -1, -1):
        beta[w] = logsumexp(
            params.log_transition + params.log_emission[:, word_ids[w + 1]] + beta[w + 1],
            axis=1,
        )
    return beta


# ---------------------------------------------------------------------------
# Scorers.

class ScorerBase:
    """Conditional next-tag distribution p(tag_w | input, prefix)."""

    tags: tuple[Tag, ...]

    def log_next_tag(self, x: InputText, prefix: TagSequence) -> np.ndarray:
        raise NotImplementedError

    def next_tag_distribution(self, x: InputText, prefix: TagSequence) -> np.ndarray:
        """Linear-space conditional; sums to one."""
        return np.exp(self.log_next_tag(x, prefix))


class HmmScorer(ScorerBase):
    """Exact autoregressive posterior of the HMM given the whole sentence.

    The conditional for position w is proportional to
    transition(prev, t) * emission(t, word_w) * beta_w(t), where the
    backward message carries the remainder of the sentence. Backward
    tables are cached per word tuple, so repeated queries against one
    sentence (as in beam search) stay cheap.
    """

    def __init__(self, params: HmmParams):
        self.params = params
        self.tags = params.tags
        self._beta_cache: dict[tuple[str, ...], np.ndarray] = {}
        # The conditional depends on the prefix only through its last tag,
        # so memoize per (sentence, position, previous tag); this is what
        # keeps exhaustive beams affordable.
        self._cond_cache: dict[tuple[tuple[str, ...], int, int], np.ndarray] = {}

    def _beta(self, words: tuple[str, ...]) -> np.ndarray:
        beta = self._beta_cache.get(words)
        if beta is None:
            beta = _backward(self.params, self.params.word_ids(words))
            self._beta_cache[words] = beta
        return beta

    def log_next_tag(self, x: InputText, prefix: TagSequence) -> np.ndarray:
        p = self.params
        w = len(prefix)
        if not 0 <= w < len(x.words):
            raise UsageError(f"prefix of length {w} leaves no next position in {len(x.words)} words")
        prev = -1 if w == 0 else p.tag_index(prefix[-1])
        key = (x.words, w, prev)
        cached = self._cond_cache.get(key)
        if cached is not None:
            return cached
        word_ids = p.word_ids(x.words)
        beta = self._beta(x.words)
        base = p.log_initial if w == 0 else p.log_transition[prev]
        scores = base + p.log_emission[:, word_ids[w]] + beta[w]
        norm = logsumexp(scores)
        if norm == -np.inf:
            raise DegenerateInputError(f"prefix has zero probability for input {x.id!r}")
        out = scores - norm
        self._cond_cache[key] = out
        return out


class TemperatureScorer(ScorerBase):
    """Wraps a scorer, raising each conditional to 1/tau and renormalizing.

    tau > 1 flattens the conditionals, tau < 1 sharpens them; the argmax
    of every conditional is preserved.
    """

    def __init__(self, base: ScorerBase, tau: float):
        self.base = base
        self.tags = base.tags
        self.tau = float(tau)

    def log_next_tag(self, x: InputText, prefix: TagSequence) -> np.ndarray:
        scaled = self.base.log_next_tag(x, prefix) / self.tau
        return scaled - logsumexp(scaled)


def perturb_temperature(scorer: ScorerBase, tau: float) -> ScorerBase:
    """Controllably miscalibrated variant of a scorer; tau=1 is the identity."""
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if tau == 1.0:
        return scorer
    return TemperatureScorer(scorer, tau)


def posterior_next_tag(params: HmmParams, x: InputText, prefix: TagSequence) -> np.ndarray:
    """Exact next-tag posterior given the full sentence; linear space."""
    return HmmScorer(params).next_tag_distribution(x, prefix)


# ---------------------------------------------------------------------------
# Exact span-level marginals.

def _check_span(x: InputText, span: LabeledSpan) -> None:
    if not (0 <= span.start < span.end <= len(x.words)):
        raise RangeError(f"span [{span.start}, {span.end}) outside input of {len(x.words)} words")


def span_pattern(span: LabeledSpan) -> TagSequence:
    """The tag pattern a candidate must carry at the span's positions."""
    if span.is_outside:
        return (Tag("O"),)
    return (Tag("B", span.label),) + tuple(
        Tag("I", span.label) for _ in range(span.end - span.start - 1)
    )


def _log_pattern_mass(params: HmmParams, alpha: np.ndarray, word_ids: np.ndarray,
                      span: LabeledSpan, pattern_ids: list[int]) -> float:
    """log P(words, tags[start..end) == pattern), backward message excluded."""
    t0 = pattern_ids[0]
    if span.start == 0:
        acc = float(params.log_initial[t0])
    else:
        acc = logsumexp(alpha[span.start - 1] + params.log_transition[:, t0])
    acc += float(params.log_emission[t0, word_ids[span.start]])
    for j in range(1, len(pattern_ids)):
        acc += float(params.log_transition[pattern_ids[j - 1], pattern_ids[j]])
        acc += float(params.log_emission[pattern_ids[j], word_ids[span.start + j]])
    return acc


def exact_pattern_marginal(params: HmmParams, x: InputText, span: LabeledSpan) -> float:
    """Posterior probability that the span's positions carry its tag pattern.

    No constraint is placed on the tag that follows the span, so for a
    non-O span this is the chance the tags open with B-label and continue
    with I-label through end-1, whether or not the span stops there.
    """
    _check_span(x, span)
    word_ids = params.word_ids(x.words)
    pattern_ids = [params.tag_index(t) for t in span_pattern(span)]
    alpha = _forward(params, word_ids)
    beta = _backward(params, word_ids)
    log_z = logsumexp(alpha[-1])
    if log_z == -np.inf:
        raise DegenerateInputError(f"input {x.id!r} has zero probability")
    acc = _log_pattern_mass(params, alpha, word_ids, span, pattern_ids)
    acc += float(beta[span.end - 1, pattern_ids[-1]])
    return min(1.0, float(np.exp(acc - log_z)))


def exact_span_marginal(params: HmmParams, x: InputText, span: LabeledSpan) -> float:
    """Posterior probability that the segmentation contains the span.

    Adds the right-boundary requirement on top of the pattern: the tag at
    `end` must not continue the span with another I of the same label.
    When the span touches the end of the sentence the two marginals agree.
    """
    _check_span(x, span)
    word_ids = params.word_ids(x.words)
    pattern_ids = [params.tag_index(t) for t in span_pattern(span)]
    alpha = _forward(params, word_ids)
    beta = _backward(params, word_ids)
    log_z = logsumexp(alpha[-1])
    if log_z == -np.inf:
        raise DegenerateInputError(f"input {x.id!r} has zero probability")
    acc = _log_pattern_mass(params, alpha, word_ids, span, pattern_ids)
    if span.end == len(x.words):
        return min(1.0, float(np.exp(acc - log_z)))
    last = pattern_ids[-1]
    allowed = [
        j for j, tag in enumerate(params.tags)
        if not (tag.kind == "I" and tag.label == span.label)
    ]
    cont = (
        acc
        + params.log_transition[last, allowed]
        + params.log_emission[allowed, word_ids[span.end]]
        + beta[span.end, allowed]
    )
    return min(1.0, float(np.exp(logsumexp(cont) - log_z)))


def enumerate_all(
    params: HmmParams, x: InputText, cap: int = DEFAULT_ENUMERATION_CAP
) -> list[tuple[TagSequence, float]]:
    """Brute-force posterior over every tag sequence, in lexicographic order.

    Probabilities are normalized by the enumerated total, so they sum to
    one. Sequences the model cannot produce appear with probability zero.
    """
    n = len(x.words)
    t = params.n_tags
    if t ** n > cap:
        raise CapacityError(f"{t}^{n} sequences exceed the cap of {cap}")
    word_ids = params.word_ids(x.words)
    log_init = params.log_initial
    log_trans = params.log_transition
    log_emit = params.log_emission
    log_joints = np.empty(t ** n)
    seqs: list[tuple[int, ...]] = []
    for idx, assign in enumerate(itertools.product(range(t), repeat=n)):
        lp = log_init[assign[0]] + log_emit[assign[0], word_ids[0]]
        for w in range(1, n):
            lp += log_trans[assign[w - 1], assign[w]] + log_emit[assign[w], word_ids[w]]
        log_joints[idx] = lp
        seqs.append(assign)
    log_z = logsumexp(log_joints)
    if log_z == -np.inf:
        raise DegenerateInputError(f"input {x.id!r} has zero probability")
    probs = np.exp(log_joints - log_z)
    return [
        (tuple(params.tags[j] for j in assign), float(p))
        for assign, p in zip(seqs, probs)
    ]


# ---------------------------------------------------------------------------
# Corpus sampling.

def sample_corpus(
    params: HmmParams,
    count: int,
    length_range: tuple[int, int],
    seed: int,
    id_prefix: str = "ex",
) -> list[tuple[InputText, GoldAnnotation]]:
    """Draw i.i.d. (sentence, tags) pairs from the HMM joint.

    Lengths are uniform over length_range inclusive. Deterministic for a
    fixed seed.
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    lo, hi = length_range
    if not (1 <= lo <= hi):
        raise ConfigError(f"bad length range {length_range}")
    rng = np.random.default_rng(seed)
    t = params.n_tags
    # Guard against zero rows the stochasticity check would already have
    # caught, then renormalize away the <=1e-9 slack for the sampler.
    initial = params.initial / params.initial.sum()
    transition = params.transition / params.transition.sum(axis=1, keepdims=True)
    emission = params.emission / params.emission.sum(axis=1, keepdims=True)
    corpus: list[tuple[InputText, GoldAnnotation]] = []
    for i in range(count):
        n = int(rng.integers(lo, hi + 1))
        tag_ids = np.empty(n, dtype=int)
        word_ids = np.empty(n, dtype=int)
        for w in range(n):
            row = initial if w == 0 else transition[tag_ids[w - 1]]
            tag_ids[w] = rng.choice(t, p=row)
            word_ids[w] = rng.choice(len(params.vocab), p=emission[tag_ids[w]])
        x = InputText(
            id=f"{id_prefix}-{i:05d}",
            words=tuple(params.vocab[j] for j in word_ids),
        )
        ann = GoldAnnotation(id=x.id, tags=tuple(params.tags[j] for j in tag_ids))
        corpus.append((x, ann))
    return corpus


