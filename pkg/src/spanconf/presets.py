"""Built-in reference model presets for synthetic experiments.

`ambiguous-loc` is tuned so that location-ish phrases such as "in the
area" admit several competing segmentations with comparable posterior
mass (one wide Location span, a lone Location word after two O words,
or all O). That ambiguity is what separates the top-1-only estimator
from the beam-aggregating ones. `tiny` is a three-tag model small enough
for exhaustive enumeration in demos and tests.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .refmodel import HmmParams
from .seqlabel import Tag


def _params(tag_strs, vocab, initial, transition, emission) -> HmmParams:
    tags = tuple(
        Tag("O") if s == "O" else Tag(s[0], s[2:]) for s in tag_strs
    )
    return HmmParams(
        tags=tags,
        vocab=tuple(vocab),
        initial=np.array(initial, dtype=float),
        transition=np.array(transition, dtype=float),
        emission=np.array(emission, dtype=float),
    )


def _ambiguous_loc() -> HmmParams:
    # Three deliberate structural features:
    # 1. Location phrases ("in the area") admit two segmentations of
    #    comparable mass (all-O prefix with a lone Location word vs one
    #    wide span). The per-word conditionals inside each reading stay
    #    sharp, so top-1-only confidence overshoots while candidate-mass
    #    ratios track the true containment probability.
    # 2. Cuisine spans are single words, near-deterministic, and frequent;
    #    they raise the non-O span count without multiplying the number
    #    of plausible readings, keeping the adaptive candidate window
    #    aligned with the genuine alternatives.
    # 3. Food words leak a ~0.1% O-emission. These variants are too rare
    #    to move accuracy but surface in wide beams, where a flattened
    #    scorer inflates their relative weight.
    tag_strs = ["O", "B-Cuisine", "I-Cuisine", "B-Location", "I-Location"]
    vocab = ["find", "good", "diners", "pizza", "tacos",
             "in", "the", "area", "downtown", "spots"]
    initial = [0.50, 0.34, 0.00, 0.16, 0.00]
    transition = [
        # O     B-Cui  I-Cui  B-Loc  I-Loc
        [0.40, 0.34, 0.00, 0.26, 0.00],  # O
        [0.30, 0.44, 0.00, 0.26, 0.00],  # B-Cuisine
        [0.65, 0.05, 0.15, 0.15, 0.00],  # I-Cuisine (unreachable)
        [0.22, 0.13, 0.00, 0.00, 0.65],  # B-Location
        [0.40, 0.17, 0.00, 0.00, 0.43],  # I-Location
    ]
    emission = [
        # find   good    diners  pizza   tacos   in    the   area  down  spots
        [0.28, 0.2195, 0.0015, 0.0015, 0.0015, 0.21, 0.21, 0.00, 0.00, 0.076],  # O
        [0.00, 0.00, 0.36, 0.30, 0.26, 0.00, 0.00, 0.00, 0.00, 0.08],  # B-Cuisine
        [0.00, 0.00, 0.30, 0.30, 0.30, 0.00, 0.00, 0.00, 0.00, 0.10],  # I-Cuisine
        [0.00, 0.00, 0.00, 0.00, 0.00, 0.38, 0.00, 0.29, 0.29, 0.04],  # B-Location
        [0.00, 0.00, 0.00, 0.00, 0.00, 0.04, 0.48, 0.30, 0.15, 0.03],  # I-Location
    ]
    return _params(tag_strs, vocab, initial, transition, emission)


def _tiny() -> HmmParams:
    tag_strs = ["O", "B-X", "I-X"]
    vocab = ["a", "b"]
    initial = [0.6, 0.4, 0.0]
    transition = [
        [0.6, 0.4, 0.0],
        [0.3, 0.2, 0.5],
        [0.4, 0.2, 0.4],
    ]
    emission = [
        [0.7, 0.3],
        [0.3, 0.7],
        [0.5, 0.5],
    ]
    return _params(tag_strs, vocab, initial, transition, emission)


_BUILDERS = {
    "ambiguous-loc": _ambiguous_loc,
    "tiny": _tiny,
}

PRESET_NAMES = tuple(sorted(_BUILDERS))


def build_preset(name: str) -> HmmParams:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"
        ) from None
    return builder()
