"""Beam search determinism, oracle agreement, and the predictions format."""

import json
import math

import numpy as np
import pytest

from spanconf.beam import (
    BeamCandidate,
    BeamResult,
    beam_search,
    force_score,
    read_predictions,
    write_predictions,
)
from spanconf.errors import AlignmentError, ConfigError, FormatError
from spanconf.refmodel import HmmScorer, enumerate_all, posterior_next_tag, sample_corpus
from spanconf.seqlabel import InputText, Tag, parse_tags

from conftest import random_hmm
from test_refmodel import deterministic_emission_params


class TestBeamSearch:
    def test_forced_path(self):
        params = deterministic_emission_params()
        x = InputText(id="f", words=("b_word", "i_word", "o_word"))
        res = beam_search(HmmScorer(params), x, 1)
        assert len(res.candidates) == 1
        top = res.top1
        assert top.tags == parse_tags(["B-X", "I-X", "O"])
        assert top.total_logprob == pytest.approx(0.0, abs=1e-12)

    def test_exhaustive_matches_enumeration(self):
        rng = np.random.default_rng(31)
        for trial in range(10):
            params = random_hmm(rng, int(rng.integers(1, 3)), 3)
            n = int(rng.integers(1, 5))
            x, _ = sample_corpus(params, 1, (n, n), seed=900 + trial)[0]
            k = params.n_tags ** n
            res = beam_search(HmmScorer(params), x, k)
            enum = [(tags, p) for tags, p in enumerate_all(params, x) if p > 0.0]
            enum.sort(key=lambda e: -e[1])
            assert len(res.candidates) == len(enum)
            for cand, (tags, p) in zip(res.candidates, enum):
                assert abs(cand.probability - p) < 1e-9
            # The decoded argmax is the enumerated argmax.
            assert res.top1.tags == enum[0][0]

    def test_cardinality_contract(self):
        rng = np.random.default_rng(4)
        params = random_hmm(rng, 1, 3)
        x, _ = sample_corpus(params, 1, (4, 4), seed=8)[0]
        res = beam_search(HmmScorer(params), x, 5)
        assert 1 <= len(res.candidates) <= 5
        assert [c.rank for c in res.candidates] == list(range(1, len(res.candidates) + 1))

    def test_top1_monotone_in_k(self):
        rng = np.random.default_rng(15)
        for trial in range(15):
            params = random_hmm(rng, int(rng.integers(1, 3)), 3)
            x, _ = sample_corpus(params, 1, (5, 5), seed=1000 + trial)[0]
            scorer = HmmScorer(params)
            best = -math.inf
            for k in (1, 2, 4, 8, 16):
                top = beam_search(scorer, x, k).top1.total_logprob
                assert top >= best - 1e-12
                best = max(best, top)

    def test_probability_sums(self):
        rng = np.random.default_rng(16)
        params = random_hmm(rng, 2, 4)
        x, _ = sample_corpus(params, 1, (4, 4), seed=77)[0]
        scorer = HmmScorer(params)
        for k in (1, 3, 10, params.n_tags ** 4):
            res = beam_search(scorer, x, k)
            total = sum(c.probability for c in res.candidates)
            assert total <= 1.0 + 1e-9
        assert total == pytest.approx(1.0, abs=1e-9)  # exhaustive case

    def test_unit_logprobs_are_scorer_conditionals(self):
        rng = np.random.default_rng(17)
        params = random_hmm(rng, 1, 3)
        x, _ = sample_corpus(params, 1, (4, 4), seed=5)[0]
        res = beam_search(HmmScorer(params), x, 3)
        for cand in res.candidates:
            for w in range(4):
                dist = posterior_next_tag(params, x, cand.tags[:w])
                want = math.log(dist[params.tag_index(cand.tags[w])])
                assert cand.unit_logprobs[w] == pytest.approx(want, abs=1e-9)

    def test_tie_break_is_lexicographic(self):
        # Uniform everything: every legal sequence has equal probability,
        # so order must fall back to tag-index order.
        params = deterministic_emission_params()

        class UniformScorer:
            tags = params.tags

            def log_next_tag(self, x, prefix):
                with np.errstate(divide="ignore"):
                    return np.log(np.array([0.5, 0.5, 0.0]))

        x = InputText(id="t", words=("o_word", "o_word"))
        res = beam_search(UniformScorer(), x, 4)
        seqs = [tuple(str(t) for t in c.tags) for c in res.candidates]
        assert seqs == [
            ("O", "O"), ("O", "B-X"), ("B-X", "O"), ("B-X", "B-X"),
        ]

    def test_bad_k(self):
        params = deterministic_emission_params()
        x = InputText(id="k", words=("o_word",))
        with pytest.raises(ConfigError):
            beam_search(HmmScorer(params), x, 0)


class TestForceScore:
    def test_empty_continuation(self):
        params = deterministic_emission_params()
        x = InputText(id="e", words=("o_word",))
        assert force_score(HmmScorer(params), x, (), []) == []

    def test_full_sequence_matches_enumeration(self):
        rng = np.random.default_rng(18)
        params = random_hmm(rng, 1, 3)
        x, _ = sample_corpus(params, 1, (4, 4), seed=55)[0]
        scorer = HmmScorer(params)
        for tags, p in enumerate_all(params, x):
            if p < 1e-12:
                continue
            lps = force_score(scorer, x, (), list(tags))
            assert math.exp(sum(lps)) == pytest.approx(p, abs=1e-9)

    def test_single_unit_is_posterior(self):
        rng = np.random.default_rng(19)
        params = random_hmm(rng, 1, 3)
        x, ann = sample_corpus(params, 1, (3, 3), seed=56)[0]
        scorer = HmmScorer(params)
        prefix = ann.tags[:1]
        [lp] = force_score(scorer, x, prefix, [ann.tags[1]])
        dist = posterior_next_tag(params, x, prefix)
        assert lp == pytest.approx(math.log(dist[params.tag_index(ann.tags[1])]), abs=1e-12)

    def test_zero_probability_continuation(self):
        params = deterministic_emission_params()
        x = InputText(id="z", words=("o_word", "o_word"))
        lps = force_score(HmmScorer(params), x, (), [Tag("B", "X"), Tag("O")])
        assert lps[0] == -math.inf and lps[1] == -math.inf

    def test_length_overflow(self):
        params = deterministic_emission_params()
        x = InputText(id="o", words=("o_word",))
        with pytest.raises(AlignmentError):
            force_score(HmmScorer(params), x, (Tag("O"),), [Tag("O")])


class TestCandidateInvariants:
    def test_total_must_match_unit_sum(self):
        with pytest.raises(FormatError):
            BeamCandidate(rank=1, tags=parse_tags(["O"]), unit_logprobs=(-0.5,),
                          total_logprob=-1.5)

    def test_unit_length_must_match(self):
        with pytest.raises(FormatError):
            BeamCandidate(rank=1, tags=parse_tags(["O", "O"]), unit_logprobs=(-0.5,),
                          total_logprob=-0.5)

    def test_result_ordering_enforced(self):
        good = BeamCandidate(rank=1, tags=parse_tags(["O"]), unit_logprobs=(-1.0,),
                             total_logprob=-1.0)
        worse = BeamCandidate(rank=2, tags=parse_tags(["B-X"]), unit_logprobs=(-0.5,),
                              total_logprob=-0.5)
        with pytest.raises(FormatError):
            BeamResult(input_id="x", k=2, candidates=(good, worse))


class TestPredictionsFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(21)
        params = random_hmm(rng, 1, 3)
        corpus = sample_corpus(params, 4, (2, 4), seed=9)
        scorer = HmmScorer(params)
        results = [beam_search(scorer, x, 3) for x, _ in corpus]
        path = tmp_path / "preds.jsonl"
        write_predictions(path, results)
        raws = read_predictions(path)
        assert len(raws) == 4
        for raw, res in zip(raws, results):
            assert raw.input_id == res.input_id
            assert raw.k == res.k
            assert len(raw.candidates) == len(res.candidates)
            for rc, c in zip(raw.candidates, res.candidates):
                assert rc.tags == tuple(str(t) for t in c.tags)
                assert rc.total_logprob == c.total_logprob
                assert not rc.malformed

    def test_malformed_candidates_parse(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        rec = {
            "id": "a", "n_words": 2, "k": 2,
            "candidates": [
                {"rank": 1, "tags": ["O", "garbage"], "unit_logprobs": [-0.1, -0.2],
                 "total_logprob": -0.3},
                {"rank": 2, "tags": ["O", "O"], "unit_logprobs": None,
                 "total_logprob": -0.4, "malformed": True},
            ],
        }
        path.write_text(json.dumps(rec) + "\n")
        [raw] = read_predictions(path)
        assert raw.candidates[0].tags == ("O", "garbage")
        assert raw.candidates[1].malformed
        assert raw.candidates[1].unit_logprobs is None

    def test_structurally_broken_record_rejected(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        path.write_text('{"id": "a", "n_words": 2}\n')
        with pytest.raises(FormatError):
            read_predictions(path)
