"""Acceptance suite: one test per criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the PASS lines.
Criteria C1-C6 are exact property and oracle checks; C7-C9 are synthetic
trend replications on the built-in ambiguous-location preset.
"""

import json
import math

import numpy as np
import pytest

from spanconf.beam import beam_search
from spanconf.calibration import assign_bin, compute_ece
from spanconf.cli import main as cli_main
from spanconf.confidence import (
    ConfidenceScore,
    MethodConfig,
    ada_agg_seq,
    agg_seq,
    agg_span,
    score_all,
    span_prob,
)
from spanconf.presets import build_preset
from spanconf.refmodel import (
    HmmScorer,
    exact_pattern_marginal,
    exact_span_marginal,
    perturb_temperature,
    sample_corpus,
)
from spanconf.seqlabel import LabeledSpan, match_span, segment_spans

from conftest import random_bio_walk, random_hmm, synthetic_beam
from test_confidence import _shared_prefix_beam


def _report(name: str, ok: bool, detail: str = "") -> None:
    print(f"{name}: {'PASS' if ok else 'FAIL'}" + (f" — {detail}" if detail else ""))
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Shared randomized instance bank for the oracle criteria.

@pytest.fixture(scope="module")
def instance_bank():
    rng = np.random.default_rng(20240817)
    bank = []
    for i in range(100):
        n_labels = int(rng.choice([0, 1, 1, 1, 2, 2, 2, 2, 1, 1]))
        params = random_hmm(rng, n_labels, int(rng.integers(2, 5))) if n_labels else None
        if params is None:
            # Single-tag model: everything is O.
            from spanconf.refmodel import HmmParams
            from spanconf.seqlabel import Tag

            params = HmmParams(
                tags=(Tag("O"),), vocab=("u", "v"),
                initial=np.array([1.0]),
                transition=np.array([[1.0]]),
                emission=np.array([[0.5, 0.5]]),
            )
        n = int(rng.integers(1, 7))
        x, _ = sample_corpus(params, 1, (n, n), seed=int(rng.integers(1 << 30)))[0]
        bank.append((params, x))
    return bank


class TestC1Identities:
    def test_c1(self):
        rng = np.random.default_rng(7)
        n_beams = 0
        # AggSpan reduction in trace mode on shared-prefix beams.
        for _ in range(500):
            beam, span = _shared_prefix_beam(rng)
            n_beams += 1
            got = agg_span(beam, span, cfg=MethodConfig("AggSpan", aggspan_mode="trace"))
            assert got.value == span_prob(beam.top1, span).value
        # AggSpan reduction in rescoring mode: the first span of any top-1
        # has the empty prefix as its single unique context.
        params_pool = [random_hmm(rng, 1 + i % 2, 3) for i in range(5)]
        for i in range(150):
            params = params_pool[i % len(params_pool)]
            scorer = HmmScorer(params)
            x, _ = sample_corpus(params, 1, (2, 5), seed=9000 + i)[0]
            beam = beam_search(scorer, x, 4)
            n_beams += 1
            span = segment_spans(x.words, beam.top1.tags)[0]
            got = agg_span(beam, span, scorer=scorer, cfg=MethodConfig("AggSpan"), x=x)
            assert got.value == span_prob(beam.top1, span).value
        # AggSeq degeneracy at k=1.
        for _ in range(300):
            n = int(rng.integers(1, 6))
            cands, seen = [], set()
            for _ in range(int(rng.integers(1, 6))):
                tags = random_bio_walk(rng, n)
                if tags not in seen:
                    seen.add(tags)
                    cands.append((tags, float(rng.uniform(0.01, 0.5))))
            beam = synthetic_beam("c1", max(len(cands), 1), cands)
            n_beams += 1
            words = tuple(f"w{j}" for j in range(n))
            span = segment_spans(words, beam.top1.tags)[0]
            assert agg_seq(beam, span, k=1).value == 1.0
        # Adaptive clamping against the closed form.
        for _ in range(300):
            n = int(rng.integers(1, 6))
            cands, seen = [], set()
            for _ in range(12):
                tags = random_bio_walk(rng, n)
                if tags not in seen:
                    seen.add(tags)
                    cands.append((tags, float(rng.uniform(0.01, 0.5))))
            beam = synthetic_beam("c1", len(cands), cands)
            n_beams += 1
            k = int(rng.integers(2, len(beam.candidates) + 1))
            b = int(rng.integers(0, 4))
            a = sum(1 for t in beam.top1.tags if t.kind == "B")
            words = tuple(f"w{j}" for j in range(n))
            span = segment_spans(words, beam.top1.tags)[0]
            got = ada_agg_seq(beam, span, MethodConfig("AdaAggSeq", k=k, b=b))
            assert got.effective_k == max(2, min(a + b, k))
        # The three named clamp cases.
        clamp_beam = synthetic_beam(
            "clamp", 10,
            [(random_bio_walk(np.random.default_rng(s), 4), 0.4 / (s + 1))
             for s in range(10)],
        )
        words = ("w0", "w1", "w2", "w3")
        span = segment_spans(words, clamp_beam.top1.tags)[0]
        a = sum(1 for t in clamp_beam.top1.tags if t.kind == "B")
        for b, k in ((1, 10), (0, 10), (15, 10)):
            got = ada_agg_seq(clamp_beam, span, MethodConfig("AdaAggSeq", k=k, b=b))
            assert got.effective_k == max(2, min(a + b, k))
            n_beams += 1
        _report("C1", n_beams >= 1000, f"{n_beams} random beams, zero identity failures")


class TestC2OracleEquivalence:
    def test_c2(self, instance_bank):
        worst_pattern = worst_span = 0.0
        n_spans = 0
        for params, x in instance_bank:
            scorer = HmmScorer(params)
            k_full = params.n_tags ** len(x.words)
            beam = beam_search(scorer, x, k_full)
            for span in segment_spans(x.words, beam.top1.tags):
                asp = agg_span(beam, span, scorer=scorer, cfg=MethodConfig("AggSpan"), x=x)
                ase = agg_seq(beam, span, k_full)
                assert 0.0 <= asp.value <= 1.0 and 0.0 <= ase.value <= 1.0
                worst_pattern = max(
                    worst_pattern, abs(asp.value - exact_pattern_marginal(params, x, span))
                )
                worst_span = max(
                    worst_span, abs(ase.value - exact_span_marginal(params, x, span))
                )
                n_spans += 1
        ok = worst_pattern < 1e-9 and worst_span < 1e-9
        _report(
            "C2", ok,
            f"{len(instance_bank)} instances, {n_spans} spans, "
            f"max|AggSpan-pattern|={worst_pattern:.2e}, max|AggSeq-span|={worst_span:.2e}",
        )


class TestC3BeamConvergence:
    def test_c3(self, instance_bank):
        grid = [1, 2, 4, 8, 16, None]  # None = exhaustive
        mean_gaps = []
        for k_req in grid:
            gaps = []
            for params, x in instance_bank:
                scorer = HmmScorer(params)
                k = params.n_tags ** len(x.words) if k_req is None else k_req
                beam = beam_search(scorer, x, k)
                spans = segment_spans(x.words, beam.top1.tags)
                inst = [
                    abs(agg_seq(beam, s, k).value - exact_span_marginal(params, x, s))
                    for s in spans
                ]
                gaps.append(sum(inst) / len(inst))
            mean_gaps.append(sum(gaps) / len(gaps))
        inversions = sum(
            1 for lo, hi in zip(mean_gaps, mean_gaps[1:]) if hi > lo + 1e-12
        )
        detail = " ".join(
            f"k={'full' if k is None else k}:{g:.5f}" for k, g in zip(grid, mean_gaps)
        )
        _report("C3", inversions <= 1, f"{inversions} inversion(s); mean gaps {detail}")


def _span(value_label="X"):
    return LabeledSpan(0, 1, value_label, "w")


def _mk_scored(conf, correct, label="X"):
    return (
        ConfidenceScore(value=conf, method="Span", span=_span(label), effective_k=1),
        correct,
    )


def _reference_ece(pairs, m_bins):
    groups = {}
    for conf, correct in pairs:
        if conf == 0.0:
            m = 1
        else:
            m = next(
                mm for mm in range(1, m_bins + 1)
                if (mm - 1) / m_bins < conf <= mm / m_bins
            )
        groups.setdefault(m, []).append((conf, correct))
    total = 0.0
    for members in groups.values():
        acc = sum(1.0 for _, c in members if c) / len(members)
        mc = sum(cf for cf, _ in members) / len(members)
        total += len(members) * abs(acc - mc)
    return total / len(pairs)


class TestC4EceCorrectness:
    def test_c4(self):
        fixture = [
            _mk_scored(0.95, True),
            _mk_scored(0.95, False),
            _mk_scored(0.45, True),
            _mk_scored(0.05, False),
        ]
        got = compute_ece(fixture, m_bins=10).ece_all
        assert abs(got - 0.375) <= 1e-12
        rng = np.random.default_rng(99)
        worst = 0.0
        for _ in range(20):
            m_bins = int(rng.integers(1, 20))
            pairs = [
                (float(rng.uniform(0, 1)), bool(rng.integers(2)))
                for _ in range(int(rng.integers(1, 120)))
            ]
            scored = [_mk_scored(c, ok) for c, ok in pairs]
            want = _reference_ece(pairs, m_bins)
            worst = max(worst, abs(compute_ece(scored, m_bins=m_bins).ece_all - want))
        _report(
            "C4", worst <= 1e-12,
            f"fixture = {got!r}; 20 randomized fixtures max err {worst:.2e}",
        )


class TestC5CalibrationSanity:
    def test_c5(self):
        params = build_preset("ambiguous-loc")
        scorer = HmmScorer(params)
        corpus = sample_corpus(params, 3600, (6, 9), seed=424242, id_prefix="c5")
        scored = []
        for x, ann in corpus:
            beam = beam_search(scorer, x, 1)
            gold = segment_spans(x.words, ann.tags)
            for span in segment_spans(x.words, beam.top1.tags):
                conf = exact_span_marginal(params, x, span)
                score = ConfidenceScore(
                    value=conf, method="Span", span=span, effective_k=0
                )
                scored.append((score, match_span(span, gold)))
        report = compute_ece(scored, m_bins=10)
        ok = len(scored) >= 20000 and report.ece_all <= 0.03
        _report(
            "C5", ok,
            f"{len(scored)} spans, oracle-confidence ECE_ALL = {report.ece_all:.4f} <= 0.03",
        )


class TestC6RangeAndDeterminism:
    def test_c6(self, tmp_path, monkeypatch):
        # Range invariant over every estimator on one randomized beam set.
        rng = np.random.default_rng(123)
        params = random_hmm(rng, 2, 4)
        scorer = HmmScorer(params)
        for i in range(40):
            x, _ = sample_corpus(params, 1, (2, 6), seed=5000 + i)[0]
            beam = beam_search(scorer, x, 6)
            for method in ("Span", "AggSpan", "AggSeq", "AdaAggSeq"):
                cfg = MethodConfig(method, k=6, b=1)
                scores, _ = score_all(beam, cfg, scorer=scorer, x=x)
                assert all(0.0 <= s.value <= 1.0 for s in scores)
        # Bin partition invariant.
        pairs = [
            _mk_scored(float(rng.uniform(0, 1)), bool(rng.integers(2)),
                       label="O" if rng.integers(2) else "X")
            for _ in range(500)
        ]
        report = compute_ece(pairs, m_bins=10)
        assert sum(b.count for b in report.bins_all) == report.n_all
        assert sum(b.count for b in report.bins_no) == report.n_non_o
        assert all(0 <= assign_bin(s.value, 10) <= 10 for s, _ in pairs)
        # Byte-for-byte pipeline determinism under a fixed seed. Each run
        # happens inside its own directory with relative paths so the
        # outputs are comparable verbatim.
        blobs = []
        for tag in ("first", "second"):
            base = tmp_path / tag
            base.mkdir()
            monkeypatch.chdir(base)
            assert cli_main([
                "synth", "--preset", "tiny", "--out-dir", ".",
                "--train", "3", "--validation", "3", "--test", "25",
                "--min-len", "2", "--max-len", "4", "--seed", "77",
            ]) == 0
            assert cli_main([
                "decode", "--model", "model.json", "--gold", "test.jsonl",
                "--out", "preds.jsonl", "--k", "5",
            ]) == 0
            assert cli_main([
                "estimate", "--preds", "preds.jsonl", "--gold", "test.jsonl",
                "--model", "model.json", "--out", "scored.jsonl",
            ]) == 0
            assert cli_main([
                "evaluate", "--scored", "scored.jsonl", "--gold", "test.jsonl",
                "--out", "report.json",
            ]) == 0
            blobs.append(
                (base / "preds.jsonl").read_bytes()
                + (base / "scored.jsonl").read_bytes()
                + (base / "report.json").read_bytes()
            )
        _report("C6", blobs[0] == blobs[1], "ranges, bin partitions, byte-stable reruns")


def _trend_run(params, scorer0, seed, k, methods, b=1, tau=2.0, count=400):
    corpus = sample_corpus(params, count, (6, 9), seed=seed, id_prefix=f"t{seed}")
    scorer = perturb_temperature(scorer0, tau)
    out = {m: [] for m in methods}
    for x, ann in corpus:
        beam = beam_search(scorer, x, k)
        gold = segment_spans(x.words, ann.tags)
        for m in methods:
            scores, _ = score_all(beam, MethodConfig(m, k=k, b=b), x=x)
            out[m].extend((s, match_span(s.span, gold)) for s in scores)
    return {m: compute_ece(v, 10) for m, v in out.items()}


class TestC7TrendSpanVsAggSeq:
    def test_c7(self):
        params = build_preset("ambiguous-loc")
        scorer0 = HmmScorer(params)
        wins = 0
        details = []
        for seed in range(1, 6):
            reports = _trend_run(params, scorer0, seed, k=5, methods=["Span", "AggSeq"])
            span_e, agg_e = reports["Span"].ece_no, reports["AggSeq"].ece_no
            wins += agg_e < span_e
            details.append(f"s{seed}:{agg_e:.3f}<{span_e:.3f}")
        _report(
            "C7", wins >= 4,
            f"AggSeq beats Span on ECE_NO in {wins}/5 seeds (tau=2, k=5): "
            + " ".join(details),
        )


class TestC8TrendAdaptive:
    def test_c8(self):
        params = build_preset("ambiguous-loc")
        scorer0 = HmmScorer(params)
        wins = 0
        details = []
        for seed in range(1, 6):
            reports = _trend_run(
                params, scorer0, seed, k=10, methods=["AggSeq", "AdaAggSeq"]
            )
            agg_e, ada_e = reports["AggSeq"].ece_all, reports["AdaAggSeq"].ece_all
            wins += ada_e <= agg_e
            details.append(f"s{seed}:{ada_e:.3f}<={agg_e:.3f}")
        _report(
            "C8", wins >= 4,
            f"AdaAggSeq <= AggSeq on ECE_ALL in {wins}/5 seeds (tau=2, k=10, b=1): "
            + " ".join(details),
        )


class TestC9CaseStudy:
    def test_c9(self):
        # Nine-word request where the wide location span appears in
        # candidates 1 and 4 of 5 only.
        tag_rows = [
            (["O", "O", "O", "O", "O", "B-Cuisine", "B-Location", "I-Location", "I-Location"], 0.50),
            (["O", "O", "O", "O", "O", "B-Cuisine", "O", "O", "B-Location"], 0.20),
            (["O", "O", "O", "O", "O", "B-Cuisine", "B-Location", "O", "B-Location"], 0.14),
            (["O", "O", "O", "O", "O", "O", "B-Location", "I-Location", "I-Location"], 0.13),
            (["O", "O", "O", "O", "O", "B-Cuisine", "O", "O", "O"], 0.03),
        ]
        # Top-1 unit log-probs: the three span units multiply to 0.87 and
        # the prefix carries the rest of the candidate's 0.50 total.
        span_unit = math.log(0.87) / 3
        prefix_unit = (math.log(0.50) - math.log(0.87)) / 6
        overrides = {0: [prefix_unit] * 6 + [span_unit] * 3}
        beam = synthetic_beam("case", 5, tag_rows, unit_overrides=overrides)
        span = LabeledSpan(6, 9, "Location", "in the area")
        span_score = span_prob(beam.top1, span)
        agg_score = agg_seq(beam, span, k=5)
        ok = (
            agg_score.value < span_score.value
            and abs(span_score.value - 0.87) < 1e-9
            and abs(agg_score.value - 0.63) < 1e-9
        )
        _report(
            "C9", ok,
            f"span in 2/5 candidates: AggSeq {agg_score.value:.2f} < Span {span_score.value:.2f}",
        )
