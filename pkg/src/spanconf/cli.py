"""Command-line workflows over the documented file formats.

Stages are file-separated so externally produced predictions can enter
the pipeline at the decode boundary:

    synth     write a model plus sampled gold corpora
    decode    beam-search a gold file into a predictions file
    estimate  score top-1 spans from a predictions file
    evaluate  match scored spans against gold and compute calibration
    oracle    exact span marginals for top-1 spans under the model

Progress goes to stderr; stdout carries only final summaries. Exit codes:
0 success, 2 config or usage, 3 data or format, 4 capacity.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import beam as beam_mod
from . import calibration as cal_mod
from . import confidence as conf_mod
from . import refmodel
from .errors import (
    CapacityError,
    ConfigError,
    EmptyEvaluationError,
    SpanConfError,
    UsageError,
)
from .presets import PRESET_NAMES, build_preset
from .seqlabel import (
    match_span,
    read_gold,
    read_label_set,
    segment_spans,
    write_gold,
    write_label_set,
)

DEFAULT_K = 5
DEFAULT_ADA_K = 10
DEFAULT_B = 1
DEFAULT_BINS = 10


@dataclass(frozen=True)
class RunConfig:
    """Shared run knobs with the protocol defaults baked in."""

    k: int | None = None
    b: int = DEFAULT_B
    bins: int = DEFAULT_BINS
    tau: float = 1.0
    seed: int = 0
    aggspan_mode: str = "rescoring"
    workers: int = 1

    def method_k(self, method: str) -> int:
        if self.k is not None:
            return self.k
        return DEFAULT_ADA_K if method == "AdaAggSeq" else DEFAULT_K


def _progress(i: int, total: int, what: str) -> None:
    if i % 200 == 0 or i == total:
        print(f"  {what}: {i}/{total}", file=sys.stderr)


def _map_ordered(fn: Callable, items: Sequence, workers: int) -> Iterable:
    if workers <= 1:
        return map(fn, items)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    if args.preset:
        params = build_preset(args.preset)
    elif args.model_in:
        params = refmodel.load_model(args.model_in)
    else:
        raise ConfigError("synth needs --preset or --model-in")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    refmodel.save_model(out_dir / "model.json", params)
    labels = sorted({t.label for t in params.tags if t.label is not None})
    write_label_set(out_dir / "labels.json", labels)
    splits = (("train", args.train), ("validation", args.validation), ("test", args.test))
    for offset, (split, count) in enumerate(splits):
        corpus = refmodel.sample_corpus(
            params,
            count=count,
            length_range=(args.min_len, args.max_len),
            seed=args.seed + offset,
            id_prefix=split,
        )
        write_gold(out_dir / f"{split}.jsonl", corpus)
    print(f"wrote model.json, labels.json and {len(splits)} splits to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# decode

def cmd_decode(args) -> int:
    params = refmodel.load_model(args.model)
    corpus = read_gold(args.gold)
    scorer = refmodel.perturb_temperature(refmodel.HmmScorer(params), args.tau)
    n_tags = params.n_tags

    def decode_one(item):
        x, _ = item
        k = args.k
        if args.exhaustive:
            k = n_tags ** len(x.words)
            if k > args.cap:
                raise CapacityError(
                    f"exhaustive beam of {k} for {x.id!r} exceeds cap {args.cap}"
                )
        return beam_mod.beam_search(scorer, x, k)

    results = []
    for i, res in enumerate(_map_ordered(decode_one, corpus, args.workers), start=1):
        results.append(res)
        _progress(i, len(corpus), "decoded")
    beam_mod.write_predictions(args.out, results)
    print(f"decoded {len(results)} examples to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# estimate

def _method_list(args) -> list[str]:
    methods = args.method or list(conf_mod.METHODS)
    for m in methods:
        if m not in conf_mod.METHODS:
            raise ConfigError(f"unknown method {m!r}")
    return methods


def cmd_estimate(args) -> int:
    run = RunConfig(k=args.k, b=args.b, tau=1.0, aggspan_mode=args.aggspan_mode,
                    workers=args.workers)
    methods = _method_list(args)
    preds = beam_mod.read_predictions(args.preds)
    if not preds:
        raise EmptyEvaluationError(f"no prediction records in {args.preds}")
    inputs = {x.id: x for x, _ in read_gold(args.gold)}
    label_set = read_label_set(args.labels) if args.labels else None
    scorer = None
    if "AggSpan" in methods and run.aggspan_mode == "rescoring":
        if not args.model:
            raise UsageError("AggSpan in rescoring mode needs --model")
        scorer = refmodel.HmmScorer(refmodel.load_model(args.model))

    cfgs = {
        m: conf_mod.MethodConfig(method=m, k=run.method_k(m), b=run.b,
                                 aggspan_mode=run.aggspan_mode)
        for m in methods
    }
    stats = conf_mod.ResolveStats()
    degenerate = 0
    scored: list[conf_mod.ScoredSpan] = []

    def estimate_one(raw):
        resolved, st = conf_mod.resolve_prediction(raw, label_set)
        rows = []
        n_degen = 0
        if resolved is not None:
            x = inputs.get(raw.input_id)
            if x is None:
                raise UsageError(f"prediction id {raw.input_id!r} missing from gold file")
            for m in methods:
                scores, skipped = conf_mod.score_all(resolved, cfgs[m], scorer=scorer, x=x)
                n_degen += skipped
                rows.extend(
                    conf_mod.ScoredSpan(
                        input_id=raw.input_id, span=s.span, method=s.method,
                        confidence=s.value, effective_k=s.effective_k,
                    )
                    for s in scores
                )
        return rows, st, n_degen

    for i, (rows, st, n_degen) in enumerate(
        _map_ordered(estimate_one, preds, args.workers), start=1
    ):
        scored.extend(rows)
        stats = stats.merged(st)
        degenerate += n_degen
        _progress(i, len(preds), "estimated")

    if not scored:
        raise EmptyEvaluationError("no spans survived estimation")
    conf_mod.write_scored(args.out, scored)
    meta = {
        "dropped_candidates": stats.dropped_candidates,
        "decode_failures": stats.decode_failures,
        "degenerate_spans": degenerate,
    }
    _write_json(str(args.out) + ".meta.json", meta)
    print(
        f"scored {len(scored)} span records to {args.out} "
        f"(dropped_candidates={stats.dropped_candidates}, "
        f"decode_failures={stats.decode_failures}, degenerate_spans={degenerate})"
    )
    return 0


# ---------------------------------------------------------------------------
# evaluate

def _gold_span_index(gold_items) -> dict[str, list]:
    index = {}
    for x, ann in gold_items:
        index[x.id] = segment_spans(x.words, ann.tags)
    return index


def _evaluate_file(path, gold_spans, bins, variant):
    scored = conf_mod.read_scored(path)
    if not scored:
        raise EmptyEvaluationError(f"no scored spans in {path}")
    by_method: dict[str, list] = {}
    annotated: list[conf_mod.ScoredSpan] = []
    pred_spans: dict[str, dict] = {}
    for rec in scored:
        gold_here = gold_spans.get(rec.input_id)
        if gold_here is None:
            raise UsageError(f"scored id {rec.input_id!r} missing from gold file")
        correct = match_span(rec.span, gold_here)
        annotated.append(
            conf_mod.ScoredSpan(
                input_id=rec.input_id, span=rec.span, method=rec.method,
                confidence=rec.confidence, effective_k=rec.effective_k,
                correct=correct,
            )
        )
        score = conf_mod.ConfidenceScore(
            value=rec.confidence, method=rec.method, span=rec.span,
            effective_k=rec.effective_k,
        )
        by_method.setdefault(rec.method, []).append((score, correct))
        pred_spans.setdefault(rec.method, {}).setdefault(rec.input_id, set()).add(rec.span)

    meta_path = Path(str(path) + ".meta.json")
    excluded = {}
    if meta_path.exists():
        with open(meta_path, "r", encoding="utf-8") as fh:
            excluded = {k: int(v) for k, v in json.load(fh).items()}

    reports = {}
    for method in sorted(by_method):
        report = cal_mod.compute_ece(by_method[method], m_bins=bins, variant=variant)
        reports[method] = cal_mod.CalibrationReport(
            method=report.method, m_bins=report.m_bins,
            n_all=report.n_all, n_non_o=report.n_non_o,
            ece_all=report.ece_all, ece_no=report.ece_no,
            bins_all=report.bins_all, bins_no=report.bins_no,
            excluded_counts=excluded,
        )
    first_method = sorted(pred_spans)[0]
    f1 = cal_mod.span_f1(
        {k: sorted(v, key=lambda s: s.start) for k, v in pred_spans[first_method].items()},
        gold_spans,
    )
    return reports, f1, annotated


def cmd_evaluate(args) -> int:
    gold_spans = _gold_span_index(read_gold(args.gold))
    variant = args.filter
    runs = []
    per_method_values: dict[str, dict[str, list[float]]] = {}
    all_annotated = None
    for path in args.scored:
        reports, f1, annotated = _evaluate_file(path, gold_spans, args.bins, variant)
        if all_annotated is None:
            all_annotated = annotated
        runs.append(
            {
                "file": str(path),
                "f1_non_o": f1,
                "reports": {m: r.to_json_dict() for m, r in reports.items()},
            }
        )
        for method, rep in reports.items():
            slot = per_method_values.setdefault(method, {"ece_all": [], "ece_no": []})
            slot["ece_all"].append(rep.ece_all)
            if rep.ece_no is not None:
                slot["ece_no"].append(rep.ece_no)
        if args.csv_prefix:
            run_tag = "" if len(args.scored) == 1 else f".run{len(runs)}"
            for method, rep in reports.items():
                for var in ("ALL", "NO"):
                    if var == "NO" and rep.ece_no is None:
                        continue
                    rows = cal_mod.reliability_table(rep, variant=var)
                    out = f"{args.csv_prefix}{run_tag}.{method}.{var.lower()}.csv"
                    cal_mod.write_reliability_csv(out, rows)

    aggregate = {}
    if len(args.scored) > 1:
        for method, slot in sorted(per_method_values.items()):
            aggregate[method] = {
                metric: {
                    "mean": statistics.fmean(vals),
                    "sd": statistics.stdev(vals) if len(vals) > 1 else 0.0,
                    "n_runs": len(vals),
                }
                for metric, vals in slot.items()
                if vals
            }

    payload = {"bins": args.bins, "filter": variant, "runs": runs}
    if aggregate:
        payload["aggregate"] = aggregate
    _write_json(args.out, payload)
    if args.annotated_out and all_annotated is not None:
        conf_mod.write_scored(args.annotated_out, all_annotated)

    for run in runs:
        for method, rep in sorted(run["reports"].items()):
            no = rep["ece_no"]
            no_str = "n/a" if no is None else f"{no:.4f}"
            print(
                f"{Path(run['file']).name} {method}: "
                f"ece_all={rep['ece_all']:.4f} ece_no={no_str} "
                f"n={rep['n_all']} f1_non_o={run['f1_non_o']:.4f}"
            )
    print(f"report written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# oracle

def cmd_oracle(args) -> int:
    params = refmodel.load_model(args.model)
    corpus = read_gold(args.gold)
    scorer = refmodel.HmmScorer(params)
    records = []
    scored_rows: list[conf_mod.ScoredSpan] = []
    max_diff = 0.0

    def oracle_one(item):
        x, _ = item
        result = beam_mod.beam_search(scorer, x, args.k)
        spans = segment_spans(x.words, result.top1.tags)
        rows = []
        worst = 0.0
        enum = None
        if args.enum_check:
            enum = refmodel.enumerate_all(params, x, cap=args.cap)
        for span in spans:
            pat = refmodel.exact_pattern_marginal(params, x, span)
            spn = refmodel.exact_span_marginal(params, x, span)
            rec = {
                "id": x.id, "start": span.start, "end": span.end,
                "label": span.label, "phrase": span.phrase,
                "pattern_marginal": pat, "span_marginal": spn,
            }
            if enum is not None:
                pattern = refmodel.span_pattern(span)
                e_pat = sum(
                    p for tags, p in enum if tags[span.start:span.end] == pattern
                )
                e_spn = sum(
                    p for tags, p in enum
                    if tags[span.start:span.end] == pattern
                    and (
                        span.is_outside
                        or span.end >= len(tags)
                        or not (tags[span.end].kind == "I" and tags[span.end].label == span.label)
                    )
                )
                rec["enum_pattern_marginal"] = e_pat
                rec["enum_span_marginal"] = e_spn
                worst = max(worst, abs(pat - e_pat), abs(spn - e_spn))
            rows.append((rec, span))
        return rows, worst

    for i, (rows, worst) in enumerate(
        _map_ordered(oracle_one, corpus, args.workers), start=1
    ):
        max_diff = max(max_diff, worst)
        for rec, span in rows:
            records.append(rec)
            scored_rows.append(
                conf_mod.ScoredSpan(
                    input_id=rec["id"], span=span, method="Oracle",
                    confidence=rec["span_marginal"], effective_k=0,
                )
            )
        _progress(i, len(corpus), "oracled")

    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    if args.as_scored:
        conf_mod.write_scored(args.as_scored, scored_rows)
    msg = f"wrote {len(records)} span marginals to {args.out}"
    if args.enum_check:
        msg += f" (max |dp - enumeration| = {max_diff:.3e})"
    print(msg)
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spanconf",
        description="Span-level confidence estimation and calibration toolkit.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="sample a synthetic corpus from a reference model")
    p.add_argument("--preset", choices=PRESET_NAMES, help="built-in model preset")
    p.add_argument("--model-in", help="existing model JSON to sample from")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--validation", type=int, default=50)
    p.add_argument("--test", type=int, default=400)
    p.add_argument("--min-len", type=int, default=6)
    p.add_argument("--max-len", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("decode", help="beam-search a gold file into predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--tau", type=float, default=1.0,
                   help="temperature perturbation of the scorer (1 = exact)")
    p.add_argument("--exhaustive", action="store_true",
                   help="use a beam wide enough to cover the whole output space")
    p.add_argument("--cap", type=int, default=refmodel.DEFAULT_ENUMERATION_CAP)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("estimate", help="score top-1 spans from a predictions file")
    p.add_argument("--preds", required=True)
    p.add_argument("--gold", required=True, help="gold file supplying the input words")
    p.add_argument("--out", required=True)
    p.add_argument("--method", action="append", choices=conf_mod.METHODS,
                   help="repeatable; default: all four methods")
    p.add_argument("--k", type=int, default=None,
                   help="candidate budget (default 5; 10 for AdaAggSeq)")
    p.add_argument("--b", type=int, default=DEFAULT_B)
    p.add_argument("--aggspan-mode", choices=conf_mod.AGGSPAN_MODES, default="rescoring")
    p.add_argument("--model", help="model JSON, needed for AggSpan rescoring")
    p.add_argument("--labels", help="label-set JSON for strict tag validation")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="calibration report from scored spans")
    p.add_argument("--scored", action="append", required=True,
                   help="scored-spans file; repeat for multi-seed aggregation")
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--filter", choices=cal_mod.VARIANTS, default="ALL",
                   help="which ECE variant must be computable")
    p.add_argument("--csv-prefix", help="write reliability tables as CSV files")
    p.add_argument("--annotated-out",
                   help="rewrite the first scored file with correctness filled in")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", help="exact marginals for decoded top-1 spans")
    p.add_argument("--model", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=1, help="beam width used to pick the top-1")
    p.add_argument("--enum-check", action="store_true",
                   help="cross-check the dynamic program against enumeration")
    p.add_argument("--cap", type=int, default=refmodel.DEFAULT_ENUMERATION_CAP)
    p.add_argument("--as-scored", help="also write a scored-spans file (method=Oracle)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (SpanConfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
