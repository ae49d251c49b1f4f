"""Command-line front end for the exporter."""

from __future__ import annotations

import argparse
import sys

from .export import ExportJob, export_predictions


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="si-export",
        description="Export scored beam search output to the predictions format.",
    )
    parser.add_argument("--model", required=True,
                        help="model identifier or local path (seq2seq)")
    parser.add_argument("--gold", required=True, help="gold JSONL with input words")
    parser.add_argument("--out", required=True, help="predictions JSONL to write")
    parser.add_argument("--k", type=int, default=5, help="beam width")
    parser.add_argument("--max-length", type=int, default=512)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--labels",
                        help="label-set JSON; enables grammar-constrained decoding")
    parser.add_argument("--scores-only", action="store_true",
                        help="emit sequence scores only (unit_logprobs null)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        model_id=args.model,
        gold_path=args.gold,
        out_path=args.out,
        k=args.k,
        max_length=args.max_length,
        device=args.device,
        batch_size=args.batch_size,
        labels_path=args.labels,
        scores_only=args.scores_only,
    )
    try:
        summary = export_predictions(job)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"wrote {summary['records']} records to {args.out} "
        f"({summary['malformed_candidates']} malformed candidates)"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
