"""Run scored beam search on a seq2seq tagger and write predictions JSONL.

The output contract is the spanconf predictions format: one record per
input with up to k ranked candidates carrying per-word-unit
log-probabilities. Candidates whose token stream cannot be aligned to the
sentinel+tag grammar are still emitted, flagged "malformed": true, so the
consumer's drop policy can count them.

With a label set supplied, decoding is constrained to the output grammar
(positional sentinels, BIO-legal tag tokens, then end-of-sequence). A
fine-tuned model follows the grammar on its own; the constraint makes
untrained or weakly trained models exportable too, and requires every tag
string to be a single tokenizer token.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass

import torch
from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

from .align import AlignmentFailure, align_subwords, build_si_input

PREDICTIONS_SCHEMA = {
    "type": "object",
    "required": ["id", "n_words", "k", "candidates"],
    "properties": {
        "id": {"type": "string"},
        "n_words": {"type": "integer", "minimum": 1},
        "k": {"type": "integer", "minimum": 1},
        "candidates": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["rank", "tags", "unit_logprobs", "total_logprob"],
                "properties": {
                    "rank": {"type": "integer", "minimum": 1},
                    "tags": {"type": "array", "items": {"type": "string"}},
                    "unit_logprobs": {
                        "anyOf": [
                            {"type": "array", "items": {"type": "number"}},
                            {"type": "null"},
                        ]
                    },
                    "total_logprob": {"type": "number"},
                    "malformed": {"type": "boolean"},
                },
            },
        },
    },
}


@dataclass
class ExportJob:
    """One export run: model, inputs, beam width, output destination."""

    model_id: str
    gold_path: str
    out_path: str
    k: int = 5
    max_length: int = 512
    device: str = "cpu"
    batch_size: int = 8
    labels_path: str | None = None
    scores_only: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


def read_inputs(path) -> list[tuple[str, list[str]]]:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            words = list(rec["words"])
            if not words or not all(isinstance(w, str) and w for w in words):
                raise ValueError(f"{path}:{lineno}: bad words list")
            items.append((str(rec["id"]), words))
    return items


def _grammar_constraint(tokenizer, labels, lengths):
    """prefix_allowed_tokens_fn enforcing sentinel+tag output with BIO order."""
    tag_strings = ["O"] + [f"{kind}-{lab}" for lab in labels for kind in ("B", "I")]
    tag_ids = {}
    for tag in tag_strings:
        ids = tokenizer.convert_tokens_to_ids([tag])
        if ids[0] is None or ids[0] == tokenizer.unk_token_id:
            raise ValueError(
                f"tag {tag!r} is not a single tokenizer token; "
                "grammar-constrained export needs one token per tag"
            )
        tag_ids[tag] = ids[0]
    id_to_tag = {v: k for k, v in tag_ids.items()}
    open_ids = [tag_ids["O"]] + [tag_ids[f"B-{lab}"] for lab in labels]
    eos = tokenizer.eos_token_id
    max_words = max(lengths)
    sentinel_ids = tokenizer.convert_tokens_to_ids(
        [f"<s{i}>" for i in range(max_words)]
    )

    def allowed(batch_id, input_ids):
        n = lengths[batch_id]
        pos = len(input_ids) - 1  # tokens generated after decoder start
        if pos >= 2 * n:
            return [eos]
        if pos % 2 == 0:
            return [sentinel_ids[pos // 2]]
        prev_tag = id_to_tag.get(int(input_ids[-2])) if pos >= 3 else None
        allowed_ids = list(open_ids)
        if prev_tag is not None and prev_tag != "O":
            allowed_ids.append(tag_ids[f"I-{prev_tag[2:]}"])
        return allowed_ids

    return allowed


def export_predictions(job: ExportJob) -> dict:
    """Decode every input and write the predictions file.

    Returns a small summary dict (counts of records and malformed
    candidates).
    """
    tokenizer = AutoTokenizer.from_pretrained(job.model_id)
    model = AutoModelForSeq2SeqLM.from_pretrained(job.model_id)
    model.to(job.device)
    model.eval()
    labels = None
    if job.labels_path:
        with open(job.labels_path, "r", encoding="utf-8") as fh:
            labels = json.load(fh)

    inputs = read_inputs(job.gold_path)
    n_malformed = 0
    with open(job.out_path, "w", encoding="utf-8") as out:
        for lo in range(0, len(inputs), job.batch_size):
            batch = inputs[lo:lo + job.batch_size]
            records = _export_batch(model, tokenizer, batch, job, labels)
            for rec in records:
                n_malformed += sum(
                    1 for c in rec["candidates"] if c.get("malformed")
                )
                out.write(json.dumps(rec, sort_keys=True) + "\n")
            print(f"  exported {min(lo + job.batch_size, len(inputs))}/{len(inputs)}",
                  file=sys.stderr)
    return {"records": len(inputs), "malformed_candidates": n_malformed}


def _export_batch(model, tokenizer, batch, job, labels):
    texts = [build_si_input(words) for _, words in batch]
    lengths = [len(words) for _, words in batch]
    enc = tokenizer(texts, return_tensors="pt", padding=True).to(job.device)
    gen_kwargs = dict(
        num_beams=job.k,
        num_return_sequences=job.k,
        do_sample=False,
        max_new_tokens=min(2 * max(lengths) + 1, job.max_length),
        output_scores=True,
        return_dict_in_generate=True,
    )
    if labels is not None:
        gen_kwargs["prefix_allowed_tokens_fn"] = _grammar_constraint(
            tokenizer, labels, lengths
        )
    with torch.no_grad():
        out = model.generate(**enc, **gen_kwargs)
    # Greedy decoding (k=1) carries no beam reordering information.
    transition = model.compute_transition_scores(
        out.sequences, out.scores, getattr(out, "beam_indices", None),
        normalize_logits=True,
    )
    records = []
    for i, (input_id, words) in enumerate(batch):
        n = len(words)
        cands = []
        for j in range(job.k):
            row = i * job.k + j
            token_ids = out.sequences[row][1:]  # drop the decoder start token
            logprobs = transition[row]
            pairs = []
            for tid, lp in zip(token_ids.tolist(), logprobs.tolist()):
                if tid == tokenizer.pad_token_id:
                    continue
                pairs.append((tokenizer.convert_ids_to_tokens(tid), lp))
            cands.append(_candidate(pairs, n, tokenizer, job.scores_only))
        # Rank by total log-probability, best first.
        cands.sort(key=lambda c: -c["total_logprob"])
        for rank, cand in enumerate(cands, start=1):
            cand["rank"] = rank
        records.append(
            {"id": input_id, "n_words": n, "k": job.k, "candidates": cands}
        )
    return records


def _candidate(pairs, n_words, tokenizer, scores_only):
    specials = tuple(
        t for t in (tokenizer.eos_token, tokenizer.pad_token) if t
    )
    try:
        tags, unit_logprobs = align_subwords(pairs, n_words, specials=specials)
    except AlignmentFailure:
        total = sum(lp for text, lp in pairs if text not in specials)
        return {
            "tags": [text for text, _ in pairs if text not in specials],
            "unit_logprobs": None,
            "total_logprob": float(total),
            "malformed": True,
        }
    total = float(sum(unit_logprobs))
    return {
        "tags": tags,
        "unit_logprobs": None if scores_only else [float(v) for v in unit_logprobs],
        "total_logprob": total,
    }
