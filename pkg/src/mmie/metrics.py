"""Span-level and label-level micro precision/recall/F1.

BIO decoding is lenient: an I-X with no open X entity starts a new span
instead of being rejected, matching common sequence-labeling evaluators.
"""

from __future__ import annotations

from collections import Counter
from typing import Optional, Sequence

Span = tuple[int, int, str]


def _tag_parts(tag: str) -> tuple[str, Optional[str]]:
    if tag == "O":
        return "O", None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in ("B", "I"):
        return tag[0], tag[2:]
    raise ValueError(f"malformed BIO tag {tag!r}")


def is_valid_bio(tags: Sequence[str]) -> bool:
    """True when every I-X is preceded by B-X or I-X of the same type."""
    prev_type = None
    for tag in tags:
        head, typ = _tag_parts(tag)
        if head == "I" and typ != prev_type:
            return False
        prev_type = typ if head != "O" else None
    return True


def bio_to_spans(tags: Sequence[str]) -> set[Span]:
    """Half-open (start, end, type) spans of a BIO sequence."""
    spans: set[Span] = set()
    start, typ = None, None
    for pos, tag in enumerate(tags):
        head, tag_type = _tag_parts(tag)
        cont = head == "I" and tag_type == typ and start is not None
        if start is not None and not cont:
            spans.add((start, pos, typ))
            start, typ = None, None
        if head == "B" or (head == "I" and not cont):
            start, typ = pos, tag_type
    if start is not None:
        spans.add((start, len(tags), typ))
    return spans


def spans_to_bio(spans: set[Span], length: int) -> list[str]:
    """Inverse of bio_to_spans for non-overlapping span sets."""
    tags = ["O"] * length
    for s, e, typ in sorted(spans):
        if not 0 <= s < e <= length:
            raise ValueError(f"span ({s}, {e}) out of range for length {length}")
        if any(t != "O" for t in tags[s:e]):
            raise ValueError("overlapping spans")
        tags[s] = f"B-{typ}"
        for pos in range(s + 1, e):
            tags[pos] = f"I-{typ}"
    return tags


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def micro_prf(gold: Sequence[set[Span]],
              pred: Sequence[set[Span]]) -> tuple[float, float, float]:
    """Corpus-level micro P/R/F1 over per-sample span sets."""
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold vs {len(pred)} predicted samples")
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        tp += len(g & p)
        fp += len(p - g)
        fn += len(g - p)
    return _prf(tp, fp, fn)


def micro_prf_labels(gold: Sequence, pred: Sequence,
                     exclude=None) -> tuple[float, float, float]:
    """Micro P/R/F1 over single-label predictions.

    With no excluded label this equals plain accuracy on all three values;
    passing a designated negative label removes it from both prediction and
    gold counts, the usual convention when a "no relation" class exists.
    """
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold vs {len(pred)} predicted labels")
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        hit = g == p
        if p != exclude:
            tp += hit
            fp += not hit
        if g != exclude and not hit:
            fn += 1
    return _prf(tp, fp, fn)


def ner_report(gold_tags: Sequence[Sequence[str]],
               pred_tags: Sequence[Sequence[str]]) -> dict:
    """Span micro P/R/F1 plus a per-entity-type breakdown."""
    gold_spans = [bio_to_spans(t) for t in gold_tags]
    pred_spans = [bio_to_spans(t) for t in pred_tags]
    p, r, f1 = micro_prf(gold_spans, pred_spans)
    types = sorted({s[2] for spans in gold_spans for s in spans}
                   | {s[2] for spans in pred_spans for s in spans})
    per_type = {}
    for typ in types:
        tp, rp, tf1 = micro_prf(
            [{s for s in spans if s[2] == typ} for spans in gold_spans],
            [{s for s in spans if s[2] == typ} for spans in pred_spans])
        support = sum(1 for spans in gold_spans for s in spans if s[2] == typ)
        per_type[typ] = {"precision": tp, "recall": rp, "f1": tf1,
                         "support": support}
    return {"precision": p, "recall": r, "f1": f1, "per_type": per_type}


def re_report(gold: Sequence, pred: Sequence, label_names: Sequence[str],
              exclude=None) -> dict:
    """Label micro P/R/F1 plus a per-relation breakdown."""
    gold = [label_names[g] if isinstance(g, int) else g for g in gold]
    pred = [label_names[p] if isinstance(p, int) else p for p in pred]
    p, r, f1 = micro_prf_labels(gold, pred, exclude=exclude)
    support = Counter(gold)
    per_type = {}
    for name in label_names:
        if name == exclude:
            continue
        tp = sum(1 for g, q in zip(gold, pred) if g == q == name)
        fp = sum(1 for g, q in zip(gold, pred) if q == name and g != name)
        fn = sum(1 for g, q in zip(gold, pred) if g == name and q != name)
        cp, cr, cf1 = _prf(tp, fp, fn)
        per_type[name] = {"precision": cp, "recall": cr, "f1": cf1,
                          "support": support.get(name, 0)}
    return {"precision": p, "recall": r, "f1": f1, "per_type": per_type}
