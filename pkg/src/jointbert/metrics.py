"""Intent accuracy, chunk-level slot F1 and sentence-level frame accuracy.

Chunking follows the conlleval conventions: an ``I-x`` tag that does not
continue a chunk of type ``x`` opens a new one.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

from .errors import ShapeError


def _split_tag(tag: str) -> tuple[str, str]:
    if tag == "O" or not tag:
        return "O", ""
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BI":
        return tag[0], tag[2:]
    # bare labels without a BIO prefix behave like B-<label>
    return "B", tag


def extract_chunks(tags: Sequence[str]) -> set[tuple[str, int, int]]:
    """Chunks as ``(type, start, end)`` with inclusive word indices."""
    chunks = set()
    start = None
    ctype = None
    for i, tag in enumerate(tags):
        prefix, typ = _split_tag(tag)
        continues = prefix == "I" and ctype == typ and start is not None
        if start is not None and not continues:
            chunks.add((ctype, start, i - 1))
            start = ctype = None
        if prefix in ("B", "I") and not continues:
            start, ctype = i, typ
    if start is not None:
        chunks.add((ctype, start, len(tags) - 1))
    return chunks


def _check_aligned(gold, pred, what: str) -> None:
    if len(gold) != len(pred):
        raise ShapeError(f"{what}: {len(gold)} gold vs {len(pred)} predicted items")


def slot_f1(gold: Sequence[Sequence[str]], pred: Sequence[Sequence[str]]) -> tuple[float, float, float]:
    """Micro-averaged chunk precision, recall and F1."""
    p, r, f, _ = slot_counts(gold, pred)
    return p, r, f


def slot_counts(gold, pred) -> tuple[float, float, float, tuple[int, int, int]]:
    _check_aligned(gold, pred, "slot_f1")
    n_gold = n_pred = n_correct = 0
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise ShapeError(f"slot_f1: sequence {i} has {len(g)} gold tags but {len(p)} predicted")
        gc, pc = extract_chunks(g), extract_chunks(p)
        n_gold += len(gc)
        n_pred += len(pc)
        n_correct += len(gc & pc)
    precision = n_correct / n_pred if n_pred else 0.0
    recall = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1, (n_gold, n_pred, n_correct)


def intent_accuracy(gold: Sequence[str], pred: Sequence[str]) -> float:
    _check_aligned(gold, pred, "intent_accuracy")
    return sum(g == p for g, p in zip(gold, pred)) / len(gold) if gold else 0.0


def frame_accuracy(gold_intents, pred_intents, gold_tags, pred_tags) -> float:
    """Fraction of sentences with the right intent and every slot tag right."""
    _check_aligned(gold_intents, pred_intents, "frame_accuracy")
    _check_aligned(gold_intents, gold_tags, "frame_accuracy")
    _check_aligned(gold_tags, pred_tags, "frame_accuracy")
    if not gold_intents:
        return 0.0
    hits = sum(
        gi == pi and list(gt) == list(pt)
        for gi, pi, gt, pt in zip(gold_intents, pred_intents, gold_tags, pred_tags)
    )
    return hits / len(gold_intents)


@dataclass
class Metrics:
    intent_accuracy: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    frame_accuracy: float
    examples: int
    gold_chunks: int
    predicted_chunks: int
    correct_chunks: int

    def table_row(self) -> dict[str, float]:
        """Percentages with one decimal, keyed like the usual result tables."""
        return {
            "Intent": round(100 * self.intent_accuracy, 1),
            "Slot": round(100 * self.slot_f1, 1),
            "Sent": round(100 * self.frame_accuracy, 1),
        }

    def format(self) -> str:
        row = self.table_row()
        return (
            f"{'Intent':>8}{'Slot':>8}{'Sent':>8}\n"
            f"{row['Intent']:>8.1f}{row['Slot']:>8.1f}{row['Sent']:>8.1f}\n"
            f"examples={self.examples} gold_chunks={self.gold_chunks} "
            f"predicted_chunks={self.predicted_chunks} correct_chunks={self.correct_chunks}"
        )

    def to_json(self) -> str:
        return json.dumps({**self.table_row(), "raw": asdict(self)}, indent=2, sort_keys=True)


def compute_metrics(gold_intents, pred_intents, gold_tags, pred_tags) -> Metrics:
    p, r, f, (ng, np_, nc) = slot_counts(gold_tags, pred_tags)
    return Metrics(
        intent_accuracy=intent_accuracy(gold_intents, pred_intents),
        slot_precision=p,
        slot_recall=r,
        slot_f1=f,
        frame_accuracy=frame_accuracy(gold_intents, pred_intents, gold_tags, pred_tags),
        examples=len(gold_intents),
        gold_chunks=ng,
        predicted_chunks=np_,
        correct_chunks=nc,
    )
