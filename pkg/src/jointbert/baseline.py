"""Majority-intent plus most-frequent-tag-per-word baseline."""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Sequence

from .data import OUTSIDE, Record
from .metrics import Metrics, compute_metrics


@dataclass
class MajorityBaseline:
    intent: str
    word_tags: dict[str, str]

    @classmethod
    def fit(cls, records: Sequence[Record]) -> "MajorityBaseline":
        intents = Counter(r.intent for r in records)
        # ties go to the lexicographically smallest label
        intent = min(intents, key=lambda k: (-intents[k], k))
        by_word: defaultdict[str, Counter] = defaultdict(Counter)
        for r in records:
            for w, t in zip(r.words, r.slots):
                by_word[w][t] += 1
        tags = {w: min(c, key=lambda k: (-c[k], k)) for w, c in by_word.items()}
        return cls(intent, tags)

    def predict(self, words: Sequence[str]) -> tuple[str, list[str]]:
        return self.intent, [self.word_tags.get(w, OUTSIDE) for w in words]

    def evaluate(self, records: Sequence[Record]) -> Metrics:
        preds = [self.predict(r.words) for r in records]
        return compute_metrics(
            [r.intent for r in records],
            [p[0] for p in preds],
            [list(r.slots) for r in records],
            [p[1] for p in preds],
        )
