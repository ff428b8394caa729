"""WordPiece vocabulary induction, tokenization and example encoding."""
from __future__ import annotations

import heapq
import os
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import LabelMaps
from .errors import DataError

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)
CONTINUATION = "##"
MAX_WORD_CHARS = 100


class Vocabulary:
    """Immutable token inventory; the position in ``tokens`` is the id."""

    def __init__(self, tokens: Sequence[str], continuation_prefix: str = CONTINUATION):
        tokens = list(tokens)
        index: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if not tok or any(ch.isspace() for ch in tok):
                raise DataError(f"invalid vocabulary token {tok!r} at id {i}")
            if tok in index:
                raise DataError(f"duplicate vocabulary token {tok!r} (ids {index[tok]} and {i})")
            index[tok] = i
        missing = [s for s in SPECIAL_TOKENS if s not in index]
        if missing:
            raise DataError(f"vocabulary lacks special tokens {missing}")
        self._tokens = tuple(tokens)
        self._index = index
        self.continuation_prefix = continuation_prefix
        self.pad_id = index[PAD]
        self.unk_id = index[UNK]
        self.cls_id = index[CLS]
        self.sep_id = index[SEP]

    @property
    def id_to_token(self) -> tuple[str, ...]:
        return self._tokens

    @property
    def token_to_id(self) -> dict[str, int]:
        return dict(self._index)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def id(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text("\n".join(self._tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.splitlines()
        while lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def basic_tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace; punctuation is left attached."""
    return text.lower().split()


def build_vocab(corpus: Iterable[Sequence[str]], target_size: int) -> Vocabulary:
    """Induce a WordPiece vocabulary by frequency-ordered pair merging.

    Starts from every corpus character in both word-initial and ``##``
    continuation form, then repeatedly merges the most frequent adjacent
    symbol pair (ties broken lexicographically) until ``target_size`` tokens
    exist or no pair remains.
    """
    freqs: Counter[str] = Counter()
    for words in corpus:
        freqs.update(w.lower() for w in words)
    if not freqs:
        raise DataError("cannot build a vocabulary from an empty corpus")

    chars = sorted({ch for w in freqs for ch in w})
    base = list(SPECIAL_TOKENS) + chars + [CONTINUATION + ch for ch in chars]
    if target_size < len(base):
        raise DataError(
            f"target_size {target_size} too small: {len(SPECIAL_TOKENS)} special tokens and "
            f"{len(chars)} characters in two forms need {len(base)} entries"
        )
    vocab = list(base)
    known = set(vocab)

    words = [w for w in sorted(freqs) if len(w) <= MAX_WORD_CHARS]
    counts = [freqs[w] for w in words]
    symbols = [[w[0]] + [CONTINUATION + ch for ch in w[1:]] for w in words]

    pair_count: defaultdict[tuple[str, str], int] = defaultdict(int)
    where: defaultdict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, syms in enumerate(symbols):
        for pair in zip(syms, syms[1:]):
            pair_count[pair] += counts[wi]
            where[pair].add(wi)
    heap = [(-c, pair) for pair, c in pair_count.items()]
    heapq.heapify(heap)

    while len(vocab) < target_size and heap:
        neg, pair = heapq.heappop(heap)
        if pair_count.get(pair, 0) != -neg or neg == 0:
            continue
        left, right = pair
        merged = left + right[len(CONTINUATION):]
        if merged not in known:
            vocab.append(merged)
            known.add(merged)
        touched: dict[tuple[str, str], None] = {}
        for wi in sorted(where.pop(pair, ())):
            syms = symbols[wi]
            for p in zip(syms, syms[1:]):
                pair_count[p] -= counts[wi]
                where[p].discard(wi)
                touched[p] = None
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            symbols[wi] = out
            for p in zip(out, out[1:]):
                pair_count[p] += counts[wi]
                where[p].add(wi)
                touched[p] = None
        for p in touched:
            c = pair_count[p]
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                pair_count.pop(p, None)
                where.pop(p, None)
    return Vocabulary(vocab)


def tokenize_word(word: str, vocab: Vocabulary) -> list[str]:
    """Greedy longest-match-first WordPiece segmentation of one word."""
    if not word or len(word) > MAX_WORD_CHARS:
        return [UNK]
    prefix = vocab.continuation_prefix
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while start < end:
            candidate = word[start:end]
            if start > 0:
                candidate = prefix + candidate
            if candidate in vocab:
                piece = candidate
                break
            end -= 1
        if piece is None:
            return [UNK]
        pieces.append(piece)
        start = end
    return pieces


@dataclass(frozen=True)
class TokenizedExample:
    token_ids: np.ndarray
    word_start_mask: np.ndarray
    intent_label: int | None = None
    slot_label_ids: tuple[int, ...] | None = None
    dropped_words: int = 0

    @property
    def num_words(self) -> int:
        return int(self.word_start_mask.sum())

    def __len__(self) -> int:
        return len(self.token_ids)


def encode_example(
    words: Sequence[str],
    slot_labels: Sequence[str] | None,
    intent: str | None,
    vocab: Vocabulary,
    label_maps: LabelMaps | None,
    max_len: int,
) -> TokenizedExample:
    """Build ``[CLS] sub-tokens... [SEP]`` with a first-sub-token mask.

    Words whose sub-tokens do not fit within ``max_len - 2`` are dropped from
    the end, together with their slot labels.
    """
    if max_len < 3:
        raise ValueError(f"max_len must leave room for [CLS], [SEP] and one token, got {max_len}")
    if slot_labels is not None and len(slot_labels) != len(words):
        raise DataError(f"{len(words)} words but {len(slot_labels)} slot labels")
    if (slot_labels is not None or intent is not None) and label_maps is None:
        raise ValueError("label_maps is required to encode labels")
    slot_ids = [label_maps.slot_id(s) for s in slot_labels] if slot_labels is not None else None
    intent_id = label_maps.intent_id(intent) if intent is not None else None

    budget = max_len - 2
    ids = [vocab.cls_id]
    mask = [False]
    kept = 0
    for word in words:
        pieces = tokenize_word(word.lower(), vocab)
        if len(ids) - 1 + len(pieces) > budget:
            if kept == 0:
                pieces = pieces[:budget]
            else:
                break
        ids.extend(vocab.id(p) for p in pieces)
        mask.extend([True] + [False] * (len(pieces) - 1))
        kept += 1
        if len(ids) - 1 >= budget:
            break
    ids.append(vocab.sep_id)
    mask.append(False)
    return TokenizedExample(
        token_ids=np.asarray(ids, dtype=np.int64),
        word_start_mask=np.asarray(mask, dtype=bool),
        intent_label=intent_id,
        slot_label_ids=tuple(slot_ids[:kept]) if slot_ids is not None else None,
        dropped_words=len(words) - kept,
    )
