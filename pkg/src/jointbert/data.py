"""Loading and validating ATIS/Snips-style joint NLU datasets.

A dataset directory holds one sub-directory per split, each with three
line-aligned files::

    <root>/<split>/seq.in    space-separated words
    <root>/<split>/seq.out   space-separated BIO slot tags
    <root>/<split>/label     one intent label
"""
from __future__ import annotations

import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
UNK_INTENT = "UNK"
OUTSIDE = "O"


@dataclass(frozen=True)
class Record:
    words: tuple[str, ...]
    slots: tuple[str, ...]
    intent: str


@dataclass
class LabelMaps:
    """Intent and slot label inventories; list position is the id.

    Intent id 0 is reserved for :data:`UNK_INTENT`; unseen dev/test intents
    map there. ``"O"`` is always slot id 0.
    """

    intents: list[str]
    slots: list[str]
    intent_index: dict[str, int] = field(init=False, repr=False)
    slot_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(set(self.intents)) != len(self.intents) or len(set(self.slots)) != len(self.slots):
            raise DataError("label maps contain duplicate labels")
        self.intent_index = {s: i for i, s in enumerate(self.intents)}
        self.slot_index = {s: i for i, s in enumerate(self.slots)}

    @classmethod
    def from_records(cls, records: Iterable[Record]) -> "LabelMaps":
        intents, slots = set(), set()
        for r in records:
            intents.add(r.intent)
            slots.update(r.slots)
        intents.discard(UNK_INTENT)
        slots.discard(OUTSIDE)
        return cls([UNK_INTENT] + sorted(intents), [OUTSIDE] + sorted(slots))

    @property
    def intent_count(self) -> int:
        return len(self.intents)

    @property
    def slot_count(self) -> int:
        return len(self.slots)

    def intent_id(self, label: str) -> int:
        try:
            return self.intent_index[label]
        except KeyError:
            raise DataError(f"unknown intent label {label!r}") from None

    def slot_id(self, label: str) -> int:
        try:
            return self.slot_index[label]
        except KeyError:
            raise DataError(f"unknown slot label {label!r}") from None

    def save(self, directory: str | os.PathLike) -> None:
        directory = Path(directory)
        (directory / "intent_labels.txt").write_text("\n".join(self.intents) + "\n", encoding="utf-8")
        (directory / "slot_labels.txt").write_text("\n".join(self.slots) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "LabelMaps":
        directory = Path(directory)
        intents = _read_lines(directory / "intent_labels.txt")
        slots = _read_lines(directory / "slot_labels.txt")
        return cls([s.strip() for s in intents if s.strip()], [s.strip() for s in slots if s.strip()])


@dataclass
class Dataset:
    train: list[Record]
    dev: list[Record]
    test: list[Record]
    labels: LabelMaps


def _read_lines(path: Path) -> list[str]:
    # universal newlines handles both \n and \r\n
    with open(path, encoding="utf-8", newline=None) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_split(root: str | os.PathLike, split: str) -> list[Record]:
    """Parse one split into records; words are lowercased."""
    split_dir = Path(root) / split
    files = {name: split_dir / name for name in ("seq.in", "seq.out", "label")}
    missing = [str(p) for p in files.values() if not p.is_file()]
    if missing:
        raise DataError(f"missing dataset files: {', '.join(missing)}")
    seq_in = _read_lines(files["seq.in"])
    seq_out = _read_lines(files["seq.out"])
    labels = _read_lines(files["label"])
    counts = {"seq.in": len(seq_in), "seq.out": len(seq_out), "label": len(labels)}
    if len(set(counts.values())) != 1:
        shortest = min(counts.values())
        raise DataError(
            f"{split_dir}: line counts differ ({', '.join(f'{k}={v}' for k, v in counts.items())}); "
            f"files diverge after line {shortest}"
        )

    records = []
    for i, (text, tags, intent) in enumerate(zip(seq_in, seq_out, labels)):
        words = text.lower().split()
        slots = tags.split()
        intent = intent.strip()
        if not words:
            raise DataError(f"{split_dir}: utterance {i} (line {i + 1}) is empty")
        if len(words) != len(slots):
            raise DataError(
                f"{split_dir}: utterance {i} (line {i + 1}) has {len(words)} words but {len(slots)} tags"
            )
        if not intent:
            raise DataError(f"{split_dir}: utterance {i} (line {i + 1}) has no intent label")
        records.append(Record(tuple(words), tuple(slots), intent))
    return records


def load_dataset(root: str | os.PathLike) -> Dataset:
    """Load train/valid/test and build label maps from train."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    dev_name = "valid" if (root / "valid").is_dir() else "dev"
    train = load_split(root, "train")
    dev = load_split(root, dev_name)
    test = load_split(root, "test")
    return Dataset(train, dev, test, LabelMaps.from_records(train))


def write_split(root: str | os.PathLike, split: str, records: Sequence[Record]) -> None:
    split_dir = Path(root) / split
    split_dir.mkdir(parents=True, exist_ok=True)
    (split_dir / "seq.in").write_text("".join(" ".join(r.words) + "\n" for r in records), encoding="utf-8")
    (split_dir / "seq.out").write_text("".join(" ".join(r.slots) + "\n" for r in records), encoding="utf-8")
    (split_dir / "label").write_text("".join(r.intent + "\n" for r in records), encoding="utf-8")


@dataclass(frozen=True)
class FlaggedRecord:
    record: Record
    intent: str
    slots: tuple[str, ...]
    flagged: bool


def map_unseen(records: Sequence[Record], labels: LabelMaps) -> list[FlaggedRecord]:
    """Replace labels unseen in training: intents become ``UNK``, slots ``O``.

    The original record is kept alongside so evaluation can still score
    against the true gold strings.
    """
    out = []
    for r in records:
        intent = r.intent if r.intent in labels.intent_index else UNK_INTENT
        slots = tuple(s if s in labels.slot_index else OUTSIDE for s in r.slots)
        flagged = intent != r.intent or slots != r.slots
        out.append(FlaggedRecord(r, intent, slots, flagged))
    return out


def is_bio(tag: str) -> bool:
    if tag == OUTSIDE:
        return True
    return len(tag) > 2 and tag[:2] in ("B-", "I-")


# -- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class DatasetStats:
    train_size: int
    dev_size: int
    test_size: int
    slot_labels: int
    intents: int


SNIPS_STATS = DatasetStats(13084, 700, 700, 72, 7)
ATIS_STATS = DatasetStats(4478, 500, 893, 120, 21)


@dataclass
class ValidationReport:
    checks: list[tuple[str, int, int]]
    bio_violations: list[tuple[int, str]]
    oov_rate: dict[str, float]
    unseen_intents: dict[str, Counter]
    unseen_slots: dict[str, Counter]

    @property
    def mismatches(self) -> list[tuple[str, int, int]]:
        return [c for c in self.checks if c[1] != c[2]]

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def format(self) -> str:
        lines = [f"{'check':<14}{'expected':>10}{'actual':>10}  status"]
        for name, expected, actual in self.checks:
            lines.append(f"{name:<14}{expected:>10}{actual:>10}  {'ok' if expected == actual else 'MISMATCH'}")
        for split in ("dev", "test"):
            lines.append(
                f"{split}: OOV word rate {100 * self.oov_rate[split]:.1f}%, "
                f"unseen intents {sum(self.unseen_intents[split].values())}, "
                f"unseen slot tags {sum(self.unseen_slots[split].values())}"
            )
        if self.bio_violations:
            lines.append(f"{len(self.bio_violations)} train tags violate the BIO shape")
        return "\n".join(lines)


def train_label_counts(records: Sequence[Record]) -> tuple[int, int]:
    """Distinct slot tags (including ``O``) and distinct intents in ``records``."""
    slots = {s for r in records for s in r.slots}
    intents = {r.intent for r in records}
    return len(slots), len(intents)


def validate_dataset(ds: Dataset, expected: DatasetStats) -> ValidationReport:
    n_slots, n_intents = train_label_counts(ds.train)
    checks = [
        ("train", expected.train_size, len(ds.train)),
        ("dev", expected.dev_size, len(ds.dev)),
        ("test", expected.test_size, len(ds.test)),
        ("slot_labels", expected.slot_labels, n_slots),
        ("intents", expected.intents, n_intents),
    ]
    violations = [
        (i, tag) for i, r in enumerate(ds.train) for tag in r.slots if not is_bio(tag)
    ]
    vocab = {w for r in ds.train for w in r.words}
    oov, unseen_i, unseen_s = {}, {}, {}
    for name, split in (("dev", ds.dev), ("test", ds.test)):
        words = [w for r in split for w in r.words]
        oov[name] = sum(w not in vocab for w in words) / len(words) if words else 0.0
        unseen_i[name] = Counter(r.intent for r in split if r.intent not in ds.labels.intent_index)
        unseen_s[name] = Counter(s for r in split for s in r.slots if s not in ds.labels.slot_index)
    report = ValidationReport(checks, violations, oov, unseen_i, unseen_s)
    for name, exp, act in report.mismatches:
        log.warning("dataset check %s: expected %d, found %d", name, exp, act)
    return report
