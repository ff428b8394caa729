"""Adam, the mini-batch training loop, evaluation and checkpoints."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .container import load_params, save_params
from .data import LabelMaps, Record, map_unseen
from .encoder import EncoderConfig
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .heads import JointModel, batch_loss, collate, predict_batch
from .metrics import Metrics, compute_metrics
from .tensor import Tensor
from .tokenizer import TokenizedExample, Vocabulary, encode_example

log = logging.getLogger(__name__)

EPOCH_GRID = (1, 5, 10, 20, 30, 40)
CHECKPOINT_KIND = "jointbert-checkpoint"


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 128
    max_epochs: int = 30
    epoch_grid: tuple[int, ...] = EPOCH_GRID
    dropout_p: float = 0.1
    max_len: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = 1.0
    # "all": best dev epoch overall; "grid": only epochs listed in epoch_grid
    selection: str = "all"

    def __post_init__(self):
        self.epoch_grid = tuple(self.epoch_grid)
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.selection not in ("all", "grid"):
            raise ConfigError("selection must be 'all' or 'grid'")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Desk-scale preset: smaller batches for from-scratch CPU training."""
        base = {"batch_size": 32, "learning_rate": 5e-4}
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


# -- optimisation ----------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update of every parameter in ``grads``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= update.astype(p.dtype, copy=False)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


# -- encoding and evaluation -----------------------------------------------------------

def encode_records(records: Sequence[Record], vocab: Vocabulary, labels: LabelMaps,
                   max_len: int) -> list[TokenizedExample]:
    """Encode labelled records; unseen labels are mapped to UNK / ``O`` first."""
    return [
        encode_example(fr.record.words, fr.slots, fr.intent, vocab, labels, max_len)
        for fr in map_unseen(records, labels)
    ]


def evaluate(model: JointModel, records: Sequence[Record], vocab: Vocabulary | None = None,
             batch_size: int = 128) -> tuple[Metrics, list]:
    """Score predictions against the records' original gold strings."""
    preds = predict_batch([list(r.words) for r in records], model, vocab, batch_size)
    metrics = compute_metrics(
        [r.intent for r in records],
        [p.intent for p in preds],
        [list(r.slots) for r in records],
        [p.slots for p in preds],
    )
    return metrics, preds


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_intent_acc: float | None = None
    dev_slot_f1: float | None = None
    dev_frame_acc: float | None = None


@dataclass
class TrainResult:
    model: JointModel
    history: list[EpochRecord]
    best_epoch: int


def snapshot(model: JointModel) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in model.params.items()}


def restore(model: JointModel, state: Mapping[str, np.ndarray]) -> None:
    for k, v in state.items():
        model.params[k].data = v.copy()


def train(
    model: JointModel,
    train_examples: Sequence[TokenizedExample],
    config: TrainConfig,
    dev_records: Sequence[Record] | None = None,
    vocab: Vocabulary | None = None,
    on_epoch: Callable[[int, JointModel, EpochRecord], None] | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Train ``model`` in place and leave it at the selected epoch.

    Shuffles each epoch with a seeded generator, minimises the mean batch
    loss with Adam, and after each epoch scores ``dev_records``. The
    parameters of the epoch with the best dev frame accuracy (earliest on
    ties) are restored at the end; without a dev set the last epoch is kept.
    """
    if not train_examples:
        raise DataError("training set is empty")
    vocab = vocab or model.vocab
    if dev_records and vocab is None:
        raise ConfigError("dev evaluation needs a vocabulary")
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    params = model.params
    pad_id = vocab.pad_id if vocab is not None else 0
    n = len(train_examples)
    candidates = set(range(1, config.max_epochs + 1))
    if config.selection == "grid":
        candidates &= set(config.epoch_grid)
        if not candidates:
            candidates = {config.max_epochs}

    history: list[EpochRecord] = []
    best_score, best_epoch, best_state = -1.0, 0, None
    steps = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for lo in range(0, n, config.batch_size):
            batch = collate([train_examples[i] for i in order[lo : lo + config.batch_size]], pad_id)
            for p in params.values():
                p.grad = None
            loss = batch_loss(batch, model, rng, training=True)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, step {steps + 1}")
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            if config.clip_norm is not None:
                clip_grad_norm(grads, config.clip_norm)
            adam_step(params, grads, state, config.learning_rate, config.beta1, config.beta2,
                      config.adam_eps)
            total += value * len(batch)
            seen += len(batch)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        record = EpochRecord(epoch, total / seen)
        if dev_records:
            metrics, _ = evaluate(model, dev_records, vocab)
            record.dev_intent_acc = metrics.intent_accuracy
            record.dev_slot_f1 = metrics.slot_f1
            record.dev_frame_acc = metrics.frame_accuracy
            if epoch in candidates and metrics.frame_accuracy > best_score:
                best_score, best_epoch, best_state = metrics.frame_accuracy, epoch, snapshot(model)
        history.append(record)
        log.info("epoch %d loss %.4f dev %s", epoch, record.train_loss,
                 "-" if record.dev_frame_acc is None else f"frame {100 * record.dev_frame_acc:.1f}")
        if on_epoch is not None:
            on_epoch(epoch, model, record)
        if max_steps is not None and steps >= max_steps:
            break
    if best_state is not None:
        restore(model, best_state)
    else:
        best_epoch = history[-1].epoch
    return TrainResult(model, history, best_epoch)


def write_history(history: Sequence[EpochRecord], path: str | os.PathLike) -> None:
    cols = [f.name for f in fields(EpochRecord)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rec in history:
            w.writerow(["" if getattr(rec, c) is None else getattr(rec, c) for c in cols])


# -- checkpoints --------------------------------------------------------------------

def save_checkpoint(model: JointModel, path: str | os.PathLike, vocab_path: str | None = None) -> None:
    """Parameters plus config, label maps and vocabulary in one container file.

    ``vocab_path`` is stored relative to the checkpoint's directory so that
    identical runs written to different places produce identical bytes.
    """
    if vocab_path is not None:
        vocab_path = os.path.relpath(vocab_path, Path(path).resolve().parent)
    meta = {
        "kind": CHECKPOINT_KIND,
        "encoder_config": model.config.to_dict(),
        "variant": model.variant,
        "task": model.task,
        "intent_labels": list(model.labels.intents),
        "slot_labels": list(model.labels.slots),
        "vocab_path": vocab_path,
        "vocab": list(model.vocab.id_to_token) if model.vocab is not None else None,
    }
    save_params(path, {k: v.data for k, v in model.params.items()}, meta)


def load_checkpoint(path: str | os.PathLike) -> JointModel:
    arrays, meta = load_params(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path}: container is not a model checkpoint")
    try:
        config = EncoderConfig.from_dict(meta["encoder_config"])
        labels = LabelMaps(meta["intent_labels"], meta["slot_labels"])
        vocab = Vocabulary(meta["vocab"]) if meta.get("vocab") else None
        if vocab is None and meta.get("vocab_path"):
            vocab = Vocabulary.load(Path(path).resolve().parent / meta["vocab_path"])
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
        return JointModel(config, params, labels, meta["variant"], meta["task"], vocab)
    except (KeyError, TypeError, ConfigError, DataError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint metadata ({exc})") from exc


def history_as_dicts(history: Sequence[EpochRecord]) -> list[dict]:
    return [asdict(h) for h in history]
