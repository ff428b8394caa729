"""Intent and slot heads on top of the encoder, joint loss and decoding."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tc
from .crf import CrfParams, crf_nll_batch, viterbi_decode
from .data import LabelMaps
from .encoder import EncoderConfig, encode, init_encoder_params, linear, truncated_normal
from .errors import ConfigError, DataError, ShapeError
from .tensor import Tensor
from .tokenizer import TokenizedExample, Vocabulary, basic_tokenize, encode_example

VARIANTS = ("softmax", "crf")
TASKS = ("joint", "intent", "slot")


@dataclass
class JointModel:
    """Encoder parameters plus intent head, slot head and optional CRF.

    ``task`` restricts the loss to one factor for the independent-model
    ablation; ``"joint"`` trains both.
    """

    config: EncoderConfig
    params: dict[str, Tensor]
    labels: LabelMaps
    variant: str = "softmax"
    task: str = "joint"
    vocab: Vocabulary | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.params["intent.weight"].shape[0] != self.labels.intent_count:
            raise ConfigError("intent head size does not match the intent label map")
        if self.params["slot.weight"].shape[0] != self.labels.slot_count:
            raise ConfigError("slot head size does not match the slot label map")
        if (self.variant == "crf") != ("crf.transitions" in self.params):
            raise ConfigError("CRF parameters present/absent inconsistently with variant")

    @property
    def dtype(self):
        return self.params["intent.weight"].dtype

    @property
    def crf(self) -> CrfParams | None:
        return CrfParams.from_params(self.params) if self.variant == "crf" else None

    def parameters(self) -> dict[str, Tensor]:
        return self.params


def init_model(
    config: EncoderConfig,
    labels: LabelMaps,
    variant: str = "softmax",
    task: str = "joint",
    seed: int = 0,
    dtype=np.float32,
    vocab: Vocabulary | None = None,
) -> JointModel:
    rng = np.random.default_rng(seed)
    params = init_encoder_params(config, rng, dtype)
    h = config.hidden_size
    heads = {
        "intent.weight": truncated_normal(rng, (labels.intent_count, h), dtype=dtype),
        "intent.bias": np.zeros(labels.intent_count, dtype),
        "slot.weight": truncated_normal(rng, (labels.slot_count, h), dtype=dtype),
        "slot.bias": np.zeros(labels.slot_count, dtype),
    }
    if variant == "crf":
        n = labels.slot_count
        heads["crf.transitions"] = np.zeros((n, n), dtype)
        heads["crf.start"] = np.zeros(n, dtype)
        heads["crf.end"] = np.zeros(n, dtype)
    for name, arr in heads.items():
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return JointModel(config, params, labels, variant, task, vocab)


# -- heads ---------------------------------------------------------------------------

def intent_logits(h1: Tensor, model: JointModel) -> Tensor:
    """``W_intent h1 + b_intent`` for a (H,) vector or a (B, H) batch."""
    if h1.shape[-1] != model.config.hidden_size:
        raise ShapeError(f"h1 has size {h1.shape[-1]}, expected {model.config.hidden_size}")
    return linear(h1, model.params["intent.weight"], model.params["intent.bias"])


def select_word_starts(hidden_states: Tensor, word_start_mask) -> Tensor:
    """Rows of ``hidden_states`` where the mask is true, in order: (N, H)."""
    mask = np.asarray(word_start_mask, dtype=bool)
    if mask.shape != hidden_states.shape[:-1]:
        raise ShapeError(f"mask {mask.shape} does not match hidden states {hidden_states.shape}")
    flat = tc.reshape(hidden_states, (-1, hidden_states.shape[-1]))
    return tc.take(flat, np.flatnonzero(mask.reshape(-1)), axis=0)


def slot_logits(hidden_states: Tensor, word_start_mask, model: JointModel) -> Tensor:
    """Affine slot head on each word's first sub-token: (N, slot_count)."""
    rows = select_word_starts(hidden_states, word_start_mask)
    return linear(rows, model.params["slot.weight"], model.params["slot.bias"])


def padded_slot_emissions(hidden_states: Tensor, word_start_mask, model: JointModel):
    """Slot scores gathered into a padded (B, N_max, L) tensor plus lengths."""
    mask = np.asarray(word_start_mask, dtype=bool)
    b, t = mask.shape
    lengths = mask.sum(axis=1)
    n_max = max(int(lengths.max()), 1)
    index = np.zeros((b, n_max), dtype=np.int64)
    for i in range(b):
        pos = np.flatnonzero(mask[i])
        index[i, : len(pos)] = i * t + pos
    flat = tc.reshape(hidden_states, (b * t, hidden_states.shape[-1]))
    rows = tc.take(flat, index, axis=0)
    return linear(rows, model.params["slot.weight"], model.params["slot.bias"]), lengths


# -- batching ------------------------------------------------------------------------

@dataclass
class Batch:
    token_ids: np.ndarray        # (B, T)
    attention_mask: np.ndarray   # (B, T) true at real tokens
    word_start_mask: np.ndarray  # (B, T)
    intent_ids: np.ndarray | None
    slot_ids: np.ndarray | None  # (B, N_max), -1 past each length
    lengths: np.ndarray          # (B,) words per example

    def __len__(self) -> int:
        return self.token_ids.shape[0]


def collate(examples: Sequence[TokenizedExample], pad_id: int) -> Batch:
    if not examples:
        raise DataError("cannot collate an empty batch")
    b = len(examples)
    t = max(len(e) for e in examples)
    ids = np.full((b, t), pad_id, dtype=np.int64)
    attn = np.zeros((b, t), dtype=bool)
    starts = np.zeros((b, t), dtype=bool)
    for i, e in enumerate(examples):
        ids[i, : len(e)] = e.token_ids
        attn[i, : len(e)] = True
        starts[i, : len(e)] = e.word_start_mask
    lengths = starts.sum(axis=1)
    intents = slots = None
    if all(e.intent_label is not None for e in examples):
        intents = np.array([e.intent_label for e in examples], dtype=np.int64)
    if all(e.slot_label_ids is not None for e in examples):
        slots = np.full((b, max(int(lengths.max()), 1)), -1, dtype=np.int64)
        for i, e in enumerate(examples):
            slots[i, : len(e.slot_label_ids)] = e.slot_label_ids
    return Batch(ids, attn, starts, intents, slots, lengths)


# -- losses -------------------------------------------------------------------------

def batch_loss(batch: Batch, model: JointModel, rng: np.random.Generator | None = None,
               training: bool = False) -> Tensor:
    """Mean over examples of the joint negative log-likelihood.

    Each example contributes ``CE(intent) + sum over words CE(slot)`` (or the
    CRF negative log-likelihood in place of the slot sum). Only the factors
    selected by ``model.task`` are included.
    """
    need_intent = model.task in ("joint", "intent")
    need_slots = model.task in ("joint", "slot")
    if (need_intent and batch.intent_ids is None) or (need_slots and batch.slot_ids is None):
        raise DataError("loss requires intent and slot labels on every example")
    if need_slots and (batch.lengths < 1).any():
        raise DataError("every example needs at least one word for the slot loss")

    out = encode(batch.token_ids, model.config, model.params, batch.attention_mask, training, rng)
    hidden = out.hidden_states
    p = model.config.dropout_p
    terms = []
    if need_intent:
        h1 = tc.dropout(out.h1, p, training, rng)
        terms.append(tc.cross_entropy(intent_logits(h1, model), batch.intent_ids, reduction="sum"))
    if need_slots:
        hidden = tc.dropout(hidden, p, training, rng)
        if model.variant == "crf":
            emissions, lengths = padded_slot_emissions(hidden, batch.word_start_mask, model)
            terms.append(crf_nll_batch(emissions, np.maximum(batch.slot_ids, 0), lengths, model.crf))
        else:
            logits = slot_logits(hidden, batch.word_start_mask, model)
            valid = batch.slot_ids >= 0
            terms.append(tc.cross_entropy(logits, batch.slot_ids[valid], reduction="sum"))
    total = terms[0] if len(terms) == 1 else tc.add(terms[0], terms[1])
    return tc.mul(total, 1.0 / len(batch))


def joint_loss(example: TokenizedExample, model: JointModel, rng: np.random.Generator | None = None,
               training: bool = False) -> Tensor:
    """Negative log of p(intent, slots | x) for one labelled example."""
    if example.intent_label is None or example.slot_label_ids is None:
        raise DataError("joint_loss needs an example carrying intent and slot labels")
    return batch_loss(collate([example], pad_id=0), model, rng, training)


# -- prediction ------------------------------------------------------------------------

@dataclass
class Prediction:
    intent: str
    intent_probability: float
    slots: list[str]
    intent_distribution: np.ndarray | None = None


def _decode(model: JointModel, batch: Batch) -> tuple[np.ndarray, list[list[int]]]:
    with tc.no_grad():
        out = encode(batch.token_ids, model.config, model.params, batch.attention_mask)
        probs = tc.softmax(intent_logits(out.h1, model), axis=-1).data
        emissions, lengths = padded_slot_emissions(out.hidden_states, batch.word_start_mask, model)
    em = emissions.data
    slots = []
    crf = model.crf
    for i, n in enumerate(lengths):
        if n == 0:
            slots.append([])
        elif crf is not None:
            slots.append(viterbi_decode(em[i, :n], crf)[0])
        else:
            slots.append(em[i, :n].argmax(axis=-1).tolist())
    return probs, slots


def predict_batch(sentences: Sequence[Sequence[str]], model: JointModel,
                  vocab: Vocabulary | None = None, batch_size: int = 64) -> list[Prediction]:
    vocab = vocab or model.vocab
    if vocab is None:
        raise ConfigError("predict needs a vocabulary")
    labels = model.labels
    results: list[Prediction] = []
    for lo in range(0, len(sentences), batch_size):
        chunk = sentences[lo : lo + batch_size]
        if any(len(words) == 0 for words in chunk):
            raise DataError("cannot predict on an empty word sequence")
        examples = [encode_example(w, None, None, vocab, None, model.config.max_len) for w in chunk]
        probs, slot_ids = _decode(model, collate(examples, vocab.pad_id))
        for words, p, ids in zip(chunk, probs, slot_ids):
            best = int(p.argmax())
            tags = [labels.slots[i] for i in ids]
            # words dropped by truncation get no prediction; score them as outside
            tags += ["O"] * (len(words) - len(tags))
            results.append(Prediction(labels.intents[best], float(p[best]), tags, p))
    return results


def predict(words: Sequence[str] | str, model: JointModel, vocab: Vocabulary | None = None) -> Prediction:
    """Intent and one slot tag per word, with dropout disabled."""
    if isinstance(words, str):
        words = basic_tokenize(words)
    return predict_batch([list(words)], model, vocab)[0]
