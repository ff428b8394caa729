"""Command-line interface: build-vocab, train, eval, predict, ablate, validate."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .baseline import MajorityBaseline
from .data import ATIS_STATS, SNIPS_STATS, Dataset, load_dataset, load_split, validate_dataset
from .encoder import EncoderConfig
from .errors import CheckpointError, ConfigError, DataError, JointBertError, NumericError
from .heads import JointModel, init_model, predict
from .metrics import compute_metrics
from .tokenizer import UNK, Vocabulary, build_vocab, tokenize_word
from .trainer import (
    EPOCH_GRID, TrainConfig, encode_records, evaluate, load_checkpoint, save_checkpoint, train,
    write_history,
)

log = logging.getLogger("jointbert")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_CHECKPOINT = 5


@dataclass
class RunConfig:
    data_dir: str | None = None
    out_dir: str = "runs/latest"
    vocab: str | None = None
    vocab_size: int = 4000
    variant: str = "softmax"
    seed: int = 0
    # encoder
    num_layers: int = 4
    hidden_size: int = 128
    num_heads: int = 4
    intermediate_size: int = 512
    max_len: int = 50
    dropout_p: float = 0.1
    # training (desk-scale defaults)
    epochs: int = 30
    lr: float = 5e-4
    batch_size: int = 32
    selection: str = "grid"
    grid: list[int] = field(default_factory=lambda: list(EPOCH_GRID))

    def __post_init__(self):
        if self.variant not in ("softmax", "crf"):
            raise ConfigError(f"variant must be 'softmax' or 'crf', got {self.variant!r}")

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size, num_layers=self.num_layers, hidden_size=self.hidden_size,
            num_heads=self.num_heads, intermediate_size=self.intermediate_size,
            max_len=self.max_len, dropout_p=self.dropout_p,
        )

    def train_config(self, max_epochs: int | None = None) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.lr, batch_size=self.batch_size,
            max_epochs=max_epochs or self.epochs, epoch_grid=tuple(self.grid),
            dropout_p=self.dropout_p, max_len=self.max_len, seed=self.seed,
            selection=self.selection,
        )


_FLAG_TO_FIELD = {"epochs": "epochs", "lr": "lr", "batch_size": "batch_size", "max_len": "max_len",
                  "seed": "seed", "variant": "variant", "data_dir": "data_dir", "out_dir": "out_dir",
                  "vocab": "vocab", "vocab_size": "vocab_size", "layers": "num_layers",
                  "hidden": "hidden_size", "heads": "num_heads", "intermediate": "intermediate_size",
                  "dropout": "dropout_p", "selection": "selection", "grid": "grid"}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Built-in defaults, overridden by ``--config`` file, overridden by flags."""
    values: dict = {}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for flag, name in _FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with run settings")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--vocab", help="existing vocabulary file (built from train otherwise)")
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--variant", choices=["softmax", "crf"])
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--intermediate", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--selection", choices=["all", "grid"])
    p.add_argument("--grid", type=int, nargs="+")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointbert", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="induce a WordPiece vocabulary from the train split")
    p.add_argument("--data-dir", dest="data_dir", required=True)
    p.add_argument("--size", type=int, default=4000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a joint model and write the best checkpoint")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", dest="data_dir", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--json", help="also write the report as JSON here")

    p = sub.add_parser("predict", help="predict intent and slots for one query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("query", nargs="+")

    p = sub.add_parser("ablate", help="epoch-grid sweep plus independent intent/slot models")
    _add_run_flags(p)
    p.add_argument("--no-joint-epochs", dest="no_joint_epochs", type=int)

    p = sub.add_parser("validate", help="check split sizes and label counts")
    p.add_argument("--data-dir", dest="data_dir", required=True)
    p.add_argument("--dataset", choices=["snips", "atis"], required=True)

    p = sub.add_parser("baseline", help="majority-intent / most-frequent-tag baseline")
    p.add_argument("--data-dir", dest="data_dir", required=True)
    p.add_argument("--split", default="test")
    return parser


# -- commands ----------------------------------------------------------------------------

def cmd_build_vocab(data_dir: str, size: int, out: str) -> Vocabulary:
    train_split = load_split(data_dir, "train")
    vocab = build_vocab([r.words for r in train_split], size)
    vocab.save(out)
    words = [w for r in train_split for w in r.words]
    unk = sum(tokenize_word(w, vocab) == [UNK] for w in words)
    print(f"vocabulary size {len(vocab)} written to {out}")
    print(f"train words {len(words)}, tokenized to [UNK]: {unk}")
    return vocab


def _prepare(cfg: RunConfig) -> tuple[Dataset, Vocabulary]:
    if not cfg.data_dir:
        raise ConfigError("--data-dir is required")
    ds = load_dataset(cfg.data_dir)
    if cfg.vocab:
        try:
            vocab = Vocabulary.load(cfg.vocab)
        except OSError as exc:
            raise DataError(f"cannot read vocabulary {cfg.vocab}: {exc}") from exc
    else:
        vocab = build_vocab([r.words for r in ds.train], cfg.vocab_size)
    return ds, vocab


def _print_epoch(epoch, model, rec) -> None:
    dev = ""
    if rec.dev_frame_acc is not None:
        dev = (f"  dev intent {100 * rec.dev_intent_acc:5.1f}  slot {100 * rec.dev_slot_f1:5.1f}"
               f"  sent {100 * rec.dev_frame_acc:5.1f}")
    print(f"epoch {epoch:3d}  loss {rec.train_loss:8.4f}{dev}", flush=True)


def _train_one(cfg: RunConfig, ds: Dataset, vocab: Vocabulary, task: str = "joint",
               max_epochs: int | None = None, on_epoch=None, selection: str | None = None):
    tcfg = cfg.train_config(max_epochs)
    if selection is not None:
        tcfg.selection = selection
    model = init_model(cfg.encoder_config(len(vocab)), ds.labels, cfg.variant, task, cfg.seed,
                       vocab=vocab)
    examples = encode_records(ds.train, vocab, ds.labels, cfg.max_len)
    return train(model, examples, tcfg, ds.dev, vocab, on_epoch=on_epoch)


def cmd_train(cfg: RunConfig) -> JointModel:
    ds, vocab = _prepare(cfg)
    result = _train_one(cfg, ds, vocab, on_epoch=_print_epoch)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab_path = out / "vocab.txt"
    vocab.save(vocab_path)
    ds.labels.save(out)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2) + "\n")
    write_history(result.history, out / "history.csv")
    save_checkpoint(result.model, out / "model.ckpt", str(vocab_path))
    print(f"best epoch {result.best_epoch}; checkpoint written to {out / 'model.ckpt'}")
    return result.model


def cmd_eval(checkpoint: str, data_dir: str, split: str, json_out: str | None = None):
    model = load_checkpoint(checkpoint)
    records = load_split(data_dir, split)
    metrics, _ = evaluate(model, records)
    print(metrics.format())
    if json_out:
        Path(json_out).write_text(metrics.to_json() + "\n")
    return metrics


def cmd_predict(checkpoint: str, query: str):
    model = load_checkpoint(checkpoint)
    pred = predict(query, model)
    words = query.lower().split()
    print(f"intent: {pred.intent} ({pred.intent_probability:.3f})")
    print(" ".join(f"{w}:{t}" for w, t in zip(words, pred.slots)))
    return pred


def cmd_ablate(cfg: RunConfig, no_joint_epochs: int | None = None) -> list[dict]:
    """Rows: joint model at every grid epoch, then independent intent/slot models."""
    ds, vocab = _prepare(cfg)
    grid = sorted(set(cfg.grid))
    rows: list[dict] = []

    def at_epoch(epoch, model, rec):
        _print_epoch(epoch, model, rec)
        if epoch in grid:
            m, _ = evaluate(model, ds.test)
            rows.append({"model": "Joint", "epochs": epoch, **m.table_row(),
                         "dev_sent": round(100 * rec.dev_frame_acc, 1)})

    _train_one(cfg, ds, vocab, max_epochs=max(grid), on_epoch=at_epoch, selection="all")
    if no_joint_epochs is None:
        no_joint_epochs = max(rows, key=lambda r: (r["dev_sent"], -r["epochs"]))["epochs"]

    intent_model = _train_one(cfg, ds, vocab, "intent", no_joint_epochs, selection="all").model
    slot_model = _train_one(cfg, ds, vocab, "slot", no_joint_epochs, selection="all").model
    _, ip = evaluate(intent_model, ds.test)
    _, sp = evaluate(slot_model, ds.test)
    m = compute_metrics([r.intent for r in ds.test], [p.intent for p in ip],
                        [list(r.slots) for r in ds.test], [p.slots for p in sp])
    rows.append({"model": "No joint", "epochs": no_joint_epochs, **m.table_row(), "dev_sent": None})

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "epochs", "Intent", "Slot", "Sent", "dev_sent"])
        w.writeheader()
        w.writerows(rows)
    print(f"{'Model':<10}{'Epochs':>7}{'Intent':>8}{'Slot':>8}{'Sent':>8}")
    for r in rows:
        print(f"{r['model']:<10}{r['epochs']:>7}{r['Intent']:>8.1f}{r['Slot']:>8.1f}{r['Sent']:>8.1f}")
    return rows


def cmd_validate(data_dir: str, dataset: str) -> bool:
    ds = load_dataset(data_dir)
    report = validate_dataset(ds, SNIPS_STATS if dataset == "snips" else ATIS_STATS)
    print(report.format())
    return report.ok


def cmd_baseline(data_dir: str, split: str):
    train_split = load_split(data_dir, "train")
    metrics = MajorityBaseline.fit(train_split).evaluate(load_split(data_dir, split))
    print(metrics.format())
    return metrics


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "build-vocab":
            cmd_build_vocab(args.data_dir, args.size, args.out)
        elif args.command == "train":
            cmd_train(resolve_config(args))
        elif args.command == "eval":
            cmd_eval(args.checkpoint, args.data_dir, args.split, args.json)
        elif args.command == "predict":
            cmd_predict(args.checkpoint, " ".join(args.query))
        elif args.command == "ablate":
            cmd_ablate(resolve_config(args), args.no_joint_epochs)
        elif args.command == "validate":
            if not cmd_validate(args.data_dir, args.dataset):
                return EXIT_DATA
        elif args.command == "baseline":
            cmd_baseline(args.data_dir, args.split)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except JointBertError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
