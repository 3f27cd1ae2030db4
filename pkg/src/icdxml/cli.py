"""Command-line entry points.

Every subcommand reads a flat JSON run config (``--config``), lets a few flags
override it, and writes its artifacts under ``out_dir``.  Exit codes: 0 ok,
1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from .cohort import (
    LabelSpace,
    apply_split,
    avg_codes_per_note,
    filter_labels,
    impute_corpus,
    label_vector,
    read_chronic,
    read_descriptions,
    read_split,
    split_by_patient,
    write_split,
)
from .config import ConfigError, RunConfig, load_config
from .corpus import (
    Note,
    Vocab,
    build_vocab,
    encode,
    iter_tokens,
    mean_oov_per_note,
    normalize_text,
    note_filter,
    read_notes,
)
from .encoder import extend_positions, init_encoder
from .evaluation import PredictionSet, build_report, low_frequency_slice, micro_auc, write_report
from .export import attention_export, write_attention_export
from .heads import (
    Classifier,
    LabeledSet,
    LogRegHParams,
    MultiHeadConfig,
    TrainHParams,
    bow_features,
    bow_logreg,
    init_cls_head,
    init_multihead,
    init_xml_head,
    semantic_label_init,
    train_classifier,
    write_metrics,
)
from .pretrain import PretrainHParams, documents_from_notes, mlm_infill, pretrain, write_loss_curve
from .synth import PlantedConfig, write_synth

log = logging.getLogger("icdxml")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared data preparation


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise UsageError("missing config values: " + ", ".join(missing))


def _exists(path: str | None, what: str) -> Path:
    if path is None or not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return Path(path)


def filtered_notes(cfg: RunConfig) -> list[Note]:
    _require(cfg, "notes")
    notes = read_notes(cfg.notes)
    return [n for n in notes if note_filter(n.text, n.category, cfg.excluded_categories)]


def resolve_split(cfg: RunConfig, notes: list[Note]) -> dict[str, str]:
    if cfg.split is not None:
        assignment = read_split(_exists(cfg.split, "split file"))
        missing = {n.patient_id for n in notes} - set(assignment)
        if missing:
            raise ValueError(f"{len(missing)} patients have no split assignment")
        return assignment
    ratios = tuple(r / sum(cfg.split_ratios) for r in cfg.split_ratios)
    return split_by_patient([n.patient_id for n in notes], ratios, cfg.seed)


def load_vocab(cfg: RunConfig) -> Vocab:
    path = cfg.vocab or str(Path(cfg.out_dir) / "vocab.txt")
    return Vocab.load(_exists(path, "vocabulary (run build-vocab first)"))


@dataclass
class Cohort:
    splits: dict[str, list[Note]]
    space: LabelSpace
    vocab: Vocab
    stats: dict

    def labeled(self, split: str) -> LabeledSet:
        notes = self.splits[split]
        toks = [encode(normalize_text(n.text), self.vocab, n.note_id) for n in notes]
        if notes:
            ys = np.stack([label_vector(n.codes, self.space) for n in notes])
        else:
            ys = np.zeros((0, len(self.space)), np.int8)
        return LabeledSet(toks, ys)


def load_cohort(cfg: RunConfig, vocab: Vocab | None = None) -> Cohort:
    """Filter, impute chronic codes, split by patient and build the label space from train."""
    notes = filtered_notes(cfg)
    if not notes:
        raise ValueError("no notes survive the length and category filter")
    chronic = read_chronic(cfg.chronic) if cfg.chronic else set()
    descriptions = read_descriptions(cfg.descriptions) if cfg.descriptions else {}
    raw_avg = avg_codes_per_note(notes)
    imputed = impute_corpus(notes, chronic)
    splits = apply_split(imputed, resolve_split(cfg, imputed))
    space = filter_labels(splits["train"], cfg.min_label_count, descriptions, chronic, cfg.inclusive_min_count)
    if not len(space):
        raise ValueError("label space is empty after count filtering")
    stats = {
        "notes": len(notes),
        "avg_codes_per_note_raw": raw_avg,
        "avg_codes_per_note_imputed": avg_codes_per_note(imputed),
        "avg_codes_per_note_in_space": avg_codes_per_note(imputed, space),
        "labels": len(space),
        **{f"{s}_notes": len(v) for s, v in splits.items()},
    }
    return Cohort(splits, space, vocab or load_vocab(cfg), stats)


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_vocab(cfg: RunConfig, args) -> int:
    notes = filtered_notes(cfg)
    if cfg.split is not None:
        notes = apply_split(notes, resolve_split(cfg, notes))["train"]
    vocab = build_vocab(iter_tokens(n.text for n in notes), cfg.vocab_size)
    out = Path(args.output or cfg.vocab or Path(cfg.out_dir) / "vocab.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    ck.atomic_write(out, vocab.to_bytes())
    tokens = [normalize_text(n.text) for n in notes]
    report = {
        "notes": len(notes),
        "vocab_size": len(vocab),
        "vocab_hash": vocab.digest(),
        "mean_oov_per_note": mean_oov_per_note([encode(t, vocab) for t in tokens]) if notes else 0.0,
    }
    if cfg.comparison_vocab:
        other = Vocab.load(cfg.comparison_vocab)
        report["comparison"] = {
            "path": cfg.comparison_vocab,
            "vocab_size": len(other),
            "mean_oov_per_note": mean_oov_per_note([encode(t, other) for t in tokens]) if notes else 0.0,
        }
    _write_json(report, out.with_name(out.stem + "_oov_report.json"))
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_split(cfg: RunConfig, args) -> int:
    notes = filtered_notes(cfg)
    ratios = tuple(r / sum(cfg.split_ratios) for r in cfg.split_ratios)
    assignment = split_by_patient([n.patient_id for n in notes], ratios, cfg.seed)
    out = Path(args.output or cfg.split or Path(cfg.out_dir) / "split.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_split(assignment, out)
    counts = {s: sum(1 for v in assignment.values() if v == s) for s in ("train", "dev", "test")}
    print(json.dumps({"patients": len(assignment), **counts}, sort_keys=True))
    return EXIT_OK


def cmd_pretrain(cfg: RunConfig, args) -> int:
    vocab = load_vocab(cfg)
    notes = filtered_notes(cfg)
    if cfg.split is not None:
        parts = apply_split(notes, resolve_split(cfg, notes))
        train_notes, dev_notes = parts["train"], parts["dev"]
    else:
        order = np.random.default_rng(cfg.seed).permutation(len(notes))
        n_dev = max(1, int(round(cfg.dev_fraction * len(notes))))
        dev_notes = [notes[i] for i in sorted(order[:n_dev])]
        train_notes = [notes[i] for i in sorted(order[n_dev:])]
    enc_cfg = cfg.encoder_config(len(vocab))
    hp = PretrainHParams(
        epochs=cfg.pretrain_epochs, batch_size=cfg.pretrain_batch_size, peak_lr=cfg.pretrain_lr,
        warmup_proportion=cfg.warmup, weight_decay=cfg.weight_decay, max_grad_norm=cfg.max_grad_norm,
        log_every=cfg.pretrain_log_every, nsp=cfg.nsp,
    )
    result = pretrain(
        documents_from_notes(train_notes, vocab), documents_from_notes(dev_notes, vocab), enc_cfg, hp, cfg.seed
    )
    out = Path(cfg.out_dir)
    best = min(result.curve, key=lambda r: r["dev_mlm_loss"] + r["dev_nsp_loss"])
    ck.save_encoder(out / "pretrain", result.params, vocab, result.best_step, best["dev_mlm_loss"])
    write_loss_curve(result.curve, out / "pretrain_loss.csv")
    print(json.dumps({"best_step": result.best_step, "initial_dev_mlm": result.initial_dev_mlm,
                      "best_dev_mlm": best["dev_mlm_loss"]}, sort_keys=True))
    return EXIT_OK


def _init_encoder_for(cfg: RunConfig, vocab: Vocab):
    if cfg.pretrain_checkpoint is None:
        return init_encoder(cfg.encoder_config(len(vocab)), cfg.seed)
    params = ck.load_encoder(_exists(cfg.pretrain_checkpoint, "pretrain checkpoint"), vocab)
    if params.config.max_len < cfg.max_len:
        params = extend_positions(params, cfg.max_len, cfg.seed)
    return params


def build_model(cfg: RunConfig, cohort: Cohort) -> Classifier:
    m = len(cohort.space)
    if cfg.head == "multihead":
        mh = MultiHeadConfig(len(cohort.vocab), m, cfg.mh_embed_dim, cfg.mh_gru_hidden, cfg.mh_num_heads)
        return Classifier("multihead", init_multihead(mh, cfg.seed), max_len=cfg.max_len, multihead=mh)
    enc = _init_encoder_for(cfg, cohort.vocab)
    d = enc.config.hidden_size
    if cfg.head == "cls":
        return Classifier("cls", init_cls_head(m, d, cfg.seed), enc, cfg.max_len)
    labels = semantic_label_init(cohort.space, enc, cohort.vocab, seed=cfg.seed) if cfg.semantic_init else None
    return Classifier("xml", init_xml_head(m, d, seed=cfg.seed, label_embeddings=labels), enc, cfg.max_len)


def _train_logreg(cfg: RunConfig, cohort: Cohort, out: Path) -> dict:
    train, dev = cohort.labeled("train"), cohort.labeled("dev")
    v = len(cohort.vocab)
    model = bow_logreg(
        bow_features([n.token_ids for n in train.notes], v), train.labels,
        LogRegHParams(lr=cfg.logreg_lr, max_epochs=cfg.logreg_max_epochs, seed=cfg.seed),
    )
    scores = model.predict(bow_features([n.token_ids for n in dev.notes], v))
    auc = micro_auc(PredictionSet([n.note_id for n in dev.notes], scores, dev.labels, cohort.space))
    ck.save_logreg(out / "model", model, cohort.vocab, cohort.space, auc)
    write_metrics([{"epoch": 1, "dev_micro_auc": auc}], out / "metrics.csv")
    return {"best_epoch": 1, "dev_micro_auc": auc}


def cmd_train(cfg: RunConfig, args) -> int:
    cohort = load_cohort(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json({**cohort.stats, "label_space": cohort.space.to_json()}, out / "cohort.json")
    if cfg.head == "logreg":
        print(json.dumps(_train_logreg(cfg, cohort, out), sort_keys=True))
        return EXIT_OK

    start_epoch, optimizer, prior_rows = 0, None, []
    if args.resume:
        model, _, ckpt = ck.load_classifier(_exists(args.resume, "resume checkpoint"), cohort.vocab, cohort.space)
        optimizer = ck.load_optimizer(ckpt)
        start_epoch = int(ckpt.manifest.get("epoch", 0))
        prior_rows = ckpt.manifest.get("metrics", [])
    else:
        model = build_model(cfg, cohort)
    hp = TrainHParams(
        epochs=cfg.epochs, batch_size=cfg.batch_size, peak_lr=cfg.lr, warmup_proportion=cfg.warmup,
        weight_decay=cfg.weight_decay, max_grad_norm=cfg.max_grad_norm,
    )
    rows = list(prior_rows)
    # the best-dev model is saved as soon as an epoch improves on it, so an
    # interrupted run keeps its best epoch and a resumed run can still beat it
    best = {"auc": max((r["dev_micro_auc"] for r in prior_rows), default=-np.inf)}

    def on_epoch_end(epoch, mdl, state, row):
        rows.append(row)
        if row["dev_micro_auc"] > best["auc"]:
            best["auc"] = row["dev_micro_auc"]
            ck.save_classifier(out / "model", mdl, cohort.vocab, cohort.space, state.step, row["dev_micro_auc"],
                               extra={"epoch": epoch + 1})
        ck.save_classifier(out / "last", mdl, cohort.vocab, cohort.space, state.step, row["dev_micro_auc"],
                           optimizer=state, extra={"epoch": epoch + 1, "metrics": rows})

    result = train_classifier(model, cohort.labeled("train"), cohort.labeled("dev"), cohort.space, hp, cfg.seed,
                              start_epoch, optimizer, on_epoch_end)
    if not result.metrics:
        print(json.dumps({"message": f"nothing to resume: all {cfg.epochs} epochs done"}))
        return EXIT_OK
    write_metrics(rows, out / "metrics.csv")
    top = max(rows, key=lambda r: r["dev_micro_auc"])
    print(json.dumps({"best_epoch": top["epoch"], "dev_micro_auc": top["dev_micro_auc"]}, sort_keys=True))
    return EXIT_OK


def _load_any(path, vocab, space):
    kind = ck.load_checkpoint(path).manifest.get("kind")
    if kind == "logreg":
        return ck.load_logreg(path, vocab, space)
    return ck.load_classifier(path, vocab, space)


def _scores(model, data: LabeledSet, vocab: Vocab) -> np.ndarray:
    if isinstance(model, Classifier):
        return model.predict_notes(data.notes)
    return model.predict(bow_features([n.token_ids for n in data.notes], len(vocab)))


def cmd_evaluate(cfg: RunConfig, args) -> int:
    path = args.checkpoint or cfg.checkpoint or str(Path(cfg.out_dir) / "model")
    cohort = load_cohort(cfg)
    model, space, _ = _load_any(_exists(path, "checkpoint"), cohort.vocab, cohort.space)
    data = cohort.labeled(args.split)
    if not data.notes:
        raise ValueError(f"split {args.split!r} is empty")
    preds = PredictionSet([n.note_id for n in data.notes], _scores(model, data, cohort.vocab), data.labels, space)
    report = build_report(preds, cfg.histogram_bin_width, cfg.high_auc_threshold)
    paths = write_report(report, Path(args.output or cfg.out_dir), args.split)
    summary = {"micro_auc": report.micro_auc, "macro_auc": report.macro_auc,
               "excluded_labels": len(report.excluded_labels), "report": str(paths["json"])}
    if cfg.low_frequency_max_count is not None:
        summary["low_frequency_macro_auc"] = low_frequency_slice(report, space, cfg.low_frequency_max_count)
        _write_json({**report.to_json(), **summary}, paths["json"])
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    path = _exists(args.checkpoint or cfg.checkpoint or str(Path(cfg.out_dir) / "model"), "checkpoint")
    vocab = load_vocab(cfg)
    kind = ck.load_checkpoint(path).manifest.get("kind")
    if kind == "encoder":
        if args.text is None or not args.positions:
            raise UsageError("an encoder checkpoint predicts masked tokens: pass --text and --positions")
        params = ck.load_encoder(path, vocab)
        positions = [int(p) for p in args.positions.split(",")]
        preds = mlm_infill(args.text, params, vocab, positions)
        tokens = normalize_text(args.text)
        rows = [{"position": p, "original": tokens[p], "predicted": t} for p, t in preds]
        _write_json({"text": args.text, "predictions": rows}, Path(args.output or cfg.out_dir) / "infill.json")
        print(json.dumps(rows))
        return EXIT_OK
    model, space, _ = _load_any(path, vocab, None)
    notes = filtered_notes(cfg)
    toks = [encode(normalize_text(n.text), vocab, n.note_id) for n in notes]
    data = LabeledSet(toks, np.zeros((len(toks), len(space)), np.int8))
    scores = _scores(model, data, vocab)
    out = Path(args.output or cfg.out_dir) / "predictions.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["note_id", *space.codes])
        for n, row in zip(toks, scores):
            w.writerow([n.note_id, *(repr(float(x)) for x in row)])
    print(json.dumps({"notes": len(toks), "predictions": str(out)}))
    return EXIT_OK


def cmd_export_attention(cfg: RunConfig, args) -> int:
    path = _exists(args.checkpoint or cfg.checkpoint or str(Path(cfg.out_dir) / "model"), "checkpoint")
    vocab = load_vocab(cfg)
    model, space, _ = ck.load_classifier(path, vocab)
    if model.encoder is None:
        raise UsageError("attention export needs a transformer checkpoint")
    notes = {n.note_id: n for n in read_notes(_exists(cfg.notes, "notes"))}
    if args.note_id not in notes:
        raise KeyError(f"note {args.note_id!r} not found")
    labels = args.labels.split(",") if args.labels else None
    note = encode(normalize_text(notes[args.note_id].text), vocab, args.note_id)
    export = attention_export(model, note, space, labels)
    paths = write_attention_export(export, Path(args.output or cfg.out_dir))
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return EXIT_OK


def cmd_synth(cfg: RunConfig, args) -> int:
    planted = PlantedConfig(num_labels=args.num_labels, n_notes=args.n_notes, n_chronic=args.n_chronic)
    paths = write_synth(Path(args.output or cfg.out_dir), planted, args.n_bigram_docs, cfg.seed)
    print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "build-vocab": cmd_build_vocab,
    "split": cmd_split,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "export-attention": cmd_export_attention,
    "synth": cmd_synth,
}

# flags that override the config file, with their config key
OVERRIDES = {
    "notes": str, "descriptions": str, "chronic": str, "split_file": str, "vocab": str,
    "comparison_vocab": str, "out_dir": str, "pretrain_checkpoint": str, "head": str,
    "lr": float, "epochs": int, "batch_size": int, "max_len": int, "vocab_size": int,
    "min_label_count": int,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="icdxml", description="Multi-label coding of clinical notes.")
    p.add_argument("--config", help="flat JSON run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="cap BLAS threads")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, reproducible run")
    p.add_argument("--print-effective-config", action="store_true", help="dump the resolved config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    for key, typ in OVERRIDES.items():
        p.add_argument("--" + key.replace("_", "-"), type=typ, dest=key)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--output", help="output path or directory")
        if name == "train":
            s.add_argument("--resume", help="checkpoint written at the end of an epoch")
        if name in ("evaluate", "predict", "export-attention"):
            s.add_argument("--checkpoint")
        if name == "evaluate":
            s.add_argument("--split", default="test", choices=("train", "dev", "test"))
        if name == "predict":
            s.add_argument("--text", help="text for masked-token infill")
            s.add_argument("--positions", help="comma-separated token positions to mask")
        if name == "export-attention":
            s.add_argument("--note-id", required=True)
            s.add_argument("--labels", help="comma-separated codes (default: all)")
        if name == "synth":
            s.add_argument("--num-labels", type=int, default=20)
            s.add_argument("--n-notes", type=int, default=2000)
            s.add_argument("--n-chronic", type=int, default=3)
            s.add_argument("--n-bigram-docs", type=int, default=2000)
    return p


def _thread_limit(n: int | None):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    overrides = {k: getattr(args, k) for k in OVERRIDES}
    overrides["split"] = overrides.pop("split_file")
    overrides["seed"] = args.seed
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"icdxml: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"icdxml: {exc}", file=sys.stderr)
        return EXIT_DATA
    if args.print_effective_config:
        sys.stdout.write(cfg.to_json())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    threads = 1 if args.deterministic else args.threads
    try:
        with _thread_limit(threads):
            return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError) as exc:
        print(f"icdxml: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"icdxml: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError) as exc:
        # str() of a KeyError is the repr of its argument, quotes included
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"icdxml: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
