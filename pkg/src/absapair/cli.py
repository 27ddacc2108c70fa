"""Command-line entry point: ``absapair <command> [options]``.

Every command reads an optional key=value config file (``--config``); flags
given on the command line override it. Primary outputs carry no timestamps,
so rerunning a command with the same config and seed reproduces them byte
for byte.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from ._rng import substream
from .encoder import EncoderConfig, load_checkpoint, pretrain, save_checkpoint
from .evaluation import compare_report, error_report, f1_scores, format_error_report, write_error_listing
from .tokenizer import VocabError, build_vocab, load_vocab, oov_stats, tokenize
from .training import (
    AdaptationStrategy,
    Experiment,
    Hyperparams,
    Model,
    RunResult,
    TrainHistory,
    grid_search,
)
from .transform import (
    DEFAULT_LEXICON,
    CategoryConfig,
    DataError,
    GeneratorConfig,
    TransformMethod,
    expected_instance_count,
    generate_synthetic_reviews,
    lexicon_words,
    load_lexicon,
    read_reviews,
    split_dataset,
    synthetic_documents,
    transform_dataset,
    write_instances,
    write_jsonl,
    write_reviews,
)

log = logging.getLogger("absapair")

# A count reported elsewhere for 9,448 reviews x 10 categories under NLI-B;
# the exact expansion gives 283,440.
REPORTED_APPROX_COUNT = (9448, 10, 283_483)


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    seed: int = 0
    vocab: str | None = None
    dataset: str | None = None
    checkpoint: str | None = None
    categories: str | None = None
    lexicon: str | None = None
    predictions: str | None = None
    out: str | None = None
    method: str = "nli-b"
    strategy: str = "fine-tuning"
    approach: str = "pair"
    learning_rate: float = 2e-5
    batch_size: int = 32
    epochs: int = 25
    grid_learning_rate: str = "3e-5,2e-5"
    grid_batch_size: str = "16,32"
    num_layers: int = 2
    hidden_size: int = 32
    num_heads: int = 2
    ffn_size: int = 0
    max_positions: int = 128
    dropout: float = 0.0
    use_pooler: bool = True
    mlm_80_10_10: bool = False
    max_seq_len: int = 64
    mask_rate: float = 0.15
    train_fraction: float = 0.8
    threshold: float = 0.5
    track_validation: bool = True
    n: int = 1000
    aspect_probability: float = 0.35
    positive_probability: float = 0.5
    filler_probability: float = 0.3

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(self.learning_rate, self.batch_size, self.epochs, self.seed)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            num_layers=self.num_layers,
            hidden_size=self.hidden_size,
            num_heads=self.num_heads,
            ffn_size=self.ffn_size or None,
            max_positions=self.max_positions,
            vocab_size=vocab_size,
            dropout_rate=self.dropout,
            use_pooler=self.use_pooler,
            mlm_80_10_10=self.mlm_80_10_10,
        )

    def grid(self) -> dict[str, list]:
        return {
            "learning_rate": [float(x) for x in _split_list(self.grid_learning_rate)],
            "batch_size": [int(x) for x in _split_list(self.grid_batch_size)],
        }

    def category_config(self) -> CategoryConfig:
        return CategoryConfig.from_file(self.categories) if self.categories else CategoryConfig()


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _split_list(value: str) -> list[str]:
    return [x.strip() for x in str(value).split(",") if x.strip()]


def _coerce(key: str, raw, problems: list[str]):
    kind = FIELD_TYPES[key]
    try:
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return str(raw)
    except ValueError:
        problems.append(f"{key}: cannot parse {raw!r} as {kind.split(' ')[0]}")
        return None


def read_config_file(path: str) -> dict[str, str]:
    """key = value lines; '#' and ';' start comments; no section header needed."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    with open(path, encoding="utf-8") as fh:
        parser.read_string("[run]\n" + fh.read(), source=path)
    return dict(parser["run"])


def build_config(args: argparse.Namespace, required: Sequence[str] = (), must_exist: Sequence[str] = ()) -> RunConfig:
    """Merge config file and flags, then validate everything before any work."""
    problems: list[str] = []
    values: dict = {}
    if getattr(args, "config", None):
        try:
            raw = read_config_file(args.config)
        except (OSError, configparser.Error) as exc:
            raise ConfigError([f"cannot read config {args.config}: {exc}"]) from exc
        for key, value in raw.items():
            key = key.strip().replace("-", "_")
            if key not in FIELD_TYPES:
                problems.append(f"unknown config key {key!r}")
                continue
            values[key] = _coerce(key, value, problems)
    for key in FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = _coerce(key, flag, problems)
    values = {k: v for k, v in values.items() if v is not None}
    cfg = RunConfig(**values)
    for key in required:
        if getattr(cfg, key) in (None, ""):
            problems.append(f"{key} is required (flag --{key.replace('_', '-')} or config key {key})")
    for key in must_exist:
        path = getattr(cfg, key)
        if path and not os.path.exists(path):
            problems.append(f"{key}: {path} does not exist")
    if cfg.categories and not os.path.exists(cfg.categories):
        problems.append(f"categories: {cfg.categories} does not exist")
    if cfg.lexicon and not os.path.exists(cfg.lexicon):
        problems.append(f"lexicon: {cfg.lexicon} does not exist")
    try:
        TransformMethod.parse(cfg.method)
    except ValueError:
        problems.append(f"method: {cfg.method!r} is not one of nli-b, nli-m, qa-b, qa-m")
    try:
        AdaptationStrategy.parse(cfg.strategy)
    except ValueError:
        problems.append(f"strategy: {cfg.strategy!r} is not feature-extraction or fine-tuning")
    if cfg.approach not in ("pair", "single"):
        problems.append(f"approach: {cfg.approach!r} is not pair or single")
    try:
        cfg.hyperparams()
    except ValueError as exc:
        problems.append(f"hyperparameters: {exc}")
    try:
        cfg.encoder_config(1)
    except ValueError as exc:
        problems.append(f"encoder: {exc}")
    try:
        grid = cfg.grid()
        if not grid["learning_rate"] or not grid["batch_size"]:
            problems.append("grid needs at least one learning rate and one batch size")
        elif min(grid["learning_rate"]) <= 0 or min(grid["batch_size"]) < 1:
            problems.append("grid values must be positive")
    except ValueError as exc:
        problems.append(f"grid: {exc}")
    if not 0.0 < cfg.train_fraction < 1.0:
        problems.append("train_fraction must lie in (0, 1)")
    if cfg.max_seq_len < 4 or cfg.max_seq_len > cfg.max_positions:
        problems.append("max_seq_len must lie in [4, max_positions]")
    if not 0.0 <= cfg.mask_rate <= 1.0:
        problems.append("mask_rate must lie in [0, 1]")
    if cfg.n < 0:
        problems.append("n must be >= 0")
    if problems:
        raise ConfigError(problems)
    return cfg


# ---------------------------------------------------------------------------
# shared helpers


def _lexicon(cfg: RunConfig):
    if not cfg.lexicon:
        return dict(DEFAULT_LEXICON)
    with open(cfg.lexicon, encoding="utf-8") as fh:
        try:
            return load_lexicon(json.load(fh))
        except json.JSONDecodeError as exc:
            raise DataError(f"{cfg.lexicon}: invalid JSON: {exc}") from exc


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path: str, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _fmt(x: float) -> str:
    return "nan" if x != x else f"{x:.6f}"


def history_csv(histories: dict[str, TrainHistory]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "epoch", "train_loss", "val_loss", "val_f1"])
    for name in sorted(histories):
        for epoch, tl, vl, vf in histories[name].rows():
            w.writerow([name, epoch, _fmt(tl), _fmt(vl), _fmt(vf)])
    return buf.getvalue()


def _predictions_rows(preds: dict[str, set]):
    for rid in sorted(preds):
        yield {"id": rid, "predicted": sorted([c, p.value] for c, p in preds[rid])}


def _read_predictions(path: str) -> dict[str, set]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[str(obj["id"])] = {(c, p) for c, p in obj["predicted"]}
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed prediction line ({exc})") from exc
    return out


def _save_model(directory: str, name: str, model: Model, meta: dict) -> None:
    save_checkpoint(os.path.join(directory, f"{name}.ckpt"), model.encoder, model.config, meta)
    head = np.vstack([model.head.w, model.head.b[None]]).astype("<f4")
    with open(os.path.join(directory, f"{name}.head.npy"), "wb") as fh:
        np.save(fh, head)


def _load_encoder(cfg: RunConfig, vocab):
    enc_cfg, params, meta = load_checkpoint(cfg.checkpoint)
    if enc_cfg.vocab_size != len(vocab):
        raise DataError(f"checkpoint vocab size {enc_cfg.vocab_size} differs from vocab ({len(vocab)} entries)")
    if cfg.max_seq_len > enc_cfg.max_positions:
        raise DataError(f"max_seq_len {cfg.max_seq_len} exceeds checkpoint max_positions {enc_cfg.max_positions}")
    return enc_cfg, params, meta


def _split(cfg: RunConfig, reviews):
    return split_dataset(reviews, cfg.train_fraction, substream(cfg.seed, "split"))


def _progress(msg: str) -> None:
    log.info(msg)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    cfg = build_config(args, required=("out",))
    lex = _lexicon(cfg)
    cats = cfg.category_config()
    gen = GeneratorConfig(cfg.aspect_probability, cfg.positive_probability, cfg.filler_probability)
    reviews = generate_synthetic_reviews(cfg.seed, cfg.n, cats, lex, gen)
    count = write_reviews(cfg.out, reviews)
    if args.vocab_out:
        with open(args.vocab_out, "wb") as fh:
            fh.write(build_vocab(lexicon_words({c: lex[c] for c in cats.categories})).dump())
    print(f"wrote {count} reviews to {cfg.out}")
    return 0


def cmd_tokenize(args) -> int:
    cfg = build_config(args, required=("vocab",), must_exist=("vocab",))
    vocab = load_vocab(cfg.vocab)
    if args.text is not None:
        lines = [args.text]
    elif args.input:
        with open(args.input, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    else:
        raise ConfigError(["give --text or --input"])
    listing = []
    for line in lines:
        listing.append(" ".join(t.surface for t in tokenize(line, vocab)))
    stats = oov_stats(lines, vocab)
    body = "\n".join(listing) + ("\n" if listing else "")
    if cfg.out:
        _write_text(cfg.out, body)
    else:
        sys.stdout.write(body)
    print(f"words {stats.total_words}  oov occurrences {stats.oov_word_occurrences}  "
          f"unique oov {stats.unique_oov_words}")
    for word, freq in stats.oov_list[:20]:
        print(f"  {word}\t{freq}")
    return 0


def cmd_transform(args) -> int:
    cfg = build_config(args, required=("dataset", "out"), must_exist=("dataset",))
    method = TransformMethod.parse(cfg.method)
    cats = cfg.category_config()
    reviews = read_reviews(cfg.dataset)
    instances = transform_dataset(reviews, cats, method)
    count = write_instances(cfg.out, instances)
    expected = expected_instance_count(len(reviews), len(cats.categories), method)
    if count != expected:
        raise DataError(f"wrote {count} instances, expected {expected}")
    factor = " x 3" if method.is_binary else ""
    print(f"{count} instances = {len(reviews)} reviews x {len(cats.categories)} categories{factor} ({method.value})")
    n, k, approx = REPORTED_APPROX_COUNT
    if method is TransformMethod.NLI_B:
        print(f"note: {n} reviews x {k} categories gives exactly {expected_instance_count(n, k, method)}; "
              f"an approximate figure of {approx} has also been reported for that setting")
    return 0


def cmd_pretrain(args) -> int:
    cfg = build_config(args, required=("vocab", "dataset", "out"), must_exist=("vocab", "dataset"))
    vocab = load_vocab(cfg.vocab)
    enc_cfg = cfg.encoder_config(len(vocab))
    docs = synthetic_documents(read_reviews(cfg.dataset))
    params, hist = pretrain(docs, vocab, enc_cfg, cfg.hyperparams(), max_seq_len=cfg.max_seq_len,
                            mask_rate=cfg.mask_rate, log=_progress)
    save_checkpoint(cfg.out, params, enc_cfg, {"kind": "pretrained", "seed": cfg.seed, "epochs": cfg.epochs})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "mlm_loss", "nsp_loss", "nsp_accuracy"])
    for i in range(len(hist.loss)):
        w.writerow([i, _fmt(hist.loss[i]), _fmt(hist.mlm_loss[i]), _fmt(hist.nsp_loss[i]), _fmt(hist.nsp_accuracy[i])])
    _write_text(cfg.out + ".history.csv", buf.getvalue())
    print(f"wrote {cfg.out} after {hist.steps} steps")
    return 0


def _experiment(cfg: RunConfig):
    vocab = load_vocab(cfg.vocab)
    enc_cfg, params, meta = _load_encoder(cfg, vocab)
    reviews = read_reviews(cfg.dataset)
    train_r, val_r = _split(cfg, reviews)
    exp = Experiment(vocab, cfg.category_config(), enc_cfg, params, TransformMethod.parse(cfg.method),
                     cfg.max_seq_len, cfg.threshold)
    return exp, train_r, val_r, meta


def _run_summary(cfg: RunConfig, result: RunResult) -> dict:
    return {
        "approach": result.approach,
        "strategy": result.strategy.value,
        "method": TransformMethod.parse(cfg.method).value,
        "seed": cfg.seed,
        "learning_rate": result.hp.learning_rate,
        "batch_size": result.hp.batch_size,
        "epochs": result.hp.epochs,
        "report": result.report.as_dict(),
    }


def cmd_train(args) -> int:
    cfg = build_config(args, required=("vocab", "dataset", "checkpoint", "out"),
                       must_exist=("vocab", "dataset", "checkpoint"))
    exp, train_r, val_r, meta = _experiment(cfg)
    t0 = time.perf_counter()
    result = exp.run(cfg.approach, AdaptationStrategy.parse(cfg.strategy), cfg.hyperparams(), train_r, val_r,
                     track_validation=cfg.track_validation, progress=_progress)
    log.info("training took %.1fs", time.perf_counter() - t0)
    out = cfg.out
    os.makedirs(os.path.join(out, "models"), exist_ok=True)
    for name, model in result.models.items():
        _save_model(os.path.join(out, "models"), name, model, meta)
    _write_text(os.path.join(out, "history.csv"), history_csv(result.histories))
    write_jsonl(os.path.join(out, "predictions.jsonl"), _predictions_rows(result.predictions))
    _write_json(os.path.join(out, "report.json"), _run_summary(cfg, result))
    _write_text(os.path.join(out, "report.csv"), result.report.to_csv())
    gold = {r.id: set(r.gold) for r in val_r}
    write_error_listing(os.path.join(out, "errors.jsonl"), error_report(result.predictions, gold, val_r))
    print(f"{result.approach} / {result.strategy.value}: micro F1 {result.report.micro_f1:.4f} "
          f"(macro {result.report.macro_f1:.4f}) on {len(val_r)} validation reviews")
    return 0


def cmd_grid(args) -> int:
    cfg = build_config(args, required=("vocab", "dataset", "checkpoint", "out"),
                       must_exist=("vocab", "dataset", "checkpoint"))
    exp, train_r, val_r, _ = _experiment(cfg)
    res = grid_search(exp, cfg.grid(), train_r, val_r, cfg.hyperparams(), cfg.approach,
                      AdaptationStrategy.parse(cfg.strategy), progress=_progress)
    os.makedirs(cfg.out, exist_ok=True)
    _write_text(os.path.join(cfg.out, "grid.csv"), res.to_csv())
    f1s = [r.f1 for r in res.rows if not r.diverged]
    summary = {
        "best": {"learning_rate": res.best.learning_rate, "batch_size": res.best.batch_size, "f1": res.best.f1},
        "ranked": [{"learning_rate": r.learning_rate, "batch_size": r.batch_size, "f1": r.f1, "diverged": r.diverged}
                   for r in res.ranked()],
        "spread": (max(f1s) - min(f1s)) if f1s else None,
    }
    _write_json(os.path.join(cfg.out, "grid.json"), summary)
    sys.stdout.write(res.to_csv())
    print(f"best: learning_rate={res.best.learning_rate:g} batch_size={res.best.batch_size} F1 {res.best.f1:.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = build_config(args, required=("dataset", "predictions", "out"), must_exist=("dataset", "predictions"))
    reviews = read_reviews(cfg.dataset)
    preds = _read_predictions(cfg.predictions)
    wanted = set(preds)
    scored = [r for r in reviews if r.id in wanted]
    gold = {r.id: set(r.gold) for r in scored}
    report = f1_scores(preds, gold)
    entries = error_report(preds, gold, scored)
    os.makedirs(cfg.out, exist_ok=True)
    _write_json(os.path.join(cfg.out, "report.json"), report.as_dict())
    _write_text(os.path.join(cfg.out, "report.csv"), report.to_csv())
    write_error_listing(os.path.join(cfg.out, "errors.jsonl"), entries)
    _write_text(os.path.join(cfg.out, "errors.txt"), format_error_report(entries))
    print(f"micro F1 {report.micro_f1:.4f}  macro F1 {report.macro_f1:.4f}  "
          f"({len(entries)} of {len(scored)} reviews misclassified)")
    return 0


def cmd_report(args) -> int:
    cfg = build_config(args, required=("out",))
    if not args.runs:
        raise ConfigError(["report needs at least one run directory"])
    results = {}
    for run in args.runs:
        path = os.path.join(run, "report.json")
        if not os.path.exists(path):
            raise ConfigError([f"{path} does not exist"])
        with open(path, encoding="utf-8") as fh:
            summary = json.load(fh)
        key = (summary["approach"], AdaptationStrategy.parse(summary["strategy"]).value)
        results[key] = summary["report"]["micro_f1"]
    rep = compare_report(results)
    _write_text(cfg.out, rep.to_text())
    _write_json(cfg.out + ".json", rep.as_dict())
    sys.stdout.write(rep.to_text())
    return 0


COMMANDS = {
    "generate": (cmd_generate, "write a seeded synthetic review dataset"),
    "tokenize": (cmd_tokenize, "show WordPiece tokens and OOV statistics"),
    "transform": (cmd_transform, "expand reviews into sentence-pair instances"),
    "pretrain": (cmd_pretrain, "masked-LM + next-sentence pretraining of a small encoder"),
    "train": (cmd_train, "train one approach x strategy cell and evaluate it"),
    "grid": (cmd_grid, "grid search over learning rate and batch size"),
    "eval": (cmd_eval, "score a predictions file against gold labels"),
    "report": (cmd_report, "compare run outputs as an approach x strategy table"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="absapair", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--vocab")
        p.add_argument("--dataset")
        p.add_argument("--method", choices=[m.value for m in TransformMethod])
        p.add_argument("--strategy", choices=["feature-extraction", "fine-tuning"])
        p.add_argument("--out")
        if name == "generate":
            p.add_argument("--n", type=int)
            p.add_argument("--lexicon")
            p.add_argument("--categories")
            p.add_argument("--vocab-out", help="also write the closed vocabulary of the lexicon")
        if name == "tokenize":
            p.add_argument("--text")
            p.add_argument("--input")
        if name == "transform":
            p.add_argument("--categories")
        if name in ("train", "grid"):
            p.add_argument("--checkpoint")
            p.add_argument("--categories")
            p.add_argument("--approach", choices=["pair", "single"])
            p.add_argument("--epochs", type=int)
            p.add_argument("--learning-rate", dest="learning_rate", type=float)
            p.add_argument("--batch-size", dest="batch_size", type=int)
        if name == "pretrain":
            p.add_argument("--epochs", type=int)
            p.add_argument("--learning-rate", dest="learning_rate", type=float)
            p.add_argument("--batch-size", dest="batch_size", type=int)
        if name == "eval":
            p.add_argument("--predictions")
        if name == "report":
            p.add_argument("runs", nargs="*", help="run directories written by 'train'")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"absapair {args.command}: config error: {problem}", file=sys.stderr)
        return 2
    except (DataError, VocabError, ValueError, OSError, FloatingPointError) as exc:
        print(f"absapair {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
