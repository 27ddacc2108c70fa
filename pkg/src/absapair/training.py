"""Classification heads, feature extraction vs fine-tuning, and grid search."""

from __future__ import annotations

import enum
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ._rng import substream
from .encoder import (
    PRETRAIN_ONLY_PREFIXES,
    EncoderConfig,
    copy_params,
    encoder_backward,
    encoder_forward,
    forward_with_cache,
    log_softmax,
    softmax,
)
from .evaluation import EvalReport, f1_scores
from .input_repr import DEFAULT_MAX_SEQ_LEN, InputBatch, encode_pair, encode_single
from .optim import Adam
from .tokenizer import Vocab, tokenize
from .transform import (
    CategoryConfig,
    PairInstance,
    Polarity,
    Review,
    TransformMethod,
    aggregate_dataset,
    group_by_category,
    transform_dataset,
)

log = logging.getLogger(__name__)


class HeadKind(str, enum.Enum):
    MULTILABEL_ASPECT = "multilabel_aspect"
    PER_CATEGORY_SENTIMENT = "per_category_sentiment"
    PAIR_CLASSIFIER = "pair_classifier"

    @property
    def is_multilabel(self):
        return self is HeadKind.MULTILABEL_ASPECT


class AdaptationStrategy(str, enum.Enum):
    FEATURE_EXTRACTION = "feature_extraction"
    FINE_TUNING = "fine_tuning"

    @classmethod
    def parse(cls, value) -> "AdaptationStrategy":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower().replace("-", "_"))


@dataclass
class Hyperparams:
    learning_rate: float = 2e-5
    batch_size: int = 32
    epochs: int = 25
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class Head:
    kind: HeadKind
    w: np.ndarray
    b: np.ndarray

    @property
    def num_outputs(self):
        return self.w.shape[1]

    def params(self):
        return {"head.w": self.w, "head.b": self.b}

    def copy(self):
        return Head(self.kind, self.w.copy(), self.b.copy())


def init_head(kind: HeadKind, num_outputs: int, hidden_size: int, seed=0, dtype=np.float32, std=0.02) -> Head:
    kind = HeadKind(kind)
    if kind is HeadKind.PER_CATEGORY_SENTIMENT and num_outputs != 2:
        raise ValueError("sentiment head has exactly two outputs (positive, negative)")
    if kind is HeadKind.PAIR_CLASSIFIER and num_outputs not in (2, 3):
        raise ValueError("pair head has 2 (B-methods) or 3 (M-methods) outputs")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    w = np.clip(rng.standard_normal((hidden_size, num_outputs)), -2, 2) * std
    return Head(kind, w.astype(dtype), np.zeros(num_outputs, dtype=dtype))


def head_logits(cls_vector, head: Head):
    cls_vector = np.asarray(cls_vector)
    if cls_vector.shape[-1] != head.w.shape[0]:
        raise ValueError(f"cls vector has size {cls_vector.shape[-1]}, head expects {head.w.shape[0]}")
    return cls_vector @ head.w + head.b


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def head_forward(cls_vector, head: Head):
    """Sigmoid scores for the multilabel head, softmax for the others."""
    z = head_logits(cls_vector, head)
    return _sigmoid(z) if head.kind.is_multilabel else softmax(z)


def _check_gold(gold, scores, kind):
    gold = np.asarray(gold)
    if kind.is_multilabel:
        if gold.shape != scores.shape or np.any((gold < 0) | (gold > 1)):
            raise ValueError("multilabel gold must be a 0/1 array shaped like the scores")
    else:
        if np.any((gold < 0) | (gold >= scores.shape[-1])):
            raise ValueError(f"gold class out of range [0, {scores.shape[-1]})")
    return gold


def compute_loss(scores, gold, kind: HeadKind, eps=1e-12) -> float:
    """Cross-entropy of probability scores: mean BCE over K outputs or categorical CE."""
    kind = HeadKind(kind)
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    gold = _check_gold(np.atleast_1d(gold) if not kind.is_multilabel else np.atleast_2d(gold), scores, kind)
    p = np.clip(scores, eps, 1.0 - eps) if kind.is_multilabel else np.clip(scores, eps, 1.0)
    if kind.is_multilabel:
        return float(-(gold * np.log(p) + (1 - gold) * np.log(1 - p)).mean())
    return float(-np.log(p[np.arange(len(gold)), gold.astype(int)]).mean())


def loss_from_logits(logits, gold, kind: HeadKind):
    """Loss and d(loss)/d(logits), computed stably from logits."""
    n = logits.shape[0]
    if kind.is_multilabel:
        y = gold.astype(logits.dtype)
        # log(1 + e^z) - y z, averaged over batch and outputs
        loss = np.mean(np.logaddexp(0.0, logits) - y * logits)
        d = (_sigmoid(logits) - y) / logits.size
        return float(loss), d
    lp = log_softmax(logits)
    idx = gold.astype(np.int64)
    loss = -lp[np.arange(n), idx].mean()
    d = np.exp(lp)
    d[np.arange(n), idx] -= 1.0
    return float(loss), d / n


# ---------------------------------------------------------------------------
# models and datasets


@dataclass
class Model:
    config: EncoderConfig
    encoder: dict
    head: Head

    def copy(self):
        return Model(self.config, copy_params(self.encoder), self.head.copy())


@dataclass
class EncodedDataset:
    batch: InputBatch
    labels: np.ndarray

    def __len__(self):
        return len(self.batch)

    def take(self, idx):
        return EncodedDataset(self.batch.take(idx), self.labels[idx])


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)

    def rows(self):
        n = len(self.train_loss)
        pad = lambda xs: list(xs) + [float("nan")] * (n - len(xs))  # noqa: E731
        return list(zip(range(n), self.train_loss, pad(self.val_loss), pad(self.val_f1)))


def params_digest(params: Mapping[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


class TextEncoder:
    """Tokenize-and-encode with a per-text cache (review texts repeat across pairs)."""

    def __init__(self, vocab: Vocab, max_seq_len: int = DEFAULT_MAX_SEQ_LEN):
        self.vocab = vocab
        self.max_seq_len = max_seq_len
        self._cache: dict[str, list] = {}

    def tokens(self, text):
        toks = self._cache.get(text)
        if toks is None:
            toks = self._cache[text] = tokenize(text, self.vocab)
        return toks

    def single(self, texts: Sequence[str]) -> InputBatch:
        return InputBatch.stack([encode_single(self.tokens(t), self.vocab, self.max_seq_len) for t in texts])

    def pairs(self, pairs: Sequence[tuple[str, str]]) -> InputBatch:
        return InputBatch.stack([encode_pair(self.tokens(a), self.tokens(b), self.vocab, self.max_seq_len) for a, b in pairs])


def encode_pair_instances(instances: Sequence[PairInstance], encoder: TextEncoder) -> EncodedDataset:
    batch = encoder.pairs([(i.text_a, i.text_b) for i in instances])
    return EncodedDataset(batch, np.array([i.label_index for i in instances], dtype=np.int64))


def _batches(n, batch_size):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def extract_features(model: Model, batch: InputBatch, batch_size=64) -> np.ndarray:
    """[CLS] vectors (after the pooler) for every row, in input order."""
    out = np.zeros((len(batch), model.config.hidden_size), dtype=model.encoder["emb.token"].dtype)
    for sl in _batches(len(batch), batch_size):
        _, cls = encoder_forward(batch.take(sl).trimmed(), model.encoder, model.config)
        out[sl] = cls
    return out


def predict(model: Model, data: EncodedDataset | InputBatch, batch_size=64) -> np.ndarray:
    """Head scores, one row per instance, input order preserved."""
    batch = data.batch if isinstance(data, EncodedDataset) else data
    if len(batch) == 0:
        return np.zeros((0, model.head.num_outputs))
    return head_forward(extract_features(model, batch, batch_size), model.head)


def _eval_loss(model, data: EncodedDataset, features=None):
    if len(data) == 0:
        return float("nan")
    feats = features if features is not None else extract_features(model, data.batch)
    loss, _ = loss_from_logits(head_logits(feats, model.head), data.labels, model.head.kind)
    return loss


def train(
    model: Model,
    dataset: EncodedDataset,
    strategy: AdaptationStrategy,
    hp: Hyperparams,
    validation: EncodedDataset | None = None,
    evaluate: Callable[[Model], float] | None = None,
    progress: Callable[[str], None] | None = None,
) -> tuple[Model, TrainHistory]:
    """Minibatch Adam for `hp.epochs` epochs; returns a new model and its history.

    Feature extraction computes the frozen encoder's [CLS] features once and
    trains only the head on them. Fine-tuning backpropagates into every
    encoder-body parameter as well (the pretraining-only MLM/NSP arrays are
    left alone).
    """
    strategy = AdaptationStrategy.parse(strategy)
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    model = model.copy()
    history = TrainHistory()
    if hp.epochs == 0:
        return model, history
    kind = model.head.kind
    shuffle_rng = substream(hp.seed, "shuffle")
    drop_rng = substream(hp.seed, "dropout") if model.config.dropout_rate > 0 else None
    opt = Adam(hp.learning_rate)
    head_params = {"head.w": model.head.w, "head.b": model.head.b}
    trainable = dict(head_params)
    if strategy is AdaptationStrategy.FINE_TUNING:
        trainable.update({k: v for k, v in model.encoder.items() if not k.startswith(PRETRAIN_ONLY_PREFIXES)})
        features = val_features = None
    else:
        features = extract_features(model, dataset.batch)
        val_features = extract_features(model, validation.batch) if validation is not None else None

    n = len(dataset)
    step = 0
    for epoch in range(hp.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for sl in _batches(n, hp.batch_size):
            idx = order[sl]
            labels = dataset.labels[idx]
            if features is not None:
                feats = features[idx]
                logits = head_logits(feats, model.head)
                loss, dlogits = loss_from_logits(logits, labels, kind)
                grads = {"head.w": feats.T @ dlogits, "head.b": dlogits.sum(0)}
            else:
                batch = dataset.batch.take(idx).trimmed()
                _, cls, cache = forward_with_cache(batch, model.encoder, model.config, drop_rng)
                logits = head_logits(cls, model.head)
                loss, dlogits = loss_from_logits(logits, labels, kind)
                grads = encoder_backward(cache, model.encoder, model.config, d_cls=dlogits @ model.head.w.T)
                grads["head.w"] = cls.T @ dlogits
                grads["head.b"] = dlogits.sum(0)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}, step {step}")
            opt.step(trainable, {k: v for k, v in grads.items() if k in trainable})
            total += loss * len(idx)
            seen += len(idx)
            step += 1
        history.train_loss.append(total / seen)
        if validation is not None:
            history.val_loss.append(_eval_loss(model, validation, val_features))
        if evaluate is not None:
            history.val_f1.append(float(evaluate(model)))
        history.wall_clock.append(time.perf_counter() - t0)
        if progress:
            msg = f"epoch {epoch}: train loss {history.train_loss[-1]:.4f}"
            if history.val_f1:
                msg += f", val F1 {history.val_f1[-1]:.4f}"
            progress(msg)
    return model, history


def new_model(config: EncoderConfig, encoder_params: dict, kind: HeadKind, num_outputs: int, seed) -> Model:
    dtype = encoder_params["emb.token"].dtype
    return Model(config, copy_params(encoder_params), init_head(kind, num_outputs, config.hidden_size, seed, dtype))


# ---------------------------------------------------------------------------
# single-sentence approach: one aspect model + one sentiment model per category


SENTIMENT_CLASSES = (Polarity.POSITIVE, Polarity.NEGATIVE)


@dataclass
class SingleSentenceSuite:
    categories: tuple[str, ...]
    aspect: Model
    sentiment: dict[str, Model]
    threshold: float = 0.5
    skipped: list[str] = field(default_factory=list)
    histories: dict[str, TrainHistory] = field(default_factory=dict)

    @property
    def num_models(self):
        return 1 + len(self.sentiment)


def aspect_targets(reviews: Sequence[Review], categories: Sequence[str]) -> np.ndarray:
    y = np.zeros((len(reviews), len(categories)), dtype=np.float32)
    col = {c: i for i, c in enumerate(categories)}
    for r, review in enumerate(reviews):
        for c, _ in review.gold:
            y[r, col[c]] = 1.0
    return y


def train_single_sentence_suite(
    reviews: Sequence[Review],
    categories: CategoryConfig,
    strategy: AdaptationStrategy,
    hp: Hyperparams,
    encoder_config: EncoderConfig,
    encoder_params: dict,
    text_encoder: TextEncoder,
    threshold: float = 0.5,
    progress: Callable[[str], None] | None = None,
) -> SingleSentenceSuite:
    cats = categories.categories
    batch = text_encoder.single([r.text for r in reviews])
    data = EncodedDataset(batch, aspect_targets(reviews, cats))
    model = new_model(encoder_config, encoder_params, HeadKind.MULTILABEL_ASPECT, len(cats), substream(hp.seed, "head/aspect"))
    aspect, hist = train(model, data, strategy, hp, progress=progress)
    suite = SingleSentenceSuite(cats, aspect, {}, threshold, histories={"aspect": hist})
    groups = group_by_category(reviews, categories)
    for c in cats:
        group = groups[c]
        if not group:
            log.warning("category %s has no labelled reviews; sentiment model skipped", c)
            suite.skipped.append(c)
            continue
        texts = [t for t, _ in group]
        labels = np.array([SENTIMENT_CLASSES.index(p) for _, p in group], dtype=np.int64)
        data = EncodedDataset(text_encoder.single(texts), labels)
        model = new_model(encoder_config, encoder_params, HeadKind.PER_CATEGORY_SENTIMENT, 2, substream(hp.seed, f"head/{c}"))
        suite.sentiment[c], suite.histories[c] = train(model, data, strategy, hp, progress=progress)
    return suite


def predict_suite(suite: SingleSentenceSuite, reviews: Sequence[Review], text_encoder: TextEncoder) -> dict[str, set]:
    batch = text_encoder.single([r.text for r in reviews])
    aspect_scores = predict(suite.aspect, batch)
    sentiment_scores = {c: predict(m, batch) for c, m in suite.sentiment.items()}
    out = {}
    for i, review in enumerate(reviews):
        pairs = set()
        for j, c in enumerate(suite.categories):
            if aspect_scores[i, j] > suite.threshold and c in sentiment_scores:
                pos, neg = sentiment_scores[c][i]
                # ties go to negative
                pairs.add((c, Polarity.POSITIVE if pos > neg else Polarity.NEGATIVE))
        out[review.id] = pairs
    return out


# ---------------------------------------------------------------------------
# experiments


APPROACHES = ("single", "pair")


@dataclass
class RunResult:
    approach: str
    strategy: AdaptationStrategy
    hp: Hyperparams
    report: EvalReport
    predictions: dict[str, set]
    models: dict[str, Model]
    histories: dict[str, TrainHistory]
    diverged: bool = False

    @property
    def f1(self):
        return self.report.micro_f1


@dataclass
class Experiment:
    """Everything fixed across the approach x strategy x hyperparameter runs."""

    vocab: Vocab
    categories: CategoryConfig
    encoder_config: EncoderConfig
    encoder_params: dict
    method: TransformMethod = TransformMethod.NLI_B
    max_seq_len: int = 64
    threshold: float = 0.5

    def __post_init__(self):
        self.text_encoder = TextEncoder(self.vocab, self.max_seq_len)
        self._pair_cache: dict[tuple, EncodedDataset] = {}

    def pair_data(self, reviews: Sequence[Review]) -> tuple[list[PairInstance], EncodedDataset]:
        instances = transform_dataset(reviews, self.categories, self.method)
        key = tuple(r.id for r in reviews)
        if key not in self._pair_cache:
            self._pair_cache[key] = encode_pair_instances(instances, self.text_encoder)
        return instances, self._pair_cache[key]

    def predict_pairs(self, model: Model, reviews: Sequence[Review]) -> dict[str, set]:
        instances, data = self.pair_data(reviews)
        probs = predict(model, data)
        preds = aggregate_dataset(instances, probs, self.method)
        for r in reviews:
            preds.setdefault(r.id, set())
        return preds

    def run(
        self,
        approach: str,
        strategy: AdaptationStrategy,
        hp: Hyperparams,
        train_reviews: Sequence[Review],
        val_reviews: Sequence[Review],
        track_validation: bool = False,
        progress: Callable[[str], None] | None = None,
    ) -> RunResult:
        strategy = AdaptationStrategy.parse(strategy)
        for r in (*train_reviews, *val_reviews):
            r.validate(self.categories)
        gold = {r.id: set(r.gold) for r in val_reviews}
        if approach == "pair":
            _, train_data = self.pair_data(train_reviews)
            model = new_model(self.encoder_config, self.encoder_params, HeadKind.PAIR_CLASSIFIER,
                              self.method.num_classes, substream(hp.seed, "head/pair"))
            validation = evaluate = None
            if track_validation:
                _, validation = self.pair_data(val_reviews)
                evaluate = lambda m: f1_scores(self.predict_pairs(m, val_reviews), gold).micro_f1  # noqa: E731
            model, hist = train(model, train_data, strategy, hp, validation, evaluate, progress)
            preds = self.predict_pairs(model, val_reviews)
            models, histories = {"pair": model}, {"pair": hist}
        elif approach == "single":
            suite = train_single_sentence_suite(
                train_reviews, self.categories, strategy, hp, self.encoder_config,
                self.encoder_params, self.text_encoder, self.threshold, progress,
            )
            preds = predict_suite(suite, val_reviews, self.text_encoder)
            models = {"aspect": suite.aspect, **{f"sentiment_{c}": m for c, m in suite.sentiment.items()}}
            histories = suite.histories
        else:
            raise ValueError(f"unknown approach {approach!r}")
        return RunResult(approach, strategy, hp, f1_scores(preds, gold), preds, models, histories)


@dataclass
class GridRow:
    learning_rate: float
    batch_size: int
    f1: float
    diverged: bool = False


@dataclass
class GridResult:
    rows: list[GridRow]
    best: GridRow

    def ranked(self) -> list[GridRow]:
        return sorted(self.rows, key=_grid_key)

    def to_csv(self) -> str:
        lines = ["learning_rate,batch_size,f1"]
        for r in self.rows:
            lines.append(f"{r.learning_rate:g},{r.batch_size},{r.f1:.6f}")
        return "\n".join(lines) + "\n"


def _grid_key(row: GridRow):
    # best first; ties go to the smaller learning rate, then the larger batch
    return (-row.f1, row.learning_rate, -row.batch_size)


def grid_search(
    experiment: Experiment,
    grid: Mapping[str, Sequence],
    train_reviews: Sequence[Review],
    val_reviews: Sequence[Review],
    base: Hyperparams,
    approach: str = "pair",
    strategy: AdaptationStrategy = AdaptationStrategy.FINE_TUNING,
    progress: Callable[[str], None] | None = None,
) -> GridResult:
    """Train one model per (learning_rate, batch_size) and score it on validation.

    A run whose loss turns non-finite is recorded with F1 0.0 and flagged.
    """
    lrs = list(grid.get("learning_rate", []))
    bss = list(grid.get("batch_size", []))
    if not lrs or not bss:
        raise ValueError("grid needs at least one learning rate and one batch size")
    rows = []
    for lr in lrs:
        for bs in bss:
            hp = Hyperparams(float(lr), int(bs), base.epochs, base.seed)
            try:
                f1 = experiment.run(approach, strategy, hp, train_reviews, val_reviews).f1
                rows.append(GridRow(hp.learning_rate, hp.batch_size, f1))
            except FloatingPointError as exc:
                log.warning("grid combination lr=%g bs=%d diverged: %s", lr, bs, exc)
                rows.append(GridRow(hp.learning_rate, hp.batch_size, 0.0, diverged=True))
            if progress:
                r = rows[-1]
                progress(f"grid lr={r.learning_rate:g} bs={r.batch_size}: F1 {r.f1:.4f}")
    return GridResult(rows, min(rows, key=_grid_key))

