"""Recasting aspect-based sentiment data as sentence-pair classification.

A review with gold (category, polarity) pairs is expanded into one instance
per (category, polarity) auxiliary sentence (the binary B-methods) or one
instance per category (the multiclass M-methods). The inverse direction,
from per-instance scores back to a set of (category, polarity) pairs, is
`aggregate_predictions`.
"""

from __future__ import annotations

import enum
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from ._rng import as_generator, round_half_up


class Polarity(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class AuxLabel(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NONE = "none"


# Instance order within one (review, category) block.
AUX_ORDER = (AuxLabel.POSITIVE, AuxLabel.NEGATIVE, AuxLabel.NONE)
# Earlier wins a tie.
TIE_PRIORITY = (AuxLabel.NONE, AuxLabel.NEGATIVE, AuxLabel.POSITIVE)

POLARITY_WORDS = {
    AuxLabel.POSITIVE: "positif",
    AuxLabel.NEGATIVE: "negatif",
    AuxLabel.NONE: "none",
}


class TransformMethod(str, enum.Enum):
    NLI_B = "nli-b"
    NLI_M = "nli-m"
    QA_B = "qa-b"
    QA_M = "qa-m"

    @property
    def is_binary(self) -> bool:
        return self in (TransformMethod.NLI_B, TransformMethod.QA_B)

    @property
    def num_classes(self) -> int:
        return 2 if self.is_binary else 3

    @classmethod
    def parse(cls, value) -> "TransformMethod":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-")
        return cls(key)


DEFAULT_CATEGORIES = (
    "ac",
    "air_panas",
    "bau",
    "general",
    "kebersihan",
    "linen",
    "service",
    "sunrise_meal",
    "tv",
    "wifi",
)

# Question templates are placeholders of our own; only the NLI-B form is fixed.
QA_M_TEMPLATE = "bagaimana pendapat tentang {category} ?"
QA_B_TEMPLATE = "apakah pendapat tentang {category} {polarity} ?"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class CategoryConfig:
    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    display_names: Mapping[str, str] = field(default_factory=dict)
    qa_m_template: str = QA_M_TEMPLATE
    qa_b_template: str = QA_B_TEMPLATE

    def __post_init__(self):
        cats = tuple(self.categories)
        object.__setattr__(self, "categories", cats)
        if not cats:
            raise DataError("category list is empty")
        if len(set(cats)) != len(cats):
            dupes = sorted({c for c in cats if cats.count(c) > 1})
            raise DataError(f"duplicate categories: {dupes}")

    def __contains__(self, category: str) -> bool:
        return category in self.categories

    def __len__(self) -> int:
        return len(self.categories)

    @classmethod
    def from_file(cls, path: str) -> "CategoryConfig":
        with open(path, encoding="utf-8") as fh:
            cats = [line.strip() for line in fh if line.strip()]
        return cls(tuple(cats))

    def index(self, category: str) -> int:
        return self.categories.index(category)


@dataclass(frozen=True)
class Review:
    id: str
    text: str
    gold: frozenset[tuple[str, Polarity]] = frozenset()

    def __post_init__(self):
        gold = frozenset((c, Polarity(p)) for c, p in self.gold)
        object.__setattr__(self, "gold", gold)
        cats = [c for c, _ in gold]
        if len(cats) != len(set(cats)):
            raise DataError(f"review {self.id}: more than one polarity for a category")

    def polarity_of(self, category: str) -> Polarity | None:
        for c, p in self.gold:
            if c == category:
                return p
        return None

    def validate(self, config: CategoryConfig) -> None:
        for c, _ in self.gold:
            if c not in config:
                raise DataError(f"review {self.id}: unknown category {c!r}")

    def to_json(self) -> dict:
        labels = sorted(self.gold, key=lambda cp: (cp[0], cp[1].value))
        return {
            "id": self.id,
            "text": self.text,
            "labels": [{"category": c, "polarity": p.value} for c, p in labels],
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Review":
        labels = obj.get("labels", [])
        return cls(
            str(obj["id"]),
            obj["text"],
            frozenset((lab["category"], Polarity(lab["polarity"])) for lab in labels),
        )


@dataclass(frozen=True)
class PairInstance:
    text_a: str
    text_b: str
    label: int | AuxLabel
    review_id: str
    category: str
    aux_polarity: AuxLabel | None = None

    @property
    def label_index(self) -> int:
        """Integer class id: 0/1 for B-methods, position in AUX_ORDER for M-methods."""
        if isinstance(self.label, AuxLabel):
            return AUX_ORDER.index(self.label)
        return int(self.label)

    def to_json(self) -> dict:
        label = self.label.value if isinstance(self.label, AuxLabel) else int(self.label)
        return {
            "text_a": self.text_a,
            "text_b": self.text_b,
            "label": label,
            "review_id": self.review_id,
            "category": self.category,
            "aux_polarity": None if self.aux_polarity is None else self.aux_polarity.value,
        }


def build_aux_sentence(
    category: str,
    polarity: AuxLabel | None,
    method: TransformMethod,
    config: CategoryConfig | None = None,
) -> str:
    config = config or CategoryConfig()
    if category not in config:
        raise DataError(f"unknown category {category!r}")
    method = TransformMethod.parse(method)
    if method.is_binary:
        if polarity is None:
            raise DataError(f"{method.value} needs a polarity for the auxiliary sentence")
        word = POLARITY_WORDS[AuxLabel(polarity)]
        if method is TransformMethod.NLI_B:
            return f"{category}-{word}"
        return config.qa_b_template.format(category=category, polarity=word)
    if polarity is not None:
        raise DataError(f"{method.value} takes no polarity")
    if method is TransformMethod.NLI_M:
        return category
    return config.qa_m_template.format(category=category)


def transform_dataset(
    reviews: Iterable[Review], config: CategoryConfig, method: TransformMethod
) -> list[PairInstance]:
    method = TransformMethod.parse(method)
    # Auxiliary sentences depend only on (category, polarity); build once.
    if method.is_binary:
        aux = {(c, a): build_aux_sentence(c, a, method, config) for c in config.categories for a in AUX_ORDER}
    else:
        aux = {c: build_aux_sentence(c, None, method, config) for c in config.categories}
    out = []
    for review in reviews:
        gold = dict(review.gold)
        for category in config.categories:
            actual = gold.get(category)
            actual = AuxLabel.NONE if actual is None else AuxLabel(actual.value)
            if method.is_binary:
                for a in AUX_ORDER:
                    out.append(
                        PairInstance(aux[category, a], review.text, int(a is actual), review.id, category, a)
                    )
            else:
                out.append(PairInstance(aux[category], review.text, actual, review.id, category))
    return out


def expected_instance_count(n_reviews: int, n_categories: int, method: TransformMethod) -> int:
    method = TransformMethod.parse(method)
    return n_reviews * n_categories * (3 if method.is_binary else 1)


def group_by_category(
    reviews: Iterable[Review], config: CategoryConfig
) -> dict[str, list[tuple[str, Polarity]]]:
    groups: dict[str, list[tuple[str, Polarity]]] = {c: [] for c in config.categories}
    for review in reviews:
        gold = dict(review.gold)
        for category in config.categories:
            if category in gold:
                groups[category].append((review.text, gold[category]))
    return groups


def _pick(candidates: Mapping[AuxLabel, float]) -> AuxLabel:
    best = max(candidates.values())
    for label in TIE_PRIORITY:
        if candidates[label] == best:
            return label
    raise AssertionError("unreachable")


def aggregate_predictions(
    scores: Mapping, method: TransformMethod, categories: Sequence[str] | None = None
) -> set[tuple[str, Polarity]]:
    """Turn one review's instance scores into a set of (category, polarity).

    B-methods: `scores[(category, aux_label)]` is the probability of label 1.
    M-methods: `scores[category]` maps each AuxLabel to a probability.
    A category whose winner is `none` is left out. Ties resolve as
    none > negative > positive.
    """
    method = TransformMethod.parse(method)
    result = set()
    if method.is_binary:
        if categories is None:
            categories = list(dict.fromkeys(c for c, _ in scores))
        for category in categories:
            cand = {}
            for a in AUX_ORDER:
                key = (category, a)
                if key not in scores:
                    raise DataError(f"missing score for ({category}, {a.value})")
                cand[a] = float(scores[key])
            winner = _pick(cand)
            if winner is not AuxLabel.NONE:
                result.add((category, Polarity(winner.value)))
    else:
        if categories is None:
            categories = list(scores)
        for category in categories:
            if category not in scores:
                raise DataError(f"missing score distribution for {category}")
            dist = scores[category]
            cand = {}
            for a in AUX_ORDER:
                if a not in dist:
                    raise DataError(f"missing score for ({category}, {a.value})")
                cand[a] = float(dist[a])
            total = sum(cand.values())
            if abs(total - 1.0) > 1e-6:
                raise DataError(f"distribution for {category} sums to {total}, not 1")
            winner = _pick(cand)
            if winner is not AuxLabel.NONE:
                result.add((category, Polarity(winner.value)))
    return result


def aggregate_dataset(
    instances: Sequence[PairInstance], probs: np.ndarray, method: TransformMethod
) -> dict[str, set[tuple[str, Polarity]]]:
    """Aggregate model outputs for a whole transformed dataset, review by review.

    `probs` has one row per instance: class probabilities in label-index order.
    """
    method = TransformMethod.parse(method)
    per_review: dict[str, dict] = defaultdict(dict)
    order: dict[str, list[str]] = defaultdict(list)
    for inst, row in zip(instances, probs):
        table = per_review[inst.review_id]
        if inst.category not in order[inst.review_id]:
            order[inst.review_id].append(inst.category)
        if method.is_binary:
            table[(inst.category, inst.aux_polarity)] = float(row[1])
        else:
            table[inst.category] = {a: float(row[i]) for i, a in enumerate(AUX_ORDER)}
    return {
        rid: aggregate_predictions(table, method, order[rid]) for rid, table in per_review.items()
    }


def ideal_scores(instances: Iterable[PairInstance], method: TransformMethod) -> dict[str, dict]:
    """Scores a perfect model would emit, keyed by review id."""
    method = TransformMethod.parse(method)
    out: dict[str, dict] = defaultdict(dict)
    for inst in instances:
        if method.is_binary:
            out[inst.review_id][(inst.category, inst.aux_polarity)] = float(inst.label)
        else:
            out[inst.review_id][inst.category] = {a: float(a is inst.label) for a in AUX_ORDER}
    return out


def split_dataset(
    items: Sequence,
    train_fraction: float,
    seed: int,
    group_by: Callable[[Any], Any] | None = None,
) -> tuple[list, list]:
    """Seeded shuffled split with |train| = round(train_fraction * n).

    Items sharing a group key (PairInstances share their review id by
    default) always land on the same side; the size rule then counts groups.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    items = list(items)
    if group_by is None and items and isinstance(items[0], PairInstance):
        group_by = lambda inst: inst.review_id  # noqa: E731
    if group_by is None:
        n = len(items)
        if n < 2:
            raise ValueError(f"need at least 2 items to split, got {n}")
        perm = as_generator(seed).permutation(n)
        n_train = round_half_up(train_fraction * n)
        train_idx = np.sort(perm[:n_train])
        val_idx = np.sort(perm[n_train:])
        return [items[i] for i in train_idx], [items[i] for i in val_idx]

    groups: dict[Any, list[int]] = {}
    for i, item in enumerate(items):
        groups.setdefault(group_by(item), []).append(i)
    keys = list(groups)
    if len(keys) < 2:
        raise ValueError(f"need at least 2 groups to split, got {len(keys)}")
    perm = as_generator(seed).permutation(len(keys))
    n_train = round_half_up(train_fraction * len(keys))
    train_keys = {keys[i] for i in perm[:n_train]}
    train = [items[i] for k in keys if k in train_keys for i in groups[k]]
    val = [items[i] for k in keys if k not in train_keys for i in groups[k]]
    return train, val


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class LexiconEntry:
    keywords: tuple[str, ...]
    positive: tuple[str, ...]
    negative: tuple[str, ...]


DEFAULT_LEXICON = {
    "ac": LexiconEntry(("ac", "pendingin ruangan"), ("dingin", "sejuk"), ("panas", "berisik", "rusak")),
    "air_panas": LexiconEntry(("air panas", "shower"), ("lancar", "hangat"), ("mati", "dingin sekali")),
    "bau": LexiconEntry(("aroma kamar", "udara kamar"), ("wangi", "segar"), ("apek", "pengap")),
    "general": LexiconEntry(("hotel", "lokasi"), ("strategis", "nyaman"), ("jauh", "mengecewakan")),
    "kebersihan": LexiconEntry(("kamar", "lantai"), ("bersih", "rapi"), ("kotor", "berdebu")),
    "linen": LexiconEntry(("handuk", "sprei", "bantal"), ("bersih", "wangi"), ("kotor", "bernoda")),
    "service": LexiconEntry(("pelayanan", "resepsionis", "staf"), ("ramah", "bagus", "cepat"), ("lambat", "jutek")),
    "sunrise_meal": LexiconEntry(("sarapan", "snack"), ("enak", "lengkap"), ("hambar", "sedikit")),
    "tv": LexiconEntry(("tv", "televisi"), ("jernih", "bagus"), ("rusak", "buram")),
    "wifi": LexiconEntry(("wifi", "internet"), ("kencang", "lancar"), ("lambat", "putus")),
}

DEFAULT_FILLERS = (
    "saya menginap dua malam",
    "kami datang bersama keluarga",
    "check in jam tiga sore",
    "pesan lewat aplikasi",
)

CONNECTORS = (" dan ", " , ", " tetapi ", " . ")


@dataclass(frozen=True)
class GeneratorConfig:
    aspect_probability: float = 0.35
    positive_probability: float = 0.5
    filler_probability: float = 0.3


def load_lexicon(obj: Mapping[str, Any]) -> dict[str, LexiconEntry]:
    """Parse {"category": {"keywords": [...], "positive": [...], "negative": [...]}}."""
    lex = {}
    for category, entry in obj.items():
        if isinstance(entry, LexiconEntry):
            parts = entry
        elif isinstance(entry, Mapping):
            parts = LexiconEntry(
                tuple(entry.get("keywords", ())),
                tuple(entry.get("positive", ())),
                tuple(entry.get("negative", ())),
            )
        else:
            parts = LexiconEntry(*(tuple(x) for x in entry))
        for name in ("keywords", "positive", "negative"):
            if not getattr(parts, name):
                raise DataError(f"lexicon entry {category!r} has no {name}")
        lex[category] = parts
    return lex


def lexicon_to_json(lexicon: Mapping[str, LexiconEntry]) -> dict:
    return {
        c: {"keywords": list(e.keywords), "positive": list(e.positive), "negative": list(e.negative)}
        for c, e in lexicon.items()
    }


def lexicon_words(lexicon: Mapping[str, LexiconEntry], fillers: Sequence[str] = DEFAULT_FILLERS) -> list[str]:
    """Every whitespace word the generator can emit, in first-seen order."""
    words = []
    phrases = [p for e in lexicon.values() for p in (*e.keywords, *e.positive, *e.negative)]
    for phrase in [*phrases, *fillers, *(c.strip() for c in CONNECTORS)]:
        words.extend(phrase.split())
    return list(dict.fromkeys(w for w in words if w))


def generate_synthetic_reviews(
    seed: int,
    n: int,
    config: CategoryConfig,
    lexicon: Mapping[str, Any] | None = None,
    gen: GeneratorConfig = GeneratorConfig(),
    fillers: Sequence[str] = DEFAULT_FILLERS,
) -> list[Review]:
    """Seeded hotel-review-like texts whose gold labels follow the cues.

    Each configured category is present independently with
    `gen.aspect_probability`; a present category is positive with
    `gen.positive_probability`. Each present category contributes one clause
    "<keyword> <cue>"; clauses are shuffled and joined by connectors.
    """
    lex = load_lexicon(lexicon if lexicon is not None else DEFAULT_LEXICON)
    missing = [c for c in config.categories if c not in lex]
    if missing:
        raise DataError(f"lexicon has no entry for {missing}")
    if not fillers:
        raise DataError("at least one filler sentence is required")
    rng = as_generator(seed)
    reviews = []
    for i in range(n):
        clauses = []
        gold = set()
        for category in config.categories:
            entry = lex[category]
            # Draw every variate even for absent categories so streams stay aligned.
            present = rng.random() < gen.aspect_probability
            positive = rng.random() < gen.positive_probability
            kw = entry.keywords[rng.integers(len(entry.keywords))]
            cues = entry.positive if positive else entry.negative
            cue = cues[rng.integers(len(cues))]
            if present:
                gold.add((category, Polarity.POSITIVE if positive else Polarity.NEGATIVE))
                clauses.append(f"{kw} {cue}")
        if not clauses or rng.random() < gen.filler_probability:
            clauses.append(fillers[rng.integers(len(fillers))])
        order = rng.permutation(len(clauses))
        text = clauses[order[0]]
        for j in order[1:]:
            text += CONNECTORS[rng.integers(len(CONNECTORS))] + clauses[j]
        reviews.append(Review(f"r{i:06d}", text, frozenset(gold)))
    return reviews


def synthetic_documents(reviews: Iterable[Review]) -> list[list[str]]:
    """Split review texts into clause 'sentences' for NSP/MLM pretraining."""
    docs = []
    for r in reviews:
        parts = [r.text]
        for conn in CONNECTORS:
            parts = [p for piece in parts for p in piece.split(conn)]
        parts = [p.strip() for p in parts if p.strip()]
        docs.append(parts)
    return docs


# ---------------------------------------------------------------------------
# JSON-lines I/O


def read_reviews(path: str) -> list[Review]:
    reviews = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                reviews.append(Review.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed review line ({exc})") from exc
    return reviews


def write_jsonl(path: str, rows: Iterable[Mapping]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=False))
            fh.write("\n")
            count += 1
    return count


def write_reviews(path: str, reviews: Iterable[Review]) -> int:
    return write_jsonl(path, (r.to_json() for r in reviews))


def write_instances(path: str, instances: Iterable[PairInstance]) -> int:
    return write_jsonl(path, (inst.to_json() for inst in instances))
