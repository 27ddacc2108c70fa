"""F1 over (category, polarity) pairs, comparison tables and error listings."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .transform import Polarity, Review

Pair = tuple[str, Polarity]


def f1_from_counts(tp, fp, fn):
    """2PR / (P + R); 1.0 when there is nothing to find and nothing was predicted."""
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


@dataclass
class PairLevelConfusion:
    counts: dict[Pair, list[int]] = field(default_factory=lambda: defaultdict(lambda: [0, 0, 0]))

    def add(self, pair, tp=0, fp=0, fn=0):
        c = self.counts[pair]
        c[0] += tp
        c[1] += fp
        c[2] += fn

    @property
    def tp(self):
        return sum(c[0] for c in self.counts.values())

    @property
    def fp(self):
        return sum(c[1] for c in self.counts.values())

    @property
    def fn(self):
        return sum(c[2] for c in self.counts.values())


@dataclass
class EvalReport:
    micro_f1: float
    macro_f1: float
    precision: float
    recall: float
    per_category_f1: dict[str, float]
    confusion: PairLevelConfusion
    misclassified: list[str]

    def as_dict(self) -> dict:
        rows = []
        for (cat, pol), (tp, fp, fn) in sorted(self.confusion.counts.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            rows.append({"category": cat, "polarity": pol.value, "tp": tp, "fp": fp, "fn": fn,
                         "f1": f1_from_counts(tp, fp, fn)})
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "precision": self.precision,
            "recall": self.recall,
            "tp": self.confusion.tp,
            "fp": self.confusion.fp,
            "fn": self.confusion.fn,
            "per_category_f1": dict(sorted(self.per_category_f1.items())),
            "pairs": rows,
            "misclassified": sorted(self.misclassified),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "polarity", "tp", "fp", "fn", "f1"])
        for row in self.as_dict()["pairs"]:
            w.writerow([row["category"], row["polarity"], row["tp"], row["fp"], row["fn"], f"{row['f1']:.6f}"])
        w.writerow(["<micro>", "", self.confusion.tp, self.confusion.fp, self.confusion.fn, f"{self.micro_f1:.6f}"])
        w.writerow(["<macro>", "", "", "", "", f"{self.macro_f1:.6f}"])
        return buf.getvalue()


def _normalize(pairs) -> set[Pair]:
    return {(c, Polarity(p)) for c, p in pairs}


def f1_scores(predictions: Mapping[str, Iterable], gold: Mapping[str, Iterable]) -> EvalReport:
    """Micro and macro F1 over (category, polarity) pairs, reviews keyed by id.

    Macro averages the per-pair F1 over pairs that occur in gold at least once.
    """
    missing_pred = sorted(set(gold) - set(predictions))
    missing_gold = sorted(set(predictions) - set(gold))
    if missing_pred or missing_gold:
        raise ValueError(
            f"review ids differ: missing predictions for {missing_pred[:10]}, "
            f"missing gold for {missing_gold[:10]}"
        )
    conf = PairLevelConfusion()
    wrong = []
    for rid in gold:
        g = _normalize(gold[rid])
        p = _normalize(predictions[rid])
        for pair in p & g:
            conf.add(pair, tp=1)
        for pair in p - g:
            conf.add(pair, fp=1)
        for pair in g - p:
            conf.add(pair, fn=1)
        if p != g:
            wrong.append(rid)
    tp, fp, fn = conf.tp, conf.fp, conf.fn
    supported = [f1_from_counts(*c) for c in conf.counts.values() if c[0] + c[2] > 0]
    # fsum keeps the mean independent of review order
    macro = math.fsum(supported) / len(supported) if supported else 1.0
    by_cat = defaultdict(lambda: [0, 0, 0])
    for (cat, _), c in conf.counts.items():
        for i in range(3):
            by_cat[cat][i] += c[i]
    return EvalReport(
        micro_f1=f1_from_counts(tp, fp, fn),
        macro_f1=macro,
        precision=tp / (tp + fp) if tp + fp else 1.0,
        recall=tp / (tp + fn) if tp + fn else 1.0,
        per_category_f1={cat: f1_from_counts(*c) for cat, c in by_cat.items()},
        confusion=conf,
        misclassified=wrong,
    )


# ---------------------------------------------------------------------------
# approach x strategy comparison

APPROACHES = ("single", "pair")
STRATEGIES = ("feature_extraction", "fine_tuning")
APPROACH_NAMES = {"single": "Single Sentence Classification", "pair": "Sentence-Pair Classification"}
STRATEGY_NAMES = {"feature_extraction": "Feature Extraction", "fine_tuning": "Fine-tuning"}


@dataclass
class ComparisonReport:
    rows: list[tuple[str, str, float]]
    deltas: dict[str, float]
    orderings: dict[str, bool]

    def to_text(self) -> str:
        lines = [f"{'Task-solving approach':<32} {'Strategy for model adaptation':<30} F1-score"]
        last = None
        for approach, strategy, f1 in self.rows:
            name = APPROACH_NAMES.get(approach, approach) if approach != last else ""
            last = approach
            lines.append(f"{name:<32} {STRATEGY_NAMES.get(strategy, strategy):<30} {f1:.4f}")
        if self.deltas:
            lines.append("")
            for key, value in self.deltas.items():
                lines.append(f"delta {key}: {value:+.4f}")
        if self.orderings:
            lines.append("")
            for key, ok in self.orderings.items():
                lines.append(f"ordering {key}: {'satisfied' if ok else 'VIOLATED'}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {
            "rows": [{"approach": a, "strategy": s, "f1": f} for a, s, f in self.rows],
            "deltas": self.deltas,
            "orderings": self.orderings,
        }


def compare_report(results: Mapping[tuple[str, str], float]) -> ComparisonReport:
    """Lay results out as approach x strategy and check the expected orderings.

    Expected: fine-tuning beats feature extraction within an approach, and
    the sentence-pair approach beats single-sentence under a fixed strategy.
    """
    if not results:
        raise ValueError("no results to compare")
    order = {a: i for i, a in enumerate(APPROACHES)}
    sorder = {s: i for i, s in enumerate(STRATEGIES)}
    rows = sorted(
        ((a, s, float(f)) for (a, s), f in results.items()),
        key=lambda r: (order.get(r[0], 99), r[0], sorder.get(r[1], 99), r[1]),
    )
    deltas = {}
    orderings = {}
    for a in APPROACHES:
        fe, ft = results.get((a, "feature_extraction")), results.get((a, "fine_tuning"))
        if fe is not None and ft is not None:
            deltas[f"{a}: fine_tuning - feature_extraction"] = ft - fe
            orderings[f"{a}: fine_tuning > feature_extraction"] = ft > fe
    for s in STRATEGIES:
        single, pair = results.get(("single", s)), results.get(("pair", s))
        if single is not None and pair is not None:
            deltas[f"{s}: pair - single"] = pair - single
            orderings[f"{s}: pair > single"] = pair > single
    return ComparisonReport(rows, deltas, orderings)


# ---------------------------------------------------------------------------
# misclassification listing


def _short(p: Polarity | None) -> str:
    return {None: "none", Polarity.POSITIVE: "pos", Polarity.NEGATIVE: "neg"}[p]


def error_report(predictions: Mapping[str, Iterable], gold: Mapping[str, Iterable], reviews: Iterable[Review]) -> list[dict]:
    """One entry per review whose predicted pair set differs from gold.

    `spurious` are predicted pairs absent from gold, `missing` the reverse;
    `cases` restates each disagreeing category as "<category>-<pos|neg|none>".
    """
    entries = []
    for review in reviews:
        p = _normalize(predictions.get(review.id, ()))
        g = _normalize(gold.get(review.id, ()))
        if p == g:
            continue
        pd, gd = defaultdict(list), defaultdict(list)
        for c, pol in p:
            pd[c].append(pol)
        for c, pol in g:
            gd[c].append(pol)
        cases = []
        for c in sorted({c for c, _ in p ^ g}):
            pp = sorted(pd.get(c, [None]), key=lambda x: _short(x))
            gg = sorted(gd.get(c, [None]), key=lambda x: _short(x))
            cases.append({
                "prediction": "/".join(f"{c}-{_short(x)}" for x in pp),
                "ground_truth": "/".join(f"{c}-{_short(x)}" for x in gg),
            })
        entries.append({
            "id": review.id,
            "text": review.text,
            "predicted": sorted([c, pol.value] for c, pol in p),
            "gold": sorted([c, pol.value] for c, pol in g),
            "spurious": sorted([c, pol.value] for c, pol in p - g),
            "missing": sorted([c, pol.value] for c, pol in g - p),
            "cases": cases,
        })
    return entries


def format_error_report(entries: list[dict]) -> str:
    lines = []
    for e in entries:
        for case in e["cases"]:
            lines.append(f"Review       {e['text']}")
            lines.append(f"Prediction   {case['prediction']}")
            lines.append(f"Ground-truth {case['ground_truth']}")
            lines.append("")
    return "\n".join(lines)


def write_error_listing(path: str, entries: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in entries:
            fh.write(json.dumps({k: e[k] for k in ("id", "text", "predicted", "gold", "spurious", "missing")},
                                ensure_ascii=False))
            fh.write("\n")
