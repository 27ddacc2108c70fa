from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from absapair.transform import (
    AUX_ORDER,
    DEFAULT_LEXICON,
    AuxLabel,
    CategoryConfig,
    DataError,
    GeneratorConfig,
    PairInstance,
    Polarity,
    Review,
    TransformMethod,
    aggregate_dataset,
    aggregate_predictions,
    build_aux_sentence,
    expected_instance_count,
    generate_synthetic_reviews,
    group_by_category,
    ideal_scores,
    read_reviews,
    split_dataset,
    transform_dataset,
    write_reviews,
)

from conftest import EXAMPLE_TEXT

EXAMPLE_ROWS = [
    ("service-positif", 1),
    ("service-negatif", 0),
    ("service-none", 0),
    ("kebersihan-positif", 1),
    ("kebersihan-negatif", 0),
    ("kebersihan-none", 0),
]


def test_aux_sentences():
    cfg = CategoryConfig(("service", "kebersihan"))
    assert build_aux_sentence("service", AuxLabel.POSITIVE, TransformMethod.NLI_B, cfg) == "service-positif"
    assert build_aux_sentence("kebersihan", AuxLabel.NONE, TransformMethod.NLI_B, cfg) == "kebersihan-none"
    assert build_aux_sentence("service", None, TransformMethod.NLI_M, cfg) == "service"
    assert build_aux_sentence("service", None, TransformMethod.QA_M, cfg) == "bagaimana pendapat tentang service ?"
    assert (
        build_aux_sentence("service", AuxLabel.NEGATIVE, TransformMethod.QA_B, cfg)
        == "apakah pendapat tentang service negatif ?"
    )


def test_aux_sentence_errors():
    cfg = CategoryConfig(("service",))
    with pytest.raises(DataError):
        build_aux_sentence("wifi", AuxLabel.POSITIVE, TransformMethod.NLI_B, cfg)
    with pytest.raises(DataError):
        build_aux_sentence("service", AuxLabel.POSITIVE, TransformMethod.NLI_M, cfg)
    with pytest.raises(DataError):
        build_aux_sentence("service", None, TransformMethod.QA_B, cfg)


def test_category_config_invariants():
    with pytest.raises(DataError):
        CategoryConfig(())
    with pytest.raises(DataError):
        CategoryConfig(("a", "a"))
    assert len(CategoryConfig()) == 10


def test_review_rejects_two_polarities():
    with pytest.raises(DataError):
        Review("x", "t", frozenset({("ac", Polarity.POSITIVE), ("ac", Polarity.NEGATIVE)}))


def test_example_rows(example_review, example_categories):
    rows = transform_dataset([example_review], example_categories, TransformMethod.NLI_B)
    assert [(r.text_a, r.label) for r in rows] == EXAMPLE_ROWS
    assert all(r.text_b == EXAMPLE_TEXT for r in rows)


def test_transform_empty():
    assert transform_dataset([], CategoryConfig(), TransformMethod.NLI_B) == []


def test_transform_m_method_labels(example_review):
    cfg = CategoryConfig(("service", "kebersihan", "wifi"))
    rows = transform_dataset([example_review], cfg, TransformMethod.NLI_M)
    assert [(r.text_a, r.label) for r in rows] == [
        ("service", AuxLabel.POSITIVE),
        ("kebersihan", AuxLabel.POSITIVE),
        ("wifi", AuxLabel.NONE),
    ]
    assert all(r.aux_polarity is None for r in rows)


def test_expansion_count_formula():
    assert expected_instance_count(9448, 10, TransformMethod.NLI_B) == 283_440
    assert expected_instance_count(9448, 10, TransformMethod.QA_M) == 94_480


@pytest.mark.parametrize("method", list(TransformMethod))
def test_cardinality_and_one_hot(method):
    cfg = CategoryConfig(tuple(DEFAULT_LEXICON)[:5])
    reviews = generate_synthetic_reviews(3, 40, cfg, DEFAULT_LEXICON)
    rows = transform_dataset(reviews, cfg, method)
    assert len(rows) == expected_instance_count(40, 5, method)
    texts = {r.id: r.text for r in reviews}
    assert all(row.text_b == texts[row.review_id] for row in rows)
    if method.is_binary:
        per = Counter()
        for row in rows:
            per[row.review_id, row.category] += row.label
        assert set(per.values()) == {1}


def test_group_by_category(example_review):
    cfg = CategoryConfig(("service", "kebersihan", "wifi"))
    empty = Review("e", "tidak ada komentar", frozenset())
    groups = group_by_category([example_review, empty], cfg)
    assert groups["service"] == [(EXAMPLE_TEXT, Polarity.POSITIVE)]
    assert groups["kebersihan"] == [(EXAMPLE_TEXT, Polarity.POSITIVE)]
    assert groups["wifi"] == []


def test_group_by_category_recount():
    cfg = CategoryConfig(tuple(DEFAULT_LEXICON))
    reviews = generate_synthetic_reviews(9, 100, cfg)
    groups = group_by_category(reviews, cfg)
    for c in cfg.categories:
        for pol in Polarity:
            expected = sum(1 for r in reviews for cc, pp in r.gold if cc == c and pp == pol)
            assert sum(1 for _, p in groups[c] if p == pol) == expected


def test_aggregate_example_round_trip(example_review, example_categories):
    rows = transform_dataset([example_review], example_categories, TransformMethod.NLI_B)
    scores = ideal_scores(rows, TransformMethod.NLI_B)["t1"]
    assert aggregate_predictions(scores, TransformMethod.NLI_B) == set(example_review.gold)


def test_aggregate_all_none():
    scores = {("ac", a): (0.9 if a is AuxLabel.NONE else 0.1) for a in AUX_ORDER}
    assert aggregate_predictions(scores, TransformMethod.NLI_B) == set()


def test_aggregate_tie_break():
    tie = {("ac", a): 0.5 for a in AUX_ORDER}
    assert aggregate_predictions(tie, TransformMethod.NLI_B) == set()
    tie[("ac", AuxLabel.NONE)] = 0.1
    assert aggregate_predictions(tie, TransformMethod.NLI_B) == {("ac", Polarity.NEGATIVE)}
    dist = {"ac": {AuxLabel.POSITIVE: 0.5, AuxLabel.NEGATIVE: 0.5, AuxLabel.NONE: 0.0}}
    assert aggregate_predictions(dist, TransformMethod.NLI_M) == {("ac", Polarity.NEGATIVE)}


def test_aggregate_missing_entry():
    scores = {("ac", AuxLabel.POSITIVE): 1.0, ("ac", AuxLabel.NEGATIVE): 0.0}
    with pytest.raises(DataError, match=r"\(ac, none\)"):
        aggregate_predictions(scores, TransformMethod.NLI_B)


def test_aggregate_m_distribution_must_sum_to_one():
    dist = {"ac": {AuxLabel.POSITIVE: 0.5, AuxLabel.NEGATIVE: 0.2, AuxLabel.NONE: 0.2}}
    with pytest.raises(DataError):
        aggregate_predictions(dist, TransformMethod.QA_M)


def random_reviews(rng, n, categories):
    out = []
    for i in range(n):
        gold = set()
        for c in categories:
            u = rng.random()
            if u < 0.25:
                gold.add((c, Polarity.POSITIVE))
            elif u < 0.5:
                gold.add((c, Polarity.NEGATIVE))
        out.append(Review(f"x{i}", f"review {i}", frozenset(gold)))
    return out


@pytest.mark.parametrize("method", list(TransformMethod))
def test_round_trip_random(method, rng):
    cfg = CategoryConfig(("a", "b", "c", "d"))
    reviews = random_reviews(rng, 500, cfg.categories)
    rows = transform_dataset(reviews, cfg, method)
    scores = ideal_scores(rows, method)
    for r in reviews:
        assert aggregate_predictions(scores[r.id], method, cfg.categories) == set(r.gold)
    # same through the array-based path used after model prediction
    probs = np.zeros((len(rows), method.num_classes))
    probs[np.arange(len(rows)), [row.label_index for row in rows]] = 1.0
    agg = aggregate_dataset(rows, probs, method)
    assert all(agg[r.id] == set(r.gold) for r in reviews)


@pytest.mark.parametrize(
    "n, frac, sizes", [(10, 0.8, (8, 2)), (9448, 0.8, (7558, 1890)), (5, 0.5, (3, 2))]
)
def test_split_sizes(n, frac, sizes):
    train, val = split_dataset(list(range(n)), frac, seed=0)
    assert (len(train), len(val)) == sizes
    assert sorted(train + val) == list(range(n))
    assert not set(train) & set(val)


def test_split_deterministic_and_seed_sensitive():
    items = list(range(100))
    assert split_dataset(items, 0.8, 7) == split_dataset(items, 0.8, 7)
    assert split_dataset(items, 0.8, 7) != split_dataset(items, 0.8, 8)


def test_split_errors():
    with pytest.raises(ValueError):
        split_dataset([1], 0.8, 0)
    with pytest.raises(ValueError):
        split_dataset([1, 2, 3], 1.0, 0)


def test_split_pairs_by_review(rng):
    cfg = CategoryConfig(("a", "b"))
    rows = transform_dataset(random_reviews(rng, 50, cfg.categories), cfg, TransformMethod.NLI_B)
    train, val = split_dataset(rows, 0.8, 3)
    tr_ids = {r.review_id for r in train}
    va_ids = {r.review_id for r in val}
    assert not tr_ids & va_ids
    assert (len(tr_ids), len(va_ids)) == (40, 10)
    assert len(train) + len(val) == len(rows)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 300), frac=st.floats(0.05, 0.95), seed=st.integers(0, 1000))
def test_split_partition_property(n, frac, seed):
    train, val = split_dataset(list(range(n)), frac, seed)
    assert len(train) == int(np.floor(frac * n + 0.5))
    assert sorted(train + val) == list(range(n))


def test_generator_trivial_cases():
    cfg = CategoryConfig(("ac",))
    assert generate_synthetic_reviews(0, 0, cfg) == []
    for r in generate_synthetic_reviews(0, 5, cfg, {"ac": DEFAULT_LEXICON["ac"]}):
        assert {c for c, _ in r.gold} <= {"ac"}


def test_generator_rejects_bad_lexicon():
    cfg = CategoryConfig(("ac",))
    with pytest.raises(DataError):
        generate_synthetic_reviews(0, 3, cfg, {"ac": {"keywords": ["ac"], "positive": [], "negative": ["panas"]}})
    with pytest.raises(DataError):
        generate_synthetic_reviews(0, 3, CategoryConfig(("ac", "tv")), {"ac": DEFAULT_LEXICON["ac"]})


def test_generator_deterministic():
    cfg = CategoryConfig()
    assert generate_synthetic_reviews(5, 30, cfg) == generate_synthetic_reviews(5, 30, cfg)
    assert generate_synthetic_reviews(5, 30, cfg) != generate_synthetic_reviews(6, 30, cfg)


def test_generator_marginals():
    cfg = CategoryConfig()
    gen = GeneratorConfig(aspect_probability=0.35, positive_probability=0.5)
    reviews = generate_synthetic_reviews(11, 1000, cfg, gen=gen)
    # pooled over all 10 x 1000 (review, category) slots
    n_present = sum(len(r.gold) for r in reviews)
    assert abs(n_present / (1000 * len(cfg)) - gen.aspect_probability) <= 0.03
    pols = [p for r in reviews for _, p in r.gold]
    assert abs(sum(p is Polarity.POSITIVE for p in pols) / len(pols) - gen.positive_probability) <= 0.03


def test_generator_labels_follow_cues():
    cfg = CategoryConfig()
    for r in generate_synthetic_reviews(4, 200, cfg):
        for c, p in r.gold:
            entry = DEFAULT_LEXICON[c]
            cues = entry.positive if p is Polarity.POSITIVE else entry.negative
            assert any(f"{kw} {cue}" in r.text for kw in entry.keywords for cue in cues)


def test_reviews_jsonl_round_trip(tmp_path):
    cfg = CategoryConfig()
    reviews = generate_synthetic_reviews(2, 20, cfg)
    path = tmp_path / "d.jsonl"
    write_reviews(str(path), reviews)
    assert read_reviews(str(path)) == reviews


def test_read_reviews_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "text": "x", "labels": []}\n{oops\n', encoding="utf-8")
    with pytest.raises(DataError, match=":2:"):
        read_reviews(str(path))


def test_pair_instance_json():
    inst = PairInstance("ac-positif", "ac dingin", 1, "r1", "ac", AuxLabel.POSITIVE)
    assert inst.to_json() == {
        "text_a": "ac-positif",
        "text_b": "ac dingin",
        "label": 1,
        "review_id": "r1",
        "category": "ac",
        "aux_polarity": "positive",
    }
