import os

import numpy as np
import pytest

from absapair.tokenizer import SPECIAL_TOKENS, Vocab
from absapair.transform import CategoryConfig, Polarity, Review

MBERT_VOCAB = os.environ.get("ABSAPAIR_MBERT_VOCAB")

EXAMPLE_TEXT = "kamarnya bersih dan pelayanannya bagus"


@pytest.fixture
def six_token_vocab_bytes():
    return b"[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\ndan"


@pytest.fixture
def example_review():
    return Review(
        "t1",
        EXAMPLE_TEXT,
        frozenset({("service", Polarity.POSITIVE), ("kebersihan", Polarity.POSITIVE)}),
    )


@pytest.fixture
def example_categories():
    return CategoryConfig(("service", "kebersihan"))


def random_vocab(rng, n_tokens, alphabet="abcdefg", max_len=4):
    """Random vocab of short strings and ##-continuations over a small alphabet."""
    tokens = list(SPECIAL_TOKENS)
    seen = set(tokens)
    while len(tokens) < n_tokens:
        length = int(rng.integers(1, max_len + 1))
        s = "".join(rng.choice(list(alphabet), size=length))
        if rng.random() < 0.5:
            s = "##" + s
        if s not in seen:
            seen.add(s)
            tokens.append(s)
    return Vocab.from_tokens(tokens)


def random_words(rng, n, alphabet="abcdefg", max_len=9):
    return ["".join(rng.choice(list(alphabet), size=int(rng.integers(1, max_len + 1)))) for _ in range(n)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
