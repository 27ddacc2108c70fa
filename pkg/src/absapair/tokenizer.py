"""Vocabulary loading, basic + WordPiece tokenization and OOV statistics.

The vocabulary file layout is the one used by published BERT checkpoints:
UTF-8 text, one token per line, the 0-based line number is the token id.
"""

from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
CONTINUATION_PREFIX = "##"
DEFAULT_MAX_WORD_CHARS = 200


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    entries: tuple[str, ...]
    id_of: dict[str, int] = field(repr=False)
    continuation_prefix: str = CONTINUATION_PREFIX

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocab":
        entries = tuple(tokens)
        id_of: dict[str, int] = {}
        for i, tok in enumerate(entries):
            if tok in id_of:
                raise VocabError(
                    f"duplicate token {tok!r} on lines {id_of[tok] + 1} and {i + 1}"
                )
            id_of[tok] = i
        if not entries:
            raise VocabError("empty vocabulary")
        for special in SPECIAL_TOKENS:
            if special not in id_of:
                raise VocabError(f"missing special token {special}")
        return cls(entries, id_of)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    @property
    def special(self) -> dict[str, int]:
        return {tok: self.id_of[tok] for tok in SPECIAL_TOKENS}

    @property
    def pad_id(self) -> int:
        return self.id_of[PAD]

    @property
    def unk_id(self) -> int:
        return self.id_of[UNK]

    @property
    def cls_id(self) -> int:
        return self.id_of[CLS]

    @property
    def sep_id(self) -> int:
        return self.id_of[SEP]

    @property
    def mask_id(self) -> int:
        return self.id_of[MASK]

    def dump(self) -> bytes:
        return ("\n".join(self.entries) + "\n").encode("utf-8")


@dataclass(frozen=True)
class Token:
    surface: str
    id: int

    @property
    def is_continuation(self) -> bool:
        return self.surface.startswith(CONTINUATION_PREFIX)


@dataclass
class OovStats:
    total_words: int = 0
    oov_word_occurrences: int = 0
    oov_list: list[tuple[str, int]] = field(default_factory=list)

    @property
    def unique_oov_words(self) -> int:
        return len(self.oov_list)

    def as_dict(self) -> dict:
        return {
            "total_words": self.total_words,
            "oov_word_occurrences": self.oov_word_occurrences,
            "unique_oov_words": self.unique_oov_words,
            "oov_list": [list(item) for item in self.oov_list],
        }


def load_vocab(source: BinaryIO | bytes | str) -> Vocab:
    """Load a vocabulary from a byte stream, raw bytes or a file path."""
    if isinstance(source, str):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    text = data.decode("utf-8")
    if not text:
        raise VocabError("empty vocabulary stream")
    lines = text.split("\n")
    if lines[-1] == "":
        lines.pop()
    # Published vocab files sometimes carry CRLF endings.
    lines = [line[:-1] if line.endswith("\r") else line for line in lines]
    return Vocab.from_tokens(lines)


def build_vocab(words: Iterable[str], alphabet: str = "abcdefghijklmnopqrstuvwxyz") -> Vocab:
    """Assemble a closed vocabulary: specials, single characters, ##characters, words.

    Every word over `alphabet` segments without [UNK], so such a vocab has
    zero OOV words by construction. This is deterministic assembly, not
    WordPiece vocabulary training.
    """
    tokens = list(SPECIAL_TOKENS)
    seen = set(tokens)

    def add(tok):
        if tok not in seen:
            seen.add(tok)
            tokens.append(tok)

    for ch in "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~0123456789":
        add(ch)
    for ch in alphabet:
        add(ch)
    for ch in alphabet + "0123456789":
        add(CONTINUATION_PREFIX + ch)
    for w in words:
        add(w)
    return Vocab.from_tokens(tokens)


def _is_whitespace(ch: str) -> bool:
    if ch in (" ", "\t", "\n", "\r"):
        return True
    return unicodedata.category(ch) == "Zs"


def _is_control(ch: str) -> bool:
    if ch in ("\t", "\n", "\r"):
        return False
    return unicodedata.category(ch) in ("Cc", "Cf")


def _is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    # ASCII symbols such as "$" and "^" count as punctuation too.
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def basic_tokenize(text: str, strip_accents: bool = False) -> list[str]:
    """Lowercase, split on whitespace, and isolate every punctuation character."""
    words: list[str] = []
    current: list[str] = []

    def flush():
        if current:
            words.append("".join(current))
            current.clear()

    text = text.lower()
    if strip_accents:
        text = "".join(
            ch for ch in unicodedata.normalize("NFD", text) if unicodedata.category(ch) != "Mn"
        )
    for ch in text:
        if ord(ch) == 0 or ord(ch) == 0xFFFD or _is_control(ch):
            continue
        if _is_whitespace(ch):
            flush()
        elif _is_punctuation(ch):
            flush()
            words.append(ch)
        else:
            current.append(ch)
    flush()
    return words


def wordpiece(word: str, vocab: Vocab, max_word_chars: int = DEFAULT_MAX_WORD_CHARS) -> list[str]:
    """Greedy first-longest-match segmentation of a single word.

    Failure anywhere in the word maps the whole word to [UNK].
    """
    if len(word) > max_word_chars:
        return [UNK]
    pieces = []
    start = 0
    n = len(word)
    while start < n:
        end = n
        match = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION_PREFIX + piece
            if piece in vocab.id_of:
                match = piece
                break
            end -= 1
        if match is None:
            return [UNK]
        pieces.append(match)
        start = end
    return pieces


def tokenize(
    text: str,
    vocab: Vocab,
    max_word_chars: int = DEFAULT_MAX_WORD_CHARS,
    strip_accents: bool = False,
) -> list[Token]:
    out = []
    for word in basic_tokenize(text, strip_accents=strip_accents):
        for piece in wordpiece(word, vocab, max_word_chars):
            out.append(Token(piece, vocab.id_of[piece]))
    return out


def oov_stats(
    corpus: Iterable[str], vocab: Vocab, max_word_chars: int = DEFAULT_MAX_WORD_CHARS
) -> OovStats:
    """Count words whose WordPiece segmentation collapses to [UNK]."""
    counts: Counter[str] = Counter()
    total = 0
    cache: dict[str, bool] = {}
    for text in corpus:
        for word in basic_tokenize(text):
            total += 1
            is_oov = cache.get(word)
            if is_oov is None:
                is_oov = cache[word] = wordpiece(word, vocab, max_word_chars) == [UNK]
            if is_oov:
                counts[word] += 1
    oov_list = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return OovStats(total, sum(counts.values()), oov_list)

