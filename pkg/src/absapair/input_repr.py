"""[CLS]/[SEP] framing, segment ids, padding, truncation and the summed embedding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tokenizer import Token, Vocab

DEFAULT_MAX_SEQ_LEN = 128


@dataclass(frozen=True)
class InputRepresentation:
    token_ids: np.ndarray
    segment_ids: np.ndarray
    position_ids: np.ndarray
    attention_mask: np.ndarray
    real_length: int

    def __len__(self):
        return len(self.token_ids)

    def to_json(self) -> dict:
        return {
            "token_ids": self.token_ids.tolist(),
            "segment_ids": self.segment_ids.tolist(),
            "attention_mask": self.attention_mask.tolist(),
            "real_length": self.real_length,
        }


@dataclass(frozen=True)
class InputBatch:
    """Row-stacked representations; every array is (batch, seq_len)."""

    token_ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray

    def __len__(self):
        return self.token_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.token_ids.shape[1]

    @property
    def real_lengths(self) -> np.ndarray:
        return self.attention_mask.sum(axis=1)

    def take(self, index) -> "InputBatch":
        return InputBatch(self.token_ids[index], self.segment_ids[index], self.attention_mask[index])

    def trimmed(self) -> "InputBatch":
        """Drop trailing columns that are padding in every row."""
        t = int(self.real_lengths.max()) if len(self) else 0
        t = max(t, 1)
        return InputBatch(self.token_ids[:, :t], self.segment_ids[:, :t], self.attention_mask[:, :t])

    @classmethod
    def stack(cls, reprs: Sequence[InputRepresentation]) -> "InputBatch":
        return cls(
            np.stack([r.token_ids for r in reprs]),
            np.stack([r.segment_ids for r in reprs]),
            np.stack([r.attention_mask for r in reprs]),
        )

    @classmethod
    def from_repr(cls, rep: InputRepresentation) -> "InputBatch":
        return cls(rep.token_ids[None], rep.segment_ids[None], rep.attention_mask[None])


@dataclass
class EmbeddingTables:
    token_table: np.ndarray
    segment_table: np.ndarray
    position_table: np.ndarray

    def __post_init__(self):
        h = self.token_table.shape[1]
        if self.segment_table.shape != (2, h) or self.position_table.shape[1] != h:
            raise ValueError(
                "embedding tables disagree on hidden size: "
                f"{self.token_table.shape}, {self.segment_table.shape}, {self.position_table.shape}"
            )


def _ids(tokens: Sequence[Token] | Sequence[int]) -> list[int]:
    return [t.id if isinstance(t, Token) else int(t) for t in tokens]


def _finish(ids: list[int], segs: list[int], vocab: Vocab, max_seq_len: int) -> InputRepresentation:
    n = len(ids)
    token_ids = np.full(max_seq_len, vocab.pad_id, dtype=np.int32)
    token_ids[:n] = ids
    segment_ids = np.zeros(max_seq_len, dtype=np.int32)
    segment_ids[:n] = segs
    mask = np.zeros(max_seq_len, dtype=np.int32)
    mask[:n] = 1
    return InputRepresentation(token_ids, segment_ids, np.arange(max_seq_len, dtype=np.int32), mask, n)


def encode_single(tokens: Sequence[Token], vocab: Vocab, max_seq_len: int = DEFAULT_MAX_SEQ_LEN) -> InputRepresentation:
    if max_seq_len < 3:
        raise ValueError(f"max_seq_len must be at least 3, got {max_seq_len}")
    body = _ids(tokens)[: max_seq_len - 2]
    ids = [vocab.cls_id, *body, vocab.sep_id]
    return _finish(ids, [0] * len(ids), vocab, max_seq_len)


def truncate_pair(a: list, b: list, budget: int) -> tuple[list, list]:
    """Drop from the tail of whichever sequence is longer until both fit."""
    a, b = list(a), list(b)
    while len(a) + len(b) > budget:
        if len(a) > len(b):
            a.pop()
        else:
            b.pop()
    return a, b


def encode_pair(
    tokens_a: Sequence[Token],
    tokens_b: Sequence[Token],
    vocab: Vocab,
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN,
) -> InputRepresentation:
    if max_seq_len < 4:
        raise ValueError(f"max_seq_len must be at least 4, got {max_seq_len}")
    if not tokens_a:
        raise ValueError("first sequence of a pair must be nonempty")
    a, b = truncate_pair(_ids(tokens_a), _ids(tokens_b), max_seq_len - 3)
    ids = [vocab.cls_id, *a, vocab.sep_id, *b, vocab.sep_id]
    segs = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    return _finish(ids, segs, vocab, max_seq_len)


def embed(rep: InputRepresentation | InputBatch, tables: EmbeddingTables) -> np.ndarray:
    """token_table[tok] + segment_table[seg] + position_table[pos], row by row."""
    tok = np.asarray(rep.token_ids)
    seg = np.asarray(rep.segment_ids)
    for name, ids, table in (
        ("token", tok, tables.token_table),
        ("segment", seg, tables.segment_table),
    ):
        bad = np.flatnonzero((ids.ravel() < 0) | (ids.ravel() >= table.shape[0]))
        if bad.size:
            raise IndexError(
                f"{name} id {int(ids.ravel()[bad[0]])} at flat index {int(bad[0])} "
                f"out of range for table with {table.shape[0]} rows"
            )
    t = tok.shape[-1]
    if t > tables.position_table.shape[0]:
        raise IndexError(f"position {tables.position_table.shape[0]} out of range (sequence length {t})")
    return tables.token_table[tok] + tables.segment_table[seg] + tables.position_table[:t]
