"""Aspect-based sentiment analysis recast as sentence-pair classification.

Modules: ``tokenizer`` (WordPiece), ``transform`` (review to pair instances
and back), ``input_repr`` (BERT-style inputs), ``encoder`` (numpy transformer
with pretraining), ``training`` (heads, adaptation strategies, grid search),
``evaluation`` (F1 and reports) and ``cli``.
"""

__version__ = "0.1.0"
