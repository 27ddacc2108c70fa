"""A small BERT-style encoder in numpy with hand-written backpropagation.

Parameters live in a flat ``dict[str, np.ndarray]``; the array dtype drives
the compute precision (float32 for training, float64 for gradient checks).
The masked-LM output layer is tied to the token embedding table.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels as K
from ._rng import as_generator, round_half_up, substream
from .input_repr import InputBatch, InputRepresentation, encode_pair
from .optim import Adam
from .tokenizer import UNK, Token, Vocab, tokenize


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    hidden_size: int = 32
    num_heads: int = 2
    ffn_size: int | None = None
    max_positions: int = 128
    vocab_size: int = 200
    dropout_rate: float = 0.0
    use_pooler: bool = True
    mlm_80_10_10: bool = False
    init_std: float = 0.02

    def __post_init__(self):
        if self.ffn_size is None:
            object.__setattr__(self, "ffn_size", 4 * self.hidden_size)
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        for name in ("hidden_size", "num_heads", "ffn_size", "max_positions", "vocab_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden_size % self.num_heads:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    # L / H / A shorthand
    @property
    def L(self):
        return self.num_layers

    @property
    def H(self):
        return self.hidden_size

    @property
    def A(self):
        return self.num_heads

    @property
    def head_dim(self):
        return self.hidden_size // self.num_heads

    @classmethod
    def bert_base(cls, vocab_size=119547):
        return cls(12, 768, 12, 3072, 512, vocab_size, 0.1)

    @classmethod
    def bert_large(cls, vocab_size=119547):
        return cls(24, 1024, 16, 4096, 512, vocab_size, 0.1)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj) -> "EncoderConfig":
        return cls(**obj)


# Pretraining-only groups; fine-tuning never touches them.
PRETRAIN_ONLY_PREFIXES = ("mlm.", "nsp.")


def param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    H, F, V = config.hidden_size, config.ffn_size, config.vocab_size
    shapes = {
        "emb.token": (V, H),
        "emb.segment": (2, H),
        "emb.position": (config.max_positions, H),
        "emb.ln.g": (H,),
        "emb.ln.b": (H,),
    }
    for i in range(config.num_layers):
        p = f"layer{i}."
        for w in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{w}"] = (H, H)
            shapes[p + f"attn.b{w}"] = (H,)
        shapes[p + "ln1.g"] = (H,)
        shapes[p + "ln1.b"] = (H,)
        shapes[p + "ffn.w1"] = (H, F)
        shapes[p + "ffn.b1"] = (F,)
        shapes[p + "ffn.w2"] = (F, H)
        shapes[p + "ffn.b2"] = (H,)
        shapes[p + "ln2.g"] = (H,)
        shapes[p + "ln2.b"] = (H,)
    shapes["pooler.w"] = (H, H)
    shapes["pooler.b"] = (H,)
    shapes["mlm.ln.g"] = (H,)
    shapes["mlm.ln.b"] = (H,)
    shapes["mlm.bias"] = (V,)
    shapes["nsp.w"] = (H, 2)
    shapes["nsp.b"] = (2,)
    return shapes


def truncated_normal(rng, shape, std, dtype):
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * std).astype(dtype)


def init_params(config: EncoderConfig, seed=0, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = as_generator(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "g":
            params[name] = np.ones(shape, dtype=dtype)
        elif len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = truncated_normal(rng, shape, config.init_std, dtype)
    return params


def cast_params(params, dtype):
    return {k: v.astype(dtype) for k, v in params.items()}


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def param_group(name: str) -> str:
    return name.rsplit(".", 1)[0]


def layer_params(params, i):
    prefix = f"layer{i}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def validate_params(params, config):
    expected = param_shapes(config)
    for name, shape in expected.items():
        if name not in params:
            raise ValueError(f"missing parameter {name}")
        if params[name].shape != shape:
            raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# ---------------------------------------------------------------------------
# forward / backward


def _dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * keep, keep


def _split_heads(x2d, B, T, A):
    return x2d.reshape(B, T, A, -1).transpose(0, 2, 1, 3)


def _merge_heads(x4d):
    B, A, T, d = x4d.shape
    return x4d.transpose(0, 2, 1, 3).reshape(B * T, A * d)


def self_attention(x, mask, lp, num_heads, return_probs=False):
    """Multi-head scaled dot-product attention of one layer.

    `x` is (B, T, H), `mask` is (B, T) with 1 for real tokens, `lp` holds the
    layer's ``attn.w{q,k,v,o}`` / ``attn.b{q,k,v,o}`` arrays. Keys with mask 0
    get exactly zero weight.
    """
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite values in attention input")
    if x.ndim == 2:
        x = x[None]
        mask = np.asarray(mask)[None]
    out, c = _attention_forward(x.reshape(-1, x.shape[-1]), np.asarray(mask), lp, num_heads, x.shape[0], x.shape[1])
    out = out.reshape(x.shape)
    return (out, c["p"]) if return_probs else out


def _attention_forward(x2d, mask, lp, A, B, T):
    d = x2d.shape[1] // A
    q = _split_heads(x2d @ lp["attn.wq"] + lp["attn.bq"], B, T, A)
    k = _split_heads(x2d @ lp["attn.wk"] + lp["attn.bk"], B, T, A)
    v = _split_heads(x2d @ lp["attn.wv"] + lp["attn.bv"], B, T, A)
    scale = x2d.dtype.type(1.0 / math.sqrt(d))
    s = (q @ k.transpose(0, 1, 3, 2)) * scale
    p = K.masked_softmax(s, mask)
    ctx = _merge_heads(p @ v)
    out = ctx @ lp["attn.wo"] + lp["attn.bo"]
    return out, {"q": q, "k": k, "v": v, "p": p, "ctx": ctx, "scale": scale}


def _attention_backward(dout, x2d, c, lp, grads, prefix):
    B, A, T, d = c["q"].shape
    grads[prefix + "attn.wo"] = c["ctx"].T @ dout
    grads[prefix + "attn.bo"] = dout.sum(0)
    dctx = _split_heads(dout @ lp["attn.wo"].T, B, T, A)
    dp = dctx @ c["v"].transpose(0, 1, 3, 2)
    dv = c["p"].transpose(0, 1, 3, 2) @ dctx
    ds = K.softmax_backward(c["p"], dp) * c["scale"]
    dq = ds @ c["k"]
    dk = ds.transpose(0, 1, 3, 2) @ c["q"]
    dx = np.zeros_like(x2d)
    for name, dh in (("q", dq), ("k", dk), ("v", dv)):
        d2 = _merge_heads(dh)
        grads[prefix + f"attn.w{name}"] = x2d.T @ d2
        grads[prefix + f"attn.b{name}"] = d2.sum(0)
        dx += d2 @ lp[f"attn.w{name}"].T
    return dx


def _layer_forward(x2d, mask, lp, config, B, T, rng):
    a, ac = _attention_forward(x2d, mask, lp, config.num_heads, B, T)
    a, m1 = _dropout(a, config.dropout_rate, rng)
    y1, xh1, rs1 = K.layer_norm(x2d + a, lp["ln1.g"], lp["ln1.b"])
    f = y1 @ lp["ffn.w1"] + lp["ffn.b1"]
    g = K.gelu(f)
    o = g @ lp["ffn.w2"] + lp["ffn.b2"]
    o, m2 = _dropout(o, config.dropout_rate, rng)
    y2, xh2, rs2 = K.layer_norm(y1 + o, lp["ln2.g"], lp["ln2.b"])
    cache = {"x": x2d, "attn": ac, "m1": m1, "xh1": xh1, "rs1": rs1, "y1": y1,
             "f": f, "g": g, "m2": m2, "xh2": xh2, "rs2": rs2}
    return y2, cache


def _layer_backward(dy2, c, lp, grads, prefix):
    dr2, grads[prefix + "ln2.g"], grads[prefix + "ln2.b"] = K.layer_norm_backward(dy2, c["xh2"], c["rs2"], lp["ln2.g"])
    do = dr2 if c["m2"] is None else dr2 * c["m2"]
    grads[prefix + "ffn.w2"] = c["g"].T @ do
    grads[prefix + "ffn.b2"] = do.sum(0)
    df = K.gelu_backward(c["f"], do @ lp["ffn.w2"].T)
    grads[prefix + "ffn.w1"] = c["y1"].T @ df
    grads[prefix + "ffn.b1"] = df.sum(0)
    dy1 = dr2 + df @ lp["ffn.w1"].T
    dr1, grads[prefix + "ln1.g"], grads[prefix + "ln1.b"] = K.layer_norm_backward(dy1, c["xh1"], c["rs1"], lp["ln1.g"])
    da = dr1 if c["m1"] is None else dr1 * c["m1"]
    return dr1 + _attention_backward(da, c["x"], c["attn"], lp, grads, prefix)


class ForwardCache(NamedTuple):
    batch: InputBatch
    emb_xhat: np.ndarray
    emb_rstd: np.ndarray
    emb_mask: np.ndarray | None
    layers: list
    cls_in: np.ndarray
    cls_out: np.ndarray


def _as_batch(rep) -> InputBatch:
    if isinstance(rep, InputRepresentation):
        return InputBatch.from_repr(rep)
    return rep


def forward_with_cache(batch, params, config, rng=None):
    """Forward pass keeping everything the backward pass needs.

    Returns ``(hidden (B, T, H), cls (B, H), cache)``. Dropout is active
    only when `rng` is given and the configured rate is positive.
    """
    batch = _as_batch(batch)
    ids, segs, mask = batch.token_ids, batch.segment_ids, batch.attention_mask
    B, T = ids.shape
    H = config.hidden_size
    if T > config.max_positions:
        raise ValueError(f"sequence length {T} exceeds max_positions {config.max_positions}")
    if params["emb.token"].shape != (config.vocab_size, H):
        raise ValueError(
            f"token table shape {params['emb.token'].shape} does not match config "
            f"({config.vocab_size}, {H})"
        )
    e = params["emb.token"][ids] + params["emb.segment"][segs] + params["emb.position"][:T]
    h, xh, rs = K.layer_norm(e.reshape(B * T, H), params["emb.ln.g"], params["emb.ln.b"])
    h, em = _dropout(h, config.dropout_rate, rng)
    layers = []
    for i in range(config.num_layers):
        h, c = _layer_forward(h, mask, layer_params(params, i), config, B, T, rng)
        layers.append(c)
    hidden = h.reshape(B, T, H)
    cls_in = hidden[:, 0]
    if config.use_pooler:
        cls = np.tanh(cls_in @ params["pooler.w"] + params["pooler.b"])
    else:
        cls = cls_in
    return hidden, cls, ForwardCache(batch, xh, rs, em, layers, cls_in, cls)


def encoder_forward(rep, params, config, rng=None):
    """Run the encoder; returns ``(hidden_states, cls_vector)``."""
    hidden, cls, _ = forward_with_cache(rep, params, config, rng)
    return hidden, cls


def encoder_backward(cache: ForwardCache, params, config, d_hidden=None, d_cls=None):
    """Gradients of all encoder-body and pooler parameters."""
    batch = cache.batch
    B, T = batch.token_ids.shape
    H = config.hidden_size
    dtype = params["emb.token"].dtype
    grads = {}
    dh = np.zeros((B, T, H), dtype=dtype) if d_hidden is None else d_hidden.astype(dtype, copy=True)
    if d_cls is not None:
        if config.use_pooler:
            dz = d_cls * (1.0 - cache.cls_out * cache.cls_out)
            grads["pooler.w"] = cache.cls_in.T @ dz
            grads["pooler.b"] = dz.sum(0)
            dh[:, 0] += dz @ params["pooler.w"].T
        else:
            dh[:, 0] += d_cls
    d = dh.reshape(B * T, H)
    for i in reversed(range(config.num_layers)):
        d = _layer_backward(d, cache.layers[i], layer_params(params, i), grads, f"layer{i}.")
    if cache.emb_mask is not None:
        d = d * cache.emb_mask
    de, grads["emb.ln.g"], grads["emb.ln.b"] = K.layer_norm_backward(d, cache.emb_xhat, cache.emb_rstd, params["emb.ln.g"])
    dtok = np.zeros_like(params["emb.token"])
    np.add.at(dtok, batch.token_ids.ravel(), de)
    dseg = np.zeros_like(params["emb.segment"])
    np.add.at(dseg, batch.segment_ids.ravel(), de)
    dpos = np.zeros_like(params["emb.position"])
    dpos[:T] = de.reshape(B, T, H).sum(0)
    grads["emb.token"] = dtok
    grads["emb.segment"] = dseg
    grads["emb.position"] = dpos
    return grads


def add_grads(total, extra):
    for k, v in extra.items():
        if k in total:
            total[k] = total[k] + v
        else:
            total[k] = v
    return total


# ---------------------------------------------------------------------------
# losses shared with the classification heads


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_xent(logits, labels):
    """Mean categorical cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    lp = log_softmax(logits)
    loss = -lp[np.arange(n), labels].mean()
    d = np.exp(lp)
    d[np.arange(n), labels] -= 1.0
    return float(loss), d / n


# ---------------------------------------------------------------------------
# pretraining heads


def mlm_head_forward(hidden, positions, params):
    """Logits over the vocabulary at flat positions of `hidden` (B, T, H)."""
    H = hidden.shape[-1]
    hm = hidden.reshape(-1, H)[positions]
    z, xh, rs = K.layer_norm(hm, params["mlm.ln.g"], params["mlm.ln.b"])
    logits = z @ params["emb.token"].T + params["mlm.bias"]
    return logits, (positions, z, xh, rs)


def mlm_head_backward(dlogits, cache, params, hidden_shape, grads):
    positions, z, xh, rs = cache
    grads["emb.token"] = grads.get("emb.token", 0) + dlogits.T @ z
    grads["mlm.bias"] = dlogits.sum(0)
    dz = dlogits @ params["emb.token"]
    dhm, grads["mlm.ln.g"], grads["mlm.ln.b"] = K.layer_norm_backward(dz, xh, rs, params["mlm.ln.g"])
    B, T, H = hidden_shape
    dh = np.zeros((B * T, H), dtype=dhm.dtype)
    np.add.at(dh, positions, dhm)
    return dh.reshape(B, T, H)


@dataclass
class MaskedBatch:
    token_ids: np.ndarray
    positions: np.ndarray
    target_ids: np.ndarray


IS_NEXT, NOT_NEXT = 0, 1


@dataclass(frozen=True)
class NspPair:
    sentence_a: str
    sentence_b: str
    label: int  # IS_NEXT or NOT_NEXT

    @property
    def is_next(self) -> bool:
        return self.label == IS_NEXT


def maskable_positions(rep: InputRepresentation, special_ids: Sequence[int]) -> np.ndarray:
    ids = rep.token_ids[: rep.real_length]
    return np.flatnonzero(~np.isin(ids, np.asarray(list(special_ids))))


def mlm_mask(
    rep: InputRepresentation,
    rate: float,
    seed,
    vocab: Vocab,
    eighty_ten_ten: bool = False,
) -> MaskedBatch:
    """Replace round(rate * maskable) non-special tokens by [MASK].

    With `eighty_ten_ten` the selected tokens become [MASK] 80% of the time,
    a random token 10% and stay unchanged 10% (reference BERT variant).
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"mask rate must lie in [0, 1], got {rate}")
    rng = as_generator(seed)
    specials = (vocab.cls_id, vocab.sep_id, vocab.pad_id)
    cand = maskable_positions(rep, specials)
    n = round_half_up(rate * len(cand))
    chosen = np.sort(rng.choice(cand, size=n, replace=False)) if n else np.zeros(0, dtype=np.int64)
    ids = rep.token_ids.copy()
    targets = ids[chosen].copy()
    if eighty_ten_ten and n:
        u = rng.random(n)
        rand_ids = rng.integers(0, len(vocab), n)
        ids[chosen] = np.where(u < 0.8, vocab.mask_id, np.where(u < 0.9, rand_ids, targets))
    else:
        ids[chosen] = vocab.mask_id
    return MaskedBatch(ids, chosen.astype(np.int64), targets)


def nsp_sample(documents: Sequence[Sequence[str]], n: int, seed, is_next_probability: float = 0.5) -> list[NspPair]:
    """Draw sentence pairs, IsNext with probability `is_next_probability`.

    IsNext pairs are adjacent sentences of one document; NotNext pairs take
    sentence_b uniformly from a different document.
    """
    rng = as_generator(seed)
    sources = [i for i, d in enumerate(documents) if len(d) >= 2]
    if not sources:
        raise ValueError("need at least one document with two or more sentences")
    others_possible = sum(1 for d in documents if len(d) >= 1) >= 2
    if is_next_probability < 1.0 and not others_possible:
        raise ValueError("need at least two nonempty documents to draw NotNext pairs")
    pairs = []
    n_docs = len(documents)
    for _ in range(n):
        di = sources[rng.integers(len(sources))]
        doc = documents[di]
        j = int(rng.integers(len(doc) - 1))
        if rng.random() < is_next_probability:
            pairs.append(NspPair(doc[j], doc[j + 1], IS_NEXT))
        else:
            while True:
                dk = int(rng.integers(n_docs - 1))
                dk += dk >= di
                if documents[dk]:
                    break
            other = documents[dk]
            pairs.append(NspPair(doc[j], other[rng.integers(len(other))], NOT_NEXT))
    return pairs


@dataclass
class PretrainHistory:
    loss: list[float] = field(default_factory=list)
    mlm_loss: list[float] = field(default_factory=list)
    nsp_loss: list[float] = field(default_factory=list)
    nsp_accuracy: list[float] = field(default_factory=list)
    steps: int = 0


def pretraining_loss(batch, masked_positions, targets, nsp_labels, params, config, rng=None, need_grads=True):
    """Summed mean-MLM and mean-NSP cross-entropy, with gradients.

    `masked_positions` are flat indices into (B*T); `batch` already carries
    [MASK] ids at those positions.
    """
    hidden, cls, cache = forward_with_cache(batch, params, config, rng)
    nsp_logits = cls @ params["nsp.w"] + params["nsp.b"]
    nsp_loss, d_nsp = softmax_xent(nsp_logits, nsp_labels)
    if len(masked_positions):
        mlm_logits, mcache = mlm_head_forward(hidden, masked_positions, params)
        mlm_loss, d_mlm = softmax_xent(mlm_logits, targets)
    else:
        mlm_loss, d_mlm, mcache = 0.0, None, None
    stats = {
        "loss": mlm_loss + nsp_loss,
        "mlm_loss": mlm_loss,
        "nsp_loss": nsp_loss,
        "nsp_correct": int((nsp_logits.argmax(1) == nsp_labels).sum()),
    }
    if not need_grads:
        return stats, None
    grads = {"nsp.w": cls.T @ d_nsp, "nsp.b": d_nsp.sum(0)}
    d_cls = d_nsp @ params["nsp.w"].T
    d_hidden = None
    if d_mlm is not None:
        d_hidden = mlm_head_backward(d_mlm, mcache, params, hidden.shape, grads)
    enc = encoder_backward(cache, params, config, d_hidden=d_hidden, d_cls=d_cls)
    add_grads(grads, enc)
    return stats, grads


def pretrain(
    documents: Sequence[Sequence[str]],
    vocab: Vocab,
    config: EncoderConfig,
    hp,
    *,
    max_seq_len: int = 64,
    mask_rate: float = 0.15,
    pairs_per_epoch: int | None = None,
    params=None,
    max_steps: int | None = None,
    log=None,
):
    """Masked-LM + next-sentence pretraining with Adam.

    `hp` needs ``learning_rate``, ``batch_size``, ``epochs`` and ``seed``.
    Returns ``(params, PretrainHistory)``.
    """
    if not documents:
        raise ValueError("pretraining corpus is empty")
    if len(vocab) != config.vocab_size:
        raise ValueError(f"vocab has {len(vocab)} entries but config.vocab_size is {config.vocab_size}")
    if params is None:
        params = init_params(config, substream(hp.seed, "init"))
    else:
        params = copy_params(params)
    history = PretrainHistory()
    if hp.epochs == 0 or max_steps == 0:
        return params, history
    n_pairs = pairs_per_epoch or sum(max(len(d) - 1, 0) for d in documents)
    ids_of = {}

    def ids(sentence):
        if sentence not in ids_of:
            ids_of[sentence] = tokenize(sentence, vocab) or [Token(UNK, vocab.unk_id)]
        return ids_of[sentence]

    nsp_rng = substream(hp.seed, "nsp")
    mask_rng = substream(hp.seed, "mask")
    drop_rng = substream(hp.seed, "dropout") if config.dropout_rate > 0 else None
    opt = Adam(hp.learning_rate)
    steps = 0
    for epoch in range(hp.epochs):
        pairs = nsp_sample(documents, n_pairs, nsp_rng)
        totals = {"loss": 0.0, "mlm_loss": 0.0, "nsp_loss": 0.0, "nsp_correct": 0}
        n_batches = 0
        n_seen = 0
        for start in range(0, len(pairs), hp.batch_size):
            chunk = pairs[start : start + hp.batch_size]
            reps = [encode_pair(ids(p.sentence_a), ids(p.sentence_b), vocab, max_seq_len) for p in chunk]
            masked = [mlm_mask(r, mask_rate, mask_rng, vocab, config.mlm_80_10_10) for r in reps]
            batch = InputBatch(
                np.stack([m.token_ids for m in masked]),
                np.stack([r.segment_ids for r in reps]),
                np.stack([r.attention_mask for r in reps]),
            ).trimmed()
            T = batch.seq_len
            positions = np.concatenate([m.positions + i * T for i, m in enumerate(masked)]).astype(np.int64)
            targets = np.concatenate([m.target_ids for m in masked]).astype(np.int64)
            labels = np.array([p.label for p in chunk], dtype=np.int64)
            stats, grads = pretraining_loss(batch, positions, targets, labels, params, config, drop_rng)
            if not math.isfinite(stats["loss"]):
                raise FloatingPointError(f"non-finite pretraining loss at epoch {epoch}, step {steps}")
            opt.step(params, grads)
            steps += 1
            n_batches += 1
            n_seen += len(chunk)
            for k in totals:
                totals[k] += stats[k]
            if max_steps is not None and steps >= max_steps:
                break
        history.loss.append(totals["loss"] / n_batches)
        history.mlm_loss.append(totals["mlm_loss"] / n_batches)
        history.nsp_loss.append(totals["nsp_loss"] / n_batches)
        history.nsp_accuracy.append(totals["nsp_correct"] / n_seen)
        if log:
            log(f"pretrain epoch {epoch}: loss {history.loss[-1]:.4f} "
                f"(mlm {history.mlm_loss[-1]:.4f}, nsp {history.nsp_loss[-1]:.4f})")
        if max_steps is not None and steps >= max_steps:
            break
    history.steps = steps
    return params, history


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"ABSAPAIR"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params, config: EncoderConfig, meta=None):
    """Write a versioned container: JSON header + float32 row-major arrays."""
    names = sorted(params)
    tensors = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        blobs.append(arr.tobytes(order="C"))
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = json.dumps(
        {"version": CHECKPOINT_VERSION, "config": config.to_json(), "meta": meta or {}, "tensors": tensors},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, dtype=np.float32, expected_shapes=None):
    """Read a checkpoint; returns ``(config, params, meta)``.

    Encoder arrays are checked against the shapes implied by the stored
    config; `expected_shapes` adds checks for any extra arrays.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<IQ", data, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    pos += struct.calcsize("<IQ")
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    if header.get("version") != version:
        raise CheckpointError(f"{path}: header version disagrees with file version")
    pos += hlen
    config = EncoderConfig.from_json(header["config"])
    shapes = dict(param_shapes(config))
    shapes.update(expected_shapes or {})
    params = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        name = t["name"]
        if name in shapes and tuple(shapes[name]) != shape:
            raise CheckpointError(f"{path}: {name} has shape {shape}, expected {tuple(shapes[name])}")
        raw = np.frombuffer(data, dtype="<f4", count=int(np.prod(shape, dtype=np.int64)), offset=pos + t["offset"])
        params[name] = raw.reshape(shape).astype(dtype)
    missing = [n for n in param_shapes(config) if n not in params]
    if missing:
        raise CheckpointError(f"{path}: missing arrays {missing[:5]}")
    return config, params, header["meta"]
