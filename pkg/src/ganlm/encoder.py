"""Small pre-norm transformer encoder with [CLS] pooling and MLM pretraining.

Parameter layout, in declaration order (this is also the checkpoint order)::

    tok_emb            (vocab_size, d)
    pos_emb            (max_len, d)
    layers.{i}.ln1.gain / ln1.bias             (d,)
    layers.{i}.attn.{wq,wk,wv,wo}              (d, d)
    layers.{i}.attn.{bq,bk,bv,bo}              (d,)
    layers.{i}.ln2.gain / ln2.bias             (d,)
    layers.{i}.ffn.w1 (d, f)  ffn.b1 (f,)  ffn.w2 (f, d)  ffn.b2 (d,)
    final_ln.gain / final_ln.bias              (d,)

so the parameter count is
``vocab_size*d + max_len*d + n_layers*(4d^2 + 2df + 9d + f) + 2d``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import CLS_ID, MASK_ID, PAD_ID, RESERVED, EncodedBatch, Review, Vocab, encode_reviews
from .errors import ConfigError, DimensionError, FormatError
from .optim import AdamW
from .rng import Rng
from .tensor import Tensor

INIT_STD = 0.02
_NEG = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    model_dim: int = 128
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int | None = None
    max_len: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.model_dim)
        for name in ("vocab_size", "model_dim", "n_layers", "n_heads", "ffn_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"encoder {name} must be >= 1")
        if self.model_dim % self.n_heads:
            raise ConfigError(f"model_dim {self.model_dim} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("encoder dropout must lie in [0, 1)")

    def n_params(self) -> int:
        d, f = self.model_dim, self.ffn_dim
        return self.vocab_size * d + self.max_len * d + self.n_layers * (4 * d * d + 2 * d * f + 9 * d + f) + 2 * d


def _param_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = cfg.model_dim, cfg.ffn_dim
    shapes = [("tok_emb", (cfg.vocab_size, d)), ("pos_emb", (cfg.max_len, d))]
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes += [(p + "ln1.gain", (d,)), (p + "ln1.bias", (d,))]
        for w in "qkvo":
            shapes += [(p + f"attn.w{w}", (d, d)), (p + f"attn.b{w}", (d,))]
        shapes += [(p + "ln2.gain", (d,)), (p + "ln2.bias", (d,)),
                   (p + "ffn.w1", (d, f)), (p + "ffn.b1", (f,)), (p + "ffn.w2", (f, d)), (p + "ffn.b2", (d,))]
    shapes += [("final_ln.gain", (d,)), ("final_ln.bias", (d,))]
    return shapes


class Encoder:
    def __init__(self, config: EncoderConfig, params: dict[str, Tensor]):
        expected = _param_shapes(config)
        if [n for n, _ in expected] != list(params):
            raise FormatError("encoder parameters do not match the configured layout")
        for name, shape in expected:
            if params[name].shape != shape:
                raise DimensionError(f"encoder parameter {name} has shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: EncoderConfig, rng: Rng) -> Encoder:
        params = {}
        for name, shape in _param_shapes(config):
            if name.endswith(".gain"):
                data = np.ones(shape)
            elif len(shape) == 1:
                data = np.zeros(shape)
            else:
                data = rng.truncated_normal(shape, INIT_STD)
            params[name] = Tensor(data, requires_grad=True)
        return cls(config, params)

    def copy(self) -> Encoder:
        return Encoder(self.config, {n: Tensor(p.data.copy(), requires_grad=True) for n, p in self.params.items()})

    def hidden_states(self, token_ids: np.ndarray, attention_mask: np.ndarray,
                      train: bool = False, rng: Rng | None = None) -> Tensor:
        cfg, P = self.config, self.params
        b, L = token_ids.shape
        if L > cfg.max_len:
            raise DimensionError(f"sequence length {L} exceeds encoder max_len {cfg.max_len}")
        if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= cfg.vocab_size):
            raise IndexError(f"token id {int(token_ids.max())} out of range for vocab_size {cfg.vocab_size}")
        d, H = cfg.model_dim, cfg.n_heads
        dh = d // H
        rate = cfg.dropout
        x = T.embedding(P["tok_emb"], token_ids) + P["pos_emb"][:L]
        x = T.dropout(x, rate, rng, train)
        bias = Tensor(np.where(attention_mask, 0.0, _NEG)[:, None, None, :])
        inv_sqrt = 1.0 / math.sqrt(dh)

        def heads(t: Tensor) -> Tensor:
            return T.transpose(T.reshape(t, (b, L, H, dh)), (0, 2, 1, 3))

        for i in range(cfg.n_layers):
            p = f"layers.{i}."
            h = T.layer_norm(x, P[p + "ln1.gain"], P[p + "ln1.bias"])
            q = heads(T.linear(h, P[p + "attn.wq"], P[p + "attn.bq"]))
            k = heads(T.linear(h, P[p + "attn.wk"], P[p + "attn.bk"]))
            v = heads(T.linear(h, P[p + "attn.wv"], P[p + "attn.bv"]))
            scores = T.scale(q @ T.transpose(k, (0, 1, 3, 2)), inv_sqrt) + bias
            ctx = T.softmax(scores, axis=-1) @ v
            ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, L, d))
            x = x + T.dropout(T.linear(ctx, P[p + "attn.wo"], P[p + "attn.bo"]), rate, rng, train)
            h = T.layer_norm(x, P[p + "ln2.gain"], P[p + "ln2.bias"])
            h = T.linear(T.gelu(T.linear(h, P[p + "ffn.w1"], P[p + "ffn.b1"])), P[p + "ffn.w2"], P[p + "ffn.b2"])
            x = x + T.dropout(h, rate, rng, train)
        return T.layer_norm(x, P["final_ln.gain"], P["final_ln.bias"])

    def __call__(self, batch: EncodedBatch, train: bool = False, rng: Rng | None = None) -> Tensor:
        return encode_batch(batch, self, "train" if train else "eval", rng)


def encode_batch(batch: EncodedBatch, encoder: Encoder, mode: str = "eval", rng: Rng | None = None) -> Tensor:
    """Pooled sentence embeddings, shape (batch, d): final hidden state at [CLS]."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    hidden = encoder.hidden_states(batch.token_ids, batch.attention_mask, mode == "train", rng)
    return hidden[:, 0, :]


def embed_reviews(encoder: Encoder, reviews: Sequence[Review], vocab: Vocab, batch_size: int = 64) -> np.ndarray:
    if len(vocab) != encoder.config.vocab_size:
        raise DimensionError(f"vocab has {len(vocab)} entries but the encoder expects {encoder.config.vocab_size}")
    out = np.empty((len(reviews), encoder.config.model_dim))
    with T.no_grad():
        for start in range(0, len(reviews), batch_size):
            chunk = reviews[start:start + batch_size]
            enc = encode_reviews(chunk, vocab, encoder.config.max_len, classes=_labels_of(chunk))
            out[start:start + len(chunk)] = encode_batch(enc, encoder).data
    return out


def _labels_of(reviews: Sequence[Review]) -> list[str]:
    return sorted({r.label for r in reviews if r.label is not None})


# ------------------------------------------------------------------------- MLM


def mask_tokens(batch: EncodedBatch, rng: Rng, mask_rate: float = 0.15,
                vocab_size: int | None = None) -> tuple[EncodedBatch, np.ndarray]:
    """BERT-style corruption of non-[PAD], non-[CLS] positions.

    Selected positions become [MASK] (80%), a random non-reserved token (10%)
    or stay unchanged (10%).  Targets hold the original id at selected
    positions and -1 elsewhere.
    """
    if len(batch) == 0:
        raise ConfigError("mask_tokens needs a non-empty batch")
    ids = batch.token_ids
    eligible = batch.attention_mask & (ids != CLS_ID) & (ids != PAD_ID)
    selected = eligible & (rng.uniform(ids.shape) < mask_rate)
    action = rng.uniform(ids.shape)
    if vocab_size is None:
        vocab_size = int(ids.max()) + 1
    n_normal = max(vocab_size - len(RESERVED), 1)
    random_ids = len(RESERVED) + rng.integers(0, n_normal, size=ids.shape)
    corrupted = ids.copy()
    corrupted[selected & (action < 0.8)] = MASK_ID
    swap = selected & (action >= 0.8) & (action < 0.9)
    corrupted[swap] = random_ids[swap]
    targets = np.where(selected, ids, -1)
    return EncodedBatch(corrupted, batch.attention_mask.copy(), batch.labels.copy(), batch.labeled_mask.copy()), targets


def mlm_loss(encoder: Encoder, mlm_bias: Tensor, corrupted: EncodedBatch, targets: np.ndarray,
             train: bool = False, rng: Rng | None = None) -> Tensor:
    """Mean cross-entropy at masked positions; output projection tied to tok_emb."""
    hidden = encoder.hidden_states(corrupted.token_ids, corrupted.attention_mask, train, rng)
    rows, cols = np.nonzero(targets >= 0)
    picked = hidden[rows, cols]
    logits = T.linear(picked, T.transpose(encoder.params["tok_emb"], (1, 0)), mlm_bias)
    return T.cross_entropy_from_logits(logits, targets[rows, cols])


@dataclass
class PretrainResult:
    encoder: Encoder
    mlm_bias: Tensor
    history: list[float]


def mlm_pretrain(corpus: Sequence[Review], vocab: Vocab, config: EncoderConfig, epochs: int, rng: Rng,
                 lr: float = 1e-3, batch_size: int = 16, mask_rate: float = 0.15,
                 weight_decay: float = 0.01, encoder: Encoder | None = None) -> PretrainResult:
    """Masked-language-model training; returns the encoder and per-epoch mean loss."""
    if not corpus:
        raise ConfigError("mlm_pretrain needs a non-empty corpus")
    if config.vocab_size != len(vocab):
        raise DimensionError(f"encoder vocab_size {config.vocab_size} != vocab size {len(vocab)}")
    if encoder is None:
        encoder = Encoder.init(config, rng.fork("init"))
    mlm_bias = Tensor(np.zeros(config.vocab_size), requires_grad=True)
    params = dict(encoder.params)
    params["mlm_bias"] = mlm_bias
    opt = AdamW(params, lr=lr, weight_decay=weight_decay)
    data = encode_reviews(corpus, vocab, config.max_len, classes=_labels_of(corpus))
    order_rng, mask_rng, drop_rng = rng.fork("order"), rng.fork("mask"), rng.fork("dropout")
    history: list[float] = []
    for _ in range(epochs):
        order = order_rng.permutation(len(corpus))
        total, n = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = data.select(order[start:start + batch_size])
            corrupted, targets = mask_tokens(batch, mask_rng, mask_rate, config.vocab_size)
            if not (targets >= 0).any():
                continue
            opt.zero_grad()
            loss = mlm_loss(encoder, mlm_bias, corrupted, targets, train=True, rng=drop_rng)
            T.backward(loss)
            opt.step()
            total += loss.item()
            n += 1
        history.append(total / max(n, 1))
    return PretrainResult(encoder, mlm_bias, history)


def masked_perplexity(encoder: Encoder, reviews: Sequence[Review], vocab: Vocab, seed: int = 0,
                      mlm_bias: Tensor | None = None, mask_rate: float = 0.15, batch_size: int = 64) -> float:
    """exp(mean masked-token cross-entropy) with a masking pattern fixed by ``seed``."""
    if mlm_bias is None:
        mlm_bias = Tensor(np.zeros(encoder.config.vocab_size))
    data = encode_reviews(reviews, vocab, encoder.config.max_len, classes=_labels_of(reviews))
    rng = Rng(seed).fork("perplexity")
    total, count = 0.0, 0
    with T.no_grad():
        for start in range(0, len(reviews), batch_size):
            batch = data.select(np.arange(start, min(start + batch_size, len(reviews))))
            corrupted, targets = mask_tokens(batch, rng, mask_rate, encoder.config.vocab_size)
            n = int((targets >= 0).sum())
            if n:
                total += mlm_loss(encoder, mlm_bias, corrupted, targets).item() * n
                count += n
    return math.exp(total / count) if count else float("nan")


# ------------------------------------------------------------------ checkpoint

MAGIC = b"GANLMCKP"
VERSION = 1


def save_checkpoint(path, components: dict[str, tuple[dict, dict[str, Tensor]]], meta: dict | None = None) -> None:
    """Write named parameter sets in one file.

    Layout: 8-byte magic ``GANLMCKP``, 1 version byte, uint32 little-endian
    manifest length, UTF-8 JSON manifest (config block: per-component config
    plus parameter names and shapes in declaration order, and free-form
    ``meta``), then every tensor's values as little-endian float64 in
    manifest order.
    """
    manifest = {"meta": meta or {}, "components": {}}
    blobs = []
    for cname, (config, params) in components.items():
        manifest["components"][cname] = {
            "config": config,
            "params": [[n, list(p.shape)] for n, p in params.items()],
        }
        blobs.extend(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in params.values())
    head = json.dumps(manifest).encode("utf-8")  # key order must match blob order
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    """Return ``(manifest, {component: {param name: array}})``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    if raw[8] != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {raw[8]}")
    (n,) = struct.unpack("<I", raw[9:13])
    manifest = json.loads(raw[13:13 + n].decode("utf-8"))
    offset = 13 + n
    out: dict[str, dict[str, np.ndarray]] = {}
    for cname, comp in manifest["components"].items():
        params = {}
        for pname, shape in comp["params"]:
            count = int(np.prod(shape, dtype=np.int64))
            end = offset + 8 * count
            if end > len(raw):
                raise FormatError(f"{path}: truncated while reading {cname}.{pname}")
            params[pname] = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
            offset = end
        out[cname] = params
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return manifest, out


def encoder_component(encoder: Encoder) -> tuple[dict, dict[str, Tensor]]:
    return asdict(encoder.config), encoder.params


def encoder_from_component(config: dict, arrays: dict[str, np.ndarray]) -> Encoder:
    cfg = EncoderConfig(**config)
    return Encoder(cfg, {n: Tensor(a.copy(), requires_grad=True) for n, a in arrays.items()})
