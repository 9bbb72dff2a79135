"""Semi-supervised GAN head over sentence embeddings.

The discriminator scores ``k + 1`` classes: the ``k`` task classes and, at
index ``k``, "generated".  The generator maps Gaussian noise to fake
embeddings.  Losses::

    L_D = L_sup + L_real + L_fake
      L_sup  = masked mean of -log p(y | x) under the full (k+1)-way softmax
      L_real = -mean log(1 - p(k | x_real))
      L_fake = -mean log p(k | x_fake)
    L_G = ||mean f(x_real) - mean f(x_fake)||^2 - mean log(1 - p(k | x_fake))

``log(1 - p(k|x))`` is evaluated as ``logsumexp(first k logits) -
logsumexp(all logits)``, which stays finite for any finite logits.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import DEFAULT_CLASSES, DataSplit, EmbeddingRecord, EncodedBatch, Review, Vocab, encode_reviews, label_index
from .encoder import Encoder, encode_batch
from .errors import ConfigError, DimensionError, DivergenceError
from .metrics import MetricsReport, compute_metrics
from .optim import AdamW
from .rng import Rng
from .tensor import Tensor

log = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
HEAD_DROPOUT = 0.1


def _linear_init(rng: Rng, fan_in: int, fan_out: int) -> tuple[Tensor, Tensor]:
    bound = 1.0 / math.sqrt(fan_in)
    w = (rng.uniform((fan_in, fan_out)) * 2.0 - 1.0) * bound
    b = (rng.uniform(fan_out) * 2.0 - 1.0) * bound
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


class Generator:
    """noise (noise_dim) -> hidden, leaky ReLU, dropout -> embedding (out_dim)."""

    def __init__(self, params: dict[str, Tensor], dropout: float = HEAD_DROPOUT):
        self.params = params
        self.dropout = dropout
        self.noise_dim, self.hidden_dim = params["w1"].shape
        self.out_dim = params["w2"].shape[1]

    @classmethod
    def init(cls, rng: Rng, noise_dim: int, hidden_dim: int, out_dim: int, zero: bool = False,
             dropout: float = HEAD_DROPOUT) -> Generator:
        w1, b1 = _linear_init(rng, noise_dim, hidden_dim)
        w2, b2 = _linear_init(rng, hidden_dim, out_dim)
        params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
        if zero:
            for p in params.values():
                p.data[...] = 0.0
        return cls(params, dropout)

    def config(self) -> dict:
        return {"noise_dim": self.noise_dim, "hidden_dim": self.hidden_dim, "out_dim": self.out_dim,
                "dropout": self.dropout}

    def __call__(self, noise: Tensor, train: bool = False, rng: Rng | None = None) -> Tensor:
        P = self.params
        h = T.leaky_relu(T.linear(noise, P["w1"], P["b1"]), LEAKY_SLOPE)
        h = T.dropout(h, self.dropout, rng, train)
        return T.linear(h, P["w2"], P["b2"])


class Discriminator:
    """embedding (in_dim) -> hidden, leaky ReLU, dropout = features -> n_out logits."""

    def __init__(self, params: dict[str, Tensor], dropout: float = HEAD_DROPOUT):
        self.params = params
        self.dropout = dropout
        self.in_dim, self.hidden_dim = params["w1"].shape
        self.n_out = params["w2"].shape[1]

    @classmethod
    def init(cls, rng: Rng, in_dim: int, hidden_dim: int, n_out: int, dropout: float = HEAD_DROPOUT) -> Discriminator:
        w1, b1 = _linear_init(rng, in_dim, hidden_dim)
        w2, b2 = _linear_init(rng, hidden_dim, n_out)
        return cls({"w1": w1, "b1": b1, "w2": w2, "b2": b2}, dropout)

    def config(self) -> dict:
        return {"in_dim": self.in_dim, "hidden_dim": self.hidden_dim, "n_out": self.n_out, "dropout": self.dropout}

    def __call__(self, emb: Tensor, train: bool = False, rng: Rng | None = None) -> tuple[Tensor, Tensor]:
        return discriminate(emb, self, train, rng)


def generate_fake(rng: Rng, n: int, gen: Generator, mode: str = "train", dropout_rng: Rng | None = None) -> Tensor:
    """G(z) for ``n`` standard-normal noise vectors drawn from ``rng``."""
    if n < 1:
        raise ConfigError("generate_fake needs n >= 1")
    noise = Tensor(rng.normal((n, gen.noise_dim)))
    return gen(noise, mode == "train", dropout_rng if dropout_rng is not None else rng)


def discriminate(emb: Tensor, disc: Discriminator, train: bool = False,
                 rng: Rng | None = None) -> tuple[Tensor, Tensor]:
    if emb.ndim != 2 or emb.shape[1] != disc.in_dim:
        raise DimensionError(f"discriminator expects embeddings of width {disc.in_dim}, got shape {emb.shape}")
    P = disc.params
    h = T.leaky_relu(T.linear(emb, P["w1"], P["b1"]), LEAKY_SLOPE)
    features = T.dropout(h, disc.dropout, rng, train)
    return T.linear(features, P["w2"], P["b2"]), features


# ---------------------------------------------------------------------- losses


@dataclass
class LossBreakdown:
    d_supervised: float = 0.0
    d_unsup_real: float = 0.0
    d_unsup_fake: float = 0.0
    g_feature_matching: float = 0.0
    g_unsup: float = 0.0

    def values(self) -> list[float]:
        return [self.d_supervised, self.d_unsup_real, self.d_unsup_fake, self.g_feature_matching, self.g_unsup]

    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.values())


def _log_not_fake(logits: Tensor) -> Tensor:
    """Row-wise log(1 - p(fake)) for logits whose last column is the fake class."""
    k = logits.shape[1] - 1
    return T.logsumexp(logits[:, :k], axis=1) - T.logsumexp(logits, axis=1)


def discriminator_loss(logits_real: Tensor, labels, labeled_mask, logits_fake: Tensor) -> tuple[Tensor, LossBreakdown]:
    k = logits_real.shape[1] - 1
    labels = np.asarray(labels)
    labeled_mask = np.asarray(labeled_mask, dtype=bool)
    sup = T.cross_entropy_from_logits(logits_real, np.where(labeled_mask, labels, 0), labeled_mask)
    real = -T.mean(_log_not_fake(logits_real))
    fake = -T.mean(T.log_softmax(logits_fake, axis=1)[:, k])
    total = sup + real + fake
    return total, LossBreakdown(d_supervised=sup.item(), d_unsup_real=real.item(), d_unsup_fake=fake.item())


def generator_loss(features_real: Tensor, features_fake: Tensor, logits_fake: Tensor) -> tuple[Tensor, LossBreakdown]:
    if features_real.shape[1] != features_fake.shape[1]:
        raise DimensionError(f"feature widths differ: {features_real.shape} vs {features_fake.shape}")
    feat = T.l2_norm_sq(T.mean(features_real, axis=0) - T.mean(features_fake, axis=0))
    unsup = -T.mean(_log_not_fake(logits_fake))
    return feat + unsup, LossBreakdown(g_feature_matching=feat.item(), g_unsup=unsup.item())


# ---------------------------------------------------------------------- config


@dataclass
class SsganConfig:
    batch_size: int = 16
    lr_d: float = 5e-5
    lr_g: float = 5e-5
    epochs: int = 7
    noise_dim: int = 100
    k: int = 2
    seed: int = 0
    hidden_dim: int | None = None  # defaults to the embedding width
    weight_decay: float = 0.01
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.lr_d > 0 and self.lr_g > 0):
            raise ConfigError("learning rates must be > 0")
        if self.k < 2:
            raise ConfigError("k must be >= 2")
        if self.noise_dim < 1:
            raise ConfigError("noise_dim must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


# ---------------------------------------------------------------------- inputs


class TextSource:
    """Reviews embedded on the fly by a trainable encoder."""

    def __init__(self, reviews: Sequence[Review], vocab: Vocab, encoder: Encoder, classes: Sequence[str]):
        if len(vocab) != encoder.config.vocab_size:
            raise DimensionError(f"vocab has {len(vocab)} entries but the encoder expects {encoder.config.vocab_size}")
        self.encoder = encoder
        self.data = encode_reviews(reviews, vocab, encoder.config.max_len, classes)

    def __len__(self) -> int:
        return len(self.data)

    @property
    def labels(self) -> np.ndarray:
        return self.data.labels

    def batch(self, rows) -> EncodedBatch:
        return self.data.select(rows)

    def embed(self, rows, train: bool, rng: Rng | None) -> Tensor:
        return encode_batch(self.data.select(rows), self.encoder, "train" if train else "eval", rng)


class EmbeddingSource:
    """Precomputed sentence embeddings; nothing upstream is trainable."""

    encoder = None

    def __init__(self, records: Sequence[EmbeddingRecord], classes: Sequence[str]):
        self.vectors = np.stack([r.vector for r in records]) if records else np.zeros((0, 0))
        self._labels = np.array([label_index(r.label, classes) for r in records], dtype=np.int64)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    def batch(self, rows) -> EncodedBatch:
        rows = np.asarray(rows)
        labels = self._labels[rows]
        empty = np.zeros((len(rows), 0))
        return EncodedBatch(empty.astype(np.int64), empty.astype(bool), labels, labels >= 0)

    def embed(self, rows, train: bool, rng: Rng | None) -> Tensor:
        return Tensor(self.vectors[np.asarray(rows)])


def _concat_sources(a, b):
    if isinstance(a, TextSource):
        out = object.__new__(TextSource)
        out.encoder = a.encoder
        out.data = EncodedBatch(*(np.concatenate([x, y]) for x, y in zip(
            (a.data.token_ids, a.data.attention_mask, a.data.labels, a.data.labeled_mask),
            (b.data.token_ids, b.data.attention_mask, b.data.labels, b.data.labeled_mask))))
        return out
    out = object.__new__(EmbeddingSource)
    out.vectors = np.concatenate([a.vectors, b.vectors])
    out._labels = np.concatenate([a._labels, b._labels])
    return out


# ----------------------------------------------------------------------- model


@dataclass
class GanModel:
    """Everything training produces; ``encoder`` is None in embedding mode."""

    encoder: Encoder | None
    discriminator: Discriminator
    generator: Generator | None
    classes: tuple[str, ...]
    opt_d: AdamW | None = None
    opt_g: AdamW | None = None

    @property
    def k(self) -> int:
        return len(self.classes)

    def d_params(self, include_encoder: bool = True) -> dict[str, Tensor]:
        params = {f"disc.{n}": p for n, p in self.discriminator.params.items()}
        if include_encoder and self.encoder is not None:
            params.update({f"enc.{n}": p for n, p in self.encoder.params.items()})
        return params


def build_model(config: SsganConfig, classes: Sequence[str], rng: Rng, encoder: Encoder | None = None,
                embed_dim: int | None = None, with_generator: bool = True) -> GanModel:
    if len(classes) != config.k:
        raise ConfigError(f"config.k={config.k} but {len(classes)} classes were given")
    d = encoder.config.model_dim if encoder is not None else embed_dim
    if d is None:
        raise ConfigError("need an encoder or an embedding width")
    hidden = config.hidden_dim or d
    n_out = config.k + 1 if with_generator else config.k
    disc = Discriminator.init(rng.fork("disc-init"), d, hidden, n_out)
    gen = Generator.init(rng.fork("gen-init"), config.noise_dim, hidden, d) if with_generator else None
    model = GanModel(encoder, disc, gen, tuple(classes))
    model.opt_d = AdamW(model.d_params(not config.freeze_encoder), lr=config.lr_d, weight_decay=config.weight_decay)
    if gen is not None:
        model.opt_g = AdamW(gen.params, lr=config.lr_g, weight_decay=config.weight_decay)
    return model


# -------------------------------------------------------------------- training


@dataclass
class StepRngs:
    noise: Rng
    dropout: Rng

    @classmethod
    def from_seed(cls, rng: Rng) -> StepRngs:
        return cls(rng.fork("noise"), rng.fork("dropout"))


def train_step(model: GanModel, source, rows, rngs: StepRngs) -> LossBreakdown:
    """One discriminator(+encoder) update followed by one generator update."""
    batch = source.batch(rows)
    n = len(batch)
    # discriminator and encoder
    real = source.embed(rows, True, rngs.dropout)
    noise = Tensor(rngs.noise.normal((n, model.generator.noise_dim)))
    with T.no_grad():
        fake = model.generator(noise, True, rngs.dropout)
    logits, _ = discriminate(T.concat([real, fake], axis=0), model.discriminator, True, rngs.dropout)
    d_loss, parts = discriminator_loss(logits[:n], batch.labels, batch.labeled_mask, logits[n:])
    if not parts.finite():
        raise DivergenceError(f"non-finite discriminator loss {parts}", parts)
    model.opt_d.zero_grad()
    T.backward(d_loss)
    model.opt_d.step()
    # generator, against the updated discriminator and encoder (real side is a constant)
    with T.no_grad():
        real_const = source.embed(rows, True, rngs.dropout) if source.encoder is not None else real.detach()
    fake = model.generator(noise, True, rngs.dropout)
    logits, feats = discriminate(T.concat([real_const, fake], axis=0), model.discriminator, True, rngs.dropout)
    g_loss, g_parts = generator_loss(feats[:n], feats[n:], logits[n:])
    parts.g_feature_matching = g_parts.g_feature_matching
    parts.g_unsup = g_parts.g_unsup
    if not parts.finite():
        raise DivergenceError(f"non-finite generator loss {parts}", parts)
    model.opt_g.zero_grad()
    T.backward(g_loss)
    model.opt_g.step()
    return parts


def supervised_step(model: GanModel, source, rows, rngs: StepRngs) -> LossBreakdown:
    batch = source.batch(rows)
    emb = source.embed(rows, True, rngs.dropout)
    logits, _ = discriminate(emb, model.discriminator, True, rngs.dropout)
    loss = T.cross_entropy_from_logits(logits, np.where(batch.labeled_mask, batch.labels, 0), batch.labeled_mask)
    parts = LossBreakdown(d_supervised=loss.item())
    if not parts.finite():
        raise DivergenceError(f"non-finite supervised loss {parts}", parts)
    model.opt_d.zero_grad()
    T.backward(loss)
    model.opt_d.step()
    return parts


@dataclass
class EpochRecord:
    epoch: int
    losses: LossBreakdown
    metrics: MetricsReport


@dataclass
class TrainLog:
    model_name: str = "GAN-LM"
    n_labeled: int = 0
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def accuracies(self) -> list[float]:
        return [r.metrics.accuracy for r in self.records]


def make_sources(split: DataSplit | Sequence, classes: Sequence[str], vocab: Vocab | None = None,
                 encoder: Encoder | None = None):
    """(train_source, test_source, n_labeled) from reviews or embedding records."""
    labeled, unlabeled, test = (split.labeled, split.unlabeled, split.test) if isinstance(split, DataSplit) else split
    if any(r.label is None for r in labeled):
        raise ConfigError("labeled part contains records without labels")
    unlabeled = [_erase(r) for r in unlabeled]
    if encoder is not None:
        mk = lambda rs: TextSource(rs, vocab, encoder, classes)  # noqa: E731
    else:
        mk = lambda rs: EmbeddingSource(rs, classes)  # noqa: E731
    train_src = _concat_sources(mk(list(labeled)), mk(unlabeled)) if unlabeled else mk(list(labeled))
    return train_src, mk(list(test)), len(labeled)


def _erase(r):
    if isinstance(r, Review):
        return Review(r.id, r.text, None)
    return EmbeddingRecord(r.id, None, r.vector)


def train(split, config: SsganConfig, classes: Sequence[str] = DEFAULT_CLASSES, vocab: Vocab | None = None,
          encoder: Encoder | None = None, rng: Rng | None = None, positive_class: str | None = None,
          model_name: str = "GAN-LM", supervised: bool = False) -> tuple[GanModel, TrainLog]:
    """Train on ``split`` and evaluate on its test part after every epoch.

    ``split`` is a :class:`DataSplit` of reviews (needs ``vocab`` and
    ``encoder``) or a (labeled, unlabeled, test) triple of embedding records
    (encoder bypassed).  With ``supervised=True`` the head is a plain k-way
    classifier trained on labeled rows only and no generator is built.

    On divergence the raised :class:`DivergenceError` carries the partial
    :class:`TrainLog` in ``.log``.
    """
    rng = rng if rng is not None else Rng(config.seed)
    classes = tuple(classes)
    positive_class = positive_class or classes[0]
    train_src, test_src, n_labeled = make_sources(split, classes, vocab, encoder)
    if supervised:
        rows_pool = np.flatnonzero(train_src.labels >= 0)
    else:
        rows_pool = np.arange(len(train_src))
    embed_dim = train_src.vectors.shape[1] if encoder is None else None
    model = build_model(config, classes, rng, encoder, embed_dim, with_generator=not supervised)
    rngs = StepRngs.from_seed(rng.fork("train"))
    order_rng = rng.fork("order")
    step = supervised_step if supervised else train_step
    log_ = TrainLog(model_name, n_labeled)
    for epoch in range(1, config.epochs + 1):
        order = rows_pool[order_rng.permutation(len(rows_pool))]
        sums = np.zeros(5)
        steps = 0
        for start in range(0, len(order), config.batch_size):
            try:
                parts = step(model, train_src, order[start:start + config.batch_size], rngs)
            except DivergenceError as exc:
                exc.log = log_
                raise
            sums += parts.values()
            steps += 1
        losses = LossBreakdown(*(sums / max(steps, 1)))
        metrics = evaluate_source(model, test_src, positive_class)
        log_.records.append(EpochRecord(epoch, losses, metrics))
        log.info("epoch %d: d_sup=%.4f acc=%.4f", epoch, losses.d_supervised, metrics.accuracy)
    return model, log_


# ------------------------------------------------------------------- inference


def predict_from_logits(logits: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Argmax over the first ``k`` logits (lowest index wins ties) and their softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < k:
        raise DimensionError(f"need at least {k} logits per row, got shape {logits.shape}")
    task = logits[:, :k]
    probs = T._softmax_np(task, axis=1)
    return np.argmax(task, axis=1), probs


def predict_embeddings(model: GanModel, emb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with T.no_grad():
        logits, _ = discriminate(Tensor(emb), model.discriminator)
    return predict_from_logits(logits.data, model.k)


def predict_source(model: GanModel, source, batch_size: int = 128) -> tuple[np.ndarray, np.ndarray]:
    preds, probs = [], []
    with T.no_grad():
        for start in range(0, len(source), batch_size):
            rows = np.arange(start, min(start + batch_size, len(source)))
            p, pr = predict_embeddings(model, source.embed(rows, False, None).data)
            preds.append(p)
            probs.append(pr)
    if not preds:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.k))
    return np.concatenate(preds), np.concatenate(probs)


def predict(model: GanModel, inputs, vocab: Vocab | None = None) -> tuple[list[str], np.ndarray]:
    """Class names and k-way probabilities for texts, reviews or an embedding matrix.

    Only the encoder and discriminator are consulted.
    """
    if isinstance(inputs, np.ndarray):
        if model.encoder is not None:
            raise DimensionError("this model embeds text; pass texts, not vectors")
        idx, probs = predict_embeddings(model, inputs)
    else:
        if model.encoder is None or vocab is None:
            raise ConfigError("text prediction needs a model with an encoder and a vocab")
        reviews = [r if isinstance(r, Review) else Review(str(i), r) for i, r in enumerate(inputs)]
        reviews = [Review(r.id, r.text, None) for r in reviews]
        idx, probs = predict_source(model, TextSource(reviews, vocab, model.encoder, model.classes))
    return [model.classes[i] for i in idx], probs


def evaluate_source(model: GanModel, source, positive_class: str) -> MetricsReport:
    idx, _ = predict_source(model, source)
    gold = [model.classes[i] for i in source.labels]
    return compute_metrics([model.classes[i] for i in idx], gold, positive_class, classes=model.classes)


# ----------------------------------------------------------------- checkpoints


def model_components(model: GanModel, include_generator: bool = True) -> dict:
    from .encoder import encoder_component

    comps = {}
    if model.encoder is not None:
        comps["encoder"] = encoder_component(model.encoder)
    comps["discriminator"] = (model.discriminator.config(), model.discriminator.params)
    if include_generator and model.generator is not None:
        comps["generator"] = (model.generator.config(), model.generator.params)
    return comps


def save_model(model: GanModel, path, include_generator: bool = True, meta: dict | None = None) -> None:
    from .encoder import save_checkpoint

    meta = dict(meta or {})
    meta["classes"] = list(model.classes)
    save_checkpoint(path, model_components(model, include_generator), meta)


def load_model(path) -> GanModel:
    from .encoder import encoder_from_component, load_checkpoint

    manifest, arrays = load_checkpoint(path)
    comps = manifest["components"]
    if "discriminator" not in comps:
        raise DimensionError(f"{path}: checkpoint has no discriminator component")
    encoder = encoder_from_component(comps["encoder"]["config"], arrays["encoder"]) if "encoder" in comps else None
    dcfg = comps["discriminator"]["config"]
    disc = Discriminator({n: Tensor(a.copy(), requires_grad=True) for n, a in arrays["discriminator"].items()},
                         dcfg.get("dropout", HEAD_DROPOUT))
    gen = None
    if "generator" in comps:
        gcfg = comps["generator"]["config"]
        gen = Generator({n: Tensor(a.copy(), requires_grad=True) for n, a in arrays["generator"].items()},
                        gcfg.get("dropout", HEAD_DROPOUT))
    classes = tuple(manifest["meta"].get("classes", DEFAULT_CLASSES))
    if encoder is not None and disc.in_dim != encoder.config.model_dim:
        raise DimensionError(f"discriminator width {disc.in_dim} != encoder width {encoder.config.model_dim}")
    return GanModel(encoder, disc, gen, classes)


def config_dict(config: SsganConfig) -> dict:
    return asdict(config)
