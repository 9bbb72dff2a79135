"""Corpus files, vocabulary, encoding, data splits and embedding files.

Corpus file format (JSON Lines, UTF-8): one JSON object per line with string
fields ``id`` and ``text`` and an optional string ``label``.  Blank lines are
ignored.  Example::

    {"id": "r1", "text": "খাবার ভালো ছিল", "label": "authentic"}
    {"id": "r2", "text": "best biryani in town!!!"}

Embedding file format::

    dim=<d>
    <id>\t<label or ->\t<v1> <v2> ... <vd>

with every float written with 17 significant digits.

Vocab file format: one token per line; line ``i`` (0-based) holds id ``i``;
the first four lines are ``[PAD]``, ``[UNK]``, ``[CLS]``, ``[MASK]``.
"""

from __future__ import annotations

import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ConfigError, FormatError, LabelError, ParseError, UniquenessError
from .rng import Rng
from .textnorm import DEFAULT_CONFIG, NormalizerConfig, normalize_text

DEFAULT_CLASSES = ("fake", "authentic")

PAD, UNK, CLS, MASK = "[PAD]", "[UNK]", "[CLS]", "[MASK]"
RESERVED = (PAD, UNK, CLS, MASK)
PAD_ID, UNK_ID, CLS_ID, MASK_ID = 0, 1, 2, 3


@dataclass(frozen=True)
class Review:
    id: str
    text: str
    label: str | None = None


Corpus = list  # list[Review], in file order


# ------------------------------------------------------------------- corpus io


def parse_corpus_lines(lines: Iterable[str], classes: Sequence[str] | None = DEFAULT_CLASSES,
                       cfg: NormalizerConfig = DEFAULT_CONFIG, path=None) -> list[Review]:
    reviews: list[Review] = []
    seen: dict[str, int] = {}
    allowed = None if classes is None else set(classes)
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed record ({exc.msg})", lineno, path) from None
        if not isinstance(obj, dict):
            raise ParseError("record must be a JSON object", lineno, path)
        extra = set(obj) - {"id", "text", "label"}
        if extra:
            raise ParseError(f"unexpected fields {sorted(extra)}", lineno, path)
        rid, text, label = obj.get("id"), obj.get("text"), obj.get("label")
        if not isinstance(rid, str) or not rid or any(c in rid for c in "\t\n\r"):
            raise ParseError("'id' must be a non-empty string without tabs or newlines", lineno, path)
        if not isinstance(text, str):
            raise ParseError("'text' must be a string", lineno, path)
        if label is not None:
            if not isinstance(label, str):
                raise ParseError("'label' must be a string", lineno, path)
            if allowed is not None and label not in allowed:
                raise LabelError(f"unknown label {label!r} (classes: {', '.join(classes)})", lineno, path)
        text = normalize_text(text, cfg)
        if not text:
            raise ParseError(f"text of {rid!r} is empty after normalization", lineno, path)
        if rid in seen:
            raise UniquenessError(f"duplicate id {rid!r} (first seen on line {seen[rid]})", lineno, path)
        seen[rid] = lineno
        reviews.append(Review(rid, text, label))
    return reviews


def load_corpus(path, classes: Sequence[str] | None = DEFAULT_CLASSES,
                cfg: NormalizerConfig = DEFAULT_CONFIG) -> list[Review]:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus_lines(fh, classes, cfg, path=path)


def write_corpus(reviews: Iterable[Review], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reviews:
            obj = {"id": r.id, "text": r.text}
            if r.label is not None:
                obj["label"] = r.label
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# ------------------------------------------------------------------ tokenizing


def tokenize(text: str) -> list[str]:
    """Split on whitespace; each punctuation character is its own token."""
    tokens: list[str] = []
    buf: list[str] = []
    for ch in text:
        if ch.isspace():
            if buf:
                tokens.append("".join(buf))
                buf = []
        elif unicodedata.category(ch).startswith("P"):
            if buf:
                tokens.append("".join(buf))
                buf = []
            tokens.append(ch)
        else:
            buf.append(ch)
    if buf:
        tokens.append("".join(buf))
    return tokens


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != RESERVED:
            raise FormatError(f"vocab must start with {', '.join(RESERVED)}")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise FormatError("vocab contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for t in self.itos:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> Vocab:
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens)


def build_vocab(corpus: Sequence[Review], max_vocab: int = 30000, min_freq: int = 1) -> Vocab:
    """Frequency-ranked vocabulary of at most ``max_vocab`` entries (reserved included).

    Ties in frequency are broken by lexicographic token order.
    """
    if max_vocab < len(RESERVED):
        raise ConfigError(f"max_vocab must be at least {len(RESERVED)}")
    counts = Counter(t for r in corpus for t in tokenize(r.text))
    for t in RESERVED:
        counts.pop(t, None)
    ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(list(RESERVED) + ranked[: max_vocab - len(RESERVED)])


# -------------------------------------------------------------------- encoding


@dataclass
class EncodedBatch:
    token_ids: np.ndarray  # (b, max_len) int64
    attention_mask: np.ndarray  # (b, max_len) bool
    labels: np.ndarray  # (b,) int64, -1 where unlabeled
    labeled_mask: np.ndarray  # (b,) bool

    def __len__(self) -> int:
        return self.token_ids.shape[0]

    def select(self, rows) -> EncodedBatch:
        rows = np.asarray(rows)
        return EncodedBatch(self.token_ids[rows], self.attention_mask[rows], self.labels[rows], self.labeled_mask[rows])

    def unlabeled(self) -> EncodedBatch:
        b = len(self)
        return EncodedBatch(self.token_ids, self.attention_mask, np.full(b, -1, dtype=np.int64), np.zeros(b, dtype=bool))


def label_index(label: str | None, classes: Sequence[str]) -> int:
    if label is None:
        return -1
    try:
        return list(classes).index(label)
    except ValueError:
        raise LabelError(f"unknown label {label!r} (classes: {', '.join(classes)})") from None


def encode_reviews(reviews: Sequence[Review], vocab: Vocab, max_len: int = 64,
                   classes: Sequence[str] = DEFAULT_CLASSES) -> EncodedBatch:
    if max_len < 2:
        raise ConfigError(f"max_len must be >= 2, got {max_len}")
    b = len(reviews)
    ids = np.full((b, max_len), PAD_ID, dtype=np.int64)
    labels = np.empty(b, dtype=np.int64)
    for i, r in enumerate(reviews):
        row = [CLS_ID] + vocab.ids(tokenize(r.text))
        row = row[:max_len]
        ids[i, : len(row)] = row
        labels[i] = label_index(r.label, classes)
    return EncodedBatch(ids, ids != PAD_ID, labels, labels >= 0)


# ---------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    n_labeled: int
    n_unlabeled: int
    n_test: int
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        for name in ("n_labeled", "n_unlabeled", "n_test"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass
class DataSplit:
    labeled: list[Review]
    unlabeled: list[Review]
    test: list[Review]

    def sizes(self) -> tuple[int, int, int]:
        return len(self.labeled), len(self.unlabeled), len(self.test)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for part in ("labeled", "unlabeled", "test"):
            write_corpus(getattr(self, part), directory / f"{part}.jsonl")

    @classmethod
    def load(cls, directory, classes: Sequence[str] | None = DEFAULT_CLASSES) -> DataSplit:
        directory = Path(directory)
        return cls(*(load_corpus(directory / f"{part}.jsonl", classes) for part in ("labeled", "unlabeled", "test")))


def _quota(counts: dict[str, int], n: int) -> dict[str, int]:
    """Largest-remainder allocation of ``n`` draws proportional to ``counts``."""
    total = sum(counts.values())
    if total == 0:
        return {c: 0 for c in counts}
    exact = {c: n * k / total for c, k in counts.items()}
    alloc = {c: math.floor(x) for c, x in exact.items()}
    left = n - sum(alloc.values())
    order = sorted(counts, key=lambda c: (-(exact[c] - alloc[c]), c))
    for c in order[:left]:
        alloc[c] += 1
    return alloc


def make_split(corpus: Sequence[Review], spec: SplitSpec) -> DataSplit:
    """Seeded labeled / unlabeled / test partition with exact sizes.

    Labeled and test parts are drawn from labeled records, stratified by the
    class proportions of the corpus when ``spec.stratified``.  The unlabeled
    part is drawn from everything left and has its labels erased.
    """
    rng = Rng(spec.seed).fork("split")
    order = rng.permutation(len(corpus))
    shuffled = [corpus[i] for i in order]
    labeled_pool = [r for r in shuffled if r.label is not None]
    shortfall: dict[str, int] = {}

    def draw(pool: list[Review], n: int, name: str) -> list[Review]:
        if not spec.stratified:
            if n > len(pool):
                shortfall[name] = n - len(pool)
            return pool[:n]
        by_class: dict[str, list[Review]] = {}
        for r in pool:
            by_class.setdefault(r.label, []).append(r)
        quota = _quota(base_counts, n)
        picked: list[Review] = []
        missing = 0
        for c in sorted(quota):
            avail = by_class.get(c, [])
            missing += max(0, quota[c] - len(avail))
            picked.extend(avail[: quota[c]])
        if missing:
            shortfall[name] = missing
        keep = {r.id for r in picked}
        return [r for r in pool if r.id in keep]

    base_counts = Counter(r.label for r in labeled_pool)
    labeled = draw(labeled_pool, spec.n_labeled, "labeled")
    used = {r.id for r in labeled}
    test = draw([r for r in labeled_pool if r.id not in used], spec.n_test, "test")
    used |= {r.id for r in test}
    rest = [r for r in shuffled if r.id not in used]
    if spec.n_unlabeled > len(rest):
        shortfall["unlabeled"] = spec.n_unlabeled - len(rest)
    if shortfall:
        raise CapacityError(shortfall)
    unlabeled = [replace(r, label=None) for r in rest[: spec.n_unlabeled]]
    return DataSplit(labeled, unlabeled, test)


# ------------------------------------------------------------------- synthetic


@dataclass
class ClassProfile:
    """Token distribution for one synthetic class.

    ``weights`` are unnormalized probabilities over the shared word list;
    with probability ``marker_rate`` each token is instead drawn uniformly
    from this class's exclusive ``markers``.
    """

    name: str
    weights: np.ndarray
    markers: list[str] = field(default_factory=list)
    marker_rate: float = 0.0


def generate_synthetic_corpus(rng: Rng, n_per_class: int, class_profiles: Sequence[ClassProfile],
                              shared_words: Sequence[str], text_len: int = 64,
                              id_prefix: str = "syn") -> list[Review]:
    if len(class_profiles) < 2:
        raise ConfigError("need at least two class profiles")
    probs = []
    for prof in class_profiles:
        w = np.asarray(prof.weights, dtype=np.float64)
        if w.shape != (len(shared_words),):
            raise ConfigError(f"profile {prof.name!r}: weights must cover the {len(shared_words)} shared words")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigError(f"profile {prof.name!r}: weights must be finite and non-negative")
        if not 0.0 <= prof.marker_rate <= 1.0:
            raise ConfigError(f"profile {prof.name!r}: marker_rate must lie in [0, 1]")
        if prof.marker_rate > 0 and not prof.markers:
            raise ConfigError(f"profile {prof.name!r}: marker_rate > 0 needs marker tokens")
        if w.sum() == 0 and prof.marker_rate < 1.0:
            raise ConfigError(f"profile {prof.name!r}: all-zero token probabilities")
        probs.append(w / w.sum() if w.sum() > 0 else w)
    words = np.asarray(shared_words, dtype=object)
    reviews = []
    width = len(str(n_per_class * len(class_profiles)))
    k = 0
    for i in range(n_per_class):
        for prof, p in zip(class_profiles, probs):
            is_marker = rng.uniform(text_len) < prof.marker_rate
            toks = [None] * text_len
            n_m = int(is_marker.sum())
            if n_m:
                picks = rng.integers(0, len(prof.markers), size=n_m)
                for pos, j in zip(np.flatnonzero(is_marker), picks):
                    toks[pos] = prof.markers[j]
            n_s = text_len - n_m
            if n_s:
                picks = rng.choice(len(words), size=n_s, p=p)
                for pos, j in zip(np.flatnonzero(~is_marker), picks):
                    toks[pos] = words[j]
            k += 1
            reviews.append(Review(f"{id_prefix}-{k:0{width}d}", " ".join(toks), prof.name))
    return reviews


def benchmark_profiles(vocab_size: int = 500, classes: Sequence[str] = DEFAULT_CLASSES,
                       marker_rate: float = 0.3, markers_per_class: int = 10,
                       zipf_exponent: float = 1.0) -> tuple[list[ClassProfile], list[str]]:
    """Class profiles for the synthetic benchmark.

    All classes share one Zipfian distribution over ``vocab_size - k *
    markers_per_class`` words, so ``marker_rate`` alone sets separability.
    """
    n_shared = vocab_size - len(classes) * markers_per_class
    if n_shared < 1:
        raise ConfigError("vocab_size too small for the requested markers")
    shared = [f"w{i:03d}" for i in range(n_shared)]
    weights = 1.0 / np.arange(1, n_shared + 1) ** zipf_exponent
    profiles = [
        ClassProfile(c, weights.copy(), [f"{c[:1]}m{j:02d}" for j in range(markers_per_class)], marker_rate)
        for c in classes
    ]
    return profiles, shared


def synthetic_benchmark_corpus(seed: int, n_per_class: int, marker_rate: float = 0.3,
                               vocab_size: int = 500, text_len: int = 64,
                               classes: Sequence[str] = DEFAULT_CLASSES) -> list[Review]:
    profiles, shared = benchmark_profiles(vocab_size, classes, marker_rate)
    return generate_synthetic_corpus(Rng(seed).fork("synth"), n_per_class, profiles, shared, text_len)


# ------------------------------------------------------------------ embeddings


@dataclass
class EmbeddingRecord:
    id: str
    label: str | None
    vector: np.ndarray


def write_embeddings(records: Sequence[EmbeddingRecord], path, dim: int | None = None) -> None:
    if dim is None:
        dim = len(records[0].vector) if records else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dim={dim}\n")
        for r in records:
            vec = np.asarray(r.vector, dtype=np.float64).reshape(-1)
            if vec.shape[0] != dim:
                raise FormatError(f"record {r.id!r} has dimension {vec.shape[0]}, expected {dim}")
            nums = " ".join(format(float(x), ".17g") for x in vec)
            fh.write(f"{r.id}\t{r.label if r.label is not None else '-'}\t{nums}\n")


def read_embeddings(path) -> list[EmbeddingRecord]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith("dim="):
            raise FormatError(f"{path}: first line must be 'dim=<d>', got {header!r}")
        try:
            dim = int(header[4:])
        except ValueError:
            raise FormatError(f"{path}: bad dimension in header {header!r}") from None
        records = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            rid, label, nums = parts
            try:
                vec = np.array([float(x) for x in nums.split(" ")] if nums else [], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: record {rid!r} has a malformed number") from None
            if vec.shape[0] != dim:
                raise FormatError(f"{path}:{lineno}: record {rid!r} has dimension {vec.shape[0]}, header says {dim}")
            records.append(EmbeddingRecord(rid, None if label == "-" else label, vec))
    return records


def export_embeddings(reviews: Sequence[Review], encoder, vocab: Vocab, path,
                      batch_size: int = 64) -> list[EmbeddingRecord]:
    """Run ``encoder`` in eval mode over ``reviews`` and write an embedding file."""
    from .encoder import embed_reviews

    vecs = embed_reviews(encoder, reviews, vocab, batch_size=batch_size)
    records = [EmbeddingRecord(r.id, r.label, v) for r, v in zip(reviews, vecs)]
    write_embeddings(records, path, dim=encoder.config.model_dim)
    return records
