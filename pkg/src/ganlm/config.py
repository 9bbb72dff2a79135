"""Run configuration: a small ``key = value`` file with ``[section]`` headers.

Grammar::

    # comment            (also ';')
    key = value          (keys before any header belong to [run])
    [section]

Sections and keys:

``[run]``         preset, seed, model_name, classes (comma list), positive_class
``[paths]``       corpus, vocab, out_dir, encoder_checkpoint, split_dir
``[normalizer]``  url_token, emoji_token, collapse_whitespace, normalize_quotes
``[encoder]``     model_dim, n_layers, n_heads, ffn_dim, max_len, dropout,
                  max_vocab, min_freq, pretrain_epochs, pretrain_lr, mask_rate
``[ssgan]``       batch_size, lr_d, lr_g, epochs, noise_dim, hidden_dim,
                  weight_decay, freeze_encoder
``[split]``       n_labeled, n_unlabeled, n_test, stratified

A ``preset`` expands first; every other key in the file then overrides it,
regardless of line order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import DEFAULT_CLASSES
from .errors import ConfigError, ParseError
from .textnorm import NormalizerConfig

# Labeled / unlabeled / test sizes of the six experiment rows.
TABLE2_ROWS = {
    32: (32, 512, 512),
    64: (64, 512, 512),
    128: (128, 512, 512),
    256: (256, 512, 512),
    512: (512, 512, 512),
    1024: (1024, 512, 128),
}
PRESETS = {f"table2-{n}": row for n, row in TABLE2_ROWS.items()}

# Fine-tuning epochs used for each pretrained model in the experiments.
MODEL_EPOCHS = {
    "BanglaBERT": 7,
    "BanglaBERT generator": 18,
    "Bangla BERT Base": 25,
    "Bangla-Electra": 13,
    "sahajBERT": 26,
}

BATCH_SIZE = 16
LEARNING_RATE = 5e-5
NOISE_DIM = 100


@dataclass
class RunSection:
    preset: str | None = None
    seed: int = 0
    model_name: str = "GAN-MiniLM"
    classes: tuple[str, ...] = DEFAULT_CLASSES
    positive_class: str = "fake"


@dataclass
class PathsSection:
    corpus: str | None = None
    vocab: str | None = None
    out_dir: str = "out"
    encoder_checkpoint: str | None = None
    split_dir: str | None = None


@dataclass
class EncoderSection:
    model_dim: int = 128
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int | None = None
    max_len: int = 64
    dropout: float = 0.1
    max_vocab: int = 30000
    min_freq: int = 1
    pretrain_epochs: int = 5
    pretrain_lr: float = 1e-3
    mask_rate: float = 0.15


@dataclass
class SsganSection:
    batch_size: int = BATCH_SIZE
    lr_d: float = LEARNING_RATE
    lr_g: float = LEARNING_RATE
    epochs: int = MODEL_EPOCHS["BanglaBERT"]
    noise_dim: int = NOISE_DIM
    hidden_dim: int | None = None
    weight_decay: float = 0.01
    freeze_encoder: bool = False


@dataclass
class SplitSection:
    n_labeled: int = 32
    n_unlabeled: int = 512
    n_test: int = 512
    stratified: bool = True


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    paths: PathsSection = field(default_factory=PathsSection)
    normalizer: NormalizerConfig = field(default_factory=NormalizerConfig)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    ssgan: SsganSection = field(default_factory=SsganSection)
    split: SplitSection = field(default_factory=SplitSection)

    @property
    def k(self) -> int:
        return len(self.run.classes)

    def with_preset(self, name: str) -> RunConfig:
        return apply_preset(self, name)


SECTIONS = ("run", "paths", "normalizer", "encoder", "ssgan", "split")
_NORMALIZER_KEYS = ("url_token", "emoji_token", "collapse_whitespace", "normalize_quotes")


def apply_preset(cfg: RunConfig, name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (choose from {', '.join(PRESETS)})")
    n_lab, n_unl, n_test = PRESETS[name]
    cfg.run.preset = name
    cfg.split = replace(cfg.split, n_labeled=n_lab, n_unlabeled=n_unl, n_test=n_test)
    cfg.ssgan = replace(cfg.ssgan, batch_size=BATCH_SIZE, lr_d=LEARNING_RATE, lr_g=LEARNING_RATE)
    return cfg


def _convert(section: str, key: str, raw: str, typ):
    typ = str(typ)
    try:
        if "bool" in typ:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError
        if "tuple" in typ:
            items = tuple(s.strip() for s in raw.split(",") if s.strip())
            if not items:
                raise ValueError
            return items
        if raw.lower() in ("", "none") and "None" in typ:
            return None
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _section_types(section: str) -> dict[str, object]:
    if section == "normalizer":
        return {f.name: f.type for f in fields(NormalizerConfig) if f.name in _NORMALIZER_KEYS}
    cls = {"run": RunSection, "paths": PathsSection, "encoder": EncoderSection,
           "ssgan": SsganSection, "split": SplitSection}[section]
    return {f.name: f.type for f in fields(cls)}


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    entries: list[tuple[int, str, str, str]] = []
    section = "run"
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ParseError(f"malformed section header {stripped!r}", lineno, source)
            section = stripped[1:-1].strip()
            if section not in SECTIONS:
                raise ParseError(f"unknown section [{section}]", lineno, source)
            continue
        if "=" not in stripped:
            raise ParseError(f"expected 'key = value', got {stripped!r}", lineno, source)
        key, value = (s.strip() for s in stripped.split("=", 1))
        types = _section_types(section)
        if key not in types:
            raise ParseError(f"unknown key {key!r} in [{section}]", lineno, source)
        entries.append((lineno, section, key, value))

    cfg = RunConfig()
    for lineno, section, key, value in entries:
        if section == "run" and key == "preset":
            try:
                apply_preset(cfg, value)
            except ConfigError as exc:
                raise ParseError(str(exc), lineno, source) from None
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    for lineno, section, key, value in entries:
        if section == "run" and key == "preset":
            continue
        try:
            values[section][key] = (lineno, _convert(section, key, value, _section_types(section)[key]))
        except ConfigError as exc:
            raise ParseError(str(exc), lineno, source) from None
    for section, kv in values.items():
        if not kv:
            continue
        current = getattr(cfg, section)
        try:
            setattr(cfg, section, replace(current, **{k: v for k, (_, v) in kv.items()}))
        except (ValueError, ConfigError) as exc:
            raise ParseError(str(exc), min(ln for ln, _ in kv.values()), source) from None
    try:
        validate(cfg)
    except ConfigError as exc:
        line = _line_for(exc, values)
        raise ParseError(str(exc), line, source) from None
    return cfg


def _line_for(exc: ConfigError, values: dict) -> int | None:
    key = getattr(exc, "key", None)
    for kv in values.values():
        if key in kv:
            return kv[key][0]
    return None


def _fail(key: str, message: str):
    exc = ConfigError(message)
    exc.key = key
    raise exc


def validate(cfg: RunConfig) -> None:
    s, e, sp, r = cfg.ssgan, cfg.encoder, cfg.split, cfg.run
    for key in ("lr_d", "lr_g"):
        if not getattr(s, key) > 0:
            _fail(key, f"{key} must be > 0, got {getattr(s, key)}")
    for key in ("batch_size", "noise_dim"):
        if getattr(s, key) < 1:
            _fail(key, f"{key} must be >= 1")
    if s.epochs < 0:
        _fail("epochs", "epochs must be >= 0")
    if s.weight_decay < 0:
        _fail("weight_decay", "weight_decay must be >= 0")
    for key in ("model_dim", "n_layers", "n_heads", "max_len", "max_vocab", "min_freq"):
        if getattr(e, key) < 1:
            _fail(key, f"{key} must be >= 1")
    if e.model_dim % e.n_heads:
        _fail("n_heads", f"model_dim {e.model_dim} is not divisible by n_heads {e.n_heads}")
    if e.max_len < 2:
        _fail("max_len", "max_len must be >= 2")
    if not 0 <= e.dropout < 1:
        _fail("dropout", "dropout must lie in [0, 1)")
    if not 0 <= e.mask_rate <= 1:
        _fail("mask_rate", "mask_rate must lie in [0, 1]")
    if not e.pretrain_lr > 0:
        _fail("pretrain_lr", "pretrain_lr must be > 0")
    for key in ("n_labeled", "n_unlabeled", "n_test"):
        if getattr(sp, key) < 0:
            _fail(key, f"{key} must be >= 0")
    if len(r.classes) < 2:
        _fail("classes", "need at least two classes")
    if len(set(r.classes)) != len(r.classes):
        _fail("classes", "class names must be distinct")
    if r.positive_class not in r.classes:
        _fail("positive_class", f"positive_class {r.positive_class!r} is not one of {list(r.classes)}")


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))
