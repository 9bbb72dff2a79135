"""Text cleanup applied to every review before tokenization.

Steps, in order:

1. Unicode NFKC normalization.
2. URLs -> ``url_token``.  A URL is a token starting with ``http://``,
   ``https://``, ``ftp://`` or ``www.`` (case-insensitive) and running up to
   the next whitespace character.
3. Emoji -> ``emoji_token``.  Each maximal run of code points from the ranges
   in :data:`EMOJI_RANGES` becomes one token.  Variation selector U+FE0F and
   zero-width joiner U+200D are absorbed into a run they touch.
4. Curly quotes -> ASCII ``'`` and ``"``.
5. Whitespace runs -> a single space; leading/trailing whitespace removed.

NFKC rewrites three Bengali letters (U+09DC, U+09DD, U+09DF) to their
nukta-decomposed forms, since those code points are composition exclusions.
All other Bengali code points pass through untouched.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass

EMOJI_RANGES = (
    (0x1F600, 0x1F64F),  # emoticons
    (0x1F300, 0x1F5FF),  # symbols & pictographs
    (0x1F680, 0x1F6FF),  # transport & map
    (0x1F900, 0x1F9FF),  # supplemental symbols & pictographs
    (0x1F1E6, 0x1F1FF),  # regional indicators (flags)
)

_URL_RE = re.compile(r"(?:(?:https?|ftp)://|www\.)\S*", re.IGNORECASE)
_EMOJI_CLASS = "".join(f"\\U{lo:08X}-\\U{hi:08X}" for lo, hi in EMOJI_RANGES)
_EMOJI_RE = re.compile(f"[\u200d\ufe0f]*[{_EMOJI_CLASS}][{_EMOJI_CLASS}\u200d\ufe0f]*")
_QUOTES = str.maketrans({
    "‘": "'", "’": "'", "‚": "'", "‛": "'", "′": "'",
    "“": '"', "”": '"', "„": '"', "‟": '"', "″": '"',
})


@dataclass(frozen=True)
class NormalizerConfig:
    url_token: str = "<URL>"
    emoji_token: str = "<EMO>"
    unicode_form: str = "NFKC"
    collapse_whitespace: bool = True
    normalize_quotes: bool = True

    def __post_init__(self):
        for name in ("url_token", "emoji_token"):
            tok = getattr(self, name)
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"{name} must be non-empty and contain no whitespace, got {tok!r}")
        if self.unicode_form not in ("NFC", "NFKC", "NFD", "NFKD"):
            raise ValueError(f"unknown unicode form {self.unicode_form!r}")


DEFAULT_CONFIG = NormalizerConfig()


def normalize_text(raw: str, cfg: NormalizerConfig = DEFAULT_CONFIG) -> str:
    text = unicodedata.normalize(cfg.unicode_form, raw)
    text = _URL_RE.sub(cfg.url_token, text)
    text = _EMOJI_RE.sub(cfg.emoji_token, text)
    if cfg.normalize_quotes:
        text = text.translate(_QUOTES)
    if cfg.collapse_whitespace:
        text = " ".join(text.split())
    return text
