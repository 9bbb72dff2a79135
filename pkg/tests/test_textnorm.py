import unicodedata

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganlm.textnorm import EMOJI_RANGES, NormalizerConfig, normalize_text


@pytest.mark.parametrize("raw, expected", [
    ("good   food ", "good food"),
    ("see https://x.yz/a now", "see <URL> now"),
    ("“ok”", '"ok"'),
    ("it‘s fine", "it's fine"),
    ("  \t lead and trail \n", "lead and trail"),
    ("visit www.example.com/menu today", "visit <URL> today"),
    ("FTP://files.example.org/x", "<URL>"),
    ("tasty 😀😋 food", "tasty <EMO> food"),
    ("flag 🇧🇩!", "flag <EMO>!"),
    ("", ""),
])
def test_fixed_vectors(raw, expected):
    assert normalize_text(raw) == expected


def test_custom_tokens():
    cfg = NormalizerConfig(url_token="[LINK]", emoji_token="[E]")
    assert normalize_text("a http://b 🚀", cfg) == "a [LINK] [E]"


def test_tokens_with_whitespace_rejected():
    with pytest.raises(ValueError):
        NormalizerConfig(url_token="a url")


def test_nfkc_applied():
    assert normalize_text("ﬁne") == "fine"  # U+FB01 ligature


@settings(max_examples=500, deadline=None)
@given(st.text())
def test_idempotent(s):
    once = normalize_text(s)
    assert normalize_text(once) == once


@settings(max_examples=300, deadline=None)
@given(st.text())
def test_no_double_whitespace(s):
    out = normalize_text(s)
    assert not any(a.isspace() and b.isspace() for a, b in zip(out, out[1:]))
    assert out == out.strip()


_NFKC_EXCLUDED = {0x09DC, 0x09DD, 0x09DF}
BENGALI_LETTERS = [
    chr(c) for c in range(0x0980, 0x0A00)
    if unicodedata.category(chr(c)) == "Lo" and c not in _NFKC_EXCLUDED
]


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(BENGALI_LETTERS), min_size=1, max_size=20))
def test_bengali_letters_pass_through(letters):
    word = "".join(letters)
    assert normalize_text(f"x {word} y") == f"x {word} y"


def test_bengali_sentence_unchanged():
    s = "খাবারটা অনেক ভালো ছিল। দাম একটু বেশি।"
    assert normalize_text(s) == s


def test_nukta_letters_decompose():
    # composition exclusions: NFKC rewrites them to base + nukta
    assert normalize_text("ড়") == "ড়"


def test_emoji_ranges_cover_documented_blocks():
    for lo, hi in EMOJI_RANGES:
        assert normalize_text(chr(lo)) == "<EMO>"
        assert normalize_text(chr(hi)) == "<EMO>"
