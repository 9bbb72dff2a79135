"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The training criteria (4, 5, 6) share module-scoped runs on the synthetic
benchmark: 2 classes, marker rate 0.3, 500-word vocabulary, 64-token texts,
encoder width 64, batch 16, learning rate 5e-5, 7 epochs, seeds 0, 1, 2.
Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines
as they happen; they are also repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from ganlm import tensor as T
from ganlm.cli import main
from ganlm.config import PRESETS
from ganlm.data import (
    DEFAULT_CLASSES,
    Review,
    SplitSpec,
    build_vocab,
    make_split,
    synthetic_benchmark_corpus,
)
from ganlm.encoder import Encoder, EncoderConfig, masked_perplexity, mlm_pretrain
from ganlm.metrics import compute_metrics, fmt
from ganlm.rng import Rng
from ganlm.ssgan import SsganConfig, discriminator_loss, generator_loss, load_model, predict, save_model, train
from ganlm.tensor import Tensor
from ganlm.textnorm import EMOJI_RANGES, normalize_text

from oracles import confusion_bruteforce, numerical_gradient, rel_err
from test_ssgan import composed_losses
from test_tensor import PRIMITIVES, _weighted, primitive_inputs

VERDICTS: list[str] = []

SEEDS = (0, 1, 2)
BENCH_DIM = 64
BENCH_EPOCHS = 7


def verdict(num: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {title} | {detail}"
    print("\n" + line)
    VERDICTS.append(line)
    assert ok, line


# ---------------------------------------------------------------- 1: gradients


def test_criterion_01_gradient_correctness():
    t0 = time.perf_counter()
    np_rng = np.random.default_rng(2024)
    worst = {}
    for name in sorted(PRIMITIVES):
        fn = PRIMITIVES[name][0]
        inputs = primitive_inputs(name, np_rng)
        w = np_rng.normal(size=fn(*inputs).shape)
        T.backward(_weighted(fn(*inputs), w))
        with T.no_grad():
            nums = [numerical_gradient(lambda: _weighted(fn(*inputs), w).item(), x.data, h=1e-5) for x in inputs]
        worst[name] = max(rel_err(x.grad, n) for x, n in zip(inputs, nums))

    x = np_rng.normal(size=(3, 4))
    x[np.abs(x) < 1e-3] = 0.5
    t = Tensor(x, requires_grad=True)
    w = np_rng.normal(size=x.shape)
    T.backward(_weighted(T.leaky_relu(t, 0.2), w))
    worst["leaky_relu"] = rel_err(t.grad, numerical_gradient(
        lambda: _weighted(T.leaky_relu(Tensor(t.data), 0.2), w).item(), t.data))
    t = Tensor(np_rng.normal(size=(4, 5)), requires_grad=True)
    w = np_rng.normal(size=(4, 5))
    T.backward(_weighted(T.dropout(t, 0.3, Rng(5)), w))  # same seed replays the mask
    worst["dropout"] = rel_err(t.grad, numerical_gradient(
        lambda: _weighted(T.dropout(Tensor(t.data), 0.3, Rng(5)), w).item(), t.data))

    for which in ("L_D", "L_G"):
        disc, gen, real, l_d, l_g = composed_losses()
        f = l_d if which == "L_D" else l_g
        params = [real, *disc.params.values(), *gen.params.values()]
        T.zero_grad(params)
        T.backward(f(), params)
        worst[which] = max(rel_err(p.grad, numerical_gradient(lambda: f().item(), p.data, h=1e-5)) for p in params)

    elapsed = time.perf_counter() - t0
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err < 1e-4 and elapsed < 10.0
    verdict(1, "gradient correctness", ok,
            f"{len(worst)} checks, worst rel err {err:.2e} ({name}) < 1e-4, {elapsed:.1f}s < 10s")


# ---------------------------------------------------------- 2: loss identities


def test_criterion_02_loss_identities():
    z = Tensor(np.zeros((4, 3)))
    _, parts = discriminator_loss(z, [0, 1, 0, 1], [False] * 4, z)
    unsup = parts.d_unsup_real + parts.d_unsup_fake
    e_unsup = abs(unsup - (-math.log(2 / 3) - math.log(1 / 3)))
    e_ce = max(abs(T.cross_entropy_from_logits(Tensor(np.zeros((5, c))), np.arange(5) % c).item() - math.log(c))
               for c in (2, 3, 7, 100))
    f = Rng(0).normal((6, 5))
    v = np.array([0.3, -1.2, 0.0, 2.5, -0.7])
    dummy = Tensor(np.zeros((6, 3)))
    _, same = generator_loss(Tensor(f), Tensor(f), dummy)
    _, shifted = generator_loss(Tensor(f + v), Tensor(f), dummy)
    e_same = abs(same.g_feature_matching)
    e_shift = abs(shifted.g_feature_matching - float(v @ v))
    err = max(e_unsup, e_ce, e_same, e_shift)
    verdict(2, "loss identities", err < 1e-9,
            f"L_unsup {unsup:.12f}, max abs err {err:.1e} < 1e-9 (unsup {e_unsup:.1e}, CE {e_ce:.1e}, "
            f"FM same {e_same:.1e}, FM shift {e_shift:.1e})")


# ------------------------------------------------------------ 3: split harness


def test_criterion_03_split_harness():
    t0 = time.perf_counter()
    corpus = [Review(f"f{i}", "x", "fake") for i in range(900)]
    corpus += [Review(f"a{i}", "y", "authentic") for i in range(1300)]
    expected = {(32, 512, 512), (64, 512, 512), (128, 512, 512), (256, 512, 512), (512, 512, 512), (1024, 512, 128)}
    problems = []
    if set(PRESETS.values()) != expected:
        problems.append(f"preset table {sorted(PRESETS.values())}")
    for name, sizes in sorted(PRESETS.items()):
        for seed in range(10):
            split = make_split(corpus, SplitSpec(*sizes, seed=seed))
            parts = [{r.id for r in p} for p in (split.labeled, split.unlabeled, split.test)]
            if split.sizes() != sizes:
                problems.append(f"{name}/seed {seed}: sizes {split.sizes()}")
            if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
                problems.append(f"{name}/seed {seed}: overlapping ids")
    elapsed = time.perf_counter() - t0
    verdict(3, "split harness", not problems and elapsed < 5.0,
            f"6 presets x 10 seeds, {len(problems)} problems {problems[:2]}, {elapsed:.2f}s < 5s")


# ------------------------------------------------------- shared benchmark runs


class Bench:
    corpus = None
    vocab = None
    runs: dict = {}
    seconds: dict = {}


def _bench():
    if Bench.corpus is None:
        # 1100 texts per class: enough for the largest preset (1024 + 512 + 128)
        Bench.corpus = synthetic_benchmark_corpus(seed=0, n_per_class=1100, marker_rate=0.3, vocab_size=500,
                                                  text_len=64)
        Bench.vocab = build_vocab(Bench.corpus)
    return Bench.corpus, Bench.vocab


def _encoder_config(vocab):
    return EncoderConfig(len(vocab), model_dim=BENCH_DIM, n_layers=2, n_heads=4, max_len=64)


def bench_run(kind: str, n_labeled: int, seed: int, encoder=None):
    """Train once per (kind, n_labeled, seed); kind is 'gan', 'sup' or 'gan-pre'."""
    key = (kind, n_labeled, seed)
    if key not in Bench.runs:
        corpus, vocab = _bench()
        sizes = PRESETS[f"table2-{n_labeled}"]
        split = make_split(corpus, SplitSpec(*sizes, seed=seed))
        if encoder is None:
            encoder = Encoder.init(_encoder_config(vocab), Rng(seed).fork("encoder"))
        cfg = SsganConfig(batch_size=16, lr_d=5e-5, lr_g=5e-5, epochs=BENCH_EPOCHS, noise_dim=100, seed=seed)
        t0 = time.perf_counter()
        _, log = train(split, cfg, DEFAULT_CLASSES, vocab, encoder, Rng(seed), "fake", kind,
                       supervised=kind == "sup")
        Bench.seconds[key] = time.perf_counter() - t0
        Bench.runs[key] = log.accuracies()
    return Bench.runs[key]


def _fmt_accs(accs):
    return "/".join(f"{a:.3f}" for a in accs)


# ------------------------------------------------ 4: semi-supervision benefit


@pytest.mark.slow
def test_criterion_04_semi_supervision_benefit():
    gan = [bench_run("gan", 32, s)[-1] for s in SEEDS]
    sup = [bench_run("sup", 32, s)[-1] for s in SEEDS]
    elapsed = sum(Bench.seconds[(k, 32, s)] for k in ("gan", "sup") for s in SEEDS)
    gap = 100 * (np.mean(gan) - np.mean(sup))
    verdict(4, "semi-supervision benefit", gap >= 5.0 and elapsed < 600,
            f"SS-GAN {_fmt_accs(gan)} (mean {np.mean(gan):.4f}) vs supervised {_fmt_accs(sup)} "
            f"(mean {np.mean(sup):.4f}), gap {gap:.1f} pts >= 5, {elapsed:.0f}s < 600s")


# ------------------------------------------------------ 5: labeled-count trend


@pytest.mark.slow
def test_criterion_05_labeled_count_trend():
    low = [bench_run("gan", 32, s)[-1] for s in SEEDS]
    high = [bench_run("gan", 1024, s)[-1] for s in SEEDS]
    elapsed = sum(Bench.seconds[("gan", n, s)] for n in (32, 1024) for s in SEEDS)
    ok = np.mean(high) >= np.mean(low) and elapsed < 1200
    verdict(5, "labeled-count trend", ok,
            f"1024 labeled {_fmt_accs(high)} (mean {np.mean(high):.4f}) >= 32 labeled {_fmt_accs(low)} "
            f"(mean {np.mean(low):.4f}), {elapsed:.0f}s < 1200s")


# --------------------------------------------------- 6: MLM pretraining effect


def _first_epoch_reaching(accs, target):
    for epoch, a in enumerate(accs, start=1):
        if a >= target:
            return epoch
    return math.inf


@pytest.mark.slow
def test_criterion_06_pretraining_effect():
    _, vocab = _bench()
    t0 = time.perf_counter()
    pre_corpus = synthetic_benchmark_corpus(seed=1, n_per_class=500, text_len=64)  # 1000 texts
    held_out = synthetic_benchmark_corpus(seed=2, n_per_class=100, text_len=64)
    cfg = _encoder_config(vocab)
    rng = Rng(0).fork("pretrain")
    untrained = Encoder.init(cfg, rng.fork("init"))
    ppl_before = masked_perplexity(untrained, held_out, vocab, seed=0)
    res = mlm_pretrain(pre_corpus, vocab, cfg, epochs=5, rng=rng, lr=1e-3, batch_size=16)
    ppl_after = masked_perplexity(res.encoder, held_out, vocab, seed=0, mlm_bias=res.mlm_bias)
    pretrain_s = time.perf_counter() - t0

    rows, ok = [], ppl_after < ppl_before
    for s in SEEDS:
        rand = bench_run("gan", 32, s)
        pre = bench_run("gan-pre", 32, s, encoder=res.encoder.copy())
        target = rand[-1]
        e_rand, e_pre = _first_epoch_reaching(rand, target), _first_epoch_reaching(pre, target)
        ok &= e_pre <= e_rand
        rows.append(f"seed {s}: target {target:.3f}, random@{e_rand} pretrained@{e_pre}")
    elapsed = pretrain_s + sum(Bench.seconds[(k, 32, s)] for k in ("gan", "gan-pre") for s in SEEDS)
    ok &= elapsed < 600
    verdict(6, "MLM pretraining effect", ok,
            f"perplexity {ppl_before:.1f} -> {ppl_after:.1f}; " + "; ".join(rows) + f"; {elapsed:.0f}s < 600s")


# ------------------------------------------------------------ 7: metrics oracle


def test_criterion_07_metrics_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    classes = ("fake", "authentic")
    mismatches, na_cases = 0, 0
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        p_pos, g_pos = rng.choice([0.0, 0.1, 0.5, 0.9, 1.0], size=2)
        pred = [classes[0] if u < p_pos else classes[1] for u in rng.uniform(size=n)]
        gold = [classes[0] if u < g_pos else classes[1] for u in rng.uniform(size=n)]
        m = compute_metrics(pred, gold, "fake")
        got = (m.tp, m.fp, m.fn, m.tn, m.accuracy, m.precision, m.recall, m.f1)
        mismatches += got != confusion_bruteforce(pred, gold, "fake")
        if m.precision is None or m.recall is None or m.f1 is None:
            na_cases += 1
            mismatches += "N/A" not in (fmt(m.precision), fmt(m.recall), fmt(m.f1))
    elapsed = time.perf_counter() - t0
    verdict(7, "metrics oracle", mismatches == 0 and na_cases > 0 and elapsed < 1.0,
            f"1000 cases, {mismatches} mismatches, {na_cases} with N/A, {elapsed:.2f}s < 1s")


# --------------------------------------------------- 8: generator-free inference


def test_criterion_08_generator_free_inference(tmp_path):
    corpus = synthetic_benchmark_corpus(seed=3, n_per_class=60, vocab_size=50, text_len=16)
    vocab = build_vocab(corpus)
    split = make_split(corpus, SplitSpec(16, 64, 32, seed=0))
    enc = Encoder.init(EncoderConfig(len(vocab), model_dim=16, n_layers=1, n_heads=2, max_len=20), Rng(0))
    model, _ = train(split, SsganConfig(epochs=2, lr_d=1e-3, lr_g=1e-3), vocab=vocab, encoder=enc, rng=Rng(0))

    rng = Rng(8)
    words = vocab.itos[4:]
    texts = [" ".join(words[i] for i in rng.integers(0, len(words), size=int(rng.integers(1, 20))))
             for _ in range(100)]
    labels_before, probs_before = predict(model, texts, vocab)

    model.generator.params.clear()
    model.generator = None
    labels_after, probs_after = predict(model, texts, vocab)
    save_model(model, tmp_path / "nogen.ckpt", include_generator=False)
    labels_loaded, probs_loaded = predict(load_model(tmp_path / "nogen.ckpt"), texts, vocab)

    ok = (labels_before == labels_after == labels_loaded and np.array_equal(probs_before, probs_after)
          and np.array_equal(probs_before, probs_loaded))
    verdict(8, "generator-free inference", ok,
            f"100 random inputs, labels identical {labels_before == labels_after == labels_loaded}, "
            f"probabilities bitwise identical {np.array_equal(probs_before, probs_loaded)}")


# --------------------------------------------------------------- 9: determinism


E2E_CONFIG = """\
seed = 11
[encoder]
model_dim = 16
n_layers = 1
n_heads = 2
max_len = 24
pretrain_epochs = 2
[ssgan]
epochs = 3
"""


def _end_to_end(root):
    out = root / "out"
    root.mkdir(parents=True)
    cfg = root / "run.cfg"
    cfg.write_text(E2E_CONFIG + f"[paths]\nout_dir = {out}\ncorpus = {out / 'corpus.jsonl'}\n")
    c = ["--config", str(cfg)]
    steps = (["synth", "--n-per-class", "560", "--text-len", "20"], ["build-vocab"],
             ["split", "--preset", "table2-32"], ["pretrain"],
             ["train-ssgan", "--encoder-checkpoint", str(out / "checkpoints" / "encoder.ckpt")],
             ["eval", "--checkpoint", str(out / "checkpoints" / "ssgan.ckpt")])
    codes = [main(s[:1] + c + s[1:]) for s in steps]
    return out, codes


def test_criterion_09_determinism(tmp_path):
    a, codes_a = _end_to_end(tmp_path / "a")
    b, codes_b = _end_to_end(tmp_path / "b")
    files = ["logs/trainlog_GAN-MiniLM_32.csv", "reports/results.csv", "reports/curves/GAN-MiniLM_32.csv"]
    same = all((a / f).is_file() and (a / f).read_bytes() == (b / f).read_bytes() for f in files)
    ok = codes_a == codes_b == [0] * 6 and same
    verdict(9, "determinism", ok,
            f"exit codes {codes_a} / {codes_b}, {len(files)} CSVs byte-identical: {same}")


# -------------------------------------------------------------- 10: normalizer


_WS = [" ", "\t", "\n", "\r", " ", " ", "　", "​"]
_FRAGMENTS = ["http://", "https://x.y/z", "www.", "ftp://a", "HTTPS://Q", "“", "”", "‘", "’", '"', "'",
              "‍", "️", "ভালো", "খাবার", "ড়", "ﬁ", "①", "Ａ", "<URL>", "<EMO>", "।"]


def _random_unicode(rng: np.random.Generator) -> str:
    pieces = []
    for _ in range(int(rng.integers(0, 12))):
        kind = rng.integers(0, 5)
        if kind == 0:
            cp = int(rng.integers(0, 0x110000))
            while 0xD800 <= cp <= 0xDFFF:
                cp = int(rng.integers(0, 0x110000))
            pieces.append(chr(cp))
        elif kind == 1:
            lo, hi = EMOJI_RANGES[int(rng.integers(0, len(EMOJI_RANGES)))]
            pieces.append(chr(int(rng.integers(lo, hi + 1))))
        elif kind == 2:
            pieces.append(_WS[int(rng.integers(0, len(_WS)))] * int(rng.integers(1, 4)))
        elif kind == 3:
            pieces.append(_FRAGMENTS[int(rng.integers(0, len(_FRAGMENTS)))])
        else:
            pieces.append(chr(int(rng.integers(0x20, 0x7F))) * int(rng.integers(1, 4)))
    return "".join(pieces)


def test_criterion_10_normalizer_conformance():
    vectors = [
        ("good   food ", "good food"),
        ("  \t lead and\n\ntrail  ", "lead and trail"),
        ("see https://x.yz/a now", "see <URL> now"),
        ("visit www.example.com/menu today", "visit <URL> today"),
        ("“ok”", '"ok"'),
        ("it‘s ’fine’", "it's 'fine'"),
    ]
    vector_fail = [raw for raw, want in vectors if normalize_text(raw) != want]
    rng = np.random.default_rng(10)
    not_idempotent = 0
    for _ in range(10_000):
        once = normalize_text(_random_unicode(rng))
        not_idempotent += normalize_text(once) != once
    verdict(10, "normalizer conformance", not vector_fail and not_idempotent == 0,
            f"{len(vectors) - len(vector_fail)}/{len(vectors)} fixed vectors, "
            f"{not_idempotent} non-idempotent of 10000 random strings")
