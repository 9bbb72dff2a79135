import math

import numpy as np
import pytest

from ganlm import tensor as T
from ganlm.data import DEFAULT_CLASSES, EmbeddingRecord, RESERVED, Review, Vocab, DataSplit
from ganlm.encoder import Encoder, EncoderConfig
from ganlm.errors import ConfigError, DimensionError, DivergenceError
from ganlm.rng import Rng
from ganlm.ssgan import (
    Discriminator,
    Generator,
    SsganConfig,
    StepRngs,
    build_model,
    discriminate,
    discriminator_loss,
    generate_fake,
    generator_loss,
    load_model,
    make_sources,
    predict,
    predict_from_logits,
    save_model,
    train,
    train_step,
)
from ganlm.tensor import Tensor

from oracles import numerical_gradient, rel_err

UNIFORM_UNSUP = -math.log(2 / 3) - math.log(1 / 3)


# ------------------------------------------------------------------- heads


def test_generator_shape_and_determinism():
    gen = Generator.init(Rng(0), noise_dim=100, hidden_dim=128, out_dim=128)
    a = generate_fake(Rng(5), 16, gen)
    assert a.shape == (16, 128)
    assert np.array_equal(a.data, generate_fake(Rng(5), 16, gen).data)


def test_zero_generator_outputs_zeros():
    gen = Generator.init(Rng(0), 10, 8, 6, zero=True)
    assert np.all(generate_fake(Rng(1), 3, gen, mode="eval").data == 0.0)


def test_generate_fake_rejects_empty():
    with pytest.raises(ConfigError):
        generate_fake(Rng(0), 0, Generator.init(Rng(0), 4, 4, 4))


def test_discriminator_shapes_and_rows_independent():
    disc = Discriminator.init(Rng(0), in_dim=6, hidden_dim=5, n_out=3)
    emb = Rng(1).normal((4, 6))
    emb[2] = emb[0]
    logits, feats = discriminate(Tensor(emb), disc)
    assert logits.shape == (4, 3) and feats.shape == (4, 5)
    assert np.array_equal(logits.data[0], logits.data[2])


def test_discriminator_width_mismatch():
    disc = Discriminator.init(Rng(0), 6, 5, 3)
    with pytest.raises(DimensionError):
        discriminate(Tensor(np.zeros((2, 7))), disc)


def test_head_init_bounds():
    disc = Discriminator.init(Rng(0), 64, 32, 3)
    assert np.abs(disc.params["w1"].data).max() <= 1 / 8
    assert np.abs(disc.params["w2"].data).max() <= 1 / math.sqrt(32)


# ------------------------------------------------------------------ losses


def test_perfect_separation_unsup_near_zero():
    big = 50.0
    real = Tensor(np.array([[big, 0.0, -big], [0.0, big, -big]]))
    fake = Tensor(np.array([[-big, -big, big], [-big, -big, big]]))
    _, parts = discriminator_loss(real, [0, 1], [False, False], fake)
    assert parts.d_unsup_real + parts.d_unsup_fake < 1e-12
    assert parts.d_supervised == 0.0


def test_uniform_logits_unsup_value():
    z = Tensor(np.zeros((4, 3)))
    total, parts = discriminator_loss(z, [0, 1, 0, 1], [False] * 4, z)
    assert abs(parts.d_unsup_real + parts.d_unsup_fake - UNIFORM_UNSUP) < 1e-9
    assert abs(total.item() - UNIFORM_UNSUP) < 1e-9
    assert abs(UNIFORM_UNSUP - 1.5041) < 1e-4


def test_uniform_logits_supervised_is_log_c():
    z = Tensor(np.zeros((4, 3)))
    _, parts = discriminator_loss(z, [0, 1, 0, 1], [True, False, True, True], z)
    assert abs(parts.d_supervised - math.log(3)) < 1e-9


def test_supervised_term_only_sees_labeled_rows():
    real = Tensor(np.array([[5.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    fake = Tensor(np.zeros((2, 3)))
    _, a = discriminator_loss(real, [0, 1], [True, False], fake)
    _, b = discriminator_loss(real, [0, 0], [True, False], fake)
    assert a.d_supervised == b.d_supervised


def test_feature_matching_identical_is_zero():
    f = Tensor(Rng(0).normal((5, 4)))
    _, parts = generator_loss(f, f, Tensor(np.zeros((5, 3))))
    assert parts.g_feature_matching == 0.0


def test_feature_matching_mean_shift():
    f = Rng(0).normal((5, 4))
    v = np.array([0.5, -1.0, 2.0, 0.25])
    _, parts = generator_loss(Tensor(f + v), Tensor(f), Tensor(np.zeros((5, 3))))
    assert abs(parts.g_feature_matching - v @ v) < 1e-9


def test_generator_unsup_uniform():
    _, parts = generator_loss(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 3))))
    assert abs(parts.g_unsup + math.log(2 / 3)) < 1e-12


def test_generator_loss_width_mismatch():
    with pytest.raises(DimensionError):
        generator_loss(Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 5))), Tensor(np.zeros((2, 3))))


def test_losses_nonnegative_on_random_logits():
    rng = Rng(3)
    for _ in range(50):
        real, fake = Tensor(rng.normal((6, 3)) * 5), Tensor(rng.normal((6, 3)) * 5)
        labels = rng.integers(0, 2, size=6)
        mask = rng.uniform(6) < 0.5
        _, d = discriminator_loss(real, labels, mask, fake)
        _, g = generator_loss(Tensor(rng.normal((6, 4))), Tensor(rng.normal((6, 4))), fake)
        assert min(d.values()[:3]) >= 0 and min(g.values()[3:]) >= 0


def test_extreme_logits_stay_finite():
    real = Tensor(np.array([[800.0, -800.0, -900.0]]))
    fake = Tensor(np.array([[-700.0, -700.0, 900.0]]))
    _, d = discriminator_loss(real, [0], [True], fake)
    _, g = generator_loss(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), fake)
    assert d.finite() and g.finite()


def composed_losses(seed=0):
    """Toy setup: d=4, h=4, k=2, batch 2, dropout replayed from a fixed seed."""
    rng = Rng(seed)
    disc = Discriminator.init(rng.fork("d"), 4, 4, 3)
    gen = Generator.init(rng.fork("g"), 3, 4, 4)
    real = Tensor(rng.normal((2, 4)), requires_grad=True)
    noise = Tensor(rng.normal((2, 3)))
    labels, mask = np.array([0, 1]), np.array([True, False])

    def l_d():
        drop = Rng(99)
        fake = gen(noise, True, drop)
        logits, _ = discriminate(T.concat([real, fake], axis=0), disc, True, drop)
        return discriminator_loss(logits[:2], labels, mask, logits[2:])[0]

    def l_g():
        drop = Rng(77)
        fake = gen(noise, True, drop)
        logits, feats = discriminate(T.concat([real, fake], axis=0), disc, True, drop)
        return generator_loss(feats[:2], feats[2:], logits[2:])[0]

    return disc, gen, real, l_d, l_g


@pytest.mark.parametrize("which", ["L_D", "L_G"])
def test_composed_loss_gradcheck(which):
    disc, gen, real, l_d, l_g = composed_losses()
    f = l_d if which == "L_D" else l_g
    params = {"real": real, **{f"d.{n}": p for n, p in disc.params.items()},
              **{f"g.{n}": p for n, p in gen.params.items()}}
    T.zero_grad(params.values())
    T.backward(f(), list(params.values()))
    for name, p in params.items():
        num = numerical_gradient(lambda: f().item(), p.data, h=1e-5)
        assert rel_err(p.grad, num) < 1e-4, name


# ----------------------------------------------------------------- training


@pytest.fixture
def tiny_text():
    words = ["good", "bad", "food", "price", "nice", "awful"]
    vocab = Vocab(list(RESERVED) + words)
    rng = Rng(0)
    def review(i, label):
        pool = words[:3] if label == "authentic" else words[3:]
        return Review(str(i), " ".join(pool[j] for j in rng.integers(0, 3, size=5)), label)
    labeled = [review(i, DEFAULT_CLASSES[i % 2]) for i in range(8)]
    unlabeled = [Review(f"u{i}", review(i, DEFAULT_CLASSES[i % 2]).text, None) for i in range(8)]
    test = [review(f"t{i}", DEFAULT_CLASSES[i % 2]) for i in range(6)]
    cfg = EncoderConfig(len(vocab), model_dim=8, n_layers=1, n_heads=2, max_len=8)
    return vocab, DataSplit(labeled, unlabeled, test), cfg


def _snapshot(params):
    return {n: p.data.copy() for n, p in params.items()}


def _changed(before, params):
    return any(not np.array_equal(before[n], p.data) for n, p in params.items())


def test_train_step_updates_all_networks(tiny_text):
    vocab, split, ecfg = tiny_text
    enc = Encoder.init(ecfg, Rng(1))
    model = build_model(SsganConfig(noise_dim=5, lr_d=1e-3, lr_g=1e-3), DEFAULT_CLASSES, Rng(2), enc)
    src, _, _ = make_sources(split, DEFAULT_CLASSES, vocab, enc)
    snaps = [_snapshot(enc.params), _snapshot(model.discriminator.params), _snapshot(model.generator.params)]
    parts = train_step(model, src, np.arange(6), StepRngs.from_seed(Rng(3)))
    assert parts.finite()
    assert _changed(snaps[0], enc.params)
    assert _changed(snaps[1], model.discriminator.params)
    assert _changed(snaps[2], model.generator.params)


def test_frozen_encoder_untouched(tiny_text):
    vocab, split, ecfg = tiny_text
    enc = Encoder.init(ecfg, Rng(1))
    model = build_model(SsganConfig(noise_dim=5, freeze_encoder=True), DEFAULT_CLASSES, Rng(2), enc)
    src, _, _ = make_sources(split, DEFAULT_CLASSES, vocab, enc)
    before = _snapshot(enc.params)
    train_step(model, src, np.arange(6), StepRngs.from_seed(Rng(3)))
    for n, p in enc.params.items():
        assert np.array_equal(before[n], p.data), n


def test_mask_propagation(tiny_text):
    vocab, split, ecfg = tiny_text
    src, test_src, n_labeled = make_sources(split, DEFAULT_CLASSES, vocab, Encoder.init(ecfg, Rng(1)))
    assert n_labeled == 8 and len(src) == 16 and len(test_src) == 6
    batch = src.batch(np.arange(16))
    assert batch.labeled_mask.tolist() == [True] * 8 + [False] * 8
    assert (batch.labels[8:] == -1).all()


def test_train_log_length_and_determinism(tiny_text):
    vocab, split, ecfg = tiny_text
    cfg = SsganConfig(noise_dim=5, epochs=7, batch_size=4)
    runs = []
    for _ in range(2):
        _, log = train(split, cfg, vocab=vocab, encoder=Encoder.init(ecfg, Rng(1)), rng=Rng(4))
        runs.append(log)
    assert len(runs[0]) == 7 and [r.epoch for r in runs[0].records] == list(range(1, 8))
    assert runs[0].accuracies() == runs[1].accuracies()
    assert [r.losses for r in runs[0].records] == [r.losses for r in runs[1].records]


def test_supervised_training_has_no_generator(tiny_text):
    vocab, split, ecfg = tiny_text
    model, log = train(split, SsganConfig(epochs=2, batch_size=4), vocab=vocab,
                       encoder=Encoder.init(ecfg, Rng(1)), rng=Rng(4), supervised=True)
    assert model.generator is None and model.discriminator.n_out == 2
    assert len(log) == 2 and all(r.losses.g_unsup == 0.0 for r in log.records)


def test_embedding_mode_training():
    rng = Rng(8)
    def recs(prefix, n, labeled):
        out = []
        for i in range(n):
            lab = DEFAULT_CLASSES[i % 2]
            vec = rng.normal(6) + (2.0 if lab == "fake" else -2.0)
            out.append(EmbeddingRecord(f"{prefix}{i}", lab if labeled else None, vec))
        return out
    test = recs("t", 20, True)
    model, log = train((recs("l", 8, True), recs("u", 16, False), test),
                       SsganConfig(noise_dim=4, epochs=5, batch_size=8, lr_d=1e-2, lr_g=1e-2), rng=Rng(0))
    assert model.encoder is None and len(log) == 5
    assert log.records[-1].metrics.accuracy >= 0.9


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_partial_log(tiny_text):
    vocab, split, ecfg = tiny_text
    enc = Encoder.init(ecfg, Rng(1))
    enc.params["final_ln.gain"].data[:] = np.inf
    with pytest.raises(DivergenceError) as exc:
        train(split, SsganConfig(noise_dim=5, epochs=3, batch_size=4), vocab=vocab, encoder=enc, rng=Rng(0))
    assert exc.value.log is not None and len(exc.value.log) == 0
    assert exc.value.breakdown is not None


def test_class_count_mismatch():
    with pytest.raises(ConfigError):
        build_model(SsganConfig(k=2), ["a", "b", "c"], Rng(0), embed_dim=4)


# --------------------------------------------------------------- inference


def test_predict_excludes_fake_class():
    idx, probs = predict_from_logits(np.array([[2.0, 1.0, 5.0]]), 2)
    assert idx.tolist() == [0]
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert probs.shape == (1, 2)


def test_predict_tie_break_lowest():
    idx, _ = predict_from_logits(np.array([[1.0, 1.0, 0.0]]), 2)
    assert idx.tolist() == [0]


def test_predict_dimension_error():
    with pytest.raises(DimensionError):
        predict_from_logits(np.zeros((2, 1)), 2)


def test_generator_free_prediction(tiny_text, tmp_path):
    vocab, split, ecfg = tiny_text
    model, _ = train(split, SsganConfig(noise_dim=5, epochs=1, batch_size=4), vocab=vocab,
                     encoder=Encoder.init(ecfg, Rng(1)), rng=Rng(0))
    texts = [r.text for r in split.test]
    before = predict(model, texts, vocab)
    save_model(model, tmp_path / "m.ckpt", include_generator=False)
    loaded = load_model(tmp_path / "m.ckpt")
    assert loaded.generator is None
    after = predict(loaded, texts, vocab)
    assert before[0] == after[0]
    assert np.array_equal(before[1], after[1])
