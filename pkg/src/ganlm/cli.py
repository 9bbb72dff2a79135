"""Command-line entry point.

Output layout under ``--out-dir`` (default from the config, ``out``)::

    splits/        labeled.jsonl unlabeled.jsonl test.jsonl
    checkpoints/   encoder.ckpt ssgan.ckpt supervised.ckpt
    logs/          pretrain.csv trainlog_<model>_<n_labeled>.csv
    reports/       results.csv results.png curves/<model>_<n>.csv curves/<model>_<n>.png
    embeddings/    labeled.emb unlabeled.emb test.emb

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from .config import PRESETS, RunConfig, apply_preset, load_config
from .data import (
    DataSplit,
    SplitSpec,
    Vocab,
    build_vocab,
    export_embeddings,
    load_corpus,
    make_split,
    read_embeddings,
    synthetic_benchmark_corpus,
    write_corpus,
)
from .encoder import Encoder, EncoderConfig, encoder_from_component, load_checkpoint, mlm_pretrain, save_checkpoint
from .errors import DataError, DimensionError, DivergenceError
from .metrics import RunResult, emit_curves, emit_results_table, read_curve, read_results_table, write_trainlog
from .rng import Rng
from .ssgan import SsganConfig, evaluate_source, load_model, make_sources, predict, predict_embeddings, save_model, train
from .textnorm import normalize_text

log = logging.getLogger("ganlm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config file (key = value with [sections])")
    p.add_argument("--seed", type=int, help="overrides [run] seed")
    p.add_argument("--out-dir", help="overrides [paths] out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ganlm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"ganlm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("normalize", help="normalize line-delimited text")
    _common(p)
    p.add_argument("--input", "-i", help="input file (default stdin)")
    p.add_argument("--output", "-o", help="output file (default stdout)")

    p = sub.add_parser("synth", help="write a synthetic labeled corpus")
    _common(p)
    p.add_argument("--output", "-o", help="corpus path (default <out>/corpus.jsonl)")
    p.add_argument("--n-per-class", type=int, default=1100)
    p.add_argument("--marker-rate", type=float, default=0.3)
    p.add_argument("--vocab-size", type=int, default=500)
    p.add_argument("--text-len", type=int, default=64)

    p = sub.add_parser("build-vocab", help="build a vocabulary file from a corpus")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--output", "-o", help="vocab path (default <out>/vocab.txt)")
    p.add_argument("--max-vocab", type=int)
    p.add_argument("--min-freq", type=int)

    p = sub.add_parser("split", help="labeled / unlabeled / test split")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--n-labeled", type=int)
    p.add_argument("--n-unlabeled", type=int)
    p.add_argument("--n-test", type=int)

    p = sub.add_parser("pretrain", help="masked-language-model pretraining of the encoder")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--vocab")
    p.add_argument("--epochs", type=int)

    for name, text in (("train-ssgan", "semi-supervised GAN fine-tuning"),
                       ("train-supervised", "supervised baseline on labeled data only")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--split-dir")
        p.add_argument("--vocab")
        p.add_argument("--encoder-checkpoint", help="initialize the encoder from this checkpoint")
        p.add_argument("--embeddings-dir", help="train on precomputed embeddings (encoder bypassed)")
        p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="evaluate checkpoints on the test split")
    _common(p)
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--split-dir")
    p.add_argument("--vocab")
    p.add_argument("--embeddings-dir")

    p = sub.add_parser("predict", help="classify texts or embedding vectors")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab")
    p.add_argument("--input", "-i", help="texts, one per line (default stdin)")
    p.add_argument("--embeddings", help="embedding file instead of texts")

    p = sub.add_parser("export-embeddings", help="write sentence embeddings of a split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split-dir")
    p.add_argument("--vocab")
    return parser


# ----------------------------------------------------------------- helpers


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out_dir is not None:
        cfg.paths.out_dir = args.out_dir
    return cfg


def _out(cfg: RunConfig, *parts: str) -> Path:
    path = Path(cfg.paths.out_dir, *parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _need(value, what: str):
    if value is None:
        raise DataError(f"no {what} given (flag or config)")
    return value


def _vocab(args, cfg) -> Vocab:
    path = args.vocab or cfg.paths.vocab or _out(cfg, "vocab.txt")
    return Vocab.load(path)


def _split_dir(args, cfg) -> Path:
    return Path(args.split_dir or cfg.paths.split_dir or Path(cfg.paths.out_dir, "splits"))


def _encoder_config(cfg: RunConfig, vocab_size: int) -> EncoderConfig:
    e = cfg.encoder
    return EncoderConfig(vocab_size, e.model_dim, e.n_layers, e.n_heads, e.ffn_dim, e.max_len, e.dropout)


def _ssgan_config(cfg: RunConfig, epochs: int | None) -> SsganConfig:
    s = cfg.ssgan
    return SsganConfig(batch_size=s.batch_size, lr_d=s.lr_d, lr_g=s.lr_g,
                       epochs=s.epochs if epochs is None else epochs, noise_dim=s.noise_dim, k=cfg.k,
                       seed=cfg.run.seed, hidden_dim=s.hidden_dim, weight_decay=s.weight_decay,
                       freeze_encoder=s.freeze_encoder)


def _load_encoder(path) -> Encoder:
    manifest, arrays = load_checkpoint(path)
    if "encoder" not in manifest["components"]:
        raise DataError(f"{path}: checkpoint has no encoder component")
    return encoder_from_component(manifest["components"]["encoder"]["config"], arrays["encoder"])


def _embedding_split(directory):
    directory = Path(directory)
    return tuple(read_embeddings(directory / f"{part}.emb") for part in ("labeled", "unlabeled", "test"))


# ---------------------------------------------------------------- commands


def cmd_normalize(args) -> int:
    cfg = _config(args)
    src = open(args.input, encoding="utf-8") if args.input else sys.stdin
    dst = open(args.output, "w", encoding="utf-8", newline="\n") if args.output else sys.stdout
    try:
        for line in src:
            dst.write(normalize_text(line.rstrip("\n"), cfg.normalizer) + "\n")
    finally:
        if args.input:
            src.close()
        if args.output:
            dst.close()
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _config(args)
    corpus = synthetic_benchmark_corpus(cfg.run.seed, args.n_per_class, args.marker_rate, args.vocab_size,
                                        args.text_len, cfg.run.classes)
    path = Path(args.output) if args.output else _out(cfg, "corpus.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, path)
    print(f"wrote {len(corpus)} reviews to {path}")
    return EXIT_OK


def cmd_build_vocab(args) -> int:
    cfg = _config(args)
    corpus = load_corpus(_need(args.corpus or cfg.paths.corpus, "corpus"), cfg.run.classes, cfg.normalizer)
    vocab = build_vocab(corpus, args.max_vocab or cfg.encoder.max_vocab, args.min_freq or cfg.encoder.min_freq)
    path = Path(args.output) if args.output else _out(cfg, "vocab.txt")
    path.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(path)
    print(f"wrote {len(vocab)} tokens to {path}")
    return EXIT_OK


def cmd_split(args) -> int:
    cfg = _config(args)
    if args.preset:
        apply_preset(cfg, args.preset)
    sp = cfg.split
    spec = SplitSpec(args.n_labeled if args.n_labeled is not None else sp.n_labeled,
                     args.n_unlabeled if args.n_unlabeled is not None else sp.n_unlabeled,
                     args.n_test if args.n_test is not None else sp.n_test,
                     cfg.run.seed, sp.stratified)
    corpus = load_corpus(_need(args.corpus or cfg.paths.corpus, "corpus"), cfg.run.classes, cfg.normalizer)
    split = make_split(corpus, spec)
    out = Path(cfg.paths.out_dir, "splits")
    split.save(out)
    print("split sizes (labeled, unlabeled, test): {} {} {} -> {}".format(*split.sizes(), out))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    corpus = load_corpus(_need(args.corpus or cfg.paths.corpus, "corpus"), cfg.run.classes, cfg.normalizer)
    vocab = _vocab(args, cfg)
    epochs = args.epochs if args.epochs is not None else cfg.encoder.pretrain_epochs
    res = mlm_pretrain(corpus, vocab, _encoder_config(cfg, len(vocab)), epochs, Rng(cfg.run.seed).fork("pretrain"),
                       lr=cfg.encoder.pretrain_lr, batch_size=cfg.ssgan.batch_size, mask_rate=cfg.encoder.mask_rate)
    from .encoder import encoder_component

    save_checkpoint(_out(cfg, "checkpoints", "encoder.ckpt"), {"encoder": encoder_component(res.encoder)},
                    {"kind": "mlm-pretrained", "epochs": epochs, "seed": cfg.run.seed})
    with open(_out(cfg, "logs", "pretrain.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mlm_loss"])
        for i, v in enumerate(res.history, start=1):
            w.writerow([i, f"{v:.5f}"])
    print(f"pretrained {epochs} epochs; loss history {[round(v, 4) for v in res.history]}")
    return EXIT_OK


def _train(args, supervised: bool) -> int:
    cfg = _config(args)
    scfg = _ssgan_config(cfg, args.epochs)
    rng = Rng(cfg.run.seed)
    name = cfg.run.model_name + ("-supervised" if supervised else "")
    if args.embeddings_dir:
        split, vocab, encoder = _embedding_split(args.embeddings_dir), None, None
    else:
        vocab = _vocab(args, cfg)
        split = DataSplit.load(_split_dir(args, cfg), cfg.run.classes)
        init = args.encoder_checkpoint or cfg.paths.encoder_checkpoint
        if init:
            encoder = _load_encoder(init)
            if encoder.config.vocab_size != len(vocab):
                raise DimensionError(f"encoder checkpoint expects vocab_size {encoder.config.vocab_size}, "
                                     f"vocab has {len(vocab)} entries")
        else:
            encoder = Encoder.init(_encoder_config(cfg, len(vocab)), rng.fork("encoder"))
    try:
        model, tlog = train(split, scfg, cfg.run.classes, vocab, encoder, rng, cfg.run.positive_class, name,
                            supervised=supervised)
    except DivergenceError as exc:
        if exc.log is not None and exc.log.records:
            write_trainlog(exc.log, _out(cfg, "logs", f"trainlog_{name}_{exc.log.n_labeled}.csv"))
        raise
    ckpt = _out(cfg, "checkpoints", "supervised.ckpt" if supervised else "ssgan.ckpt")
    save_model(model, ckpt, meta={"model_name": name, "n_labeled": tlog.n_labeled, "seed": cfg.run.seed,
                                  "positive_class": cfg.run.positive_class})
    write_trainlog(tlog, _out(cfg, "logs", f"trainlog_{name}_{tlog.n_labeled}.csv"))
    if tlog.records:
        curves_dir = Path(cfg.paths.out_dir, "reports", "curves")
        curve = emit_curves(tlog, curves_dir)
        from .plotting import plot_accuracy_curves

        plot_accuracy_curves({tlog.n_labeled: read_curve(curve)}, name, curve.with_suffix(".png"))
        last = tlog.records[-1].metrics
        print(f"{name}: {len(tlog)} epochs, final test accuracy {last.accuracy:.5f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    runs = []
    for path in args.checkpoint:
        model = load_model(path)
        manifest, _ = load_checkpoint(path)
        meta = manifest["meta"]
        if args.embeddings_dir:
            split = _embedding_split(args.embeddings_dir)
            _, test_src, _ = make_sources(split, model.classes)
        else:
            vocab = _vocab(args, cfg)
            if model.encoder is None:
                raise DimensionError(f"{path}: checkpoint has no encoder; use --embeddings-dir")
            if model.encoder.config.vocab_size != len(vocab):
                raise DimensionError(f"{path}: checkpoint encoder expects vocab_size "
                                     f"{model.encoder.config.vocab_size}, vocab has {len(vocab)} entries")
            split = DataSplit.load(_split_dir(args, cfg), model.classes)
            _, test_src, _ = make_sources(split, model.classes, vocab, model.encoder)
        positive = meta.get("positive_class", cfg.run.positive_class)
        report = evaluate_source(model, test_src, positive)
        runs.append(RunResult(meta.get("model_name", Path(path).stem), int(meta.get("n_labeled", 0)), report))
    out = _out(cfg, "reports", "results.csv")
    emit_results_table(runs, out)
    from .plotting import plot_results

    positives = sorted({r.report.positive_class for r in runs})
    plot_results(read_results_table(out), out.with_suffix(".png"), f"positive class: {', '.join(positives)}")
    for r in runs:
        m = r.report
        print(f"{r.model} n_labeled={r.n_labeled} positive={m.positive_class} accuracy={m.accuracy:.5f} "
              f"tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn}")
    print(f"wrote {out} (precision/recall/F1 with positive class {', '.join(positives)})")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _config(args)
    model = load_model(args.checkpoint)
    if args.embeddings:
        records = read_embeddings(args.embeddings)
        import numpy as np

        vecs = np.stack([r.vector for r in records]) if records else np.zeros((0, model.discriminator.in_dim))
        idx, probs = predict_embeddings(model, vecs)
        ids = [r.id for r in records]
        labels = [model.classes[i] for i in idx]
    else:
        src = open(args.input, encoding="utf-8") if args.input else sys.stdin
        texts = [normalize_text(line.rstrip("\n"), cfg.normalizer) for line in src]
        if args.input:
            src.close()
        vocab = _vocab(args, cfg)
        if model.encoder is not None and model.encoder.config.vocab_size != len(vocab):
            raise DimensionError(f"checkpoint encoder expects vocab_size {model.encoder.config.vocab_size}, "
                                 f"vocab has {len(vocab)} entries")
        labels, probs = predict(model, [t if t else " " for t in texts], vocab)
        ids = [str(i + 1) for i in range(len(texts))]
    print("\t".join(["id", "label", *(f"p_{c}" for c in model.classes)]))
    for rid, lab, p in zip(ids, labels, probs):
        print("\t".join([rid, lab, *(f"{v:.5f}" for v in p)]))
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    cfg = _config(args)
    encoder = _load_encoder(args.checkpoint)
    vocab = _vocab(args, cfg)
    if encoder.config.vocab_size != len(vocab):
        raise DimensionError(f"checkpoint encoder expects vocab_size {encoder.config.vocab_size}, "
                             f"vocab has {len(vocab)} entries")
    split = DataSplit.load(_split_dir(args, cfg), cfg.run.classes)
    for part in ("labeled", "unlabeled", "test"):
        path = _out(cfg, "embeddings", f"{part}.emb")
        export_embeddings(getattr(split, part), encoder, vocab, path)
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "normalize": cmd_normalize,
    "synth": cmd_synth,
    "build-vocab": cmd_build_vocab,
    "split": cmd_split,
    "pretrain": cmd_pretrain,
    "train-ssgan": lambda a: _train(a, supervised=False),
    "train-supervised": lambda a: _train(a, supervised=True),
    "eval": cmd_eval,
    "predict": cmd_predict,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"ganlm: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, FileNotFoundError, IsADirectoryError, IndexError) as exc:
        print(f"ganlm: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
