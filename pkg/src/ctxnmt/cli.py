"""Command-line entry point: ``ctxnmt <command> ...``.

Exit status is 0 on success, 1 for invalid input or configuration and 2 for
failures while running.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import numerics as nx
from .context import ConfigurationError
from .data import (
    IngestionError,
    SpecError,
    Vocabulary,
    build_vocab,
    default_homograph_spec,
    gen_homograph_corpus,
    index_corpus,
    read_parallel,
    read_tokenized,
    write_labels,
    write_tokenized,
)
from .eval.align import align as align_pair
from .eval.align import format_pharaoh, read_pharaoh, train_aligner, write_pharaoh
from .eval.bleu import bleu
from .eval.homograph import SenseDictionary, TranslationPair, sense_bucket_report, word_translation_f1
from .inference import translate_corpus
from .numerics import ContractError, DomainError
from .seq2seq import ModelConfig, Seq2Seq, load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingDiverged, train

log = logging.getLogger("ctxnmt")

VALIDATION_ERRORS = (ConfigurationError, IngestionError, SpecError, ContractError, DomainError,
                     FileNotFoundError, IsADirectoryError, ValueError)


class CommandError(Exception):
    """Runtime failure reported with exit status 2."""


# ------------------------------------------------------------------ helpers


def _resolve(base: Path | None, value: str) -> Path:
    path = Path(value)
    if base is not None and not path.is_absolute() and not path.exists():
        return base / path
    return path


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _echo_config(cfg: dict, out_dir: Path | None) -> None:
    text = cfgmod.format_config(cfg)
    sys.stderr.write("# resolved configuration\n" + text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved.cfg").write_text(text, encoding="utf-8")


def _attach_run_log(out_dir: Path) -> logging.Handler:
    handler = logging.FileHandler(out_dir / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(name)s %(message)s"))
    root = logging.getLogger("ctxnmt")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return handler


def model_config_from(cfg: dict, src_vocab: int, tgt_vocab: int) -> ModelConfig:
    return ModelConfig(
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        d=cfg["d"],
        hidden=cfg["hidden"],
        enc_layers=cfg["enc_layers"],
        dec_layers=cfg["dec_layers"],
        bidirectional=cfg["encoder"] == "bi",
        context=cfg["context"],
        integration=cfg["integration"],
        context_hidden=cfg["context_hidden"],
        dropout=cfg["dropout"],
    )


def train_config_from(cfg: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        lr=cfg["lr"],
        clip_norm=cfg["clip_norm"],
        batch_size=cfg["batch_size"],
        max_len=cfg["max_len"],
        dropout=cfg["dropout"],
        min_delta=cfg["min_delta"],
        max_epochs=cfg["max_epochs"],
        seed=seed,
        schedule=cfg["schedule"],
    )


# ----------------------------------------------------------------- commands


def cmd_build_vocab(args) -> None:
    sents = read_tokenized(_require(Path(args.input)))
    vocab = build_vocab(sents, args.size)
    vocab.save(args.output)
    print(f"{len(vocab)} entries written to {args.output}")


def cmd_gen_synthetic(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = default_homograph_spec(args.homographs, args.fillers, seed=args.seed)
    spec.length_range = (args.min_len, args.max_len)
    seeds = np.random.SeedSequence(args.seed).spawn(3)
    for split, n, ss in zip(("train", "dev", "test"), (args.pairs, args.dev_pairs, args.test_pairs), seeds):
        if n <= 0:
            continue
        corpus, labels = gen_homograph_corpus(spec, n, seed=int(ss.generate_state(1)[0]))
        write_tokenized(out / f"{split}.src", corpus.sources)
        write_tokenized(out / f"{split}.tgt", corpus.targets)
        write_labels(out / f"{split}.labels", labels)
    (out / "homographs.txt").write_text("".join(h + "\n" for h in spec.senses), encoding="utf-8")
    print(f"synthetic corpus written to {out}")


def cmd_train(args) -> None:
    cfg = cfgmod.load_config(args.config, args.set)
    base = Path(args.config).parent if args.config else None
    out = Path(args.out)
    _echo_config(cfg, out)
    handler = _attach_run_log(out)
    try:
        _run_training(cfg, base, out, args.seed)
    finally:
        logging.getLogger("ctxnmt").removeHandler(handler)
        handler.close()


def _run_training(cfg: dict, base: Path | None, out: Path, seed: int) -> None:
    for key in ("train_src", "train_tgt", "dev_src", "dev_tgt"):
        if not cfg[key]:
            raise ConfigurationError(f"config key {key!r} must name a file")
    train_corpus = read_parallel(_require(_resolve(base, cfg["train_src"])), _require(_resolve(base, cfg["train_tgt"])))
    dev_corpus = read_parallel(_require(_resolve(base, cfg["dev_src"])), _require(_resolve(base, cfg["dev_tgt"])))
    src_vocab = build_vocab(train_corpus.sources, cfg["src_vocab_size"])
    tgt_vocab = build_vocab(train_corpus.targets, cfg["tgt_vocab_size"])
    src_vocab.save(out / "src.vocab")
    tgt_vocab.save(out / "tgt.vocab")
    train_ix = index_corpus(train_corpus, src_vocab, tgt_vocab)
    dev_ix = index_corpus(dev_corpus, src_vocab, tgt_vocab)

    mcfg = model_config_from(cfg, len(src_vocab), len(tgt_vocab))
    tcfg = train_config_from(cfg, seed)
    dtype = np.float32 if cfg["dtype"] == "float32" else np.float64
    model = Seq2Seq.init(mcfg, np.random.default_rng(seed), dtype=dtype, scale=cfg["init_scale"])
    meta = {"src_vocab": src_vocab.regular_tokens, "tgt_vocab": tgt_vocab.regular_tokens}
    log.info("parameters %d", model.num_parameters())

    def on_epoch(epoch, m, rec):
        save_checkpoint(out / f"epoch{epoch}.ckpt", m, meta)

    try:
        model, tlog = train(model, train_ix, dev_ix, tcfg, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            save_checkpoint(out / "model.ckpt", exc.last_good, meta)
        (out / "train_log.tsv").write_text(exc.log.to_tsv(cfg["log_timing"]), encoding="utf-8")
        raise CommandError(f"{exc}; last good model saved to {out / 'model.ckpt'}") from exc
    save_checkpoint(out / "model.ckpt", model, meta)
    (out / "train_log.tsv").write_text(tlog.to_tsv(cfg["log_timing"]), encoding="utf-8")
    log.info("stopped: %s after %d epochs", tlog.stopped, len(tlog.epochs))
    print(f"trained {len(tlog.epochs)} epochs ({tlog.stopped}); dev ppl {tlog.epochs[-1].dev_ppl:.4f}")


def cmd_translate(args) -> None:
    model, meta = load_checkpoint(_require(Path(args.model)))
    src_vocab = Vocabulary(meta["src_vocab"])
    tgt_vocab = Vocabulary(meta["tgt_vocab"])
    path = _require(Path(args.input))
    lines = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            lines.append((lineno, line.split()))
    out = []
    for lineno, sent in lines:
        try:
            out.extend(translate_corpus(model, [sent], src_vocab, tgt_vocab, args.beam, args.max_len_factor))
        except Exception as exc:
            raise CommandError(f"{path}:{lineno}: {exc}") from exc
    text = "".join(s + "\n" for s in out)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_score_bleu(args) -> None:
    refs = read_tokenized(_require(Path(args.ref)))
    hyps = read_tokenized(_require(Path(args.hyp)))
    print(f"{bleu(refs, hyps):.4f}")


def cmd_align(args) -> None:
    pairs = read_parallel(_require(Path(args.src)), _require(Path(args.tgt))).pairs
    pool = list(pairs)
    for s, t in zip(args.pool_src or [], args.pool_tgt or []):
        pool.extend(read_parallel(_require(Path(s)), _require(Path(t))).pairs)
    if len(args.pool_src or []) != len(args.pool_tgt or []):
        raise ConfigurationError("--pool-src and --pool-tgt must be given the same number of times")
    fwd = train_aligner(pool, args.iterations, "forward")
    bwd = train_aligner(pool, args.iterations, "backward")
    links = [align_pair(p, fwd, bwd) for p in pairs]
    if args.output:
        write_pharaoh(args.output, links)
    else:
        for item in links:
            print(format_pharaoh(item))


def _translation_pairs(args) -> list[TranslationPair]:
    src = read_tokenized(_require(Path(args.src)))
    ref = read_tokenized(_require(Path(args.ref)))
    hyp = read_tokenized(_require(Path(args.hyp)))
    ref_al = read_pharaoh(_require(Path(args.ref_align)))
    hyp_al = read_pharaoh(_require(Path(args.hyp_align)))
    counts = {len(src), len(ref), len(hyp), len(ref_al), len(hyp_al)}
    if len(counts) != 1:
        raise IngestionError(
            f"line counts differ: src {len(src)}, ref {len(ref)}, hyp {len(hyp)}, "
            f"ref-align {len(ref_al)}, hyp-align {len(hyp_al)}"
        )
    pairs = []
    for n, (s, r, h, ra, ha) in enumerate(zip(src, ref, hyp, ref_al, hyp_al), start=1):
        for links, side, name in ((ra, r, "ref-align"), (ha, h, "hyp-align")):
            if any(i >= len(s) or j >= len(side) for i, j in links):
                raise IngestionError(f"{name} line {n}: link outside sentence bounds")
        pairs.append(TranslationPair(s, r, h, ra, ha))
    return pairs


def _write(text: str, path) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_eval_homograph(args) -> None:
    pairs = _translation_pairs(args)
    words = [w for w in Path(_require(Path(args.homographs))).read_text(encoding="utf-8").split()]
    senses = SenseDictionary.load(args.senses, args.stop_words) if args.senses else None
    stop = senses.stop_words if senses else set()
    if args.stop_words and not senses:
        stop = {w for w in Path(args.stop_words).read_text(encoding="utf-8").split()}
    report = word_translation_f1(pairs, words, stop)
    if senses is not None:
        report.buckets = sense_bucket_report({w: c.f1 for w, c in report.per_word.items()}, senses)
    _write(report.to_tsv(), args.output)
    if args.json:
        Path(args.json).write_text(report.to_json() + "\n", encoding="utf-8")


def cmd_bucket_report(args) -> None:
    pairs = _translation_pairs(args)
    senses = SenseDictionary.load(_require(Path(args.senses)), args.stop_words)
    report = word_translation_f1(pairs, None, senses.stop_words)
    report.buckets = sense_bucket_report({w: c.f1 for w, c in report.per_word.items()}, senses)
    _write("".join(f"{b.senses[0]}-{b.senses[-1]}\t{b.value:.4f}\n" for b in report.buckets), args.output)


def cmd_grad_check(args) -> None:
    cfg = cfgmod.load_config(args.config, args.set)
    _echo_config(cfg, None)
    rng = np.random.default_rng(args.seed)
    mcfg = model_config_from(cfg, args.vocab, args.vocab)
    model = Seq2Seq.init(mcfg, rng, dtype=np.float64, scale=cfg["init_scale"])
    src = rng.integers(5, args.vocab, size=3)
    tgt = np.concatenate([[2], rng.integers(5, args.vocab, size=4), [3]])
    per_tensor: dict[str, float] = {}
    err = nx.grad_check(lambda: model.forward_loss(src, tgt)[0], model.params, args.eps, per_tensor)
    for name, e in per_tensor.items():
        print(f"{name}\t{e:.3e}")
    print(f"max relative error {err:.3e}")
    if not err < args.tol:
        raise CommandError(f"gradient check failed: {err:.3e} >= {args.tol:g}")


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxnmt",
        description="Context-aware word embeddings for attention NMT, with homograph evaluation.",
        epilog=cfgmod.describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, fn, help_text, **kw):
        p = sub.add_parser(name, help=help_text, description=help_text,
                           formatter_class=argparse.RawDescriptionHelpFormatter, **kw)
        p.set_defaults(fn=fn)
        return p

    p = add("build-vocab", cmd_build_vocab, "build a frequency-truncated vocabulary")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--size", type=int, default=50000)

    p = add("gen-synthetic", cmd_gen_synthetic, "write a synthetic homograph corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=10000)
    p.add_argument("--dev-pairs", type=int, default=500)
    p.add_argument("--test-pairs", type=int, default=1000)
    p.add_argument("--homographs", type=int, default=8)
    p.add_argument("--fillers", type=int, default=40)
    p.add_argument("--min-len", type=int, default=5)
    p.add_argument("--max-len", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)

    p = add("train", cmd_train, "train a model", epilog=cfgmod.describe_keys())
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)

    p = add("translate", cmd_translate, "translate a tokenized file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len-factor", type=float, default=2.0)

    p = add("score-bleu", cmd_score_bleu, "corpus BLEU of a hypothesis file")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)

    p = add("align", cmd_align, "IBM Model 1 alignments symmetrized with grow-diag-final-and")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--pool-src", action="append", help="extra training source (repeatable)")
    p.add_argument("--pool-tgt", action="append", help="extra training target (repeatable)")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--output")

    for name, fn, text in (
        ("eval-homograph", cmd_eval_homograph, "word-translation P/R/F1 for a word list"),
        ("bucket-report", cmd_bucket_report, "F1 by number of senses, four-bucket smoothing"),
    ):
        p = add(name, fn, text)
        p.add_argument("--src", required=True)
        p.add_argument("--ref", required=True)
        p.add_argument("--hyp", required=True)
        p.add_argument("--ref-align", required=True)
        p.add_argument("--hyp-align", required=True)
        p.add_argument("--senses", required=name == "bucket-report")
        p.add_argument("--stop-words")
        p.add_argument("--output")
        if name == "eval-homograph":
            p.add_argument("--homographs", required=True)
            p.add_argument("--json")

    p = add("grad-check", cmd_grad_check, "finite-difference check of a small model", epilog=cfgmod.describe_keys())
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab", type=int, default=12, help="source and target vocabulary size")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        args.fn(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
