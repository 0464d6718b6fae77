"""Command-line entry point: train, eval, gradcheck, ablate, visualize.

Exit codes: 0 ok, 1 configuration/usage/checkpoint error, 2 data error,
3 numeric failure (non-finite values or a failed gradient check).
"""

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .ablation import parse_suite, report_csv, run_ablation
from .checkpoint import load_model, save_checkpoint
from .config import ConfigError, load_run_config, to_key_values
from .gradcheck import MODEL_CHECK_STEP, check_model, micro_problem
from .model import DRCN
from .serialize import FormatError
from .synthetic import make_alignment_task, split
from .text import DataError, Vocab, load_glove, load_pairs
from .train import Ensemble, NumericAbort, evaluate, log_csv, train
from .visualize import diagnose, write_csvs

log = logging.getLogger("drcn")

GRADCHECK_TOLERANCE = 1e-4


class Usage(Exception):
    """Bad flags or flag combinations (exit 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _seed(args, fallback):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("DRCN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"DRCN_SEED must be an integer, got {env!r}") from None
    return fallback


def _echo_config(run, out=None):
    text = to_key_values(run.model, run.train)
    extra = "".join(f"{k}={v}\n" for k, v in sorted(run.data.items()))
    sys.stderr.write(text + extra)
    if out is not None:
        (out / "config.txt").write_text(text + extra, encoding="utf-8")


def _read_pairs(path, num_classes, fmt=None):
    if not path:
        raise DataError("no data file given")
    pairs, skipped = load_pairs(path, format=fmt, num_classes=num_classes)
    if skipped:
        log.warning("%s: skipped %d malformed or unlabeled lines", path, skipped)
    return pairs


def _vocab_dir(args, default):
    return Path(args.vocab_dir) if getattr(args, "vocab_dir", None) else Path(default)


def _load_vocabs(directory):
    directory = Path(directory)
    vpath, cpath = directory / "vocab.tsv", directory / "chars.tsv"
    for p in (vpath, cpath):
        if not p.exists():
            raise FormatError(f"missing vocabulary dump {p}")
    return Vocab.load(vpath), Vocab.load(cpath)


# ------------------------------------------------------------------ commands

def cmd_train(args):
    run = load_run_config(args.config)
    seed = _seed(args, run.train.seed)
    run.train = replace(run.train, seed=seed).validate()
    if args.epochs is not None:
        run.train = replace(run.train, max_epochs=args.epochs).validate()
    train_path = args.train or run.data.get("train")
    dev_path = args.dev or run.data.get("dev")
    if not train_path:
        raise ConfigError("no training file: pass --train or set train= in the config")
    if not dev_path:
        raise ConfigError("no dev file: pass --dev or set dev= in the config")
    fmt = run.data.get("format")
    train_pairs = _read_pairs(train_path, run.model.num_classes, fmt)
    dev_pairs = _read_pairs(dev_path, run.model.num_classes, fmt)
    vocab, chars = Vocab.build(train_pairs), Vocab.build_chars(train_pairs)
    model_cfg = replace(run.model, vocab_size=len(vocab), char_vocab_size=len(chars)).validate()
    run.model = model_cfg
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(run, out)

    vectors = None
    glove = args.glove or run.data.get("glove")
    if glove:
        table = load_glove(glove, vocab, np.random.default_rng(seed), dim=model_cfg.word_dim)
        log.info("embeddings: %d/%d tokens found (%.1f%%)", table.found, len(vocab) - 2,
                 100 * table.coverage)
        vectors = table.matrix
    model = DRCN(model_cfg, seed=seed, word_vectors=vectors)
    log.info("model: %d trainable parameters (excluding embeddings)",
             model.num_parameters(include_embeddings=False))
    result = train(model, train_pairs, dev_pairs, vocab, chars, run.train)
    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    save_checkpoint(out / "checkpoint.drcn", model)
    vocab.dump(out / "vocab.tsv")
    chars.dump(out / "chars.tsv")
    (out / "train_log.csv").write_text(log_csv(result.log, timing=not args.no_timing),
                                      encoding="utf-8")
    print(f"best_dev_acc\t{result.best_dev_acc:.6f}")
    print(f"epochs\t{len(result.log)}")
    print(f"steps\t{result.steps}")
    return 0


def cmd_eval(args):
    if not args.checkpoint and not args.ensemble:
        raise Usage("eval needs --checkpoint or --ensemble")
    if args.ensemble:
        paths = sorted(Path(args.ensemble).glob("*.drcn"))
        if args.checkpoint:
            paths = [Path(args.checkpoint)] + [p for p in paths if p != Path(args.checkpoint)]
        if not paths:
            raise FormatError(f"no *.drcn checkpoints in {args.ensemble}")
        vocab_dir = _vocab_dir(args, args.ensemble)
    else:
        paths = [Path(args.checkpoint)]
        vocab_dir = _vocab_dir(args, Path(args.checkpoint).parent)
    members = [load_model(p) for p in paths]
    model = members[0] if len(members) == 1 and not args.ensemble else Ensemble(members)
    vocab, chars = _load_vocabs(vocab_dir)
    cfg = members[0].config
    for m in members:
        if m.config.vocab_size != len(vocab) or m.config.char_vocab_size != len(chars):
            raise FormatError(f"vocabulary in {vocab_dir} does not match the checkpoint")
    pairs = _read_pairs(args.data, cfg.num_classes, args.format)
    ranking = None if args.metric in ("all", "acc") else True
    report = evaluate(model, pairs, vocab, chars, args.max_len, ranking=ranking)
    if args.metric in ("map", "mrr") and report.map is None:
        raise DataError("ranking metrics need group ids and a binary task")
    if report.excluded_groups:
        log.info("excluded %d ranking groups without both labels", report.excluded_groups)
    print("\n".join(report.lines(args.metric)))
    return 0


def cmd_gradcheck(args):
    run = load_run_config(args.config)
    modes = ["dense", "residual", "plain"] if args.mode == "all" else args.mode.split(",")
    attn = {"on": [True], "off": [False], "both": [True, False]}[args.attention]
    t0 = time.perf_counter()
    worst = None
    lines = []
    with T.dtype_scope(np.float64):
        for mode in modes:
            for a in attn:
                cfg = replace(run.model, connection_mode=mode.strip(), use_attention=a)
                model, batch = micro_problem(cfg, seed=_seed(args, 0))
                res = check_model(model, batch, h=args.h)
                lines.append(f"{mode}\tattention={'on' if a else 'off'}\t"
                             f"{res.max_rel_error:.3e}\t{res.worst_param}")
                if worst is None or res.max_rel_error > worst.max_rel_error:
                    worst = res
    lines.append(f"max_rel_error\t{worst.max_rel_error:.3e}")
    lines.append(f"worst_param\t{worst.worst_param}")
    print("\n".join(lines))
    log.info("gradcheck took %.1fs", time.perf_counter() - t0)
    if not worst.max_rel_error < GRADCHECK_TOLERANCE:
        print(f"gradient check failed: {worst.max_rel_error:.3e} >= {GRADCHECK_TOLERANCE:g} "
              f"at {worst.worst_param}{list(worst.worst_index)}", file=sys.stderr)
        return 3
    return 0


def _parse_depths(text):
    if text is None:
        return None
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split(".."))
            depths = list(range(lo, hi + 1))
        else:
            depths = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise Usage(f"bad --depth-sweep {text!r}; use e.g. 1..5 or 1,3,5") from None
    if not depths or min(depths) < 1:
        raise Usage(f"bad --depth-sweep {text!r}")
    return depths


def cmd_ablate(args):
    suite = parse_suite(args.suite)
    depths = _parse_depths(args.depth_sweep)
    run = load_run_config(args.config)
    seed = _seed(args, run.train.seed)
    run.train = replace(run.train, seed=seed)
    if args.budget is not None:
        run.train = replace(run.train, max_epochs=args.budget)
    run.train.validate()
    if args.data == "synthetic":
        pairs = make_alignment_task(args.n, seed=seed)
    else:
        pairs = _read_pairs(args.data, run.model.num_classes, run.data.get("format"))
        pairs = [pairs[i] for i in np.random.default_rng(seed).permutation(len(pairs))]
    tr, dv, te = split(pairs)
    if not tr or not dv or not te:
        raise DataError("too few pairs to split into train/dev/test")
    vocab, chars = Vocab.build(tr), Vocab.build_chars(tr)
    base = replace(run.model, vocab_size=len(vocab), char_vocab_size=len(chars))
    _echo_config(run)
    rows = run_ablation(suite, (tr, dv, te, vocab, chars, None), base, run.train,
                        seed=seed, depths=depths, jobs=args.jobs)
    text = report_csv(rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_visualize(args):
    model = load_model(args.checkpoint)
    vocab, chars = _load_vocabs(_vocab_dir(args, Path(args.checkpoint).parent))
    diag = diagnose(model, vocab, chars, args.premise, args.hypothesis)
    for path in write_csvs(diag, args.out):
        print(path)
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="drcn", description="Densely-connected recurrent co-attentive network")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--config", default="paper-snli", help="preset name or key=value file")
    t.add_argument("--train")
    t.add_argument("--dev")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--glove", help="GloVe-format text file")
    t.add_argument("--epochs", type=int, help="override max_epochs")
    t.add_argument("--no-timing", action="store_true",
                   help="write 0 in the seconds column so logs are reproducible")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or an ensemble")
    e.add_argument("--checkpoint")
    e.add_argument("--ensemble", help="directory of *.drcn checkpoints to average")
    e.add_argument("--data", required=True)
    e.add_argument("--metric", choices=("acc", "map", "mrr", "all"), default="all")
    e.add_argument("--format", choices=("tsv", "jsonl"))
    e.add_argument("--max-len", type=int, default=64)
    e.add_argument("--vocab-dir", help="directory holding vocab.tsv and chars.tsv")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of the whole model")
    g.add_argument("--config", default="micro")
    g.add_argument("--mode", default="all", help="dense, residual, plain, a comma list, or all")
    g.add_argument("--attention", choices=("on", "off", "both"), default="both")
    g.add_argument("--h", type=float, default=MODEL_CHECK_STEP)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train ablation variants and report test accuracy")
    a.add_argument("--suite", default="all", help="comma-separated variant names or 'all'")
    a.add_argument("--data", default="synthetic", help="'synthetic' or a labelled pair file")
    a.add_argument("--config", default="synthetic")
    a.add_argument("--budget", type=int, help="epochs per variant")
    a.add_argument("--depth-sweep", help="layer counts, e.g. 1..5")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--n", type=int, default=5000, help="synthetic task size")
    a.add_argument("--out", help="also write the CSV report here")
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_ablate)

    v = sub.add_parser("visualize", help="export attention and pooling CSVs for one pair")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--premise", required=True)
    v.add_argument("--hypothesis", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--vocab-dir")
    v.set_defaults(func=cmd_visualize)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, FormatError, Usage) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericAbort, T.NonFiniteError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
