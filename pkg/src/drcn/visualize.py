"""Attention maps and max-pooled-position rates for one sentence pair, as CSV."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .text import SentencePair, encode_pairs, tokenize


@dataclass
class PairDiagnostics:
    premise: list
    hypothesis: list
    alphas: list          # per layer, I x J (premise rows attend over hypothesis)
    pool_rate_p: np.ndarray
    pool_rate_q: np.ndarray

    @property
    def alpha_avg(self):
        return np.mean(self.alphas, axis=0)


def diagnose(model, vocab, char_vocab, premise, hypothesis, max_len=None):
    p = tokenize(premise) if isinstance(premise, str) else list(premise)
    q = tokenize(hypothesis) if isinstance(hypothesis, str) else list(hypothesis)
    max_len = max_len or max(len(p), len(q))
    batch = encode_pairs([SentencePair(p, q, 0)], vocab, char_vocab, max_len,
                         min_word_len=model.config.char_kernel)
    with T.no_grad():
        out = model.forward(batch)
    d = out.diagnostics
    I, J = batch.p.ids.shape[1], batch.q.ids.shape[1]
    return PairDiagnostics(batch.p.tokens[0], batch.q.tokens[0],
                           [a[0] for a in d.alpha_p],
                           d.pool_p.rates(I)[0], d.pool_q.rates(J)[0])


def _write(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\r\n").writerows(rows)


def _matrix_rows(p_tokens, q_tokens, m):
    return [[""] + list(q_tokens)] + [[tok] + [repr(float(x)) for x in row]
                                      for tok, row in zip(p_tokens, m)]


def write_csvs(diag, out_dir):
    """alpha_layer{k}.csv, alpha_avg.csv, poolrate_p.csv, poolrate_q.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for k, alpha in enumerate(diag.alphas, 1):
        path = out / f"alpha_layer{k}.csv"
        _write(path, _matrix_rows(diag.premise, diag.hypothesis, alpha))
        written.append(path)
    if diag.alphas:
        path = out / "alpha_avg.csv"
        _write(path, _matrix_rows(diag.premise, diag.hypothesis, diag.alpha_avg))
        written.append(path)
    for name, tokens, rate in (("poolrate_p.csv", diag.premise, diag.pool_rate_p),
                               ("poolrate_q.csv", diag.hypothesis, diag.pool_rate_q)):
        _write(out / name, [list(tokens), [repr(float(x)) for x in rate]])
        written.append(out / name)
    return written


def read_matrix(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(x) for x in r[1:]] for r in rows[1:]])


def read_rates(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([float(x) for x in rows[1]])
