"""RMSProp training with plateau decay, evaluation metrics and ensembles."""

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .config import ConfigError
from .text import make_batches

log = logging.getLogger(__name__)


class NumericAbort(ArithmeticError):
    pass


# ------------------------------------------------------------------ optimizer

@dataclass
class OptimizerState:
    accum: dict = field(default_factory=dict)
    step: int = 0


def rmsprop_step(params, grads, state, lr, rho=0.9, eps=1e-8, l2=0.0, no_decay=()):
    """One in-place RMSProp update over ``{name: Tensor}`` with ``{name: grad}``.

    ``l2 * theta`` is added to the gradient of every parameter not named in
    ``no_decay``; then ``acc = rho*acc + (1-rho)*g^2`` and
    ``theta -= lr * g / (sqrt(acc) + eps)``.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter {name} {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericAbort(f"non-finite gradient for {name}")
        if l2 and name not in no_decay:
            g = g + l2 * p.data
        acc = state.accum.get(name)
        if acc is None:
            acc = state.accum[name] = np.zeros_like(p.data)
        acc *= rho
        acc += (1.0 - rho) * g * g
        p.data -= lr * g / (np.sqrt(acc) + eps)
    state.step += 1
    return state


def clip_global_norm(grads, max_norm):
    if not max_norm:
        return grads, None
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def train_step(model, batch, state, lr, cfg, rng):
    """Forward/backward on one batch and one optimizer update; returns the LossResult."""
    model.zero_grad()
    res = model.loss(batch, training=True, rng=rng)
    if not np.isfinite(res.total.data):
        raise NumericAbort(f"non-finite loss at step {state.step}")
    res.total.backward()
    grads = {n: p.grad for n, p in model.params.items()}
    grads, _ = clip_global_norm(grads, cfg.clip_norm)
    rmsprop_step(model.params, grads, state, lr, cfg.rho, cfg.rms_eps, cfg.l2,
                 no_decay=model.EMBEDDING_PARAMS)
    return res


# ------------------------------------------------------------------ metrics

def _ranked_hits(labels, scores):
    """1-based ranks of the positives, ties keeping the original order."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    return [rank for rank, i in enumerate(order, 1) if labels[i]]


def average_precision(labels, scores, exact=False):
    """AP of one ranked group; ties keep the original order.

    Computed in rationals, so ``exact=True`` returns the Fraction itself.
    """
    ranks = _ranked_hits(labels, scores)
    if not ranks:
        return None
    ap = sum(Fraction(k, r) for k, r in enumerate(ranks, 1)) / len(ranks)
    return ap if exact else float(ap)


def reciprocal_rank(labels, scores, exact=False):
    ranks = _ranked_hits(labels, scores)
    if not ranks:
        return None
    rr = Fraction(1, ranks[0])
    return rr if exact else float(rr)


def map_mrr(group_ids, labels, scores):
    """Mean AP and mean RR over groups; groups without a positive are dropped.

    Returns ``(map, mrr, n_groups, n_excluded)``.
    """
    groups = {}
    for g, y, s in zip(group_ids, labels, scores):
        groups.setdefault(g, ([], []))
        groups[g][0].append(int(y))
        groups[g][1].append(float(s))
    aps, rrs, excluded = [], [], 0
    for ys, ss in groups.values():
        ap = average_precision(ys, ss, exact=True)
        if ap is None:
            excluded += 1
            continue
        aps.append(ap)
        rrs.append(reciprocal_rank(ys, ss, exact=True))
    if excluded:
        log.warning("excluded %d ranking groups with no positive candidate", excluded)
    if not aps:
        return float("nan"), float("nan"), 0, excluded
    return float(sum(aps) / len(aps)), float(sum(rrs) / len(rrs)), len(aps), excluded


@dataclass
class EvalReport:
    accuracy: float
    map: float = None
    mrr: float = None
    per_class: dict = field(default_factory=dict)   # label -> (correct, total)
    xent: float = None
    recon: float = None
    excluded_groups: int = 0
    n: int = 0

    def lines(self, metric="all"):
        rows = [("acc", self.accuracy)]
        if self.map is not None:
            rows += [("map", self.map), ("mrr", self.mrr)]
        if metric != "all":
            rows = [r for r in rows if r[0] == metric]
        return [f"{k}\t{v:.6f}" for k, v in rows]


class Ensemble:
    """Averages the class probabilities of independently trained members."""

    def __init__(self, members):
        if not members:
            raise ConfigError("ensemble needs at least one member")
        classes = {m.config.num_classes for m in members}
        if len(classes) != 1:
            raise ConfigError(f"ensemble members disagree on num_classes: {sorted(classes)}")
        self.members = list(members)
        self.config = members[0].config

    def predict_proba(self, batch):
        total = None
        for m in self.members:
            p = m.predict_proba(batch)
            total = p if total is None else total + p
        return total / len(self.members)


def ensemble_predict(members, batch):
    return Ensemble(members).predict_proba(batch)


def predict(model, batches):
    """Concatenated probabilities in source order over ``batches``."""
    probs, index = [], []
    for b in batches:
        probs.append(model.predict_proba(b))
        index.append(b.index)
    probs = np.concatenate(probs)
    index = np.concatenate(index)
    out = np.empty_like(probs)
    out[index] = probs
    return out


def evaluate(model, pairs, vocab, char_vocab, max_len, batch_size=64, ranking=None,
             with_loss=False):
    """Accuracy (and MAP/MRR when pairs carry group ids) over ``pairs``.

    The ranking score is the probability of class 1.  ``ranking=None`` turns
    ranking metrics on iff every pair has a group id and the task is binary.
    """
    kernel = model.config.char_kernel
    batches = make_batches(pairs, vocab, char_vocab, batch_size, max_len, shuffle=False,
                           min_word_len=kernel)
    probs = predict(model, batches)
    labels = np.array([p.label for p in pairs])
    pred = probs.argmax(axis=1)
    report = EvalReport(float((pred == labels).mean()), n=len(pairs))
    for c in range(probs.shape[1]):
        sel = labels == c
        report.per_class[c] = (int((pred[sel] == c).sum()), int(sel.sum()))
    if ranking is None:
        ranking = probs.shape[1] == 2 and all(p.group_id is not None for p in pairs)
    if ranking:
        report.map, report.mrr, _, report.excluded_groups = map_mrr(
            [p.group_id for p in pairs], labels, probs[:, 1])
    if with_loss and hasattr(model, "loss"):
        xs, rs, n = 0.0, 0.0, 0
        with T.no_grad():
            for b in batches:
                res = model.loss(b)
                xs += res.xent * len(b)
                rs += res.recon * len(b)
                n += len(b)
        report.xent, report.recon = xs / n, rs / n
    return report


# ------------------------------------------------------------------ training

@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_xent: float
    train_recon: float
    dev_acc: float
    seconds: float


@dataclass
class TrainResult:
    best_state: dict
    best_dev_acc: float
    log: list
    steps: int


LOG_FIELDS = ("epoch", "lr", "train_xent", "train_recon", "dev_acc", "seconds")


def log_csv(rows, timing=True):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for r in rows:
        w.writerow([r.epoch, repr(r.lr), repr(r.train_xent), repr(r.train_recon),
                    repr(r.dev_acc), f"{r.seconds:.3f}" if timing else "0"])
    return buf.getvalue()


def train(model, train_pairs, dev_pairs, vocab, char_vocab, cfg, on_epoch=None):
    """Epoch loop with dev-based learning-rate decay and best-state retention.

    After every epoch the dev accuracy is compared (strictly greater) with the
    best so far; a non-improving epoch multiplies the learning rate by
    ``cfg.lr_decay`` and counts towards ``cfg.patience``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    state = OptimizerState()
    lr = cfg.lr
    best_acc, best_state, bad = -1.0, None, 0
    rows = []
    kernel = model.config.char_kernel
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        batches = make_batches(train_pairs, vocab, char_vocab, cfg.batch_size, cfg.max_len,
                               seed=cfg.seed * 1000003 + epoch, min_word_len=kernel)
        xs, rs, n = 0.0, 0.0, 0
        lr_used = lr
        for batch in batches:
            res = train_step(model, batch, state, lr, cfg, rng)
            xs += res.xent * len(batch)
            rs += res.recon * len(batch)
            n += len(batch)
        dev_acc = evaluate(model, dev_pairs, vocab, char_vocab, cfg.max_len).accuracy
        if dev_acc > best_acc:
            best_acc, bad = dev_acc, 0
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        else:
            bad += 1
            lr *= cfg.lr_decay
        row = EpochLog(epoch, lr_used, xs / n, rs / n, dev_acc, time.perf_counter() - t0)
        rows.append(row)
        log.info("epoch %d lr=%.6g xent=%.4f recon=%.4f dev_acc=%.4f", epoch, lr_used,
                 row.train_xent, row.train_recon, dev_acc)
        if on_epoch:
            on_epoch(row)
        if bad >= cfg.patience:
            break
    return TrainResult(best_state, best_acc, rows, state.step)


def decayed_lrs(initial, decay, improved):
    """Learning rate in force at each epoch given per-epoch improvement flags."""
    lrs, lr = [], initial
    for ok in improved:
        lrs.append(lr)
        if not ok:
            lr *= decay
    lrs.append(lr)
    return lrs
