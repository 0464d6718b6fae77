"""Sentence-pair corpora: loading, vocabularies, embeddings, batching."""

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
MAX_WORD_LEN = 16

NLI_LABELS = {"entailment": 0, "neutral": 1, "contradiction": 2}
BINARY_LABELS = {"negative": 0, "positive": 1, "0": 0, "1": 1}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class DataError(Exception):
    pass


class EmptyDatasetError(DataError):
    pass


class EmbeddingFormatError(DataError):
    pass


def tokenize(text):
    """Lowercase, then split on whitespace and punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


def label_map(num_classes):
    if num_classes == 3:
        return NLI_LABELS
    if num_classes == 2:
        return BINARY_LABELS
    raise ValueError(f"no label map for {num_classes} classes")


@dataclass
class SentencePair:
    premise: list
    hypothesis: list
    label: int
    group_id: str = None

    def __post_init__(self):
        if not self.premise or not self.hypothesis:
            raise DataError("sentence pair with an empty side")


def load_pairs(path, format=None, num_classes=3):
    """Read labelled pairs from a TSV or JSONL file.

    TSV rows are ``label<TAB>sentence1<TAB>sentence2[<TAB>group_id]``; JSONL
    objects use ``label`` (or ``gold_label``), ``sentence1``, ``sentence2`` and
    optionally ``group_id``.  Rows with an unknown label or an empty side are
    skipped and counted.  Returns ``(pairs, skipped)``.
    """
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix in (".jsonl", ".json") else "tsv")
    if fmt not in ("tsv", "jsonl"):
        raise ValueError(f"unknown format {fmt!r}")
    labels = label_map(num_classes)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    pairs, skipped = [], 0
    for line in lines:
        if not line.strip():
            continue
        if fmt == "tsv":
            cols = line.split("\t")
            if len(cols) < 3:
                skipped += 1
                continue
            raw_label, s1, s2 = cols[:3]
            group = cols[3] if len(cols) > 3 else None
        else:
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                skipped += 1
                continue
            raw_label = row.get("label", row.get("gold_label"))
            s1, s2 = row.get("sentence1", ""), row.get("sentence2", "")
            group = row.get("group_id")
        key = str(raw_label).strip().lower()
        p, q = tokenize(s1), tokenize(s2)
        if key not in labels or not p or not q:
            skipped += 1
            continue
        pairs.append(SentencePair(p, q, labels[key], None if group is None else str(group)))
    if skipped:
        log.warning("%s: skipped %d rows with unknown labels or empty sentences", path, skipped)
    if not pairs:
        raise EmptyDatasetError(f"{path}: no usable rows")
    return pairs, skipped


class Vocab:
    """Token <-> id map with PAD=0 and UNK=1."""

    def __init__(self, tokens=()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token):
        return self.stoi.get(token, UNK)

    def ids(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    @classmethod
    def build(cls, pairs):
        """Word vocabulary over a training split, in first-seen order."""
        v = cls()
        for pair in pairs:
            for tok in pair.premise + pair.hypothesis:
                v.add(tok)
        return v

    @classmethod
    def build_chars(cls, pairs):
        v = cls()
        for pair in pairs:
            for tok in pair.premise + pair.hypothesis:
                for ch in tok:
                    v.add(ch)
        return v

    def dump(self, path):
        Path(path).write_text("".join(f"{t}\t{i}\n" for i, t in enumerate(self.itos)),
                              encoding="utf-8")

    @classmethod
    def load(cls, path):
        v = cls()
        rows = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line:
                tok, idx = line.rsplit("\t", 1)
                rows.append((int(idx), tok))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))) or rows[:2] != [(0, PAD_TOKEN), (1, UNK_TOKEN)]:
            raise DataError(f"{path}: malformed vocabulary dump")
        for _, tok in rows[2:]:
            v.add(tok)
        return v


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    trainable: bool = True
    coverage: float = 0.0
    found: int = 0


def load_glove(path, vocab, rng, dim=None, trainable=True, scale=0.01):
    """Build a |V| x d table from a GloVe-format text file.

    Rows for tokens present in the file are copied; the rest are drawn from
    N(0, scale^2).  The PAD row is zero.  ``path=None`` or an empty file gives
    an all-random table (``dim`` is then required).
    """
    vectors = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").rstrip().split(" ")
                if len(parts) < 2:
                    continue
                if dim is None:
                    dim = len(parts) - 1
                if len(parts) - 1 != dim:
                    raise EmbeddingFormatError(
                        f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
                if parts[0] in vocab and parts[0] not in vectors:
                    try:
                        vectors[parts[0]] = np.array(parts[1:], dtype=np.float64)
                    except ValueError:
                        raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value") from None
    if dim is None:
        raise EmbeddingFormatError("embedding width unknown: empty file and no dim given")
    matrix = rng.normal(0.0, scale, size=(len(vocab), dim))
    for tok, vec in vectors.items():
        matrix[vocab.id(tok)] = vec
    matrix[PAD] = 0.0
    real = len(vocab) - 2
    found = sum(1 for t in vectors if t not in (PAD_TOKEN, UNK_TOKEN))
    return EmbeddingTable(matrix, trainable, found / real if real else 0.0, found)


def exact_match_flags(p, q):
    """1.0 where the lowercased token of ``p`` occurs in ``q`` (lowercased)."""
    other = {t.lower() for t in q}
    return np.array([1.0 if t.lower() in other else 0.0 for t in p])


@dataclass
class Side:
    ids: np.ndarray        # B x T
    chars: np.ndarray      # B x T x Lw
    flags: np.ndarray      # B x T
    mask: np.ndarray       # B x T
    tokens: list = field(default_factory=list)

    @property
    def lengths(self):
        return self.mask.sum(axis=1).astype(int)


@dataclass
class Batch:
    p: Side
    q: Side
    labels: np.ndarray
    group_ids: list
    index: np.ndarray      # positions of the pairs in the source list

    def __len__(self):
        return len(self.labels)


def _encode_side(seqs, others, vocab, char_vocab, max_len, min_word_len):
    seqs = [s[:max_len] for s in seqs]
    others = [o[:max_len] for o in others]
    B, T = len(seqs), max(len(s) for s in seqs)
    Lw = max(min_word_len, max(min(len(t), MAX_WORD_LEN) for s in seqs for t in s))
    ids = np.zeros((B, T), dtype=np.int64)
    chars = np.zeros((B, T, Lw), dtype=np.int64)
    flags = np.zeros((B, T))
    mask = np.zeros((B, T))
    for b, (s, o) in enumerate(zip(seqs, others)):
        n = len(s)
        ids[b, :n] = vocab.ids(s)
        mask[b, :n] = 1.0
        flags[b, :n] = exact_match_flags(s, o)
        for t, tok in enumerate(s):
            cs = char_vocab.ids(tok[:MAX_WORD_LEN])
            chars[b, t, :len(cs)] = cs
    return Side(ids, chars, flags, mask, seqs)


def encode_pairs(pairs, vocab, char_vocab, max_len, index=None, min_word_len=3):
    """Pad a list of pairs into one :class:`Batch`."""
    ps = [p.premise for p in pairs]
    qs = [p.hypothesis for p in pairs]
    return Batch(
        _encode_side(ps, qs, vocab, char_vocab, max_len, min_word_len),
        _encode_side(qs, ps, vocab, char_vocab, max_len, min_word_len),
        np.array([p.label for p in pairs], dtype=np.int64),
        [p.group_id for p in pairs],
        np.arange(len(pairs)) if index is None else np.asarray(index),
    )


def make_batches(pairs, vocab, char_vocab, batch_size, max_len, seed=None,
                 shuffle=True, min_word_len=3):
    """Split ``pairs`` into padded batches.

    With ``shuffle`` the order is a permutation drawn from ``seed``; the match
    flag is computed on the truncated sentences.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(pairs))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(pairs))
    return [
        encode_pairs([pairs[i] for i in order[k:k + batch_size]], vocab, char_vocab,
                     max_len, order[k:k + batch_size], min_word_len)
        for k in range(0, len(pairs), batch_size)
    ]
