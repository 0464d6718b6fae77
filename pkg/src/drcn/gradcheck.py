"""Whole-model gradient check on a tiny fixed problem."""

from dataclasses import replace

import numpy as np

from .config import preset
from .model import DRCN
from .tensor import grad_check_detail
from .text import SentencePair, Vocab, encode_pairs

MICRO_WORDS = ["a", "bb", "cat", "dog", "eel", "fox", "gnu", "hen"]
MODEL_CHECK_STEP = 3e-5


def micro_problem(config=None, seed=0, n_pairs=4):
    """Model and batch for a 10-word vocabulary (8 words + PAD/UNK), T <= 3."""
    base, train = preset("micro")
    config = config or base
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        p = list(rng.choice(MICRO_WORDS, 3))
        q = list(rng.choice(MICRO_WORDS, int(rng.integers(2, 4))))
        pairs.append(SentencePair(p, q, int(rng.integers(config.num_classes))))
    vocab = Vocab(MICRO_WORDS)
    chars = Vocab.build_chars([SentencePair(MICRO_WORDS, MICRO_WORDS, 0)])
    config = replace(config, vocab_size=len(vocab), char_vocab_size=len(chars))
    if config.connection_mode == "residual":
        config = replace(config, ae_layers=())
    vectors = rng.normal(0.0, 1.0, size=(len(vocab), config.word_dim))
    vectors[0] = 0.0
    model = DRCN(config, seed=seed + 1, word_vectors=vectors)
    batch = encode_pairs(pairs, vocab, chars, train.max_len, min_word_len=config.char_kernel)
    return model, batch


def check_model(model, batch, h=MODEL_CHECK_STEP):
    """Eval-mode loss gradients vs central differences over every parameter."""
    return grad_check_detail(lambda: model.loss(batch).total, model.parameters(), h=h,
                             names=list(model.params))
