"""Seeded alignment task for desk-scale ablations.

A premise is a random token sequence.  The hypothesis is a shuffled subset
of the premise tokens; for negatives exactly one hypothesis token is swapped
for a token absent from the premise.  Label 1 = pure reordered subset.
"""

import numpy as np

from .text import SentencePair

_SYLLABLES = ["ka", "lo", "mi", "ne", "ru", "sa", "te", "vo", "zi", "pa", "do", "fe",
              "gu", "hi", "jo", "ba"]


def make_lexicon(size, rng):
    words = set()
    while len(words) < size:
        n = int(rng.integers(2, 4))
        words.add("".join(rng.choice(_SYLLABLES, n)))
    return sorted(words)


def make_alignment_task(n, seed=0, vocab_size=60, premise_len=(6, 10), hyp_len=(3, 5)):
    rng = np.random.default_rng(seed)
    lexicon = make_lexicon(vocab_size, rng)
    pairs = []
    for k in range(n):
        plen = int(rng.integers(premise_len[0], premise_len[1] + 1))
        premise = list(rng.choice(lexicon, plen, replace=False))
        hlen = int(rng.integers(hyp_len[0], min(hyp_len[1], plen) + 1))
        hyp = [premise[i] for i in rng.permutation(plen)[:hlen]]
        label = int(k % 2 == 0)
        if not label:
            outside = [w for w in lexicon if w not in premise]
            hyp[int(rng.integers(hlen))] = outside[int(rng.integers(len(outside)))]
        pairs.append(SentencePair(premise, hyp, label))
    order = rng.permutation(n)
    return [pairs[i] for i in order]


def split(pairs, fractions=(0.8, 0.1, 0.1)):
    n = len(pairs)
    a = int(n * fractions[0])
    b = a + int(n * fractions[1])
    return pairs[:a], pairs[a:b], pairs[b:]
