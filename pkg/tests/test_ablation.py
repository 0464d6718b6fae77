from dataclasses import replace

import pytest

from drcn.ablation import VARIANTS, canonical, parse_suite, report_csv, run_ablation, variant_config
from drcn.config import ConfigError, TrainConfig, preset
from drcn.model import DRCN
from drcn.synthetic import make_alignment_task, split
from drcn.text import Vocab

from test_model import small_config


@pytest.fixture
def snli():
    m, _ = preset("paper-snli")
    return replace(m, vocab_size=12, char_vocab_size=12)


class TestVariants:
    def test_all_eleven_constructible(self, snli):
        names = parse_suite("all")
        assert len(names) == 11
        for name in names:
            DRCN(variant_config(snli, name))

    def test_full_is_default(self, snli):
        assert variant_config(snli, "full") == snli

    def test_wiring(self, snli):
        assert variant_config(snli, "plain-attn").use_attention is False
        assert variant_config(snli, "residual(both)-embDense").dense_emb is False
        assert variant_config(snli, "-dense(both)").dense_rec is False

    def test_aliases(self):
        assert canonical("plain−attn") == "plain-attn" and canonical("-E^fix") == "-Efix"

    def test_unknown_and_empty(self):
        with pytest.raises(ConfigError):
            parse_suite("full,bogus")
        with pytest.raises(ConfigError):
            parse_suite(" ")


class TestSynthetic:
    def test_labels_and_balance(self):
        pairs = make_alignment_task(200, seed=3)
        assert sum(p.label for p in pairs) == 100
        for p in pairs:
            outside = [t for t in p.hypothesis if t not in p.premise]
            assert len(outside) == (0 if p.label else 1)
            assert len(set(p.hypothesis)) == len(p.hypothesis)

    def test_seeded(self):
        a, b = make_alignment_task(30, seed=4), make_alignment_task(30, seed=4)
        assert [(p.premise, p.hypothesis) for p in a] == [(p.premise, p.hypothesis) for p in b]

    def test_split(self):
        tr, dv, te = split(list(range(100)))
        assert (len(tr), len(dv), len(te)) == (80, 10, 10)


def test_harness_runs_and_reports():
    pairs = make_alignment_task(40, seed=0)
    tr, dv, te = split(pairs)
    vocab, chars = Vocab.build(pairs), Vocab.build_chars(pairs)
    base = small_config(num_classes=2, use_match_flag=False, ae_layers=(1,),
                        vocab_size=len(vocab), char_vocab_size=len(chars))
    cfg = TrainConfig(max_epochs=1, batch_size=16, max_len=12)
    rows = run_ablation(["full", "plain-attn"], (tr, dv, te, vocab, chars, None), base, cfg,
                        depths=[1, 2])
    assert [(r.variant, r.layers) for r in rows] == [("full", 1), ("full", 2),
                                                       ("plain-attn", 1), ("plain-attn", 2)]
    text = report_csv(rows)
    assert text.splitlines()[0] == "variant,accuracy,params,layers" and len(text.splitlines()) == 5
