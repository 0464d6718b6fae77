"""Ablation variants of the full network and a harness that trains each one."""

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

from .config import ConfigError
from .model import DRCN
from .train import evaluate, train

log = logging.getLogger(__name__)

_NO_AE = {"ae_layers": ()}

# name -> ModelConfig overrides, in reporting order
VARIANTS = {
    "full": {},
    "-AE": dict(_NO_AE),
    "-Etr": {"use_trainable_emb": False},
    "-Efix": {"use_fixed_emb": False},
    "-dense(attn)": {"dense_attn": False},
    "-dense(rec)": {"dense_rec": False},
    "-dense(both)": {"dense_rec": False, "dense_attn": False},
    "residual(both)": {"connection_mode": "residual", "dense_emb": True, **_NO_AE},
    "residual(both)-embDense": {"connection_mode": "residual", "dense_emb": False, **_NO_AE},
    "plain+attn": {"connection_mode": "plain", "use_attention": True, **_NO_AE},
    "plain-attn": {"connection_mode": "plain", "use_attention": False, **_NO_AE},
}

_ALIASES = {"-ae": "-AE", "-e^tr": "-Etr", "-e^fix": "-Efix", "-etr": "-Etr", "-efix": "-Efix"}


def canonical(name):
    key = name.strip().replace("−", "-")
    key = _ALIASES.get(key.lower(), key)
    if key not in VARIANTS:
        raise ConfigError(f"unknown ablation variant {name!r}; known: {', '.join(VARIANTS)}")
    return key


def parse_suite(text):
    names = [s for s in (text or "").split(",") if s.strip()]
    if not names:
        raise ConfigError("empty ablation suite")
    if len(names) == 1 and names[0].strip() == "all":
        return list(VARIANTS)
    return [canonical(n) for n in names]


def variant_config(base, name):
    cfg = replace(base, **VARIANTS[canonical(name)])
    return cfg.validate()


@dataclass
class AblationRow:
    variant: str
    accuracy: float
    params: int
    layers: int


def _run_one(job):
    name, model_cfg, train_cfg, data, seed = job
    train_pairs, dev_pairs, test_pairs, vocab, chars, vectors = data
    model = DRCN(model_cfg, seed=seed, word_vectors=vectors)
    result = train(model, train_pairs, dev_pairs, vocab, chars, train_cfg)
    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    acc = evaluate(model, test_pairs, vocab, chars, train_cfg.max_len).accuracy
    log.info("variant %s (%d layers): test accuracy %.4f", name, model_cfg.num_layers, acc)
    return AblationRow(name, acc, model.num_parameters(), model_cfg.num_layers)


def run_ablation(suite, data, base_model, train_cfg, seed=0, depths=None, jobs=1):
    """Train every variant in ``suite`` with the same seed and budget.

    ``data`` is ``(train, dev, test, vocab, char_vocab, word_vectors)``.
    ``depths`` (e.g. ``range(1, 6)``) repeats each variant at those layer
    counts, keeping autoencoders only on layers that still exist below the top.
    """
    jobs_list = []
    for name in suite:
        cfg = variant_config(base_model, name)
        for depth in depths or [cfg.num_layers]:
            dcfg = replace(cfg, num_layers=depth,
                           ae_layers=tuple(k for k in cfg.ae_layers if k < depth))
            jobs_list.append((canonical(name), dcfg.validate(), train_cfg, data, seed))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, jobs_list))
    return [_run_one(j) for j in jobs_list]


def report_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "accuracy", "params", "layers"])
    for r in rows:
        w.writerow([r.variant, f"{r.accuracy:.6f}", r.params, r.layers])
    return buf.getvalue()
