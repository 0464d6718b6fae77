"""Model/training configuration, presets and the flat key=value file format."""

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

CONNECTION_MODES = ("dense", "residual", "plain")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_layers: int = 5
    lstm_hidden: int = 100
    word_dim: int = 300
    char_emb_dim: int = 16
    char_out_dim: int = 32
    char_kernel: int = 3
    ae_hidden: int = 200
    # 1-based layers whose transition output is squeezed by an autoencoder
    ae_layers: tuple = (1, 2, 3, 4)
    ae_loss_weight: float = 1.0
    fc_hidden: int = 1000
    num_classes: int = 3
    connection_mode: str = "dense"
    dense_rec: bool = True
    dense_attn: bool = True
    dense_emb: bool = True
    residual_projection: bool = True
    use_attention: bool = True
    use_match_flag: bool = True
    use_trainable_emb: bool = True
    use_fixed_emb: bool = True
    keep_emb: float = 0.5
    keep_fc: float = 0.8
    keep_ae: float = 0.8
    use_batch_norm: bool = True
    vocab_size: int = 0
    char_vocab_size: int = 0
    dtype: str = "float64"

    @property
    def word_feature_width(self):
        return (self.word_dim * self.use_trainable_emb + self.word_dim * self.use_fixed_emb
                + self.char_out_dim + int(self.use_match_flag))

    def validate(self):
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.connection_mode not in CONNECTION_MODES:
            raise ConfigError(f"connection_mode must be one of {CONNECTION_MODES}")
        if not 0 < self.keep_emb <= 1 or not 0 < self.keep_fc <= 1 or not 0 < self.keep_ae <= 1:
            raise ConfigError("keep rates must lie in (0, 1]")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        bad = [k for k in self.ae_layers if not 1 <= k <= self.num_layers]
        if bad:
            raise ConfigError(f"ae_layers out of range: {bad}")
        # imported lazily: width arithmetic lives with the architecture
        from .model import layer_widths
        layer_widths(self)
        return self


@dataclass
class TrainConfig:
    lr: float = 0.001
    lr_decay: float = 0.85
    rho: float = 0.9
    rms_eps: float = 1e-8
    l2: float = 1e-6
    clip_norm: float = 5.0
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    max_len: int = 35
    seed: int = 1

    def validate(self):
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if not 0 < self.lr_decay < 1:
            raise ConfigError("lr_decay must lie in (0, 1)")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        if self.batch_size < 1 or self.max_len < 1:
            raise ConfigError("batch_size and max_len must be >= 1")
        return self


def _paper_base(**kw):
    return ModelConfig(**kw)


PRESETS = {
    "paper-snli": (_paper_base(num_classes=3, use_batch_norm=True), TrainConfig(max_len=35)),
    "paper-mnli": (_paper_base(num_classes=3, use_batch_norm=True), TrainConfig(max_len=55)),
    "paper-quora": (_paper_base(num_classes=2, use_batch_norm=False), TrainConfig(max_len=25)),
    "paper-trecqa": (_paper_base(num_classes=2, use_batch_norm=True), TrainConfig(max_len=50)),
    "micro": (
        ModelConfig(num_layers=2, lstm_hidden=4, word_dim=3, char_emb_dim=2, char_out_dim=3,
                    char_kernel=2, ae_hidden=5, ae_layers=(1,), fc_hidden=8, num_classes=3,
                    keep_emb=1.0, keep_fc=1.0, keep_ae=1.0, use_batch_norm=False,
                    vocab_size=10, char_vocab_size=8),
        TrainConfig(max_len=3, batch_size=2, clip_norm=0.0),
    ),
    "synthetic": (
        ModelConfig(num_layers=3, lstm_hidden=16, word_dim=24, char_emb_dim=8, char_out_dim=8,
                    ae_hidden=64, ae_layers=(1,), fc_hidden=64, num_classes=2,
                    use_match_flag=False, keep_emb=1.0, keep_fc=1.0, keep_ae=1.0,
                    use_batch_norm=False),
        TrainConfig(lr=0.003, batch_size=32, max_epochs=12, patience=10, max_len=16, l2=1e-6),
    ),
}

DATA_KEYS = ("preset", "train", "dev", "test", "glove", "format")


def preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    model, train = PRESETS[name]
    return replace(model), replace(train)


def _coerce(f, raw):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {f.name}: {raw!r}") from None


def _format(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def apply_overrides(model, train, items):
    """Apply ``{key: raw string}`` to copies of the configs; unknown keys raise."""
    mfields = {f.name: f for f in fields(ModelConfig)}
    tfields = {f.name: f for f in fields(TrainConfig)}
    mkw, tkw = {}, {}
    for key, raw in items.items():
        if key in mfields:
            mkw[key] = _coerce(mfields[key], raw)
        elif key in tfields:
            tkw[key] = _coerce(tfields[key], raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return replace(model, **mkw), replace(train, **tkw)


def parse_key_values(text, source="<config>"):
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in items:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        items[key] = value
    return items


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: dict = field(default_factory=dict)


def load_run_config(source):
    """Resolve a preset name or a key=value file into a :class:`RunConfig`.

    A file may name ``preset=...`` as its base; remaining keys override it.
    """
    path = Path(source)
    if source in PRESETS and not path.exists():
        model, train = preset(source)
        return RunConfig(model.validate(), train.validate(), {"preset": source})
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {source}: {exc}") from None
    items = parse_key_values(text, str(path))
    data = {k: items.pop(k) for k in DATA_KEYS if k in items}
    model, train = preset(data["preset"]) if "preset" in data else (ModelConfig(), TrainConfig())
    model, train = apply_overrides(model, train, items)
    return RunConfig(model.validate(), train.validate(), data)


def to_key_values(*configs):
    lines = []
    for cfg in configs:
        for f in fields(cfg):
            lines.append(f"{f.name}={_format(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def model_config_from_items(items):
    base = ModelConfig()
    mfields = {f.name: f for f in fields(ModelConfig)}
    unknown = set(items) - set(mfields)
    if unknown:
        raise ConfigError(f"unknown model config keys {sorted(unknown)}")
    return replace(base, **{k: _coerce(mfields[k], v) for k, v in items.items()})


def asdict(cfg):
    return dataclasses.asdict(cfg)
