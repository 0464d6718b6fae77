"""Checkpoint files: a key=value config header followed by a tensor blob.

::

    #DRCN-CONFIG
    num_layers=5
    ...
    <blank line>
    <tensor blob, see serialize.py>
"""

from pathlib import Path

from .config import ConfigError, model_config_from_items, parse_key_values, to_key_values
from .model import DRCN
from .serialize import FormatError, dump_tensors, load_tensors

HEADER = b"#DRCN-CONFIG\n"


def checkpoint_bytes(config, state):
    return HEADER + to_key_values(config).encode("utf-8") + b"\n" + dump_tensors(state)


def save_checkpoint(path, model, state=None):
    Path(path).write_bytes(checkpoint_bytes(model.config, state or model.state_dict()))


def read_checkpoint(path):
    """Return ``(ModelConfig, {name: ndarray})``."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from None
    if not raw.startswith(HEADER):
        raise FormatError(f"{path}: missing config header")
    end = raw.find(b"\n\n", len(HEADER) - 1)
    if end < 0:
        raise FormatError(f"{path}: unterminated config header")
    text = raw[len(HEADER):end + 1].decode("utf-8")
    try:
        config = model_config_from_items(parse_key_values(text, str(path)))
    except ConfigError as exc:
        raise FormatError(str(exc)) from None
    return config, load_tensors(raw[end + 2:])


def load_model(path):
    config, state = read_checkpoint(path)
    model = DRCN(config)
    try:
        model.load_state_dict(state)
    except ConfigError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return model
