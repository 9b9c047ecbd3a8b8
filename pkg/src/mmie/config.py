"""Run configuration: dataclass, flat key=value config files, run hashes.

Config files are plain text, one `key = value` per line, `#` comments
allowed.  Every field of RunConfig is settable from a file; command-line
flags override file values.  A short hash of the resolved config is embedded
in output file names so runs with different settings never collide.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from typing import Optional

from mmie.data import TASK_NER, TASK_RE, ConfigError

NER_DEFAULT_EPOCHS = 30
RE_DEFAULT_EPOCHS = 25
NER_DEFAULT_BATCH = 8
RE_DEFAULT_BATCH = 16


@dataclass
class RunConfig:
    task: str = TASK_NER
    train_path: str = ""
    val_path: str = ""
    test_path: str = ""
    out_dir: str = "runs"
    seed: int = 0
    epochs: Optional[int] = None          # None -> per-task default
    batch_size: Optional[int] = None      # None -> per-task default
    eval_batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_frac: float = 0.06
    semantic_weight: float = 0.5
    sample_ratio: float = 0.7
    compose_ratio: float = 0.6
    mixup_alpha: float = 0.2
    attn_heads: int = 4
    attn_dropout: float = 0.2
    d_model: int = 64
    text_layers: int = 2
    text_heads: int = 4
    ffn_dim: int = 128
    text_dropout: float = 0.1
    max_len: int = 32
    level_channels: tuple[int, ...] = (16, 32)
    latent_dim: int = 16
    no_semantic_loss: bool = False
    no_attnmixup: bool = False
    early_stop_f1: Optional[float] = None

    def validate(self) -> None:
        if self.task not in (TASK_NER, TASK_RE):
            raise ConfigError(f"task must be '{TASK_NER}' or '{TASK_RE}', "
                              f"got {self.task!r}")
        for name in ("warmup_frac", "semantic_weight", "sample_ratio",
                     "compose_ratio", "attn_dropout", "text_dropout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        for name in ("lr", "mixup_alpha"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("eval_batch_size", "attn_heads", "d_model", "text_layers",
                     "text_heads", "ffn_dim", "max_len", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    @property
    def resolved_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return NER_DEFAULT_EPOCHS if self.task == TASK_NER else RE_DEFAULT_EPOCHS

    @property
    def resolved_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return NER_DEFAULT_BATCH if self.task == TASK_NER else RE_DEFAULT_BATCH


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    raw = raw.strip()
    typ = _FIELD_TYPES[key]
    try:
        if key == "level_channels":
            return tuple(int(p) for p in raw.split(",") if p.strip())
        if typ in ("bool",):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if typ in ("int",):
            return int(raw)
        if typ in ("float",):
            return float(raw)
        if typ in ("Optional[int]",):
            return None if raw.lower() == "none" else int(raw)
        if typ in ("Optional[float]",):
            return None if raw.lower() == "none" else float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {exc}") from None


def parse_config_text(text: str, base: Optional[RunConfig] = None,
                      where: str = "<config>") -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected key = value")
        key, raw = line.split("=", 1)
        key = key.strip()
        setattr(cfg, key, _parse_value(key, raw))
    return cfg


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, base=base, where=str(path))


def config_hash(cfg: RunConfig) -> str:
    """Short stable digest of every field; names output files."""
    items = sorted(asdict(cfg).items())
    blob = "\n".join(f"{k}={v!r}" for k, v in items)
    return hashlib.sha1(blob.encode("utf-8")).hexdigest()[:8]
