"""Run configuration files: one ``section.key = value`` per line, ``#`` comments.

Example::

    model.blocks = 2x8, 2x16, 2x32
    model.pools = 1, 1, 0
    model.input_size = 64
    train.lr = 0.001
    data.manifest = data/manifest.csv
    out.checkpoint = run/model.ckpt
    threshold = 0.5

Relative paths are resolved against the directory holding the file.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .extractor import ExtractorConfig
from .model import KINDS, ModelConfig
from .training import TrainSchedule


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _blocks(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in text.split(","):
        count, filters = item.strip().lower().split("x")
        out.append((int(count), int(filters)))
    return tuple(out)


def _names(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _flags(text: str) -> tuple[bool, ...]:
    vals = _ints(text)
    if set(vals) - {0, 1}:
        raise ValueError("pool flags must be 0 or 1")
    return tuple(bool(v) for v in vals)


def _kind(text: str) -> str:
    if text not in KINDS:
        raise ValueError(f"choose from {', '.join(KINDS)}")
    return text


_KEYS = {
    "model.blocks": ("blocks", _blocks),
    "model.pools": ("pools", _flags),
    "model.dilation": ("dilation", int),
    "model.input_size": ("input_size", int),
    "model.hidden": ("hidden", int),
    "model.kind": ("kind", _kind),
    "model.class_order": ("class_order", _names),
    "train.batch_size": ("batch_size", int),
    "train.max_epochs": ("max_epochs", int),
    "train.lr": ("lr", float),
    "train.plateau_decay": ("plateau_decay", float),
    "train.decay_patience": ("decay_patience", int),
    "train.early_stop_patience": ("early_stop_patience", int),
    "train.seed": ("seed", int),
    "train.val_fraction": ("val_fraction", float),
    "data.manifest": ("manifest", str),
    "out.checkpoint": ("checkpoint", str),
    "out.log": ("log", str),
    "threshold": ("threshold", float),
}
_PATHS = ("manifest", "checkpoint", "log")


@dataclass
class RunConfig:
    blocks: tuple = ((2, 8), (2, 16), (2, 32))
    pools: tuple = (True, True, False)
    dilation: int = 2
    input_size: int = 64
    hidden: int = 64
    kind: str = "bilstm"
    class_order: tuple | None = None
    batch_size: int = 32
    max_epochs: int = 100
    lr: float = 1e-3
    plateau_decay: float = 0.1
    decay_patience: int = 3
    early_stop_patience: int = 5
    seed: int = 0
    val_fraction: float = 0.1
    manifest: Path | None = None
    checkpoint: Path = Path("model.ckpt")
    log: Path = Path("train_log.csv")
    threshold: float = 0.5
    source: Path | None = field(default=None, compare=False)

    def extractor(self) -> ExtractorConfig:
        return ExtractorConfig(tuple(self.blocks), tuple(self.pools), self.dilation,
                               self.input_size)

    def model_config(self, n_classes: int, class_names=None) -> ModelConfig:
        return ModelConfig(self.extractor(), n_classes, self.hidden, self.kind,
                           None if class_names is None else tuple(class_names))

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(self.batch_size, self.max_epochs, self.lr, self.plateau_decay,
                             self.decay_patience, self.early_stop_patience)

    def to_text(self) -> str:
        inverse = {attr: key for key, (attr, _) in _KEYS.items()}
        lines = []
        for f in fields(self):
            if f.name == "source" or f.name not in inverse:
                continue
            value = getattr(self, f.name)
            if value is None:
                continue
            if f.name == "blocks":
                text = ", ".join(f"{n}x{k}" for n, k in value)
            elif f.name == "pools":
                text = ", ".join(str(int(v)) for v in value)
            elif f.name == "class_order":
                text = ",".join(value)
            else:
                text = str(value)
            lines.append(f"{inverse[f.name]} = {text}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, base: Path = Path(".")) -> RunConfig:
    cfg = RunConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        attr, conv = _KEYS[key]
        try:
            parsed = conv(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r} ({exc})") from None
        if attr in _PATHS:
            parsed = Path(parsed) if Path(parsed).is_absolute() else base / parsed
        setattr(cfg, attr, parsed)
    # surface structural problems now rather than mid-run
    try:
        cfg.extractor()
        cfg.schedule()
        ModelConfig(cfg.extractor(), 1, cfg.hidden, cfg.kind)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(str(exc)) from None
    if not 0.0 < cfg.val_fraction < 1.0:
        raise ConfigError(f"train.val_fraction must lie in (0, 1), got {cfg.val_fraction}")
    if not 0.0 <= cfg.threshold <= 1.0:
        raise ConfigError(f"threshold must lie in [0, 1], got {cfg.threshold}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text, path.parent)
    cfg.source = path
    return cfg
