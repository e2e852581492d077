"""Flat ``key = value`` run configuration.

Precedence for every key: command-line override > config file > built-in default.

Keys
----
data.dir             directory with train.txt / valid.txt (or dev.txt) / test.txt
data.train, data.valid, data.test
                     explicit split files (override data.dir lookups)
data.names           entity name map (raw surface <TAB> human name)
data.manifest        expected split counts, ``split = count`` per line
words.path           GloVe-style word-vector file (required for transw)
words.oov            out-of-vocabulary policy: hash | zero
model.kind           transw | transe
model.dim            embedding size for transe (transw uses the word dimension)
train.margin, train.lr, train.epochs, train.batch_size, train.negatives,
train.norm, train.seed, train.fine_tune_words, train.project,
train.checkpoint_interval, train.patience, train.max_retries
                     see :class:`transw.trainer.TrainConfig`
output.dir           where model.bin, manifest.json and stats are written
"""

from dataclasses import fields
from typing import Dict, Iterable, Optional

from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_str(v):
    v = str(v).strip()
    return v or None


_TYPES = {"bool": _bool, "int": int, "float": float, "str": str}

DEFAULTS: Dict[str, object] = {
    "data.dir": None,
    "data.train": None,
    "data.valid": None,
    "data.test": None,
    "data.names": None,
    "data.manifest": None,
    "words.path": None,
    "words.oov": "hash",
    "model.kind": "transw",
    "model.dim": 100,
    "output.dir": "run",
}
for _f in fields(TrainConfig):
    DEFAULTS[f"train.{_f.name}"] = _f.default

_PARSERS = {k: (_opt_str if v is None else _TYPES[type(v).__name__]) for k, v in DEFAULTS.items()}


def parse_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    return parse_lines(items, "<command line>")


def resolve(path: Optional[str] = None, overrides: Iterable[str] = ()) -> Dict[str, object]:
    raw: Dict[str, str] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            raw.update(parse_lines(fh, path))
    raw.update(parse_overrides(overrides))
    cfg = dict(DEFAULTS)
    for key, value in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            cfg[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    if cfg["model.kind"] not in ("transw", "transe"):
        raise ConfigError("model.kind must be transw or transe")
    if cfg["words.oov"] not in ("hash", "zero"):
        raise ConfigError("words.oov must be hash or zero")
    train_config(cfg)
    return cfg


def train_config(cfg: Dict[str, object]) -> TrainConfig:
    try:
        return TrainConfig(**{f.name: cfg[f"train.{f.name}"] for f in fields(TrainConfig)})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def dumps(cfg: Dict[str, object]) -> str:
    return "".join(f"{k} = {'' if v is None else v}\n" for k, v in sorted(cfg.items()))
