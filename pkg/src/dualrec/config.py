"""Run configuration: TOML file + command-line overrides, with experiment defaults."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .models import KINDS

OUTPUT_ENV = "DUALREC_OUTPUT"
TEXT_SOURCES = ("tfidf", "external", "blend")
VALIDATION_MODES = ("carve", "test", "none")


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (a usage error)."""


@dataclass(frozen=True)
class RunConfig:
    interactions: str = ""
    item_texts: str | None = None
    vectors: str | None = None
    interactions_format: str | None = None
    header: bool | None = None
    dataset_name: str | None = None
    min_interactions: int = 10
    train_ratio: float = 0.8
    text_source: str = "tfidf"
    blend_alpha: float = 0.5
    top_n: int = 10
    threshold: float = 0.0
    model: str = "belightrec"
    embedding_size: int = 64
    layers: int = 3
    init_scale: float = 0.1
    include_layer0: bool = False
    semantic_weighting: str = "degree"
    semantic_summand: str = "neighbor"
    learning_rate: float = 1e-3
    l2_lambda: float = 1e-5
    batch_size: int = 2048
    max_epochs: int = 1000
    eval_every: int = 10
    patience: int = 5
    validation: str = "carve"
    validation_fraction: float = 0.1
    ks: tuple[int, ...] = (5, 20)
    seed: int = 0
    output: str = "runs"

    @property
    def name(self) -> str:
        return self.dataset_name or Path(self.interactions).stem

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ks"] = list(self.ks)
        return d

    def config_hash(self) -> str:
        """Short content hash of everything but the output location."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def model_params(self) -> dict:
        """Keyword arguments for :func:`dualrec.estimators.make_recommender`."""
        return {
            "embedding_dim": self.embedding_size, "n_layers": self.layers,
            "learning_rate": self.learning_rate, "l2_lambda": self.l2_lambda,
            "batch_size": self.batch_size, "max_epochs": self.max_epochs,
            "eval_every": self.eval_every, "patience": self.patience,
            "validation_fraction": self.validation_fraction if self.validation == "carve" else 0.0,
            "init_scale": self.init_scale, "include_layer0": self.include_layer0,
            "semantic_weighting": self.semantic_weighting, "semantic_summand": self.semantic_summand,
            "random_state": self.seed,
        }


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
PATH_FIELDS = ("interactions", "item_texts", "vectors", "output")
_ENUMS = {
    "text_source": TEXT_SOURCES,
    "model": KINDS,
    "validation": VALIDATION_MODES,
    "semantic_weighting": ("degree", "weighted"),
    "semantic_summand": ("neighbor", "self"),
    "interactions_format": (None, "csv", "tsv"),
}


def _coerce(name: str, value):
    f = FIELDS[name]
    default = f.default
    kind = f.type
    try:
        if name == "ks":
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            out = tuple(int(v) for v in value)
            if not out or min(out) < 1:
                raise ConfigError("ks must be a nonempty list of positive integers")
            return out
        if value is None:
            return None
        if "bool" in kind:
            if isinstance(value, str):
                low = value.strip().lower()
                if low not in {"true", "false", "1", "0", "yes", "no"}:
                    raise ConfigError(f"{name}: expected a boolean, got {value!r}")
                return low in {"true", "1", "yes"}
            return bool(value)
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int) and not isinstance(default, bool) and "float" not in kind:
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{name}: expected an integer, got {value!r}")
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{name}: invalid value {value!r}") from None


def _validate(cfg: RunConfig) -> None:
    for name, allowed in _ENUMS.items():
        if getattr(cfg, name) not in allowed:
            raise ConfigError(f"{name}: invalid value {getattr(cfg, name)!r}; "
                              f"expected one of {[a for a in allowed if a is not None]}")
    if not cfg.interactions:
        raise ConfigError("missing required dataset path 'interactions'")
    if cfg.text_source in ("tfidf", "blend") and not cfg.item_texts:
        raise ConfigError(f"text_source={cfg.text_source} needs the 'item_texts' path")
    if cfg.text_source in ("external", "blend") and not cfg.vectors:
        raise ConfigError(f"text_source={cfg.text_source} needs the 'vectors' path")
    if not 0.0 < cfg.train_ratio < 1.0:
        raise ConfigError("train_ratio must lie strictly between 0 and 1")
    if cfg.min_interactions < 1:
        raise ConfigError("min_interactions must be >= 1")
    if not 0.0 <= cfg.blend_alpha <= 1.0:
        raise ConfigError("blend_alpha must lie in [0, 1]")
    if cfg.top_n < 1:
        raise ConfigError("top_n must be >= 1")
    if not 0.0 <= cfg.threshold < 1.0:
        raise ConfigError("threshold must lie in [0, 1)")
    if cfg.embedding_size < 1 or cfg.layers < 1:
        raise ConfigError("embedding_size and layers must be >= 1")
    if cfg.learning_rate <= 0 or cfg.l2_lambda < 0:
        raise ConfigError("learning_rate must be > 0 and l2_lambda >= 0")
    if cfg.batch_size < 1 or cfg.max_epochs < 0 or cfg.eval_every < 1 or cfg.patience < 1:
        raise ConfigError("batch_size, eval_every and patience must be >= 1; max_epochs >= 0")
    if cfg.validation == "carve" and not 0.0 < cfg.validation_fraction < 1.0:
        raise ConfigError("validation_fraction must lie strictly between 0 and 1")


def parse_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Resolve a run configuration.

    Precedence, lowest to highest: defaults, the TOML file at ``path``, the
    ``DUALREC_OUTPUT`` environment variable (output directory only), ``overrides``.
    ``None`` values in ``overrides`` mean "not given". Unknown keys are errors.
    Relative paths in the file resolve against the file's directory.
    """
    env = os.environ if env is None else env
    values: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            with path.open("rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        base = path.resolve().parent
        for key, value in raw.items():
            if key not in FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, value)
        for key in PATH_FIELDS:
            if values.get(key):
                values[key] = str((base / values[key]).resolve())
    if env.get(OUTPUT_ENV):
        values["output"] = env[OUTPUT_ENV]
    for key, value in (overrides or {}).items():
        if key not in FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = _coerce(key, value)
    for key in PATH_FIELDS:
        if values.get(key):
            values[key] = str(Path(values[key]).resolve())
    cfg = RunConfig(**values)
    _validate(cfg)
    return cfg
