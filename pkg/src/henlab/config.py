"""Run configuration: profiles, key=value files and command-line overrides.

Keys are flat (``seed``, ``corpus``) or dotted for a component section
(``gen.rho``, ``train.learning_rate``, ``gss.n_shapes``, ``ransac.iterations``,
``baseline.max_keypoints``, ``model.channels``). Precedence is command line,
then file, then profile defaults. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

from .baseline import BaselineConfig, RansacConfig
from .datagen import GenConfig, GssConfig
from .errors import ConfigError, HenLabError
from .hen.core import FAST_CHANNELS, FEATURE_STRIDES, PAPER_CHANNELS
from .hen.train import TrainConfig

PROFILES = {
    "fast": {
        "gen.patch_size": 64, "gen.rho": 16.0,
        "gss.image_size": 160, "gss.size_range": (8.0, 48.0),
        "model.channels": FAST_CHANNELS, "train.loss_scale": 16.0,
    },
    "paper": {
        "gen.patch_size": 128, "gen.rho": 32.0,
        "gss.image_size": 320, "gss.size_range": (16.0, 96.0),
        "model.channels": PAPER_CHANNELS, "train.loss_scale": 32.0,
    },
}


@dataclass
class ModelConfig:
    channels: tuple[int, ...] = FAST_CHANNELS
    strides: tuple[int, ...] = FEATURE_STRIDES


@dataclass
class RunConfig:
    profile: str = "fast"
    seed: int = 0
    out: str = "runs"
    corpus: str = ""
    eval_corpora: tuple[str, ...] = ()
    split: str = "all"
    weights: str = ""
    resume: str = ""
    samples: int = 1000
    n_images: int = 100
    checkpoint_every: int = 1000
    log_every: int = 100
    keep_fraction: float = 0.8
    shape_counts: tuple[int, ...] = (1, 5, 9, 15)
    alpha: float = 0.5
    gen: GenConfig = field(default_factory=GenConfig)
    gss: GssConfig = field(default_factory=GssConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def sources(self) -> list[str]:
        """Corpus list for eval-style commands: ``corpus`` then ``eval_corpora``."""
        return [c for c in (self.corpus, *self.eval_corpora) if c]


SECTIONS = ("gen", "gss", "model", "train", "ransac", "baseline")
_SEEDED = ("gen", "gss", "train", "ransac")
_SKIP = {("baseline", "ransac")}


def _top_fields():
    return {f.name: f for f in dataclasses.fields(RunConfig) if f.name not in SECTIONS}


def _section_fields(section):
    cls = {f.name: f for f in dataclasses.fields(RunConfig)}[section].default_factory
    return {f.name: f for f in dataclasses.fields(cls) if (section, f.name) not in _SKIP}


def all_keys() -> list[str]:
    keys = list(_top_fields())
    for s in SECTIONS:
        keys += [f"{s}.{k}" for k in _section_fields(s)]
    return keys


def _field_for(key):
    if "." in key:
        section, name = key.split(".", 1)
        if section in SECTIONS:
            f = _section_fields(section).get(name)
            if f is not None:
                return f
    elif key in _top_fields():
        return _top_fields()[key]
    raise ConfigError(f"unknown config key {key!r}")


def _parse_scalar(kind, text):
    kind = kind.replace(" ", "")
    if kind.startswith("bool"):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(text)
    if kind.startswith("int"):
        return int(text)
    if kind.startswith("float"):
        if text.strip().lower() in ("none", ""):
            return None
        return float(text)
    return text.strip()


def parse_value(key: str, text: str):
    """Coerce ``text`` to the type declared for ``key``."""
    kind = str(_field_for(key).type).replace("typing.", "")
    try:
        if kind.startswith("tuple"):
            inner = kind[kind.index("[") + 1:].split(",")[0]
            parts = [p for p in (s.strip() for s in text.split(",")) if p]
            return tuple(_parse_scalar(inner, p) for p in parts)
        return _parse_scalar(kind, text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    return str(value).lower() if isinstance(value, bool) else str(value)


def parse_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        _field_for(k)
        out[k] = v
    return out


def read_file(path) -> dict:
    try:
        with open(path) as fh:
            return parse_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def build(file_values: dict | None = None, cli_values: dict | None = None) -> RunConfig:
    """Merge defaults, profile, file and command-line strings into a validated config."""
    file_values = dict(file_values or {})
    cli_values = dict(cli_values or {})
    merged = {**file_values, **cli_values}
    for k in merged:
        _field_for(k)
    profile = merged.get("profile", "fast")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    values = dict(PROFILES[profile])
    values.update({k: parse_value(k, v) if isinstance(v, str) else v for k, v in merged.items()})
    values["profile"] = profile

    top = {k: v for k, v in values.items() if "." not in k}
    sections = {s: {} for s in SECTIONS}
    for k, v in values.items():
        if "." in k:
            s, name = k.split(".", 1)
            sections[s][name] = v
    seed = int(top.get("seed", 0))
    for s in _SEEDED:
        sections[s].setdefault("seed", seed)
    try:
        sections["baseline"]["ransac"] = RansacConfig(**sections["ransac"])
        built = {s: _section_cls(s)(**sections[s]) for s in SECTIONS if s != "baseline"}
        built["baseline"] = BaselineConfig(**sections["baseline"])
        cfg = RunConfig(**top, **built)
        validate(cfg)
    except HenLabError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _section_cls(section):
    return {f.name: f for f in dataclasses.fields(RunConfig)}[section].default_factory


def validate(cfg: RunConfig) -> None:
    cfg.gen.validate()
    cfg.gss.validate()
    cfg.train.validate()
    if cfg.split not in ("all", "train", "eval"):
        raise ConfigError(f"split must be all, train or eval, got {cfg.split!r}")
    if cfg.samples < 1 or cfg.n_images < 1:
        raise ConfigError("samples and n_images must be >= 1")
    if cfg.checkpoint_every < 0 or cfg.log_every < 0:
        raise ConfigError("checkpoint_every and log_every must be >= 0")
    if not 0 < cfg.keep_fraction <= 1:
        raise ConfigError("keep_fraction must lie in (0, 1]")
    if not 0 <= cfg.alpha <= 1:
        raise ConfigError("alpha must lie in [0, 1]")
    if len(cfg.model.channels) != len(cfg.model.strides):
        raise ConfigError("model.channels and model.strides must have the same length")
    if any(c < 1 for c in cfg.model.channels) or any(s not in (1, 2) for s in cfg.model.strides):
        raise ConfigError("channels must be positive and strides 1 or 2")
    if any(k < 1 for k in cfg.shape_counts):
        raise ConfigError("shape_counts must be positive")
    if cfg.baseline.max_keypoints < 4 or not 0 < cfg.baseline.ratio <= 1:
        raise ConfigError("baseline.max_keypoints must be >= 4 and ratio in (0, 1]")


def as_dict(cfg: RunConfig) -> dict:
    out = {}
    for k in all_keys():
        if "." in k:
            s, name = k.split(".", 1)
            out[k] = getattr(getattr(cfg, s), name)
        else:
            out[k] = getattr(cfg, k)
    return out


def snapshot(cfg: RunConfig) -> str:
    """Complete key=value text; ``build(parse_text(snapshot(c)))`` equals ``c``."""
    return "".join(f"{k} = {format_value(v)}\n" for k, v in sorted(as_dict(cfg).items()))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(snapshot(cfg).encode()).hexdigest()[:10]
