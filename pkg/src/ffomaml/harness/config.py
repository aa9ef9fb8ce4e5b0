"""Flat ``key = value`` run configuration.

Keys are dotted: ``synth.n_products = 20``, ``train.meta_lr = 0.01``,
``gcn.epochs = 50``, ``theory.T = 500``, ``experiment.proxy_quantile = 0.05``.
``#`` starts a comment.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from ..errors import ConfigError
from ..metalearn import TrainConfig
from ..relgraph import GcnConfig
from ..task_model import SynthConfig
from ..theorysim import GenerativeConfig


@dataclass
class ExperimentConfig:
    split: tuple = (0.6, 0.2, 0.2)
    # similarity threshold chosen so this fraction of product pairs count as similar;
    # 0 means use train.proxy_delta as given
    proxy_quantile: float = 0.05
    jd_category_column: str = "attribute1"


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(n_products=20))
    gcn: GcnConfig = field(default_factory=GcnConfig)
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(episodes=2000, inner_lr=0.01, meta_lr=0.01)
    )
    theory: GenerativeConfig = field(default_factory=GenerativeConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def snapshot(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}


SECTIONS = ("synth", "gcn", "train", "theory", "experiment")


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def _coerce(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(float(v) for v in value.split(","))
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {type(default).__name__}") from None
    return value


def apply_overrides(config: RunConfig, values: dict) -> RunConfig:
    sections = {name: getattr(config, name) for name in SECTIONS}
    updates = {name: {} for name in SECTIONS}
    for key, value in values.items():
        section, _, name = key.partition(".")
        if section not in sections or not name:
            raise ConfigError(f"unknown config key {key!r}")
        target = sections[section]
        known = {f.name for f in fields(target)}
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        updates[section][name] = _coerce(value, getattr(target, name), key)
    try:
        config = RunConfig(**{n: replace(sections[n], **updates[n]) for n in SECTIONS})
        config.synth.validate()
        return config
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None) -> RunConfig:
    config = RunConfig()
    if path is None:
        return config
    with open(path, encoding="utf-8") as f:
        return apply_overrides(config, parse_config_text(f.read()))


def config_from_snapshot(snapshot: dict) -> RunConfig:
    """Inverse of ``RunConfig.snapshot`` (as stored in a run manifest)."""
    exp = dict(snapshot["experiment"])
    exp["split"] = tuple(exp["split"])
    return RunConfig(
        synth=SynthConfig(**snapshot["synth"]),
        gcn=GcnConfig(**snapshot["gcn"]),
        train=TrainConfig(**snapshot["train"]),
        theory=GenerativeConfig(**snapshot["theory"]),
        experiment=ExperimentConfig(**exp),
    )


def config_to_text(config: RunConfig) -> str:
    lines = []
    for section, values in config.snapshot().items():
        for key, value in values.items():
            if isinstance(value, (tuple, list)):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{section}.{key} = {value}")
    return "\n".join(lines) + "\n"
