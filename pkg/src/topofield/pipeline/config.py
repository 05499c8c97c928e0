"""Run configuration and TOML presets with a flat [synth] / [train] / [model] layout."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import tomli

from ..neural.field import FUSION_MODES, ModelConfig
from ..synthtree import TreeSpec


class ConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_train: int = 40
    n_test: int = 10
    train_seed: int = 0
    test_seed: int = 10_000
    min_breaks: int = 1
    max_breaks: int = 3
    min_nodes: int = 8
    dims: tuple[int, int, int] = (64, 64, 64)
    depth: int = 2
    children_per_node: int = 3
    trunk_radius: float = 3.0
    radius_decay: float = 0.75
    branch_length_range: tuple[float, float] = (14.0, 20.0)
    bend_jitter: float = 0.25
    class_count: int = 7
    segment_count: int = 6
    split_angle: float = 0.75

    def tree_spec(self, seed: int = 0) -> TreeSpec:
        keys = {f.name for f in fields(TreeSpec)} - {"seed"}
        return TreeSpec(seed=seed, **{k: getattr(self, k) for k in keys})


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 16
    learning_rate: float = 1e-4
    lambda_bce: float = 0.5
    lambda_dice: float = 0.5
    supervision: str = "full"
    fusion: str = "ssa"
    n_surface: int = 25_000
    n_skeleton: int = 6_000
    Q_r: int = 6_000
    Q_l: int = 6_000
    Q_s: int = 6_000
    p: float = 0.8
    capsule_scale: float = 6.0
    min_nodes: int = 8
    recorrupt: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.supervision not in ("full", "weak"):
            raise ConfigError(f"supervision must be full or weak, got {self.supervision!r}")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {self.fusion!r}")
        for name in ("epochs", "batch_size", "n_surface", "n_skeleton", "Q_r", "Q_l", "Q_s"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.p < 1:
            raise ConfigError("p must lie in (0, 1)")


@dataclass
class RunConfig:
    synth: SynthConfig
    train: TrainConfig
    model: ModelConfig

    def to_json(self) -> dict:
        return {"synth": asdict(self.synth), "train": asdict(self.train), "model": self.model.to_json()}


def _build(cls, section: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"invalid config key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(raw: dict) -> RunConfig:
    unknown = set(raw) - {"synth", "train", "model"}
    if unknown:
        raise ConfigError(f"invalid config section(s): {', '.join(sorted(unknown))}")
    synth = _build(SynthConfig, dict(raw.get("synth", {})), "synth")
    train = _build(TrainConfig, dict(raw.get("train", {})), "train")
    model_raw = dict(raw.get("model", {}))
    for key in ("n_label", "n_segment", "fusion"):
        if key in model_raw:
            raise ConfigError(f"[model] {key} is derived, not configurable")
    model_raw.update(n_label=synth.class_count, n_segment=synth.segment_count, fusion=train.fusion,
                     seed=model_raw.get("seed", train.seed))
    model = _build(ModelConfig, model_raw, "model")
    return RunConfig(synth, train, model)


def preset_path(name: str) -> Path:
    path = resources.files("topofield") / "presets" / f"{name}.toml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}")
    return Path(str(path))


def load_config(path=None, preset: str = "desk", overrides: dict | None = None) -> RunConfig:
    """Preset values, then the file at ``path`` section by section, then ``overrides``."""
    raw = tomli.loads(preset_path(preset).read_text())
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            user = tomli.loads(path.read_text())
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for section, values in user.items():
            if not isinstance(values, dict):
                raise ConfigError(f"invalid config key: {section}")
            raw.setdefault(section, {}).update(values)
    for section, values in (overrides or {}).items():
        raw.setdefault(section, {}).update(values)
    return parse_config(raw)
