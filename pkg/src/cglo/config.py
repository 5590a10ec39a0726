"""Flat ``section.key = value`` run configuration.

One top-level ``seed`` feeds every component. Unknown keys are errors, so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .generator import GeneratorConfig
from .synthesis import AugmentPlan, InvertConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class GeneratorSection:
    d: int = 128
    output_size: int = 64
    channels: int = 3
    base_feat: int = 64
    init: str = "he"


@dataclass
class TrainSection:
    epochs: int = 200
    lr_w: float = 0.1
    lr_z: float = 1.0
    batch_size: int = 8
    z_steps_per_epoch: int = 1
    projection: str = "ball"
    checkpoint_every: int = 0


@dataclass
class PlanSection:
    target_count: int = 4
    min_side: int = 64
    max_side: int = 128
    max_overlap_iou: float = 0.0


@dataclass
class InvertSection:
    steps: int = 500
    lr_z: float = 1.0
    condition: int = 0
    geometric: bool = True
    feather: int = 0


@dataclass
class SynthSection:
    sample_id: str = ""
    from_condition: int = 0
    to_condition: int = 1


@dataclass
class FixtureSection:
    n_patches: int = 64
    n_scenes: int = 8
    scene_size: int = 512
    fg_fraction: float = 0.5


@dataclass
class GradcheckSection:
    coords: int = 25
    h: float = 1e-5
    tol: float = 1e-3


@dataclass
class PathsSection:
    manifest: str = ""
    checkpoint: str = ""
    image: str = ""
    latent: str = ""
    annotations: str = ""


@dataclass
class RunConfig:
    seed: int = 0
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    train: TrainSection = field(default_factory=TrainSection)
    plan: PlanSection = field(default_factory=PlanSection)
    invert: InvertSection = field(default_factory=InvertSection)
    synth: SynthSection = field(default_factory=SynthSection)
    fixture: FixtureSection = field(default_factory=FixtureSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    paths: PathsSection = field(default_factory=PathsSection)

    # -- typed component views ------------------------------------------------

    def generator_config(self) -> GeneratorConfig:
        g = self.generator
        return GeneratorConfig(d=g.d, output_size=g.output_size, channels=g.channels,
                               base_feat=g.base_feat, seed=self.seed, init=g.init)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(epochs=t.epochs, lr_w=t.lr_w, lr_z=t.lr_z, batch_size=t.batch_size,
                           z_steps_per_epoch=t.z_steps_per_epoch, projection=t.projection, seed=self.seed)

    def augment_plan(self) -> AugmentPlan:
        p = self.plan
        return AugmentPlan(p.target_count, p.min_side, p.max_side, p.max_overlap_iou, self.seed)

    def invert_config(self) -> InvertConfig:
        i = self.invert
        return InvertConfig(i.steps, i.lr_z, i.geometric, i.feather)

    def validate(self):
        """Build every component view so its own invariants are checked."""
        try:
            self.generator_config()
            self.train_config()
            self.augment_plan()
            self.invert_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.invert.condition not in (0, 1) or {self.synth.from_condition, self.synth.to_condition} - {0, 1}:
            raise ConfigError("condition labels must be 0 or 1")

    # -- text form ------------------------------------------------------------

    def items(self):
        yield "seed", self.seed
        for f in dataclasses.fields(self):
            if f.name == "seed":
                continue
            section = getattr(self, f.name)
            for sf in dataclasses.fields(section):
                yield f"{f.name}.{sf.name}", getattr(section, sf.name)

    def to_text(self) -> str:
        lines = [f"{k} = {_format(v)}" for k, v in self.items()]
        return "\n".join(lines) + "\n"

    def set(self, key: str, raw: str):
        if key == "seed":
            self.seed = _coerce(key, raw, int)
            return
        section_name, _, name = key.partition(".")
        section = getattr(self, section_name, None) if section_name in _SECTIONS else None
        if section is None or not name or name not in {f.name for f in dataclasses.fields(section)}:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(section, name)
        setattr(section, name, _coerce(key, raw, type(current)))


_SECTIONS = {f.name for f in dataclasses.fields(RunConfig)} - {"seed"}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config(text: str, config: RunConfig | None = None) -> RunConfig:
    config = RunConfig() if config is None else config
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        config.set(key.strip(), value)
    return config


def load_config(path=None, overrides=()) -> RunConfig:
    config = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        parse_config(text, config)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        config.set(key.strip(), value)
    config.validate()
    return config
