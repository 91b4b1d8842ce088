"""Line-oriented ``section.key = value`` pipeline configuration.

Blank lines and ``#`` comments are ignored. Unknown sections or keys are
errors, so a misspelt hyperparameter never silently falls back to its
default. Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from mfeo import ConfigError
from mfeo.cnn import TrainConfig
from mfeo.features import FeatureParams
from mfeo.mlo import MloConfig
from mfeo.preprocess import AmfConfig


@dataclass(frozen=True)
class DataConfig:
    root: str = ""
    labels: str = ""
    classes: tuple = ()
    width: int = 64
    height: int = 64


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.8
    test_fraction: float = 0.2
    seed: int = 0
    subject_disjoint: bool = True


@dataclass(frozen=True)
class SelectConfig:
    penalty: float = 0.01
    folds: int = 3
    threshold: float = 0.5


@dataclass(frozen=True)
class CnnConfig:
    maps: int = 6
    side: int = 32


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "mfeo-out"
    figures: bool = True


# dim and bounds are fixed by the feature matrix at selection time
MLO_HIDDEN = ("dim", "lo", "hi")


@dataclass(frozen=True)
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    amf: AmfConfig = field(default_factory=AmfConfig)
    features: FeatureParams = field(default_factory=FeatureParams)
    mlo: MloConfig = field(default_factory=lambda: MloConfig(dim=1, max_iters=30))
    select: SelectConfig = field(default_factory=SelectConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    base_dir: str = "."

    def section_names(self):
        return [f.name for f in fields(self) if f.name != "base_dir"]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def with_seed(self, seed: int) -> PipelineConfig:
        return replace(
            self,
            split=replace(self.split, seed=seed),
            mlo=replace(self.mlo, seed=seed),
            train=replace(self.train, seed=seed),
        )

    def validate(self):
        s = self.split
        if not (0.0 <= s.train_fraction <= 1.0 and 0.0 <= s.test_fraction <= 1.0):
            raise ConfigError("split fractions must lie in [0, 1]")
        if abs(s.train_fraction + s.test_fraction - 1.0) > 1e-9:
            raise ConfigError("split.train_fraction + split.test_fraction must equal 1")
        if self.data.width < 3 or self.data.height < 3:
            raise ConfigError("data.width and data.height must be >= 3")
        if self.select.folds < 2:
            raise ConfigError("select.folds must be >= 2")
        try:
            self.amf.validate((self.data.height, self.data.width))
            replace(self.mlo, dim=1).validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        fp = self.features
        if fp.eps < 0:
            raise ConfigError("features.eps must be >= 0")
        if not 1 <= fp.grid <= min(self.data.width, self.data.height):
            raise ConfigError("features.grid must lie between 1 and the image side")
        if fp.hog_bins < 2:
            raise ConfigError("features.hog_bins must be >= 2")
        if fp.hog_cell < 1 or self.data.width % fp.hog_cell or self.data.height % fp.hog_cell:
            raise ConfigError("features.hog_cell must divide data.width and data.height")
        if self.cnn.maps < 1:
            raise ConfigError("cnn.maps must be >= 1")
        if self.cnn.side < 6 or (self.cnn.side - 4) % 2:
            raise ConfigError("cnn.side must be >= 6 with an even convolution output")

    def echo(self) -> dict:
        """Plain-dict view of every setting except the output directory."""
        out = {}
        for name in self.section_names():
            section = dataclasses.asdict(getattr(self, name))
            if name == "mlo":
                for k in MLO_HIDDEN:
                    section.pop(k)
            if name == "output":
                section.pop("dir")
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out


def _convert(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text: str, base_dir=".") -> PipelineConfig:
    cfg = PipelineConfig(base_dir=str(base_dir))
    updates: dict[str, dict] = {}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        where = f"line {lineno}"
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        lhs, value = (s.strip() for s in stripped.split("=", 1))
        if "." not in lhs:
            raise ConfigError(f"{where}: key {lhs!r} has no section")
        section, key = lhs.split(".", 1)
        if section not in cfg.section_names():
            raise ConfigError(f"{where}: unknown section {section!r}")
        current = getattr(cfg, section)
        names = {f.name for f in fields(current)}
        if section == "mlo":
            names -= set(MLO_HIDDEN)
        if key not in names:
            raise ConfigError(f"{where}: unknown key {lhs!r}")
        if lhs in seen:
            raise ConfigError(f"{where}: {lhs!r} set twice")
        seen.add(lhs)
        updates.setdefault(section, {})[key] = _convert(value, getattr(current, key), where)
    for section, values in updates.items():
        try:
            cfg = replace(cfg, **{section: replace(getattr(cfg, section), **values)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"section {section!r}: {exc}") from exc
    cfg.validate()
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for name in cfg.section_names():
        section = getattr(cfg, name)
        for f in fields(section):
            if name == "mlo" and f.name in MLO_HIDDEN:
                continue
            v = getattr(section, f.name)
            if isinstance(v, tuple):
                v = ",".join(v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{name}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
