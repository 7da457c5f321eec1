"""Flat "key = value" run configuration with [section] headers.

Parsing is strict: unknown sections or keys are errors, never silently
ignored, and a parsed config renders back to text that parses to the same
effective configuration.
"""

from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .params import ModelShape
from .sampler import HmcConfig
from .synth import VonMisesPair
from .trainer import TrainerConfig


@dataclass
class PathsConfig:
    data_dir: str = "data"
    out_dir: str = "out"
    patches: str = ""
    whitening: str = ""
    checkpoint: str = ""


@dataclass
class DataConfig:
    patch_size: int = 16
    n_patches: int = 100000
    variance_fraction: float = 0.99
    seed: int = 0


@dataclass
class ModelConfig:
    n_visible: int = 0          # 0 = derive from the data
    n_subspaces: int = 256
    subspace_dim: int = 2
    n_pool_hidden: int = 256
    n_mean_hidden: int = 100
    n_phase_factors: int = 256
    n_phase_hidden: int = 256
    alpha: float = 2.0

    def shape_for(self, n_visible):
        return ModelShape(
            n_visible=n_visible,
            n_subspaces=self.n_subspaces,
            subspace_dim=self.subspace_dim,
            n_pool_hidden=self.n_pool_hidden,
            n_mean_hidden=self.n_mean_hidden,
            n_phase_factors=self.n_phase_factors,
            n_phase_hidden=self.n_phase_hidden,
        )


@dataclass
class SynthConfig:
    patch_size: int = 8
    n_subspaces: int = 8
    n_patches: int = 20000
    amplitude: float = 1.0
    noise_sigma: float = 0.02
    coupled_pairs: str = "1:2:3.0:0.0,4:7:3.0:1.5707963267948966"
    seed: int = 0

    def parse_pairs(self):
        pairs = []
        text = self.coupled_pairs.strip()
        if not text:
            return pairs
        for chunk in text.split(","):
            parts = chunk.strip().split(":")
            if len(parts) != 4:
                raise ConfigError(f"coupled_pairs entry {chunk!r} is not i:j:kappa:mu")
            i, j = int(parts[0]), int(parts[1])
            pairs.append((i, j, VonMisesPair(kappa=float(parts[2]), mu=float(parts[3]))))
        return pairs


@dataclass
class ExportConfig:
    what: str = "all"
    max_columns: int = 32


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    hmc: HmcConfig = field(default_factory=HmcConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    export: ExportConfig = field(default_factory=ExportConfig)

    def to_text(self):
        lines = []
        for section_field in fields(self):
            section = getattr(self, section_field.name)
            lines.append(f"[{section_field.name}]")
            for f in fields(section):
                value = getattr(section, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                lines.append(f"{f.name} = {value}")
            lines.append("")
        return "\n".join(lines)


def _coerce(raw, default, where):
    try:
        if isinstance(default, bool):
            raise ConfigError(f"{where}: boolean keys are not used")
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(tok) for tok in raw.split(",") if tok.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse value {raw!r}") from exc


def parse_run_config(text):
    config = RunConfig()
    sections = {f.name: getattr(config, f.name) for f in fields(config)}
    current = None
    current_name = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current_name = stripped[1:-1].strip()
            if current_name not in sections:
                raise ConfigError(f"line {lineno}: unknown section [{current_name}]")
            current = sections[current_name]
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        known = {f.name: f for f in fields(current)}
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{current_name}]")
        default = getattr(type(current)(), key)
        setattr(current, key, _coerce(raw, default, f"line {lineno}"))
    return config


def load_run_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_run_config(fh.read())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc


def save_run_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config.to_text())
