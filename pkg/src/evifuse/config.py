"""Pipeline configuration with strict JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .anchors import AnchorConfig
from .embedfilter import DEFAULT_LAMBDA_D
from .fusion import FusionThresholds
from .pixelfusion import DEFAULT_TAU_U
from .synth import NoiseConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    num_scenes: int = 20
    num_classes: int = 5
    width: int = 128
    height: int = 128
    n_objects: tuple[int, int] = (1, 3)
    min_size: int | None = None
    max_size: int | None = None
    embedding_dim: int = 32
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self):
        object.__setattr__(self, "n_objects", tuple(self.n_objects))
        if self.num_scenes < 1 or self.num_classes < 1:
            raise ConfigError("num_scenes and num_classes must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    fusion: FusionThresholds = field(default_factory=FusionThresholds)
    lambda_d: float = DEFAULT_LAMBDA_D
    tau_u: float = DEFAULT_TAU_U
    ap_interpolation: str = "continuous"
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.lambda_d <= 0:
            raise ConfigError(f"lambda_d must be positive, got {self.lambda_d}")
        if not 0 < self.tau_u < 1:
            raise ConfigError(f"tau_u must lie in (0, 1), got {self.tau_u}")
        if self.ap_interpolation not in ("continuous", "11point"):
            raise ConfigError(f"ap_interpolation must be 'continuous' or '11point', got {self.ap_interpolation!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchors"]["scale_fractions"] = list(self.anchors.scale_fractions)
        d["anchors"]["aspect_ratios"] = list(self.anchors.aspect_ratios)
        d["synth"]["n_objects"] = list(self.synth.n_objects)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        nested = {"anchors": AnchorConfig, "fusion": FusionThresholds}
        for key, typ in nested.items():
            if key in d:
                d[key] = _build(typ, d[key], key)
        if "synth" in d:
            s = dict(_check_keys(SynthConfig, d["synth"], "synth"))
            if "noise" in s:
                s["noise"] = _build(NoiseConfig, s["noise"], "synth.noise")
            d["synth"] = _construct(SynthConfig, s, "synth")
        return _construct(cls, _check_keys(cls, d, "config"), "config")

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_seed(self, seed: int | None) -> "PipelineConfig":
        if seed is None:
            return self
        return replace(self, seed=seed, synth=replace(self.synth, noise=replace(self.synth.noise, seed=seed)))


def _check_keys(typ, d, where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    known = {f.name for f in fields(typ)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return d


def _construct(typ, d: dict, where: str):
    try:
        return typ(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _build(typ, d, where: str):
    return _construct(typ, _check_keys(typ, d, where), where)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return PipelineConfig.from_dict(data)
