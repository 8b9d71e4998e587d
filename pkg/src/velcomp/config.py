"""Run configuration: one versioned YAML document covering every module.

Layout (all sections optional, every key optional)::

    version: 1
    seed: 0
    pitch:   {length, width, grid_nx, grid_ny}
    synth:   SynthConfig fields except seed
    ingest:  IngestConfig fields, plus split: [train, val, test]
    model:   ModelSpec fields except arch and seed (includes the rule baseline's
             rule_speed and rule_stop_radius)
    arch:    grnn
    train:   TrainConfig fields except seed and k
    eval:    {n_inferences, batch_size}
    ppcf:    PPCFParams fields
    obso:    {sigma_T, alpha}

The top-level ``seed`` feeds the generator, the weight initializer and the
trainer, so one flag reproduces a whole run.  Unknown keys anywhere are an
error.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .core_types import PitchSpec
from .ingest import IngestConfig, SplitSpec, config_hash
from .models import ModelSpec, RuleConfig
from .pitchcontrol import PPCFParams
from .synth import SynthConfig
from .train_eval import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    n_inferences: int = 10
    batch_size: int = 256


@dataclass(frozen=True)
class OBSOConfig:
    sigma_T: float = 14.0
    alpha: float = 0.14


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    arch: str = "grnn"
    pitch: PitchSpec = field(default_factory=PitchSpec)
    synth: SynthConfig = field(default_factory=SynthConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    split: tuple[int, int, int] | None = None
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    ppcf: PPCFParams = field(default_factory=PPCFParams)
    obso: OBSOConfig = field(default_factory=OBSOConfig)

    def split_spec(self, n_matches: int) -> SplitSpec:
        if self.split is None:
            return SplitSpec.proportional(n_matches)
        return SplitSpec(*self.split)

    def model_spec(self, arch: str | None = None) -> ModelSpec:
        d = asdict(self.model)
        d.update(arch=arch or self.arch, seed=self.seed)
        return ModelSpec(**d)

    @property
    def rule(self) -> RuleConfig:
        return RuleConfig(self.model.rule_speed, self.model.rule_stop_radius)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["version"] = SCHEMA_VERSION
        d["split"] = list(self.split) if self.split is not None else None
        return d

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def with_overrides(self, seed: int | None = None, arch: str | None = None) -> "RunConfig":
        return build_config(self._raw_overrides(seed, arch))

    def _raw_overrides(self, seed, arch) -> dict:
        raw = self.to_dict()
        if seed is not None:
            raw["seed"] = seed
        if arch is not None:
            raw["arch"] = arch
        for sec, drop in _SECTION_DROPS.items():
            for k in drop:
                raw[sec].pop(k, None)
        return raw


_SECTIONS = {
    "pitch": PitchSpec,
    "synth": SynthConfig,
    "ingest": IngestConfig,
    "model": ModelSpec,
    "train": TrainConfig,
    "eval": EvalConfig,
    "ppcf": PPCFParams,
    "obso": OBSOConfig,
}
# keys owned by the top level (seed, arch) or derived (k from ingest)
_SECTION_DROPS = {"synth": ("seed",), "model": ("arch", "seed"), "train": ("seed", "k")}
_TOP = {"version", "seed", "arch", "split", *_SECTIONS}


def _section(name: str, raw, seed: int, extra: dict) -> object:
    cls = _SECTIONS[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    allowed = {f.name for f in fields(cls)} - set(_SECTION_DROPS.get(name, ()))
    unknown = sorted(set(raw) - allowed - ({"split"} if name == "ingest" else set()))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    kwargs = {k: v for k, v in raw.items() if k != "split"}
    kwargs.update(extra)
    if "seed" in {f.name for f in fields(cls)} and name != "model":
        kwargs["seed"] = seed
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid '{name}' section: {e}") from e


def build_config(raw: dict | None) -> RunConfig:
    """Validate a parsed document and build the RunConfig."""
    raw = dict(raw or {})
    unknown = sorted(set(raw) - _TOP)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    version = raw.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version!r}; expected {SCHEMA_VERSION}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    arch = raw.get("arch", "grnn")
    ingest_raw = raw.get("ingest") or {}
    split = raw.get("split", ingest_raw.get("split") if isinstance(ingest_raw, dict) else None)
    if split is not None:
        if not (isinstance(split, (list, tuple)) and len(split) == 3 and all(isinstance(n, int) for n in split)):
            raise ConfigError("split must be a list of three match counts [train, val, test]")
        split = tuple(split)
    ingest = _section("ingest", ingest_raw, seed, {})
    out = RunConfig(
        seed=seed,
        arch=arch,
        pitch=_section("pitch", raw.get("pitch"), seed, {}),
        synth=_section("synth", raw.get("synth"), seed, {}),
        ingest=ingest,
        split=split,
        model=_section("model", raw.get("model"), seed, {"arch": arch, "seed": seed}),
        train=_section("train", raw.get("train"), seed, {"k": ingest.k}),
        eval=_section("eval", raw.get("eval"), seed, {}),
        ppcf=_section("ppcf", raw.get("ppcf"), seed, {}),
        obso=_section("obso", raw.get("obso"), seed, {}),
    )
    if out.eval.n_inferences < 1 or out.eval.batch_size < 1:
        raise ConfigError("eval.n_inferences and eval.batch_size must be positive")
    return out


def load_config(path=None) -> RunConfig:
    """Read a YAML config; ``None`` gives the defaults."""
    if path is None:
        return build_config({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: not valid YAML ({str(e).splitlines()[0]})") from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return build_config(raw)


def dump_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    raw = cfg._raw_overrides(None, None)
    raw["split"] = list(cfg.split) if cfg.split is not None else None
    if raw["split"] is None:
        del raw["split"]
    path.write_text(yaml.safe_dump(raw, sort_keys=True))
    return path
