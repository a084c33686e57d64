"""Pipeline configuration: one JSON file drives every CLI command.

All artifact paths are resolved relative to the config file's directory so a
config directory is a self-contained, relocatable workspace. The config
fingerprint (stable hash of the canonical JSON) is stamped into report
headers so runs are attributable to an exact configuration.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .contrastive import MiningConfig, TrainConfig
from .corpus import ChunkConfig
from .embed import EmbedderConfig
from .errors import ConfigError
from .explain import RerankConfig
from .hashing import hash64

_TRAIN_FIXED = ("beta1", "beta2", "eps")  # Adam constants, not configurable


@dataclass(frozen=True)
class PipelinePaths:
    corpus: str = "corpus.jsonl"
    claims: str = "claims.jsonl"
    chunks: str = "work/chunks.jsonl"
    triplets: str = "work/triplets.jsonl"
    head: str = "work/head.cerw"
    index: str = "work/index.ceri"
    reports: str = "work/reports"
    cache: str = "work/embeddings.cerc"


@dataclass(frozen=True)
class PipelineConfig:
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)
    chunking: ChunkConfig = field(default_factory=ChunkConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    lexicon_path: str = "builtin"
    paths: PipelinePaths = field(default_factory=PipelinePaths)
    base_dir: Path = field(default_factory=Path, compare=False)

    def path(self, name: str) -> Path:
        rel = getattr(self.paths, name)
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict[str, Any]:
        train = dataclasses.asdict(self.training)
        for key in _TRAIN_FIXED:
            train.pop(key)
        return {
            "embedder": dataclasses.asdict(self.embedder),
            "chunking": dataclasses.asdict(self.chunking),
            "mining": dataclasses.asdict(self.mining),
            "training": train,
            "rerank": dataclasses.asdict(self.rerank),
            "lexicon_path": self.lexicon_path,
            "paths": dataclasses.asdict(self.paths),
        }

    def validate(self) -> None:
        self.embedder.validate()
        self.chunking.validate()
        self.mining.validate()
        self.training.validate()
        self.rerank.validate()


def _build_section(cls: type, data: Any, section: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - set(_TRAIN_FIXED)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    sections = {
        "embedder": EmbedderConfig,
        "chunking": ChunkConfig,
        "mining": MiningConfig,
        "training": TrainConfig,
        "rerank": RerankConfig,
        "paths": PipelinePaths,
    }
    unknown = set(data) - set(sections) - {"lexicon_path"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, cls in sections.items():
        if name in data:
            try:
                kwargs[name] = _build_section(cls, data[name], name)
            except TypeError as exc:
                raise ConfigError(f"invalid config section {name!r}: {exc}") from exc
    if "lexicon_path" in data:
        if not isinstance(data["lexicon_path"], str):
            raise ConfigError("lexicon_path must be a string")
        kwargs["lexicon_path"] = data["lexicon_path"]
    cfg = PipelineConfig(base_dir=base_dir or Path(), **kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from exc
    return config_from_dict(data, base_dir=path.resolve().parent)


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def config_fingerprint(cfg: PipelineConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return f"{hash64(canonical, salt=b'cfg'):016x}"
