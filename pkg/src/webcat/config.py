"""Pipeline configuration file and artifact provenance."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping

from . import __version__
from .errors import WebcatError


class ConfigError(WebcatError):
    exit_code = 1


@dataclass
class PathsConfig:
    corpus: str | None = None
    signatures: str | None = None
    vocab: str | None = None
    checkpoint: str | None = None
    cache: str | None = None
    split_dir: str | None = None


@dataclass
class SplitSection:
    mode: str = "domain-and-time"
    train_end: str | None = None
    val_end: str | None = None
    test_end: str | None = None
    max_urls_per_domain: int = 5


@dataclass
class MixSection:
    total: int | None = None
    ratios: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])


@dataclass
class TeacherSection:
    kind: str = "local"  # local | remote
    endpoint: str | None = None
    model: str = ""
    token_env: str = "WEBCAT_TEACHER_TOKEN"
    noise_rate: float = 0.0
    max_parallel: int = 4
    max_retries: int = 4
    backoff_seconds: float = 0.5
    batch_size: int = 256


@dataclass
class ServerSection:
    host: str = "127.0.0.1"
    port: int = 8080


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    split: SplitSection = field(default_factory=SplitSection)
    mix: MixSection = field(default_factory=MixSection)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    server: ServerSection = field(default_factory=ServerSection)

    def to_json(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()

    def override(self, dotted: Mapping[str, Any]) -> PipelineConfig:
        """Copy with ``{"section.key": value}`` overrides; ``None`` values are ignored."""
        data = self.to_json()
        for key, value in dotted.items():
            if value is None:
                continue
            *parents, leaf = key.split(".")
            node = data
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = value
        return config_from_dict(data)


_SECTIONS = {"paths": PathsConfig, "split": SplitSection, "mix": MixSection, "teacher": TeacherSection, "server": ServerSection}


def config_from_dict(data: Mapping[str, Any]) -> PipelineConfig:
    unknown = set(data) - {"seed", *_SECTIONS}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    if "seed" in data:
        kwargs["seed"] = int(data["seed"])
    for name, cls in _SECTIONS.items():
        section = data.get(name) or {}
        allowed = {f.name for f in fields(cls)}
        bad = set(section) - allowed
        if bad:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
        kwargs[name] = cls(**section)
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None) -> PipelineConfig:
    """Read a JSON config file; no path means all defaults."""
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p}: {exc}") from exc
    return config_from_dict(data)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def provenance(config: PipelineConfig, inputs: Mapping[str, str | Path] = (), **extra) -> dict:
    """Provenance block; wall-clock time lives only under ``timestamps``."""
    return {
        "tool": f"webcat {__version__}",
        "config_sha256": config.digest(),
        "seed": config.seed,
        "inputs": {name: file_sha256(p) for name, p in sorted(dict(inputs).items())},
        **extra,
        "timestamps": {"created": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")},
    }


def write_json(path: str | Path, data: Any) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def sidecar(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".provenance.json")
