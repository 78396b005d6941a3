"""System configuration: defaults < YAML file < environment < flags."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .kgraph.linking import LinkingConfig
from .query import QueryConfig

ENV_PREFIX = "TASKDS_"
CLIENT_KINDS = {"stub", "openai"}


@dataclass(frozen=True)
class ClientSettings:
    extractor: str = "stub"
    judge: str = "stub"
    reranker: str = "stub"
    embedder: str = "stub"
    stub_rules: str | None = None
    stub_latency: float = 0.0
    llm_base_url: str = "https://api.openai.com/v1"
    llm_model: str = "gpt-4o-mini"
    embed_base_url: str = "https://api.openai.com/v1"
    embed_model: str = "text-embedding-3-small"
    # name of the variable holding the key; the key itself is never stored
    api_key_env: str = "OPENAI_API_KEY"
    embedding_dim: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("extractor", "judge", "reranker", "embedder"):
            if getattr(self, name) not in CLIENT_KINDS:
                raise ConfigError(f"clients.{name} must be one of {sorted(CLIENT_KINDS)}")
        if self.embedding_dim < 1:
            raise ConfigError("clients.embedding_dim must be positive")

    @property
    def all_stub(self) -> bool:
        return all(getattr(self, n) == "stub" for n in ("extractor", "judge", "reranker", "embedder"))


@dataclass(frozen=True)
class SystemConfig:
    corpus: tuple[str, ...] = ()
    store: str = "store"
    cache: str = "cache"
    char_budget: int = 24_000
    alias_file: str | None = None
    # None: reproducible exactly when every client is a stub
    reproducible: bool | None = None
    clients: ClientSettings = field(default_factory=ClientSettings)
    linking: LinkingConfig = field(default_factory=LinkingConfig)
    query: QueryConfig = field(default_factory=QueryConfig)

    @property
    def is_reproducible(self) -> bool:
        return self.clients.all_stub if self.reproducible is None else self.reproducible

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_SECTIONS: dict[str, type] = {"clients": ClientSettings, "linking": LinkingConfig, "query": QueryConfig}


def _coerce(value: Any, default: Any, name: str) -> Any:
    if isinstance(value, str) and not isinstance(default, str):
        if isinstance(default, bool) or default is None and value.lower() in {"true", "false"}:
            if value.lower() in {"1", "true", "yes", "on"}:
                return True
            if value.lower() in {"0", "false", "no", "off"}:
                return False
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return tuple(p for p in value.split(os.pathsep) if p)
    if isinstance(default, tuple) and isinstance(value, (list, tuple)):
        return tuple(str(v) for v in value)
    if isinstance(default, tuple) and isinstance(value, str):
        return (value,)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _merge(base: dict[str, Any], layer: Mapping[str, Any], where: str) -> None:
    top_fields = {f.name: f for f in dataclasses.fields(SystemConfig)}
    for key, value in layer.items():
        if key not in top_fields:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in _SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"{where}: {key} must be a mapping")
            allowed = {f.name for f in dataclasses.fields(_SECTIONS[key])}
            for sub, v in value.items():
                if sub not in allowed:
                    raise ConfigError(f"{where}: unknown key {key}.{sub!r}")
                base[key][sub] = _coerce(v, base[key][sub], f"{key}.{sub}")
        else:
            base[key] = _coerce(value, base[key], key)


def _env_layer(environ: Mapping[str, str]) -> dict[str, Any]:
    layer: dict[str, Any] = {}
    for f in dataclasses.fields(SystemConfig):
        if f.name in _SECTIONS:
            for sub in dataclasses.fields(_SECTIONS[f.name]):
                var = f"{ENV_PREFIX}{f.name}_{sub.name}".upper()
                if var in environ:
                    layer.setdefault(f.name, {})[sub.name] = environ[var]
        else:
            var = f"{ENV_PREFIX}{f.name}".upper()
            if var in environ:
                layer[f.name] = environ[var]
    return layer


def load_config(
    path: Path | str | None = None,
    *,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> SystemConfig:
    """Resolve configuration; relative paths in a file are taken relative to it."""
    base = SystemConfig().to_dict()
    base_dir = None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(base, data, str(path))
        base_dir = path.parent
    _merge(base, _env_layer(os.environ if environ is None else environ), "environment")
    if overrides:
        _merge(base, {k: v for k, v in overrides.items() if v is not None}, "flags")

    if base_dir is not None:
        def rel(p: str | None) -> str | None:
            return p if p is None or Path(p).is_absolute() else str(base_dir / p)

        base["corpus"] = tuple(rel(p) for p in base["corpus"])
        for key in ("store", "cache", "alias_file"):
            base[key] = rel(base[key])
        base["clients"]["stub_rules"] = rel(base["clients"]["stub_rules"])

    try:
        return SystemConfig(
            **{k: v for k, v in base.items() if k not in _SECTIONS},
            **{k: cls(**base[k]) for k, cls in _SECTIONS.items()},
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
