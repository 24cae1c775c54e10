"""Flat ``key = value`` run configuration covering every module default.

The document is versioned (``schema_version``) and strict: unknown keys,
duplicates and unparsable values are configuration errors.  Keys are the
field names of :class:`NetworkConfig`, :class:`TrainConfig` and
:class:`AnnotationConfig` (disjoint), plus ``synth_size`` for the corpus
generator.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

from .annotate import AnnotationConfig
from .exceptions import ConfigError, DataIOError
from .network import NetworkConfig, TrainConfig

SCHEMA_VERSION = 1
CONFIG_ENV = "MSCCNET_CONFIG"
_SECTION = "run"


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    annotate: AnnotationConfig = field(default_factory=AnnotationConfig)
    synth_size: int = 64

    def flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
        for part in (self.network, self.train, self.annotate):
            for f in fields(part):
                out[f.name] = getattr(part, f.name)
        out["synth_size"] = self.synth_size
        return out

    def updated(self, values: Mapping[str, Any]) -> "RunConfig":
        """New config with ``values`` applied; strings are parsed by the target field's type."""
        groups: dict[str, dict[str, Any]] = {"network": {}, "train": {}, "annotate": {}}
        top: dict[str, Any] = {}
        for key, raw in values.items():
            if key == "schema_version":
                version = _parse(key, raw, SCHEMA_VERSION)
                if version != SCHEMA_VERSION:
                    raise ConfigError(f"unsupported schema_version {version}; this build reads {SCHEMA_VERSION}")
                continue
            owner = KEY_OWNER.get(key)
            if owner is None:
                raise ConfigError(f"unknown config key {key!r}")
            current = self.synth_size if owner == "" else getattr(getattr(self, owner), key)
            value = _parse(key, raw, current)
            (top if owner == "" else groups[owner])[key] = value
        cfg = replace(
            self,
            network=replace(self.network, **groups["network"]),
            train=replace(self.train, **groups["train"]),
            annotate=replace(self.annotate, **groups["annotate"]),
            **top,
        )
        return cfg.validate()

    def validate(self) -> "RunConfig":
        self.network.validate()
        self.train.validate()
        if self.synth_size < 16:
            raise ConfigError("synth_size must be at least 16")
        a = self.annotate
        if a.window < 1 or a.window % 2 == 0:
            raise ConfigError("annotation window must be a positive odd size")
        if min(a.dilate_radius, a.erode_radius, a.hull_passes) < 0 or a.blur_sigma < 0:
            raise ConfigError("morphology radii, hull passes and blur sigma must be non-negative")
        return self

    def dumps(self) -> str:
        lines = [f"{k} = {_format(v)}" for k, v in self.flat().items()]
        return "\n".join(lines) + "\n"


def _build_owner_map() -> dict[str, str]:
    owner: dict[str, str] = {}
    for name, cls in (("network", NetworkConfig), ("train", TrainConfig), ("annotate", AnnotationConfig)):
        for f in fields(cls):
            if f.name in owner:
                raise RuntimeError(f"config key {f.name!r} defined twice")
            owner[f.name] = name
    owner["synth_size"] = ""
    return owner


KEY_OWNER = _build_owner_map()
CONFIG_KEYS = tuple(KEY_OWNER)


def _format(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse(key: str, raw: Any, like: Any) -> Any:
    if not isinstance(raw, str):
        if isinstance(like, tuple):
            return tuple(int(x) for x in raw)
        return raw
    text = raw.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {type(like).__name__}") from None
    return text


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    if parser.sections() != [_SECTION]:
        raise ConfigError("config must be a flat key = value document without sections")
    return (base or RunConfig()).updated(dict(parser[_SECTION]))


def load(path: str | os.PathLike, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read config {os.fspath(path)!r}: {exc.strerror}") from exc
    return loads(text, base)


def save(path: str | os.PathLike, cfg: RunConfig) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(cfg.dumps())
    except OSError as exc:
        raise DataIOError(f"cannot write config {os.fspath(path)!r}: {exc.strerror}") from exc


def resolve_config(path: str | os.PathLike | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Defaults, then the file (explicit path or ``$MSCCNET_CONFIG``), then overrides."""
    path = path or os.environ.get(CONFIG_ENV) or None
    cfg = load(path) if path else RunConfig().validate()
    if overrides:
        cfg = cfg.updated(overrides)
    return cfg
