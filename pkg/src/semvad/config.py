"""Run configuration shared by the CLI and the service."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .endpoint import CONTROLLER_TIMEOUT, LABEL_TIMEOUT, EndpointConfig
from .errors import ConfigError
from .windowing import WindowConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass(frozen=True)
class RunConfig:
    stride_ms: int = 320
    window_ms: int = 2560
    k: int = 4
    t_s_ms: int = 400
    t_l_ms: int = 1000
    debounce: int = 1
    mode: str = LABEL_TIMEOUT
    checkpoint: str | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("stride_ms", "window_ms", "k", "t_s_ms", "t_l_ms", "debounce", "seed"):
            if not isinstance(getattr(self, name), int) or isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be an integer", field=name)
        if self.k < 1:
            raise ConfigError("k must be >= 1", field="k")
        if self.mode not in (LABEL_TIMEOUT, CONTROLLER_TIMEOUT):
            raise ConfigError(f"mode must be {LABEL_TIMEOUT!r} or {CONTROLLER_TIMEOUT!r}", field="mode")
        self.window  # noqa: B018 - validates stride/window
        self.endpoint  # noqa: B018 - validates timeouts

    @property
    def window(self) -> WindowConfig:
        return WindowConfig.from_ms(self.stride_ms, self.window_ms)

    @property
    def endpoint(self) -> EndpointConfig:
        return EndpointConfig(self.t_s_ms, self.t_l_ms, self.debounce, self.mode)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **overrides) -> "RunConfig":
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}", field=unknown[0])
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", field="config") from None
        try:
            if path.suffix == ".toml":
                data = tomllib.loads(text)
            else:
                data = json.loads(text)
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}", field="config") from None
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object", field="config")
        return cls.from_dict(data)
