"""JSON result documents written by the command-line tool."""

from __future__ import annotations

import datetime as _dt
import json
import os
from dataclasses import dataclass, field

SCHEMA_VERSION = "1.0"

__all__ = ["ResultDocument", "SCHEMA_VERSION", "DocumentError", "timestamp"]


class DocumentError(ValueError):
    pass


def timestamp() -> str:
    """UTC time in ISO 8601; SOURCE_DATE_EPOCH pins it for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        when = _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc)
    else:
        when = _dt.datetime.now(tz=_dt.timezone.utc).replace(microsecond=0)
    return when.isoformat().replace("+00:00", "Z")


@dataclass
class ResultDocument:
    command: str
    config: dict
    d: dict | None = None
    curve: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    simulation: dict | None = None
    interval: dict | None = None
    timestamps: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    _KEYS = ("schema_version", "command", "config", "d", "curve", "diagnostics", "simulation", "interval", "timestamps")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self._KEYS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ResultDocument":
        if not isinstance(data, dict):
            raise DocumentError("result document must be a JSON object")
        unknown = set(data) - set(cls._KEYS)
        if unknown:
            raise DocumentError(f"unknown fields: {sorted(unknown)}")
        if "command" not in data or "config" not in data:
            raise DocumentError("result document needs 'command' and 'config'")
        if data.get("schema_version", SCHEMA_VERSION).split(".")[0] != SCHEMA_VERSION.split(".")[0]:
            raise DocumentError(f"unsupported schema version {data['schema_version']!r}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ResultDocument":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DocumentError(f"not valid JSON: {exc}") from exc
        return cls.from_dict(data)
