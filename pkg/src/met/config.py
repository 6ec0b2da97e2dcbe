"""Static deployment description shared by dispatchers, invokers and the harness."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import List, Tuple
from urllib.parse import urlparse


@dataclass(frozen=True)
class InvokerEndpoint:
    admin: str
    events: str

    @property
    def events_address(self) -> Tuple[str, int]:
        return split_hostport(self.events)


@dataclass
class Deployment:
    dispatchers: List[str] = field(default_factory=list)
    invokers: List[InvokerEndpoint] = field(default_factory=list)

    @classmethod
    def from_json(cls, data: dict) -> "Deployment":
        return cls(
            dispatchers=list(data.get("dispatchers", [])),
            invokers=[InvokerEndpoint(**i) for i in data.get("invokers", [])],
        )

    @classmethod
    def load(cls, path: str) -> "Deployment":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {"dispatchers": list(self.dispatchers), "invokers": [asdict(i) for i in self.invokers]}

    def dump(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)


def split_hostport(value: str) -> Tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {value!r}")
    return host, int(port)


def is_http_url(value: str) -> bool:
    try:
        parsed = urlparse(value)
    except ValueError:
        return False
    return parsed.scheme in ("http", "https") and bool(parsed.netloc)
