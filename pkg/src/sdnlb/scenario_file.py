"""YAML scenario files.

The document mirrors :class:`~sdnlb.sim.Scenario` field for field, plus a
``schema_version`` key. Unknown keys and wrongly typed values are errors
reported with the line they occur on.
"""

from __future__ import annotations

import dataclasses
import re
from typing import Any

import yaml

from .sim import BackgroundLoad, ClientParams, HostEvent, Scenario, ScenarioError, ServerParams

SCHEMA_VERSION = 1

# field -> element/record type, for fields whose default does not tell us
_NESTED = {
    (Scenario, "server"): ServerParams,
    (Scenario, "client"): ClientParams,
    (Scenario, "failures"): (tuple, HostEvent),
    (Scenario, "change_threshold_samples"): (tuple, float),
    (ServerParams, "background"): (tuple, BackgroundLoad),
    (BackgroundLoad, "hosts"): (tuple, int),
}
_REQUIRED_TYPES = {
    (HostEvent, "time"): float,
    (HostEvent, "host"): int,
}


class ScenarioFileError(ScenarioError):
    pass


def _node_lines(node, path=(), out=None) -> dict:
    """Map each key path in a composed YAML tree to its 1-based line."""
    if out is None:
        out = {}
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            _node_lines(v, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _node_lines(v, path + (i,), out)
    return out


def _fmt_path(path) -> str:
    s = ""
    for p in path:
        s += f"[{p}]" if isinstance(p, int) else (f".{p}" if s else str(p))
    return s or "<document>"


class _Builder:
    def __init__(self, lines: dict):
        self.lines = lines
        self.errors: list = []

    def error(self, path, msg) -> None:
        line = None
        for k in range(len(path), -1, -1):
            line = self.lines.get(tuple(path[:k]))
            if line is not None:
                break
        where = f"line {line}: " if line is not None else ""
        self.errors.append(f"{where}{_fmt_path(path)}: {msg}")

    def scalar(self, value, want, path):
        if want is bool:
            ok = isinstance(value, bool)
        elif want is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif want is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            if ok:
                value = float(value)
        elif want is str:
            ok = isinstance(value, str)
        else:
            ok = True
        if not ok:
            self.error(path, f"expected {want.__name__}, got {type(value).__name__} {value!r}")
        return value

    def value(self, cls, f: dataclasses.Field, raw, path):
        nested = _NESTED.get((cls, f.name))
        if nested is None:
            want = _REQUIRED_TYPES.get((cls, f.name))
            if want is None:
                want = type(f.default) if f.default is not dataclasses.MISSING else type(f.default_factory())
            return self.scalar(raw, want, path)
        if isinstance(nested, tuple):
            _, elem = nested
            if not isinstance(raw, list):
                self.error(path, f"expected a list, got {type(raw).__name__}")
                return ()
            if dataclasses.is_dataclass(elem):
                return tuple(self.record(elem, item, path + (i,)) for i, item in enumerate(raw))
            return tuple(self.scalar(item, elem, path + (i,)) for i, item in enumerate(raw))
        return self.record(nested, raw, path)

    def record(self, cls, raw, path):
        if not isinstance(raw, dict):
            self.error(path, f"expected a mapping, got {type(raw).__name__}")
            return None
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, val in raw.items():
            if key not in fields:
                if not (cls is Scenario and not path and key == "schema_version"):
                    self.error(path + (key,), "unknown key")
                continue
            kwargs[key] = self.value(cls, fields[key], val, path + (key,))
        for name, f in fields.items():
            if name not in kwargs and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                self.error(path, f"missing required key {name!r}")
        if self.errors:
            return None
        return cls(**kwargs)


_ERR_PATH = re.compile(r"^([A-Za-z_][\w.]*(?:\[\d+\][\w.]*)*)")


def _path_of(message: str) -> tuple:
    m = _ERR_PATH.match(message)
    if not m:
        return ()
    path = []
    for part in re.findall(r"[A-Za-z_]\w*|\[\d+\]", m.group(1)):
        path.append(int(part[1:-1]) if part.startswith("[") else part)
    return tuple(path)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate a scenario document."""
    try:
        loader = yaml.SafeLoader(text)
        try:
            node = loader.get_single_node()
            data = loader.construct_document(node) if node is not None else None
        finally:
            loader.dispose()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ScenarioFileError([f"{source}: {where}{getattr(exc, 'problem', None) or exc}"]) from None
    if not isinstance(data, dict):
        raise ScenarioFileError([f"{source}: top level must be a mapping"])
    lines = _node_lines(node)
    b = _Builder(lines)
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        b.error(("schema_version",), f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    scn = b.record(Scenario, data, ())
    if scn is not None and not b.errors:
        for msg in scn.errors():
            path = _path_of(msg)
            field_msg = msg.split(": ", 1)[1] if ": " in msg else msg
            b.error(path, field_msg)
    if b.errors:
        raise ScenarioFileError([f"{source}: {e}" for e in b.errors])
    return scn


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), str(path))


def scenario_to_dict(scn: Scenario) -> dict:
    def convert(obj: Any):
        if dataclasses.is_dataclass(obj):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, (tuple, list)):
            return [convert(x) for x in obj]
        return obj

    return {"schema_version": SCHEMA_VERSION, **convert(scn)}


def dump_scenario(scn: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(scn), sort_keys=False, default_flow_style=False)


def default_scenario() -> Scenario:
    """Eight hosts, hybrid balancing, first five hosts pre-loaded at 13% for a minute."""
    return Scenario(
        server=ServerParams(background=(BackgroundLoad(hosts=(0, 1, 2, 3, 4), load=0.13, start=0.0, end=60.0),)),
    )


def failover_scenario() -> Scenario:
    """Equal loads, host 3 shut down 19 s into a 60 s run."""
    return Scenario(duration=60.0, failures=(HostEvent(time=19.0, host=3),))
