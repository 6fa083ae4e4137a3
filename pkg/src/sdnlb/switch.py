"""OpenFlow-style switch data plane.

A single flow table (priority-ordered, wildcard matching) and a group table
supporting the ALL, SELECT, INDIRECT and FF (fast-failover) group types.
Port liveness is tracked per switch port and consulted by SELECT and FF
groups when choosing buckets.
"""

from __future__ import annotations

import enum
import ipaddress
import itertools
import struct
import zlib
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union


class SwitchError(Exception):
    """Raised for malformed table or group operations."""


class DanglingGroupError(SwitchError):
    def __init__(self, group_id: int):
        super().__init__(f"dangling group reference: {group_id}")
        self.group_id = group_id


class Protocol(enum.IntEnum):
    TCP = 6
    UDP = 17


@dataclass(frozen=True, slots=True)
class Packet:
    src_ip: str
    dst_ip: str
    src_mac: str
    dst_mac: str
    src_port: int
    dst_port: int
    protocol: Protocol = Protocol.TCP
    payload_size: int = 0
    flow_id: object = None

    @property
    def five_tuple(self) -> tuple:
        return (self.src_ip, self.dst_ip, self.src_port, self.dst_port, int(self.protocol))


# -- actions ---------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class SetDstIp:
    addr: str


@dataclass(frozen=True, slots=True)
class SetSrcIp:
    addr: str


@dataclass(frozen=True, slots=True)
class SetDstMac:
    addr: str


@dataclass(frozen=True, slots=True)
class SetSrcMac:
    addr: str


@dataclass(frozen=True, slots=True)
class Output:
    port: int


@dataclass(frozen=True, slots=True)
class Group:
    group_id: int


@dataclass(frozen=True, slots=True)
class Drop:
    pass


Action = Union[SetDstIp, SetSrcIp, SetDstMac, SetSrcMac, Output, Group, Drop]
TERMINAL_ACTIONS = (Output, Group, Drop)

_REWRITES = {
    SetDstIp: "dst_ip",
    SetSrcIp: "src_ip",
    SetDstMac: "dst_mac",
    SetSrcMac: "src_mac",
}


def validate_actions(actions: Sequence[Action]) -> None:
    """Check that at most one terminal action exists and that it comes last."""
    for i, act in enumerate(actions):
        if isinstance(act, TERMINAL_ACTIONS) and i != len(actions) - 1:
            raise SwitchError(f"terminal action {act!r} must be last in the action list")
        if not isinstance(act, (SetDstIp, SetSrcIp, SetDstMac, SetSrcMac) + TERMINAL_ACTIONS):
            raise SwitchError(f"unknown action {act!r}")


# -- dispositions ----------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Forwarded:
    port: int
    packet: Packet


@dataclass(frozen=True, slots=True)
class ToGroup:
    group_id: int
    packet: Packet


@dataclass(frozen=True, slots=True)
class Dropped:
    packet: Packet
    reason: str = "drop action"


@dataclass(frozen=True, slots=True)
class PacketIn:
    """Table miss; the packet has to go to the controller."""

    packet: Packet
    in_port: Optional[int] = None


Disposition = Union[Forwarded, ToGroup, Dropped, PacketIn]

NO_LIVE_BUCKET = "no live bucket"


# -- flow table ------------------------------------------------------------

MATCH_FIELDS = ("src_ip", "dst_ip", "src_port", "dst_port", "protocol")


@dataclass(frozen=True, slots=True)
class Match:
    """Wildcard match; a field left as None matches any packet."""

    dst_ip: Optional[str] = None
    src_ip: Optional[str] = None
    priority: int = 0
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    protocol: Optional[Protocol] = None

    def __post_init__(self):
        if self.priority < 0:
            raise SwitchError("priority must be non-negative")

    def matches(self, pkt: Packet) -> bool:
        for name in MATCH_FIELDS:
            want = getattr(self, name)
            if want is not None and getattr(pkt, name) != want:
                return False
        return True

    @property
    def signature(self) -> tuple:
        return tuple(name for name in MATCH_FIELDS if getattr(self, name) is not None)


@dataclass(frozen=True, slots=True)
class FlowEntry:
    match: Match
    actions: tuple
    entry_id: int

    @property
    def sort_key(self) -> tuple:
        return (-self.match.priority, self.entry_id)


class FlowTable:
    """Priority-ordered flow table.

    Entries are indexed by the set of fields their match constrains (tuple
    space search), so lookups stay cheap with many exact-match entries.
    """

    def __init__(self):
        self._entries: dict = {}
        self._spaces: dict = {}
        self._ids = itertools.count(1)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(sorted(self._entries.values(), key=lambda e: e.sort_key))

    def add(self, match: Match, actions: Sequence[Action]) -> FlowEntry:
        validate_actions(actions)
        entry = FlowEntry(match, tuple(actions), next(self._ids))
        self._entries[entry.entry_id] = entry
        sig = match.signature
        key = tuple(getattr(match, name) for name in sig)
        self._spaces.setdefault(sig, {}).setdefault(key, []).append(entry)
        return entry

    def remove_where(self, predicate: Callable[[Match], bool]) -> int:
        doomed = [e for e in self._entries.values() if predicate(e.match)]
        for entry in doomed:
            del self._entries[entry.entry_id]
            sig = entry.match.signature
            key = tuple(getattr(entry.match, name) for name in sig)
            bucket = self._spaces[sig][key]
            bucket.remove(entry)
            if not bucket:
                del self._spaces[sig][key]
                if not self._spaces[sig]:
                    del self._spaces[sig]
        return len(doomed)

    def lookup(self, pkt: Packet) -> Optional[FlowEntry]:
        best = None
        for sig, keyed in self._spaces.items():
            candidates = keyed.get(tuple(getattr(pkt, name) for name in sig))
            if not candidates:
                continue
            for entry in candidates:
                if best is None or entry.sort_key < best.sort_key:
                    best = entry
        return best


def match_packet(table: FlowTable, pkt: Packet) -> Optional[FlowEntry]:
    """Highest-priority entry matching ``pkt``; ties go to the lowest entry id."""
    return table.lookup(pkt)


# -- groups ----------------------------------------------------------------


class GroupType(enum.Enum):
    ALL = "all"
    SELECT = "select"
    INDIRECT = "indirect"
    FF = "ff"


class SelectMode(enum.Enum):
    HASH = "hash"
    ROUND_ROBIN = "round-robin"


@dataclass(frozen=True, slots=True)
class Bucket:
    actions: tuple
    weight: int = 1
    watch_port: Optional[int] = None

    def __post_init__(self):
        if self.weight < 0:
            raise SwitchError("bucket weight must be non-negative")
        validate_actions(self.actions)


@dataclass
class GroupEntry:
    group_id: int
    group_type: GroupType
    buckets: list
    select_mode: SelectMode = SelectMode.HASH
    packet_count: int = 0
    _cursor: int = field(default=0, repr=False)

    def __post_init__(self):
        if not 0 <= self.group_id < 2**32:
            raise SwitchError(f"group id {self.group_id} is not a 32-bit unsigned integer")
        if self.group_type is GroupType.INDIRECT and len(self.buckets) != 1:
            raise SwitchError("INDIRECT groups have exactly one bucket")
        if self.group_type is GroupType.FF:
            for b in self.buckets:
                if b.watch_port is None:
                    raise SwitchError("FF group buckets need a watch port")


HASH_SEED = 0x5D1B


def five_tuple_bytes(pkt: Packet) -> bytes:
    """Canonical network-order encoding of (src_ip, dst_ip, src_port, dst_port, protocol)."""
    return struct.pack(
        "!4s4sHHB",
        ipaddress.IPv4Address(pkt.src_ip).packed,
        ipaddress.IPv4Address(pkt.dst_ip).packed,
        pkt.src_port,
        pkt.dst_port,
        int(pkt.protocol),
    )


def _fmix32(h: int) -> int:
    # murmur3 finalizer; CRC-32 alone is linear and maps consecutive ports round-robin
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & 0xFFFFFFFF
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & 0xFFFFFFFF
    h ^= h >> 16
    return h


def flow_hash(pkt: Packet, seed: int = HASH_SEED) -> int:
    """32-bit hash of the canonical five-tuple encoding.

    CRC-32 (started from ``seed``) followed by the murmur3 32-bit finalizer.
    Stable across runs, processes and platforms.
    """
    return _fmix32(zlib.crc32(five_tuple_bytes(pkt), seed & 0xFFFFFFFF))


def _bucket_live(bucket: Bucket, ports: Mapping[int, bool]) -> bool:
    if bucket.watch_port is None:
        return True
    return ports.get(bucket.watch_port, False)


def execute_group(
    group: GroupEntry,
    pkt: Packet,
    ports: Mapping[int, bool],
    groups: Optional[Mapping[int, GroupEntry]] = None,
    hash_seed: int = HASH_SEED,
) -> list:
    """Run ``pkt`` through ``group`` and return the resulting dispositions.

    ``ports`` maps switch port number to liveness. ``groups`` is only needed
    when bucket actions reference further groups.
    """
    group.packet_count += 1
    gt = group.group_type
    if gt is GroupType.ALL:
        chosen = list(group.buckets)
    elif gt is GroupType.INDIRECT:
        chosen = [group.buckets[0]]
    elif gt is GroupType.FF:
        chosen = [b for b in group.buckets if _bucket_live(b, ports)][:1]
    else:
        live = [b for b in group.buckets if _bucket_live(b, ports)]
        if not live:
            chosen = []
        elif group.select_mode is SelectMode.HASH:
            chosen = [live[flow_hash(pkt, hash_seed) % len(live)]]
        else:
            chosen = [live[group._cursor % len(live)]]
            group._cursor += 1
    if not chosen:
        return [Dropped(pkt, NO_LIVE_BUCKET)]
    out = []
    for bucket in chosen:
        out.extend(_resolve(apply_actions(pkt, bucket.actions, groups), ports, groups, hash_seed))
    return out


def apply_actions(pkt: Packet, actions: Sequence[Action], groups: Optional[Mapping[int, GroupEntry]] = None):
    """Apply ``actions`` in order and return the single resulting disposition."""
    rewrites = {}
    for act in actions:
        field_name = _REWRITES.get(type(act))
        if field_name is not None:
            rewrites[field_name] = act.addr
            continue
        if rewrites:
            pkt = replace(pkt, **rewrites)
        if isinstance(act, Output):
            return Forwarded(act.port, pkt)
        if isinstance(act, Group):
            if groups is None or act.group_id not in groups:
                raise DanglingGroupError(act.group_id)
            return ToGroup(act.group_id, pkt)
        if isinstance(act, Drop):
            return Dropped(pkt)
        raise SwitchError(f"unknown action {act!r}")
    return Dropped(replace(pkt, **rewrites) if rewrites else pkt, "no terminal action")


def _resolve(disp, ports, groups, hash_seed, depth=0) -> list:
    if not isinstance(disp, ToGroup):
        return [disp]
    if depth > 8:
        raise SwitchError("group chain too deep")
    return execute_group(groups[disp.group_id], disp.packet, ports, groups, hash_seed)


# -- switch ----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class PortState:
    port: int
    live: bool


class Switch:
    """Flow table, group table and port liveness of one switch."""

    def __init__(self, ports: Iterable[int] = (), hash_seed: int = HASH_SEED):
        self.table = FlowTable()
        self.groups: dict = {}
        self.ports: dict = {p: True for p in ports}
        self.hash_seed = hash_seed

    # ports
    def add_port(self, port: int, live: bool = True) -> None:
        self.ports[port] = live

    def set_port_live(self, port: int, live: bool) -> None:
        if port not in self.ports:
            raise SwitchError(f"unknown port {port}")
        self.ports[port] = live

    def port_state(self, port: int) -> PortState:
        return PortState(port, self.ports.get(port, False))

    # flow table
    def install_flow(self, match: Match, actions: Sequence[Action]) -> FlowEntry:
        return self.table.add(match, actions)

    def remove_flows_matching(self, predicate: Callable[[Match], bool]) -> int:
        return self.table.remove_where(predicate)

    # group table
    def install_group(self, group: GroupEntry) -> None:
        if group.group_id in self.groups:
            raise SwitchError(f"duplicate group id {group.group_id}")
        self.groups[group.group_id] = group

    def modify_group(self, group_id: int, buckets: Sequence[Bucket]) -> None:
        """Replace a group's buckets in place, keeping its id and counters."""
        try:
            group = self.groups[group_id]
        except KeyError:
            raise SwitchError(f"no such group {group_id}") from None
        if group.group_type is GroupType.INDIRECT and len(buckets) != 1:
            raise SwitchError("INDIRECT groups have exactly one bucket")
        if group.group_type is GroupType.FF and any(b.watch_port is None for b in buckets):
            raise SwitchError("FF group buckets need a watch port")
        group.buckets = list(buckets)

    def remove_group(self, group_id: int) -> int:
        return 1 if self.groups.pop(group_id, None) is not None else 0

    # data path
    def process(self, pkt: Packet, in_port: Optional[int] = None) -> list:
        """Run an incoming packet through the pipeline."""
        entry = self.table.lookup(pkt)
        if entry is None:
            return [PacketIn(pkt, in_port)]
        return self.packet_out(pkt, entry.actions)

    def packet_out(self, pkt: Packet, actions: Sequence[Action]) -> list:
        disp = apply_actions(pkt, actions, self.groups)
        return _resolve(disp, self.ports, self.groups, self.hash_seed)

    def snapshot(self) -> str:
        """Human-readable dump of ports, flow entries and groups."""
        lines = ["ports:"]
        for port in sorted(self.ports):
            lines.append(f"  {port}: {'up' if self.ports[port] else 'down'}")
        lines.append(f"flows ({len(self.table)}):")
        for e in self.table:
            m = ", ".join(f"{name}={getattr(e.match, name)}" for name in e.match.signature) or "*"
            lines.append(f"  [{e.entry_id}] prio={e.match.priority} {m} -> {_fmt_actions(e.actions)}")
        lines.append(f"groups ({len(self.groups)}):")
        for gid in sorted(self.groups):
            g = self.groups[gid]
            mode = f" {g.select_mode.value}" if g.group_type is GroupType.SELECT else ""
            lines.append(f"  group {gid} {g.group_type.value}{mode} packets={g.packet_count}")
            for i, b in enumerate(g.buckets):
                lines.append(f"    bucket {i} weight={b.weight} watch={b.watch_port} -> {_fmt_actions(b.actions)}")
        return "\n".join(lines)


def _fmt_actions(actions) -> str:
    parts = []
    for a in actions:
        args = ", ".join(str(getattr(a, f.name)) for f in fields(a))
        parts.append(f"{type(a).__name__}({args})")
    return "[" + ", ".join(parts) + "]"
