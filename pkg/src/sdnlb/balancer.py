"""Controller-side load balancing.

Target selection (classic linear and binary-search DWRS plus the usual
baselines), standby selection for fast-failover groups, the static
SELECT-group setup and the imbalance-driven switch between the two modes.
"""

from __future__ import annotations

import enum
import logging
import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

from .monitor import ClusterState, CumulativeSumList, RefreshOutcome, ServerHost, refresh
from .switch import (
    Bucket,
    Group,
    GroupEntry,
    GroupType,
    Match,
    Output,
    Packet,
    SelectMode,
    SetDstIp,
    SetDstMac,
    SetSrcIp,
    SetSrcMac,
    Switch,
)

logger = logging.getLogger(__name__)

SELECT_GROUP_ID = 1
FF_GROUP_BASE = 1000
STATIC_PRIORITY = 10
FLOW_PRIORITY = 100
DEFAULT_STANDBYS = 2


class SelectionError(ValueError):
    pass


class NoLiveCapacity(SelectionError):
    def __init__(self):
        super().__init__("no live capacity")


class AlgorithmKind(str, enum.Enum):
    ROUND_ROBIN = "round-robin"
    RANDOM = "random"
    WRS = "wrs"
    LEAST_LOAD = "least-load"
    LEAST_CONNECTIONS = "least-connections"
    LEAST_RESPONSE_TIME = "least-response-time"
    DWRS_LINEAR = "dwrs-linear"
    DWRS_BINARY = "dwrs-binary"


HYBRID = "hybrid"


class BalancerMode(str, enum.Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


class SearchResult(NamedTuple):
    index: int
    probes: int


# -- weighted random selection ---------------------------------------------


def _check_draw(cumsum: CumulativeSumList, r: float) -> None:
    if cumsum.total <= 0.0:
        raise NoLiveCapacity()
    if not 0.0 < r <= cumsum.total:
        raise SelectionError(f"random value out of range: {r!r} not in (0, {cumsum.total!r}]")


def select_target_binary(cumsum: CumulativeSumList, r: float) -> SearchResult:
    """Smallest index ``i`` with ``cumsum[i] >= r``, by bisection.

    The lower bound starts one slot before the list (an implicit ``s[-1] = 0``)
    so the first element is reachable; the upper bound starts on the last
    element, which always satisfies the predicate.
    """
    _check_draw(cumsum, r)
    s = cumsum.values
    lo, hi = -1, len(s) - 1
    probes = 0
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        probes += 1
        if r <= s[mid]:
            hi = mid
        else:
            lo = mid
    return SearchResult(hi, probes)


def select_target_linear(cumsum: CumulativeSumList, r: float) -> SearchResult:
    _check_draw(cumsum, r)
    for i, v in enumerate(cumsum.values):
        if r <= v:
            return SearchResult(i, i + 1)
    # unreachable: r <= total == values[-1]
    raise SelectionError("cumulative sum list is not monotone")


def draw_random(total: float, rng: random.Random) -> float:
    """Uniform draw on ``(0, total]``; zero is excluded."""
    if not total > 0.0:
        raise NoLiveCapacity()
    return total * (1.0 - rng.random())


# -- baselines -------------------------------------------------------------


@dataclass
class RuntimeStats:
    """Per-host figures the controller collects besides CPU load."""

    n: int
    rr_cursor: int = 0
    connections: list = field(default_factory=list)
    response_times: list = field(default_factory=list)
    capacities: list = field(default_factory=list)

    def __post_init__(self):
        self.connections = list(self.connections) or [0] * self.n
        self.response_times = list(self.response_times) or [0.0] * self.n
        self.capacities = list(self.capacities) or [1.0] * self.n


def _argmin(live: Sequence[int], key) -> int:
    return min(live, key=lambda i: (key[i], i))


def baseline_select(kind: AlgorithmKind, state: ClusterState, stats: RuntimeStats, rng: random.Random) -> SearchResult:
    """Pick a target host with one of the classic algorithms.

    Only hosts the controller currently believes live are eligible. Ties go
    to the lowest index. ``probes`` is non-zero only for the DWRS variants.
    """
    kind = AlgorithmKind(kind)
    if kind in (AlgorithmKind.DWRS_BINARY, AlgorithmKind.DWRS_LINEAR):
        r = draw_random(state.cumsum.total, rng)
        search = select_target_binary if kind is AlgorithmKind.DWRS_BINARY else select_target_linear
        return search(state.cumsum, r)

    live = state.live_indices()
    if not live:
        raise NoLiveCapacity()
    if kind is AlgorithmKind.ROUND_ROBIN:
        n = state.n
        for step in range(n):
            i = (stats.rr_cursor + step) % n
            if state.hosts[i].live:
                stats.rr_cursor = (i + 1) % n
                return SearchResult(i, 0)
    if kind is AlgorithmKind.RANDOM:
        return SearchResult(live[rng.randrange(len(live))], 0)
    if kind is AlgorithmKind.WRS:
        weights = [stats.capacities[i] for i in live]
        if sum(weights) <= 0:
            raise NoLiveCapacity()
        return SearchResult(rng.choices(live, weights=weights)[0], 0)
    if kind is AlgorithmKind.LEAST_LOAD:
        return SearchResult(_argmin(live, [h.effective_load for h in state.hosts]), 0)
    if kind is AlgorithmKind.LEAST_CONNECTIONS:
        return SearchResult(_argmin(live, stats.connections), 0)
    if kind is AlgorithmKind.LEAST_RESPONSE_TIME:
        return SearchResult(_argmin(live, stats.response_times), 0)
    raise SelectionError(f"unsupported algorithm {kind!r}")


# -- failover groups -------------------------------------------------------


class StandbySelection(NamedTuple):
    indices: list
    degraded: bool


def select_standbys(hosts: Sequence[ServerHost], target: int, p: int) -> StandbySelection:
    """The ``p`` live hosts whose load is closest to the target's, closest first."""
    if p < 0:
        raise ValueError("standby count must be non-negative")
    ref = hosts[target].load
    candidates = [h for h in hosts if h.live and h.index != target]
    candidates.sort(key=lambda h: (abs(h.load - ref), h.index))
    chosen = [h.index for h in candidates[:p]]
    return StandbySelection(chosen, len(chosen) < p)


def ff_group_id(host_index: int) -> int:
    return FF_GROUP_BASE + host_index


def forward_actions(host: ServerHost) -> tuple:
    return (SetDstIp(host.ip), SetDstMac(host.mac), Output(host.switch_port))


def host_bucket(host: ServerHost) -> Bucket:
    return Bucket(forward_actions(host), weight=1, watch_port=host.switch_port)


@dataclass(frozen=True)
class StandbyPlan:
    group_id: int
    standbys: tuple
    degraded: bool = False


def plan_failover(hosts: Sequence[ServerHost], p: int) -> dict:
    plan = {}
    for h in hosts:
        sel = select_standbys(hosts, h.index, p)
        if sel.degraded:
            logger.debug("host %d: only %d of %d standbys available", h.index, len(sel.indices), p)
        plan[h.index] = StandbyPlan(ff_group_id(h.index), tuple(sel.indices), sel.degraded)
    return plan


def build_ff_groups(hosts: Sequence[ServerHost], p: int = DEFAULT_STANDBYS) -> list:
    """One FF group per host: bucket 0 is the host, then its standbys."""
    groups = []
    for h_index, sp in plan_failover(hosts, p).items():
        members = (h_index,) + sp.standbys
        buckets = [host_bucket(hosts[i]) for i in members]
        groups.append(GroupEntry(sp.group_id, GroupType.FF, buckets))
    return groups


# -- controller ------------------------------------------------------------


class Controller:
    """Reactive controller driving one switch in front of the cluster.

    ``algorithm`` is either an :class:`AlgorithmKind` (per-flow entries with
    a direct output, no failover) or ``"hybrid"`` (binary-search DWRS into
    per-host FF groups, switching to a hashed SELECT group while the load
    imbalance stays below ``state.imbalance_threshold``).
    """

    def __init__(
        self,
        state: ClusterState,
        switch: Switch,
        algorithm,
        client_ports: dict,
        standby_count: int = DEFAULT_STANDBYS,
        rng: Optional[random.Random] = None,
        capacities: Sequence[float] = (),
    ):
        self.state = state
        self.switch = switch
        self.hybrid = algorithm == HYBRID
        self.algorithm = None if self.hybrid else AlgorithmKind(algorithm)
        self.client_ports = dict(client_ports)
        self.standby_count = standby_count
        self.rng = rng or random.Random(0)
        self.stats = RuntimeStats(state.n, capacities=list(capacities))
        self.mode = BalancerMode.DYNAMIC
        self.plan: dict = {}
        self.probes = 0
        self.packet_ins = 0
        self.group_rebuilds = 0
        if self.hybrid:
            self._install_ff_groups()

    # -- group maintenance

    def _install_ff_groups(self) -> None:
        self.plan = plan_failover(self.state.hosts, self.standby_count)
        for g in build_ff_groups(self.state.hosts, self.standby_count):
            if g.group_id in self.switch.groups:
                self.switch.modify_group(g.group_id, g.buckets)
            else:
                self.switch.install_group(g)
        self.group_rebuilds += 1

    def install_static(self) -> None:
        """SELECT group over every host plus the VIP and response entries."""
        st = self.state
        buckets = [host_bucket(h) for h in st.hosts]
        self.switch.install_group(GroupEntry(SELECT_GROUP_ID, GroupType.SELECT, buckets, SelectMode.HASH))
        self.switch.install_flow(Match(dst_ip=st.vip, priority=STATIC_PRIORITY), [Group(SELECT_GROUP_ID)])
        for ip, port in self.client_ports.items():
            self.switch.install_flow(Match(dst_ip=ip, priority=STATIC_PRIORITY), self._response_actions(port))

    def _response_actions(self, client_port: int) -> tuple:
        return (SetSrcIp(self.state.vip), SetSrcMac(self.state.cluster_mac), Output(client_port))

    def _is_balancer_entry(self, m: Match) -> bool:
        return m.dst_ip == self.state.vip or m.dst_ip in self.client_ports

    def switch_mode(self, imbalance: float) -> BalancerMode:
        """Static iff ``imbalance`` is strictly below the administrator threshold."""
        if not self.hybrid:
            return self.mode
        new = BalancerMode.STATIC if imbalance < self.state.imbalance_threshold else BalancerMode.DYNAMIC
        if new is self.mode:
            return new
        removed = self.switch.remove_flows_matching(self._is_balancer_entry)
        if new is BalancerMode.STATIC:
            self.install_static()
        else:
            self.switch.remove_group(SELECT_GROUP_ID)
        logger.debug("mode %s -> %s (imbalance=%.6f, %d entries removed)", self.mode.value, new.value, imbalance, removed)
        self.mode = new
        return new

    def on_refresh(self, outcome: RefreshOutcome) -> BalancerMode:
        if self.hybrid and outcome.changed:
            self._install_ff_groups()
        return self.switch_mode(outcome.imbalance)

    def on_monitor(self, loads, liveness, connections=None, response_times=None) -> RefreshOutcome:
        """Ingest one monitoring sample and react to it."""
        outcome = refresh(self.state, loads, liveness)
        if connections is not None:
            self.stats.connections = list(connections)
        if response_times is not None:
            self.stats.response_times = list(response_times)
        self.on_refresh(outcome)
        return outcome

    # -- packet-in handling

    def handle_packet_in(self, pkt: Packet, in_port: Optional[int] = None) -> Optional[tuple]:
        """Handle a table miss; returns the packet-out actions or ``None`` to drop."""
        self.packet_ins += 1
        st = self.state
        if pkt.dst_ip in self.client_ports:
            return self._response_actions(self.client_ports[pkt.dst_ip])
        if pkt.dst_ip != st.vip:
            return None
        if in_port is not None:
            self.client_ports.setdefault(pkt.src_ip, in_port)
        try:
            if self.hybrid:
                return self.handle_packet_in_dynamic(pkt)
            sel = baseline_select(self.algorithm, st, self.stats, self.rng)
        except NoLiveCapacity:
            return None
        self.probes += sel.probes
        actions = forward_actions(st.hosts[sel.index])
        self._install_flow_pair(pkt, actions)
        return actions

    def handle_packet_in_dynamic(self, pkt: Packet) -> tuple:
        r = draw_random(self.state.cumsum.total, self.rng)
        sel = select_target_binary(self.state.cumsum, r)
        self.probes += sel.probes
        actions = (Group(ff_group_id(sel.index)),)
        self._install_flow_pair(pkt, actions)
        return actions

    def _install_flow_pair(self, pkt: Packet, actions) -> None:
        fwd = Match(
            dst_ip=pkt.dst_ip,
            src_ip=pkt.src_ip,
            src_port=pkt.src_port,
            dst_port=pkt.dst_port,
            protocol=pkt.protocol,
            priority=FLOW_PRIORITY,
        )
        self.switch.install_flow(fwd, actions)
        client_port = self.client_ports.get(pkt.src_ip)
        if client_port is None:
            return
        rev = Match(
            dst_ip=pkt.src_ip,
            src_port=pkt.dst_port,
            dst_port=pkt.src_port,
            protocol=pkt.protocol,
            priority=FLOW_PRIORITY,
        )
        self.switch.install_flow(rev, self._response_actions(client_port))


def probe_bound(n: int) -> int:
    return math.ceil(math.log2(n)) + 1 if n > 1 else 1
