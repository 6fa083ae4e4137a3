"""Discrete-event simulation of a client, one switch, the controller and the
server cluster.

The client is closed-loop: ``thread_count`` users each keep exactly one
request outstanding (or are thinking). A request that gets no answer is
retransmitted with exponential back-off and counted as lost once
``connect_timeout`` has passed since it was first sent.
"""

from __future__ import annotations

import enum
import heapq
import ipaddress
import itertools
import json
import math
import random
import statistics
from dataclasses import asdict, dataclass, field
from typing import Optional

from .balancer import HYBRID, AlgorithmKind, BalancerMode, Controller
from .monitor import ClusterState, ServerHost, change_threshold, load_imbalance
from .switch import Dropped, Forwarded, Packet, PacketIn, Protocol, Switch

CLIENT_PORT = 1
HOST_PORT_BASE = 2
SERVICE_PORT = 80
EPHEMERAL_PORTS = (49152, 65535)
MIN_SERVICEABILITY = 0.01

DEFAULT_VIP = "10.0.0.1"
DEFAULT_CLUSTER_MAC = "02:00:00:00:00:01"
DEFAULT_CLIENT_IP = "10.0.0.100"
CLIENT_MAC = "02:00:00:00:00:64"
HOST_NET = ipaddress.IPv4Address("10.0.1.0")
HOST_MAC_BASE = 0x020000000100


class ScenarioError(ValueError):
    """Invalid scenario; ``errors`` lists every offending field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario: " + "; ".join(self.errors))


# -- scenario --------------------------------------------------------------


@dataclass(frozen=True)
class BackgroundLoad:
    """Exogenous CPU load on some hosts during ``[start, end)``."""

    hosts: tuple = ()
    load: float = 0.0
    start: float = 0.0
    end: float = math.inf


@dataclass(frozen=True)
class ServerParams:
    base_service_time: float = 0.2
    load_per_request: float = 0.02
    service_time_cv: float = 0.1
    background: tuple = ()


@dataclass(frozen=True)
class ClientParams:
    thread_count: int = 40
    think_time: float = 0.0
    connect_timeout: float = 20.0
    retransmit_timeout: float = 1.0
    requests_per_connection: int = 1
    client_ip: str = DEFAULT_CLIENT_IP


@dataclass(frozen=True)
class HostEvent:
    time: float
    host: int
    action: str = "fail"


@dataclass(frozen=True)
class Scenario:
    n: int = 8
    algorithm: str = HYBRID
    imbalance_threshold: float = 0.01
    change_threshold_samples: tuple = (0.01, 0.025, 0.015, 0.02)
    standby_count: int = 2
    monitor_interval: float = 10.0
    load_averaging: bool = True
    stale_loads: bool = False
    controller_latency: float = 0.03
    link_delay: float = 0.001
    duration: float = 120.0
    seed: int = 0
    vip: str = DEFAULT_VIP
    cluster_mac: str = DEFAULT_CLUSTER_MAC
    server: ServerParams = field(default_factory=ServerParams)
    client: ClientParams = field(default_factory=ClientParams)
    failures: tuple = ()

    def errors(self) -> list:
        errs = []

        def need(cond, msg):
            if not cond:
                errs.append(msg)

        need(isinstance(self.n, int) and self.n >= 1, "n: cluster size must be a positive integer")
        need(self.algorithm == HYBRID or self.algorithm in {k.value for k in AlgorithmKind},
             f"algorithm: unknown algorithm {self.algorithm!r}")
        need(self.imbalance_threshold >= 0, "imbalance_threshold: must be non-negative")
        need(len(self.change_threshold_samples) > 0, "change_threshold_samples: need at least one sample")
        need(all(0 <= x <= 1 for x in self.change_threshold_samples), "change_threshold_samples: values must lie in [0, 1]")
        need(isinstance(self.standby_count, int) and self.standby_count >= 0, "standby_count: must be a non-negative integer")
        need(self.monitor_interval > 0, "monitor_interval: must be positive")
        need(self.controller_latency >= 0, "controller_latency: must be non-negative")
        need(self.link_delay >= 0, "link_delay: must be non-negative")
        need(self.duration >= 0 and math.isfinite(self.duration), "duration: must be finite and non-negative")
        need(isinstance(self.seed, int), "seed: must be an integer")
        for name in ("vip", "client.client_ip"):
            value = self.vip if name == "vip" else self.client.client_ip
            try:
                ipaddress.IPv4Address(value)
            except ValueError:
                errs.append(f"{name}: {value!r} is not an IPv4 address")
        s = self.server
        need(s.base_service_time > 0, "server.base_service_time: must be positive")
        need(s.load_per_request >= 0, "server.load_per_request: must be non-negative")
        need(s.service_time_cv >= 0, "server.service_time_cv: must be non-negative")
        for k, bg in enumerate(s.background):
            need(all(isinstance(h, int) and 0 <= h < self.n for h in bg.hosts),
                 f"server.background[{k}].hosts: host indices must be in [0, {self.n})")
            need(0 <= bg.load <= 1, f"server.background[{k}].load: must lie in [0, 1]")
            need(bg.start <= bg.end, f"server.background[{k}]: start must not exceed end")
        c = self.client
        need(isinstance(c.thread_count, int) and c.thread_count >= 0, "client.thread_count: must be a non-negative integer")
        need(c.think_time >= 0, "client.think_time: must be non-negative")
        need(c.connect_timeout > 0, "client.connect_timeout: must be positive")
        need(c.retransmit_timeout > 0, "client.retransmit_timeout: must be positive")
        need(isinstance(c.requests_per_connection, int) and c.requests_per_connection >= 1,
             "client.requests_per_connection: must be a positive integer")
        for k, ev in enumerate(self.failures):
            need(ev.action in ("fail", "recover"), f"failures[{k}].action: must be 'fail' or 'recover'")
            need(isinstance(ev.host, int) and 0 <= ev.host < self.n, f"failures[{k}].host: must be in [0, {self.n})")
            need(ev.time >= 0, f"failures[{k}].time: must be non-negative")
        return errs

    def validate(self) -> "Scenario":
        errs = self.errors()
        if errs:
            raise ScenarioError(errs)
        return self


def host_address(i: int) -> tuple:
    ip = str(HOST_NET + i + 1)
    raw = f"{HOST_MAC_BASE + i + 1:012x}"
    mac = ":".join(raw[k:k + 2] for k in range(0, 12, 2))
    return ip, mac, HOST_PORT_BASE + i


# -- events ----------------------------------------------------------------


class EventKind(enum.Enum):
    REQUEST_ARRIVAL = "request-arrival"
    PACKET_DELIVERY = "packet-delivery"
    SERVICE_COMPLETE = "service-complete"
    RETRANSMIT = "retransmit"
    REQUEST_TIMEOUT = "request-timeout"
    MONITOR_TICK = "monitor-tick"
    FAILURE_INJECTION = "failure-injection"
    RECOVERY_INJECTION = "recovery-injection"
    SCENARIO_END = "scenario-end"


@dataclass(order=True)
class Event:
    time: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


# -- models ----------------------------------------------------------------


class ServerModel:
    def __init__(self, host: ServerHost, params: ServerParams, rng: Optional[random.Random] = None):
        self.host = host
        self.base_service_time = params.base_service_time
        self.load_per_request = params.load_per_request
        self.service_time_cv = params.service_time_cv
        self.rng = rng or random.Random(host.index)
        self.background = [bg for bg in params.background if host.index in bg.hosts]
        self.in_flight: dict = {}
        self.epoch = 0
        self.last_service_time = 0.0
        self._area = 0.0
        self._area_at = 0.0
        self._mark = (0.0, 0.0)

    @property
    def concurrency(self) -> int:
        return len(self.in_flight)

    def background_load(self, t: float) -> float:
        return sum(bg.load for bg in self.background if bg.start <= t < bg.end)

    def _background_area(self, t0: float, t1: float) -> float:
        return sum(bg.load * max(0.0, min(t1, bg.end) - max(t0, bg.start)) for bg in self.background)

    def load(self, t: float) -> float:
        return min(1.0, self.background_load(t) + self.concurrency * self.load_per_request)

    def _advance(self, t: float) -> None:
        self._area += self.concurrency * (t - self._area_at)
        self._area_at = t

    def mean_load_since_mark(self, t: float) -> float:
        """Time-averaged load since the previous call (or ``t`` itself if no time passed)."""
        self._advance(t)
        t0, area0 = self._mark
        self._mark = (t, self._area)
        if t <= t0:
            return self.load(t)
        conc = (self._area - area0) / (t - t0)
        bg = self._background_area(t0, t) / (t - t0)
        return min(1.0, bg + conc * self.load_per_request)

    def admit(self, t: float, key) -> float:
        self._advance(t)
        self.in_flight[key] = t
        work = self.base_service_time
        if self.service_time_cv > 0:
            shape = 1.0 / self.service_time_cv ** 2
            work *= self.rng.gammavariate(shape, 1.0 / shape)
        service = work / max(MIN_SERVICEABILITY, 1.0 - self.load(t))
        self.last_service_time = service
        return service

    def finish(self, t: float, key) -> bool:
        if key not in self.in_flight:
            return False
        self._advance(t)
        del self.in_flight[key]
        return True

    def fail(self, t: float) -> int:
        self._advance(t)
        dropped = len(self.in_flight)
        self.in_flight.clear()
        self.host.live = False
        self.epoch += 1
        return dropped

    def recover(self, t: float) -> None:
        self._advance(t)
        self.host.live = True
        self.epoch += 1


@dataclass
class Request:
    rid: int
    thread: int
    conn: int
    packet: Packet
    issued_at: float
    state: str = "pending"
    served_by: Optional[int] = None
    attempts: int = 1


@dataclass
class _Thread:
    conn: Optional[int] = None
    src_port: int = 0
    left: int = 0


# -- report ----------------------------------------------------------------


@dataclass
class MetricsReport:
    algorithm: str
    duration: float
    issued: int = 0
    served: int = 0
    lost: int = 0
    in_flight: int = 0
    throughput: float = 0.0
    loss_rate: float = 0.0
    mean_response_ms: float = 0.0
    mean_imbalance: float = 0.0
    packet_ins: int = 0
    probe_count_total: int = 0
    group_rebuilds: int = 0
    per_host_requests: list = field(default_factory=list)
    response_time_series: list = field(default_factory=list)
    imbalance_series: list = field(default_factory=list)
    mode_timeline: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["response_time_series"] = [list(p) for p in self.response_time_series]
        d["imbalance_series"] = [list(p) for p in self.imbalance_series]
        d["mode_timeline"] = [list(p) for p in self.mode_timeline]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


# -- engine ----------------------------------------------------------------


class Simulation:
    def __init__(self, scn: Scenario):
        self.scn = scn.validate()
        self.now = 0.0
        self._queue: list = []
        self._seq = itertools.count()
        self.dispatched = 0
        self.max_outstanding = 0

        self.servers = []
        view = []
        for i in range(scn.n):
            ip, mac, port = host_address(i)
            rng = random.Random(f"{scn.seed}/server/{i}")
            self.servers.append(ServerModel(ServerHost(i, ip, mac, port), scn.server, rng))
            view.append(ServerHost(i, ip, mac, port))
        self.by_ip = {s.host.ip: s for s in self.servers}
        self.by_port = {s.host.switch_port: s for s in self.servers}

        self.switch = Switch([CLIENT_PORT] + [s.host.switch_port for s in self.servers])
        state = ClusterState(
            view,
            vip=scn.vip,
            cluster_mac=scn.cluster_mac,
            change_threshold=change_threshold(scn.change_threshold_samples),
            imbalance_threshold=scn.imbalance_threshold,
        )
        self.controller = Controller(
            state,
            self.switch,
            scn.algorithm,
            client_ports={scn.client.client_ip: CLIENT_PORT},
            standby_count=scn.standby_count,
            rng=random.Random(f"{scn.seed}/controller"),
        )

        self.requests: dict = {}
        self.conn_request: dict = {}
        self.threads = [_Thread() for _ in range(scn.client.thread_count)]
        self._rids = itertools.count()
        self._conns = itertools.count()
        self._next_port = EPHEMERAL_PORTS[0]
        self.report = MetricsReport(algorithm=scn.algorithm, duration=scn.duration,
                                    per_host_requests=[0] * scn.n)
        self._ticks = 0

    # -- queue

    def schedule(self, delay: float, kind: EventKind, **payload) -> None:
        ev = Event(self.now + delay, next(self._seq), kind, payload)
        heapq.heappush(self._queue, (ev.time, ev.seq, ev))

    def run(self) -> MetricsReport:
        scn = self.scn
        self.schedule(0.0, EventKind.MONITOR_TICK)
        for ev in sorted(scn.failures, key=lambda e: e.time):
            kind = EventKind.FAILURE_INJECTION if ev.action == "fail" else EventKind.RECOVERY_INJECTION
            self.schedule(ev.time, kind, host=ev.host)
        for t in range(len(self.threads)):
            self.schedule(0.0, EventKind.REQUEST_ARRIVAL, thread=t)
        self.schedule(scn.duration, EventKind.SCENARIO_END)

        handlers = {
            EventKind.REQUEST_ARRIVAL: self._on_request,
            EventKind.PACKET_DELIVERY: self._on_delivery,
            EventKind.SERVICE_COMPLETE: self._on_service_complete,
            EventKind.RETRANSMIT: self._on_retransmit,
            EventKind.REQUEST_TIMEOUT: self._on_timeout,
            EventKind.MONITOR_TICK: self._on_tick,
            EventKind.FAILURE_INJECTION: self._on_failure,
            EventKind.RECOVERY_INJECTION: self._on_recovery,
        }
        while self._queue:
            ev = heapq.heappop(self._queue)[2]
            if ev.time >= scn.duration or ev.kind is EventKind.SCENARIO_END:
                break
            assert ev.time >= self.now, "event clock went backwards"
            self.now = ev.time
            self.dispatched += 1
            handlers[ev.kind](**ev.payload)
        return self._finish()

    # -- client

    def _new_connection(self, th: _Thread) -> None:
        th.conn = next(self._conns)
        th.src_port = self._next_port
        self._next_port += 1
        if self._next_port > EPHEMERAL_PORTS[1]:
            self._next_port = EPHEMERAL_PORTS[0]
        th.left = self.scn.client.requests_per_connection

    def _on_request(self, thread: int) -> None:
        c = self.scn.client
        th = self.threads[thread]
        if th.conn is None or th.left <= 0:
            self._new_connection(th)
        th.left -= 1
        pkt = Packet(
            src_ip=c.client_ip,
            dst_ip=self.scn.vip,
            src_mac=CLIENT_MAC,
            dst_mac=self.scn.cluster_mac,
            src_port=th.src_port,
            dst_port=SERVICE_PORT,
            protocol=Protocol.TCP,
            payload_size=512,
            flow_id=th.conn,
        )
        req = Request(next(self._rids), thread, th.conn, pkt, self.now)
        self.requests[req.rid] = req
        self.conn_request[th.conn] = req
        self.report.issued += 1
        self.max_outstanding = max(self.max_outstanding, len(self.requests))
        self._send_to_switch(pkt, CLIENT_PORT)
        self.schedule(c.retransmit_timeout, EventKind.RETRANSMIT, rid=req.rid, attempt=1)
        self.schedule(c.connect_timeout, EventKind.REQUEST_TIMEOUT, rid=req.rid)

    def _on_retransmit(self, rid: int, attempt: int) -> None:
        req = self.requests.get(rid)
        if req is None or req.state != "pending":
            return
        req.attempts += 1
        self._send_to_switch(req.packet, CLIENT_PORT)
        nxt = self.scn.client.retransmit_timeout * 2 ** attempt
        if self.now + nxt < req.issued_at + self.scn.client.connect_timeout:
            self.schedule(nxt, EventKind.RETRANSMIT, rid=rid, attempt=attempt + 1)

    def _on_timeout(self, rid: int) -> None:
        req = self.requests.get(rid)
        if req is None or req.state != "pending":
            return
        req.state = "lost"
        self.report.lost += 1
        self._retire(req)
        self.threads[req.thread].conn = None
        self.schedule(self.scn.client.think_time, EventKind.REQUEST_ARRIVAL, thread=req.thread)

    def _client_receive(self, pkt: Packet) -> None:
        if pkt.src_ip != self.scn.vip:
            return
        req = self.conn_request.get(pkt.flow_id)
        if req is None or req.state != "pending":
            return
        req.state = "served"
        rep = self.report
        rep.served += 1
        rep.response_time_series.append((self.now, (self.now - req.issued_at) * 1000.0))
        if req.served_by is not None:
            rep.per_host_requests[req.served_by] += 1
        self._retire(req)
        self.schedule(self.scn.client.think_time, EventKind.REQUEST_ARRIVAL, thread=req.thread)

    def _retire(self, req: Request) -> None:
        del self.requests[req.rid]
        if self.conn_request.get(req.conn) is req:
            del self.conn_request[req.conn]

    # -- network

    def _send_to_switch(self, pkt: Packet, in_port: int) -> None:
        self.schedule(self.scn.link_delay, EventKind.PACKET_DELIVERY, node="switch", packet=pkt, in_port=in_port)

    def _on_delivery(self, node, packet: Packet, in_port=None) -> None:
        if node == "switch":
            self._dispatch(self.switch.process(packet, in_port))
        elif node == "controller":
            actions = self.controller.handle_packet_in(packet, in_port)
            if actions is not None:
                self._dispatch(self.switch.packet_out(packet, actions))
        elif node == "client":
            self._client_receive(packet)
        else:
            self._server_receive(self.servers[node], packet)

    def _dispatch(self, dispositions) -> None:
        for d in dispositions:
            if isinstance(d, Forwarded):
                if d.port == CLIENT_PORT:
                    self.schedule(self.scn.link_delay, EventKind.PACKET_DELIVERY, node="client", packet=d.packet)
                elif self.switch.ports.get(d.port, False):
                    srv = self.by_port[d.port]
                    self.schedule(self.scn.link_delay, EventKind.PACKET_DELIVERY, node=srv.host.index, packet=d.packet)
            elif isinstance(d, PacketIn):
                self.schedule(self.scn.controller_latency, EventKind.PACKET_DELIVERY,
                              node="controller", packet=d.packet, in_port=d.in_port)
            # Dropped: the client's retransmission timer takes care of it

    # -- servers

    def _server_receive(self, srv: ServerModel, pkt: Packet) -> None:
        if not srv.host.live or pkt.dst_ip != srv.host.ip:
            return
        req = self.conn_request.get(pkt.flow_id)
        if req is None or req.state != "pending":
            return
        key = (req.rid, req.attempts)
        if key in srv.in_flight:
            return
        service = srv.admit(self.now, key)
        self.schedule(service, EventKind.SERVICE_COMPLETE, server=srv.host.index, key=key, epoch=srv.epoch)

    def _on_service_complete(self, server: int, key, epoch: int) -> None:
        srv = self.servers[server]
        if epoch != srv.epoch or not srv.host.live or not srv.finish(self.now, key):
            return
        req = self.requests.get(key[0])
        if req is None:
            return
        req.served_by = server
        q = req.packet
        resp = Packet(
            src_ip=srv.host.ip,
            dst_ip=q.src_ip,
            src_mac=srv.host.mac,
            dst_mac=q.src_mac,
            src_port=q.dst_port,
            dst_port=q.src_port,
            protocol=q.protocol,
            payload_size=1024,
            flow_id=q.flow_id,
        )
        self._send_to_switch(resp, srv.host.switch_port)

    # -- monitoring and failures

    def _on_tick(self) -> None:
        scn = self.scn
        if scn.load_averaging:
            loads = [s.mean_load_since_mark(self.now) for s in self.servers]
        else:
            loads = [s.load(self.now) for s in self.servers]
        liveness = [s.host.live for s in self.servers]
        truth = [ServerHost(i, "", "", 0, loads[i], liveness[i]) for i in range(scn.n)]
        imbalance = load_imbalance(truth)
        if not (scn.stale_loads and self._ticks > 0):
            self.controller.on_monitor(
                loads,
                liveness,
                connections=[s.concurrency for s in self.servers],
                response_times=[s.last_service_time for s in self.servers],
            )
        self._ticks += 1
        rep = self.report
        rep.imbalance_series.append((self.now, imbalance))
        mode = self.controller.mode.value
        if not rep.mode_timeline or rep.mode_timeline[-1][1] != mode:
            rep.mode_timeline.append((self.now, mode))
        self.schedule(scn.monitor_interval, EventKind.MONITOR_TICK)

    def _on_failure(self, host: int) -> None:
        srv = self.servers[host]
        if not srv.host.live:
            return
        srv.fail(self.now)
        self.switch.set_port_live(srv.host.switch_port, False)

    def _on_recovery(self, host: int) -> None:
        srv = self.servers[host]
        if srv.host.live:
            return
        srv.recover(self.now)
        self.switch.set_port_live(srv.host.switch_port, True)

    def _finish(self) -> MetricsReport:
        rep = self.report
        rep.in_flight = len(self.requests)
        if self.scn.duration > 0:
            rep.throughput = rep.served / self.scn.duration
        if rep.issued:
            rep.loss_rate = rep.lost / rep.issued
        if rep.response_time_series:
            rep.mean_response_ms = statistics.fmean(ms for _, ms in rep.response_time_series)
        if rep.imbalance_series:
            rep.mean_imbalance = statistics.fmean(d for _, d in rep.imbalance_series)
        rep.packet_ins = self.controller.packet_ins
        rep.probe_count_total = self.controller.probes
        rep.group_rebuilds = self.controller.group_rebuilds
        return rep


def run_scenario(scn: Scenario) -> MetricsReport:
    return Simulation(scn).run()


# -- analysis helpers ------------------------------------------------------


def count_spikes(series, threshold_ms: float, merge_gap: float = 1.0, after: float = -math.inf) -> list:
    """Group samples above ``threshold_ms`` into spikes.

    Elevated samples closer than ``merge_gap`` seconds to the previous
    elevated sample belong to the same spike. Returns ``(start, end, peak_ms)``
    per spike.
    """
    spikes = []
    for t, ms in sorted(series):
        if t < after or ms <= threshold_ms:
            continue
        if spikes and t - spikes[-1][1] <= merge_gap:
            start, _, peak = spikes[-1]
            spikes[-1] = (start, t, max(peak, ms))
        else:
            spikes.append((t, t, ms))
    return spikes


def median_before(series, t: float) -> float:
    pre = [ms for when, ms in series if when < t]
    return statistics.median(pre) if pre else 0.0
