"""Cluster load state kept by the controller.

Serviceability of a host is ``1 - load``; failed hosts count as fully loaded,
so they occupy a zero-width interval of the cumulative-sum list and can never
be picked by a weighted random draw.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

logger = logging.getLogger(__name__)

FAILED_HOST_LOAD = 1.0


class EmptyClusterError(ValueError):
    def __init__(self, what: str = "empty cluster"):
        super().__init__(what)


@dataclass
class ServerHost:
    index: int
    ip: str
    mac: str
    switch_port: int
    load: float = 0.0
    live: bool = True

    @property
    def effective_load(self) -> float:
        return FAILED_HOST_LOAD if not self.live else self.load


@dataclass(frozen=True)
class CumulativeSumList:
    values: tuple

    @property
    def total(self) -> float:
        return self.values[-1]

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> float:
        return self.values[i]


def clamp_load(x: float, who: object = None) -> float:
    if 0.0 <= x <= 1.0:
        return x
    logger.warning("load %r for host %s outside [0, 1]; clamping", x, who)
    return min(1.0, max(0.0, x))


def build_cumsum(hosts: Sequence[ServerHost]) -> CumulativeSumList:
    if not hosts:
        raise EmptyClusterError()
    values = []
    acc = 0.0
    for h in hosts:
        acc += 1.0 - h.effective_load
        values.append(acc)
    return CumulativeSumList(tuple(values))


def load_imbalance(hosts: Sequence[ServerHost]) -> float:
    """Population variance of the hosts' effective loads."""
    if not hosts:
        raise EmptyClusterError()
    loads = [h.effective_load for h in hosts]
    mean = sum(loads) / len(loads)
    return sum((x - mean) ** 2 for x in loads) / len(loads)


def change_threshold(noload_samples: Sequence[float]) -> float:
    """Amplitude of idle CPU utilisation: ``max - min`` of the samples."""
    if not noload_samples:
        raise ValueError("change threshold needs at least one idle sample")
    return max(noload_samples) - min(noload_samples)


@dataclass(frozen=True)
class RefreshOutcome:
    changed: bool
    imbalance: float
    changed_hosts: tuple = ()


@dataclass
class ClusterState:
    hosts: list
    vip: str
    cluster_mac: str
    change_threshold: float = 0.0
    imbalance_threshold: float = 0.01
    cumsum: Optional[CumulativeSumList] = None
    last_loads: list = field(default_factory=list)

    def __post_init__(self):
        if not self.hosts:
            raise EmptyClusterError()
        if self.cumsum is None:
            self.cumsum = build_cumsum(self.hosts)
        if not self.last_loads:
            self.last_loads = [h.effective_load for h in self.hosts]

    @property
    def n(self) -> int:
        return len(self.hosts)

    def live_indices(self) -> list:
        return [h.index for h in self.hosts if h.live]


def refresh(state: ClusterState, new_loads: Sequence[float], new_liveness: Sequence[bool]) -> RefreshOutcome:
    """Apply one monitoring sample to ``state``.

    A host counts as changed when its effective load moved by strictly more
    than ``state.change_threshold`` since the previous sample.
    """
    n = state.n
    if len(new_loads) != n or len(new_liveness) != n:
        raise ValueError(f"expected {n} load and liveness samples, got {len(new_loads)} and {len(new_liveness)}")
    changed = []
    for i, (h, x, live) in enumerate(zip(state.hosts, new_loads, new_liveness)):
        h.load = clamp_load(float(x), h.index)
        h.live = bool(live)
        if abs(h.effective_load - state.last_loads[i]) > state.change_threshold:
            changed.append(i)
    state.last_loads = [h.effective_load for h in state.hosts]
    state.cumsum = build_cumsum(state.hosts)
    return RefreshOutcome(bool(changed), load_imbalance(state.hosts), tuple(changed))
