"""Hybrid SELECT / fast-failover load balancing for an SDN server cluster, simulated."""

from .balancer import (
    HYBRID,
    AlgorithmKind,
    BalancerMode,
    Controller,
    baseline_select,
    build_ff_groups,
    draw_random,
    select_standbys,
    select_target_binary,
    select_target_linear,
)
from .monitor import ClusterState, CumulativeSumList, ServerHost, build_cumsum, change_threshold, load_imbalance, refresh
from .sim import MetricsReport, Scenario, run_scenario

__version__ = "0.1.0"
