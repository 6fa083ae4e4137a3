import pytest

from sdnlb.monitor import ServerHost
from sdnlb.sim import host_address

# loads of the eight-host worked example; None marks a failed host
WORKED_LOADS = [0.1, 0.4, 0.3, None, 0.7, 0.2, None, 0.5]
WORKED_CUMSUM = [0.9, 1.5, 2.2, 2.2, 2.5, 3.3, 3.3, 3.8]


def make_hosts(loads):
    hosts = []
    for i, x in enumerate(loads):
        ip, mac, port = host_address(i)
        hosts.append(ServerHost(i, ip, mac, port, load=0.0 if x is None else x, live=x is not None))
    return hosts


@pytest.fixture
def worked_hosts():
    return make_hosts(WORKED_LOADS)


# (criterion, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE: list = []


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((criterion, passed, detail))
    print(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}")
