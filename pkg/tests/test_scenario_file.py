import math
from pathlib import Path

import pytest

from sdnlb.scenario_file import (
    ScenarioFileError,
    default_scenario,
    dump_scenario,
    failover_scenario,
    load_scenario,
    parse_scenario,
)
from sdnlb.sim import BackgroundLoad, HostEvent, Scenario, ServerParams

ROOT = Path(__file__).resolve().parents[1]


@pytest.mark.parametrize("make", [default_scenario, failover_scenario, Scenario])
def test_round_trip(make):
    scn = make()
    assert parse_scenario(dump_scenario(scn)) == scn


def test_infinite_end_round_trips():
    scn = Scenario(server=ServerParams(background=(BackgroundLoad(hosts=(1,), load=0.2),)))
    back = parse_scenario(dump_scenario(scn))
    assert math.isinf(back.server.background[0].end) and back == scn


def test_shipped_scenarios_match_presets():
    assert load_scenario(ROOT / "scenarios" / "default.yaml") == default_scenario()
    assert load_scenario(ROOT / "scenarios" / "failover.yaml") == failover_scenario()


def test_minimal_document_uses_defaults():
    assert parse_scenario("schema_version: 1\n") == Scenario()


def test_partial_nested():
    scn = parse_scenario("schema_version: 1\nclient:\n  thread_count: 4\nfailures:\n- {time: 3, host: 1}\n")
    assert scn.client.thread_count == 4
    assert scn.failures == (HostEvent(3.0, 1, "fail"),)


def errors_of(text):
    with pytest.raises(ScenarioFileError) as exc:
        parse_scenario(text, "x.yaml")
    return exc.value.errors


def test_unknown_key_reports_line():
    errs = errors_of("schema_version: 1\nn: 4\nmonitor_intervall: 5\n")
    assert errs == ["x.yaml: line 3: monitor_intervall: unknown key"]


def test_unknown_nested_key_reports_line():
    errs = errors_of("schema_version: 1\nclient:\n  threads: 4\n")
    assert errs == ["x.yaml: line 3: client.threads: unknown key"]


def test_type_error_reports_line():
    errs = errors_of("schema_version: 1\nduration: soon\n")
    assert errs == ["x.yaml: line 2: duration: expected float, got str 'soon'"]


def test_bool_is_not_an_int():
    errs = errors_of("schema_version: 1\nn: true\n")
    assert "line 2: n: expected int" in errs[0]


def test_semantic_error_reports_line():
    errs = errors_of("schema_version: 1\nn: 4\nfailures:\n- time: 1\n  host: 9\n")
    assert errs == ["x.yaml: line 5: failures[0].host: must be in [0, 4)"]


def test_missing_required_key():
    errs = errors_of("schema_version: 1\nfailures:\n- host: 1\n")
    assert "missing required key 'time'" in errs[0]


def test_bad_schema_version():
    errs = errors_of("schema_version: 2\n")
    assert "unsupported schema version 2" in errs[0]


def test_yaml_syntax_error_line():
    errs = errors_of("schema_version: 1\nn: [1,\n")
    assert errs[0].startswith("x.yaml: line ")


def test_top_level_must_be_mapping():
    assert errors_of("- 1\n") == ["x.yaml: top level must be a mapping"]


def test_multiple_errors_collected():
    errs = errors_of("schema_version: 1\nfoo: 1\nbar: 2\n")
    assert len(errs) == 2
