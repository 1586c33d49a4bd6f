import json
from importlib import resources

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procident.alphabet import (
    CHARACTER_RANGES,
    MS,
    SECOND,
    AlphabetConfig,
    EventString,
    Rule,
    TraceAlphabetizer,
    build_default_config,
    classify_event,
    encode_idle_gap,
    filter_short_strings,
    is_under,
    transform_trace,
)
from procident.exceptions import ParameterError
from procident.trace_model import EventType, ProcessTrace, SystemEvent

TIME_UNITS = [
    (".", MS), (",", 10 * MS), ("+", 100 * MS), (":", SECOND), ("^", 10 * SECOND),
    ("-", 60 * SECOND), ("_", 600 * SECOND), ("#", 3600 * SECOND), ("~", 86400 * SECOND),
]


def ev(etype, subtype, value, ts=0):
    return SystemEvent(EventType(etype), subtype, value, ts)


def test_shipped_file_matches_builder(config):
    assert config.to_dict() == build_default_config().to_dict()
    shipped = resources.files("procident").joinpath("data/alphabet.default.json").read_text()
    assert shipped == build_default_config().to_json()


def test_default_alphabet_shape(config):
    assert config.size == len(config.alphabet) == 127
    assert set(config.time_chars) == {c for c, _ in TIME_UNITS}
    for rule in config.rules:
        assert rule.char in CHARACTER_RANGES[rule.event_type]
        assert rule.char not in config.time_chars


@pytest.mark.parametrize("etype,subtype,value,exe_dir,expected", [
    ("file", 1, "C:\\Windows\\system32\\k.dll", "C:\\Tools", "\u01a5"),
    ("file", 1, "C:\\Tools\\k.dll", "C:\\Tools", "\u01a1"),
    ("file", 1, "C:\\Tools\\k.dll", "C:\\Other", "\u01c1"),
    ("file", 2, "C:\\Users\\bob\\AppData\\Local\\t.tmp", "", "\u01b6"),
    ("file", 2, "C:\\Windowsold\\t.txt", "", "\u01c2"),
    ("network", 0, 0, "", "R"),
    ("network", 1, 0, "", "r"),
    ("network", 0, 100, "", "u"),
    ("network", 1, 10 ** 6, "", "x"),
    ("image_load", 0, "C:\\Windows\\System32\\WS2_32.dll", "", "\u00c3"),
    ("image_load", 0, "C:\\Windows\\System32\\foo.dll", "", "\u00c6"),
    ("image_load", 0, "C:\\tools\\plug\\foo.dll", "C:\\Tools", "L"),
    ("registry", 2, "HKLM\\SOFTWARE\\Microsoft", "", "\u0172"),
    ("process", 0, "C:\\Program Files\\x.exe", "", "C"),
])
def test_classify_default_table(config, etype, subtype, value, exe_dir, expected):
    assert classify_event(ev(etype, subtype, value), exe_dir, config) == expected


def test_home_directory_distinguishes(config):
    e = ev("file", 1, "C:\\App\\data\\x.bin")
    assert classify_event(e, "C:\\App", config) != classify_event(e, "C:\\Elsewhere", config)


def test_is_under_case_insensitive_and_boundary():
    assert is_under("c:\\APP\\sub\\x", "C:\\app")
    assert not is_under("C:\\apple\\x", "C:\\app")
    assert not is_under("C:\\x", "")


@pytest.mark.parametrize("char,duration", TIME_UNITS)
def test_single_time_units(config, char, duration):
    assert encode_idle_gap(duration, config) == char


def test_idle_gap_examples(config):
    assert encode_idle_gap(0, config) == ""
    assert encode_idle_gap(MS - 1, config) == ""
    assert encode_idle_gap(23 * MS, config) == ",,..."
    assert encode_idle_gap(SECOND + 2 * MS + 999, config) == ":.."
    with pytest.raises(ParameterError):
        encode_idle_gap(-1, config)


@settings(max_examples=300)
@given(st.integers(0, 40 * 86400 * SECOND))
def test_idle_gap_sums_to_delta(delta):
    cfg = build_default_config()
    dur = dict(cfg.time_table)
    out = encode_idle_gap(delta, cfg)
    rest = delta - sum(dur[c] for c in out)
    assert 0 <= rest < MS


@settings(max_examples=200)
@given(st.integers(0, 10 ** 15), st.integers(0, 10 ** 15))
def test_first_unit_monotone(a, b):
    cfg = build_default_config()
    dur = dict(cfg.time_table)
    lo, hi = sorted((a, b))
    first_lo, first_hi = encode_idle_gap(lo, cfg)[:1], encode_idle_gap(hi, cfg)[:1]
    if first_lo:
        assert first_hi and dur[first_hi] >= dur[first_lo]


def _trace(events, path="C:\\Tools\\t.exe"):
    return ProcessTrace("t1", "h", "t.exe", path, tuple(events))


def test_transform_examples(config):
    assert transform_trace(_trace([]), config).chars == ""
    one = transform_trace(_trace([ev("network", 0, 5, ts=100)]), config)
    assert one.chars == "R"
    two = transform_trace(_trace([ev("network", 0, 5, ts=0), ev("network", 1, 5, ts=SECOND)]), config)
    assert two.chars == "R:r"
    assert two.trace_id == "t1" and two.program_name == "t.exe"


def test_transform_length_and_determinism(config):
    events = [ev("file", i % 3, "C:\\Tools\\f", ts=i * 37 * MS) for i in range(20)]
    s = transform_trace(_trace(events), config)
    n_time = sum(c in config.time_chars for c in s.chars)
    assert len(s.chars) == len(events) + n_time
    assert transform_trace(_trace(events), config) == s
    assert set(s.chars) <= set(config.alphabet)


def test_filter_boundary():
    strings = [EventString(str(n), "p", "A" * n) for n in (5, 6, 7)]
    assert [s.trace_id for s in filter_short_strings(strings)] == ["6", "7"]
    assert filter_short_strings([]) == []
    with pytest.raises(ParameterError):
        filter_short_strings(strings, 0)


def test_filter_counts_time_characters():
    assert len(filter_short_strings([EventString("a", "p", "A....")])) == 0
    assert len(filter_short_strings([EventString("a", "p", "A.....")])) == 1


def test_config_json_round_trip(config, tmp_path):
    path = tmp_path / "a.json"
    config.save(path)
    again = AlphabetConfig.load(path)
    assert again.to_dict() == config.to_dict()
    assert again.digest() == config.digest()
    assert again.alphabet == config.alphabet


def test_config_rejects_wrong_version(config):
    doc = config.to_dict()
    doc["version"] = 7
    with pytest.raises(ParameterError):
        AlphabetConfig.from_dict(doc)


def _catch_alls():
    chars = {EventType.PROCESS: "d", EventType.FILE: "\u0184", EventType.IMAGE_LOAD: "l",
             EventType.REGISTRY: "\u0170", EventType.NETWORK: "x"}
    return [Rule(t, chars[t]) for t in EventType]


def test_config_validation():
    base = _catch_alls()
    AlphabetConfig(base)
    with pytest.raises(ParameterError, match="outside the range"):
        AlphabetConfig(base + [Rule(EventType.FILE, "A")])
    with pytest.raises(ParameterError, match="catch-all"):
        AlphabetConfig([r for r in base if r.event_type is not EventType.FILE]
                       + [Rule(EventType.FILE, "\u0184", subtypes={1})])
    with pytest.raises(ParameterError, match="may not use"):
        AlphabetConfig([Rule(EventType.PROCESS, "A", subtypes={1})] + base)
    with pytest.raises(ParameterError, match="decreasing"):
        AlphabetConfig(base, time_table=[(".", MS), (",", 10 * MS)])
    with pytest.raises(ParameterError, match="time character"):
        AlphabetConfig(base, time_table=[("d", MS)])


def test_every_event_maps_somewhere(config):
    # totality over a spread of odd inputs
    for etype in EventType:
        for value in (["", "\\\\srv\\share\\x", "relative\\p", "HKCU"] if etype.has_path_value else [0, 99, 10**9]):
            for subtype in (0, 1, 2, 17):
                assert classify_event(ev(etype.value, subtype, value), "", config) in config.alphabet


def test_alphabetizer_estimator(config):
    tr = TraceAlphabetizer(min_len=2)
    traces = [_trace([ev("network", 0, 1)]), _trace([ev("network", 0, 1), ev("network", 0, 1)])]
    out = tr.fit_transform(traces)
    assert [s.chars for s in out] == ["RR"]
    assert tr.get_params() == {"config": None, "min_len": 2}
