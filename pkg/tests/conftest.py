import json

import pytest

from procident.alphabet import default_config
from procident.simulator import generate_corpus, make_spec


def record(type="file", subtype=1, value="C:\\Windows\\x.dll", ts=0, host="h1", pid=4,
           pstart=10, image="C:\\a\\b.exe", **extra):
    return {"type": type, "subtype": subtype, "value": value, "ts": ts, "host": host,
            "pid": pid, "pstart": pstart, "image": image, **extra}


def write_log(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def config():
    return default_config()


@pytest.fixture(scope="session")
def small_corpus():
    """4 programs x 30 strings over the 40-character simulator alphabet."""
    return generate_corpus(make_spec(n_profiles=4, traces_per_profile=30, seed=3,
                                     length_range=(40, 120)))


ACCEPTANCE_LINES: list = []


@pytest.fixture
def verdict_line():
    """Record (and print) one PASS/FAIL line for an acceptance criterion."""
    def emit(number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
