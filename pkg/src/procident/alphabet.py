"""Turn event traces into strings over a finite alphabet.

Every event is replaced by the character of its equivalence class, and idle
time between consecutive events is written as time characters, largest unit
first. Which event lands in which class is decided by an ordered rule list per
event type; the first matching rule wins and the last rule of every type is a
catch-all, so the mapping is total.

The rule table is data (:class:`AlphabetConfig`), serialized as versioned JSON.
``alphabet.default.json`` ships with the package and is regenerated by
:func:`build_default_config`.
"""
from __future__ import annotations

import hashlib
import json
import ntpath
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional, Sequence

from sklearn.base import BaseEstimator, TransformerMixin

from procident.exceptions import ParameterError
from procident.trace_model import EventType, ProcessTrace, SystemEvent

CONFIG_FORMAT = "procident-alphabet"
CONFIG_VERSION = 1

MS = 1_000_000
SECOND = 1000 * MS

DEFAULT_TIME_TABLE = (
    ("~", 86400 * SECOND),
    ("#", 3600 * SECOND),
    ("_", 600 * SECOND),
    ("-", 60 * SECOND),
    ("^", 10 * SECOND),
    (":", SECOND),
    ("+", 100 * MS),
    (",", 10 * MS),
    (".", MS),
)


def _chars(*spans):
    out = set()
    for lo, hi in spans:
        out.update(chr(c) for c in range(ord(lo) if isinstance(lo, str) else lo,
                                         (ord(hi) if isinstance(hi, str) else hi) + 1))
    return frozenset(out)


# Characters each event type may draw from.
CHARACTER_RANGES = {
    EventType.PROCESS: _chars(("A", "D"), ("a", "d")),
    EventType.REGISTRY: _chars((0x170, 0x183)),
    EventType.IMAGE_LOAD: _chars(("J", "L"), ("j", "l"), (0xC0, 0x16D)),
    EventType.FILE: _chars((0x184, 0x1CB)),
    EventType.NETWORK: _chars(("R", "R"), ("r", "r"), ("u", "x")),
}

# Criteria each event type may use in its predicates.
ALLOWED_CRITERIA = {
    EventType.PROCESS: {"path_prefixes"},
    EventType.REGISTRY: {"path_prefixes", "subtypes"},
    EventType.IMAGE_LOAD: {"path_prefixes", "home_dir", "dll_group"},
    EventType.FILE: {"path_prefixes", "subtypes", "home_dir"},
    EventType.NETWORK: {"size_range", "subtypes"},
}

_CRITERIA = ("path_prefixes", "subtypes", "home_dir", "dll_group", "size_range")


def normalize_path(path: str) -> str:
    return path.replace("/", "\\").lower()


def _compile_prefix(prefix: str):
    """``*`` matches one path component; a match must end on a component boundary."""
    prefix = normalize_path(prefix)
    body = "".join(r"[^\\]*" if ch == "*" else re.escape(ch) for ch in prefix)
    if prefix.endswith("\\"):
        return re.compile(body)
    return re.compile(body + r"(?:\\|$)")


def is_under(path: str, directory: str) -> bool:
    """Case-insensitive test that ``path`` lies in ``directory`` or below it."""
    if not directory:
        return False
    d = normalize_path(directory).rstrip("\\")
    p = normalize_path(path)
    return p.startswith(d + "\\")


@dataclass(frozen=True)
class Rule:
    event_type: EventType
    char: str
    name: str = ""
    path_prefixes: Optional[tuple[str, ...]] = None
    subtypes: Optional[frozenset[int]] = None
    home_dir: Optional[bool] = None
    dll_group: Optional[str] = None
    size_range: Optional[tuple[int, Optional[int]]] = None

    def __post_init__(self):
        object.__setattr__(self, "event_type", EventType(self.event_type))
        if self.path_prefixes is not None:
            object.__setattr__(self, "path_prefixes", tuple(self.path_prefixes))
        if self.subtypes is not None:
            object.__setattr__(self, "subtypes", frozenset(self.subtypes))
        if self.size_range is not None:
            object.__setattr__(self, "size_range", tuple(self.size_range))
        if len(self.char) != 1:
            raise ParameterError(f"rule character must be a single character, got {self.char!r}")

    @property
    def criteria(self) -> set[str]:
        return {c for c in _CRITERIA if getattr(self, c) is not None}

    @property
    def is_catch_all(self) -> bool:
        return not self.criteria


@dataclass(frozen=True)
class EventString:
    trace_id: str
    program_name: str
    chars: str

    def __len__(self):
        return len(self.chars)


@dataclass(frozen=True)
class AlphabetConfig:
    rules: tuple[Rule, ...]
    time_table: tuple[tuple[str, int], ...] = DEFAULT_TIME_TABLE
    dll_groups: dict = field(default_factory=dict)
    version: int = CONFIG_VERSION

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "time_table", tuple((c, int(d)) for c, d in self.time_table))
        groups = {g: frozenset(n.lower() for n in names) for g, names in self.dll_groups.items()}
        object.__setattr__(self, "dll_groups", groups)
        self._check()

        by_type = {t: [] for t in EventType}
        for rule in self.rules:
            prefixes = None
            if rule.path_prefixes is not None:
                prefixes = [_compile_prefix(p) for p in rule.path_prefixes]
            by_type[rule.event_type].append((rule, prefixes))
        object.__setattr__(self, "_by_type", by_type)

        chars = {r.char for r in self.rules} | {c for c, _ in self.time_table}
        alphabet = "".join(sorted(chars))
        object.__setattr__(self, "_alphabet", alphabet)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(alphabet)})

    def _check(self):
        durations = [d for _, d in self.time_table]
        if any(b >= a for a, b in zip(durations, durations[1:])):
            raise ParameterError("time table must be strictly decreasing in duration")
        if any(d <= 0 for d in durations):
            raise ParameterError("time character durations must be positive")
        time_chars = {c for c, _ in self.time_table}
        if len(time_chars) != len(self.time_table):
            raise ParameterError("duplicate time character")

        owner = {}
        for rule in self.rules:
            if rule.char in time_chars:
                raise ParameterError(f"rule character {rule.char!r} collides with a time character")
            if rule.char not in CHARACTER_RANGES[rule.event_type]:
                raise ParameterError(
                    f"character U+{ord(rule.char):04X} is outside the range for {rule.event_type.value}"
                )
            extra = rule.criteria - ALLOWED_CRITERIA[rule.event_type]
            if extra:
                raise ParameterError(
                    f"{rule.event_type.value} rules may not use {sorted(extra)}"
                )
            if rule.dll_group is not None and rule.dll_group not in self.dll_groups:
                raise ParameterError(f"unknown dll group {rule.dll_group!r}")
            prev = owner.setdefault(rule.char, rule.event_type)
            if prev is not rule.event_type:
                raise ParameterError(f"character {rule.char!r} shared across event types")

        for etype in EventType:
            rules = [r for r in self.rules if r.event_type is etype]
            if not rules or not rules[-1].is_catch_all:
                raise ParameterError(f"{etype.value} rules must end with a catch-all")

    @property
    def alphabet(self) -> str:
        """All producible characters, sorted by code point; position = state index."""
        return self._alphabet

    @property
    def index(self) -> dict[str, int]:
        return self._index

    @property
    def size(self) -> int:
        return len(self._alphabet)

    @property
    def time_chars(self) -> str:
        return "".join(c for c, _ in self.time_table)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        rules = []
        for r in self.rules:
            rules.append({
                "name": r.name,
                "event_type": r.event_type.value,
                "char": ord(r.char),
                "path_prefixes": list(r.path_prefixes) if r.path_prefixes is not None else None,
                "subtypes": sorted(r.subtypes) if r.subtypes is not None else None,
                "home_dir": r.home_dir,
                "dll_group": r.dll_group,
                "size_range": list(r.size_range) if r.size_range is not None else None,
            })
        return {
            "format": CONFIG_FORMAT,
            "version": self.version,
            "time_table": [{"char": ord(c), "ns": d} for c, d in self.time_table],
            "dll_groups": {g: sorted(n) for g, n in sorted(self.dll_groups.items())},
            "rules": rules,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AlphabetConfig":
        if doc.get("format") != CONFIG_FORMAT:
            raise ParameterError("not an alphabet config document")
        if doc.get("version") != CONFIG_VERSION:
            raise ParameterError(f"unsupported alphabet config version {doc.get('version')!r}")
        rules = []
        for r in doc["rules"]:
            rules.append(Rule(
                event_type=EventType(r["event_type"]),
                char=chr(r["char"]),
                name=r.get("name", ""),
                path_prefixes=r.get("path_prefixes"),
                subtypes=r.get("subtypes"),
                home_dir=r.get("home_dir"),
                dll_group=r.get("dll_group"),
                size_range=r.get("size_range"),
            ))
        table = [(chr(t["char"]), t["ns"]) for t in doc["time_table"]]
        return cls(rules=rules, time_table=table, dll_groups=doc.get("dll_groups", {}),
                   version=doc["version"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, ensure_ascii=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AlphabetConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "AlphabetConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


# default rule table --------------------------------------------------------

FS_PATH_CLASSES = (
    ("system", (r"c:\windows\system32", r"c:\windows\syswow64", r"c:\windows\sysnative")),
    ("windows", (r"c:\windows",)),
    ("program_files", (r"c:\program files", r"c:\program files (x86)")),
    ("program_data", (r"c:\programdata",)),
    ("appdata", (r"c:\users\*\appdata",)),
    ("users", (r"c:\users",)),
    ("unc", ("\\\\",)),
    ("other", None),
)

REGISTRY_PATH_CLASSES = (
    ("machine_software", (r"hklm\software", r"hkey_local_machine\software", r"\registry\machine\software")),
    ("machine_system", (r"hklm\system", r"hkey_local_machine\system", r"\registry\machine\system")),
    ("user", ("hkcu", "hkey_current_user", "hku", "hkey_users", r"\registry\user")),
    ("classes", ("hkcr", "hkey_classes_root")),
    ("other", None),
)

# (name, subtype set); None is the remainder.
SUBTYPE_GROUPS = (("create", {0}), ("read", {1}), ("write", {2}), ("other", None))

NETWORK_SIZE_BUCKETS = ((0, 100), (100, 10_000), (10_000, None))


def load_default_dll_groups() -> dict[str, list[str]]:
    text = resources.files("procident").joinpath("data/dll_groups.default.json").read_text("utf-8")
    return json.loads(text)["groups"]


def build_default_config(dll_groups: Optional[dict] = None) -> AlphabetConfig:
    if dll_groups is None:
        dll_groups = load_default_dll_groups()
    rules: list[Rule] = []

    # process: one letter per path class
    for (name, prefixes), ch in zip(FS_PATH_CLASSES, "ABCDabcd"):
        rules.append(Rule(EventType.PROCESS, ch, f"process/{name}", path_prefixes=prefixes))

    # registry: path class x subtype group
    code = 0x170
    for pname, prefixes in REGISTRY_PATH_CLASSES:
        for sname, subtypes in SUBTYPE_GROUPS:
            rules.append(Rule(EventType.REGISTRY, chr(code), f"registry/{pname}/{sname}",
                              path_prefixes=prefixes, subtypes=subtypes))
            code += 1

    # image load: Windows DLLs by functionality, then everything else by location
    code = 0xC0
    for pname, prefixes in FS_PATH_CLASSES[:2]:
        for group in sorted(dll_groups):
            rules.append(Rule(EventType.IMAGE_LOAD, chr(code), f"image/{pname}/{group}",
                              path_prefixes=prefixes, dll_group=group))
            code += 1
        rules.append(Rule(EventType.IMAGE_LOAD, chr(code), f"image/{pname}/ungrouped",
                          path_prefixes=prefixes))
        code += 1
    user_prefixes = FS_PATH_CLASSES[4][1] + FS_PATH_CLASSES[5][1]
    for home, letters in ((True, "JKL"), (None, "jkl")):
        tag = "home" if home else "elsewhere"
        rules.append(Rule(EventType.IMAGE_LOAD, letters[0], f"image/{tag}/program_files",
                          path_prefixes=FS_PATH_CLASSES[2][1], home_dir=home))
        rules.append(Rule(EventType.IMAGE_LOAD, letters[1], f"image/{tag}/users",
                          path_prefixes=user_prefixes, home_dir=home))
        rules.append(Rule(EventType.IMAGE_LOAD, letters[2], f"image/{tag}/other", home_dir=home))

    # file: home flag x path class x subtype group
    code = 0x184
    for home in (True, None):
        tag = "home" if home else "elsewhere"
        for pname, prefixes in FS_PATH_CLASSES:
            for sname, subtypes in SUBTYPE_GROUPS:
                rules.append(Rule(EventType.FILE, chr(code), f"file/{tag}/{pname}/{sname}",
                                  path_prefixes=prefixes, subtypes=subtypes, home_dir=home))
                code += 1

    # network: direction x size bucket; subtype 0 is send
    for (sname, subtypes), letters in ((("send", {0}), "Ruv"), (("receive", None), "rwx")):
        for (lo, hi), ch in zip(NETWORK_SIZE_BUCKETS, letters):
            bucket = None if (subtypes is None and hi is None) else (lo, hi)
            rules.append(Rule(EventType.NETWORK, ch, f"network/{sname}/{lo}-{hi or 'inf'}",
                              subtypes=subtypes, size_range=bucket))

    return AlphabetConfig(rules=rules, time_table=DEFAULT_TIME_TABLE, dll_groups=dll_groups)


_default = None


def default_config() -> AlphabetConfig:
    """The shipped ``alphabet.default.json``, parsed once."""
    global _default
    if _default is None:
        text = resources.files("procident").joinpath("data/alphabet.default.json").read_text("utf-8")
        _default = AlphabetConfig.from_json(text)
    return _default


# transformation ------------------------------------------------------------

def _matches(rule: Rule, prefixes, event: SystemEvent, exe_dir: str, config: AlphabetConfig) -> bool:
    if rule.subtypes is not None and event.subtype not in rule.subtypes:
        return False
    if rule.size_range is not None:
        lo, hi = rule.size_range
        if event.value < lo or (hi is not None and event.value >= hi):
            return False
    if prefixes is not None:
        path = normalize_path(event.value)
        if not any(p.match(path) for p in prefixes):
            return False
    if rule.home_dir is not None and is_under(event.value, exe_dir) != rule.home_dir:
        return False
    if rule.dll_group is not None:
        name = ntpath.basename(normalize_path(event.value))
        if name not in config.dll_groups[rule.dll_group]:
            return False
    return True


def classify_event(event: SystemEvent, exe_dir: str, config: AlphabetConfig) -> str:
    for rule, prefixes in config._by_type[event.event_type]:
        if _matches(rule, prefixes, event, exe_dir, config):
            return rule.char
    raise AssertionError("unreachable: rule list ends with a catch-all")


def encode_idle_gap(delta: int, config: AlphabetConfig) -> str:
    """Greedy largest-unit-first encoding of an idle interval in nanoseconds.

    >>> encode_idle_gap(23 * MS, default_config())
    ',,...'
    """
    if delta < 0:
        raise ParameterError(f"idle gap must be non-negative, got {delta}")
    out = []
    for ch, dur in config.time_table:
        q, delta = divmod(delta, dur)
        if q:
            out.append(ch * q)
    return "".join(out)


def transform_trace(trace: ProcessTrace, config: AlphabetConfig) -> EventString:
    exe_dir = trace.exe_dir
    parts = []
    prev = None
    for ev in trace.events:
        if prev is not None:
            parts.append(encode_idle_gap(ev.timestamp - prev, config))
        parts.append(classify_event(ev, exe_dir, config))
        prev = ev.timestamp
    return EventString(trace.trace_id, trace.program_name, "".join(parts))


def filter_short_strings(strings: Iterable[EventString], min_len: int = 6) -> list[EventString]:
    """Drop strings shorter than ``min_len``; time characters count toward length."""
    if min_len < 1:
        raise ParameterError(f"min_len must be >= 1, got {min_len}")
    return [s for s in strings if len(s.chars) >= min_len]


def check_string(s: EventString, alphabet: str) -> list[str]:
    allowed = set(alphabet)
    return sorted({c for c in s.chars if c not in allowed})


class TraceAlphabetizer(TransformerMixin, BaseEstimator):
    """Stateless transformer from :class:`ProcessTrace` objects to :class:`EventString`.

    Parameters
    ----------
    config : AlphabetConfig, optional
        Rule table; the shipped default when omitted.
    min_len : int or None
        When set, ``transform`` drops strings shorter than this.
    """

    def __init__(self, config: Optional[AlphabetConfig] = None, min_len: Optional[int] = None):
        self.config = config
        self.min_len = min_len

    def fit(self, X, y=None):
        self.config_ = self.config if self.config is not None else default_config()
        return self

    def transform(self, X: Sequence[ProcessTrace]) -> list[EventString]:
        config = getattr(self, "config_", None) or self.config or default_config()
        out = [transform_trace(t, config) for t in X]
        if self.min_len is not None:
            out = filter_short_strings(out, self.min_len)
        return out
