"""Synthetic labeled strings drawn from known per-program Markov chains.

All randomness comes from numpy's PCG64 generator (``numpy.random.default_rng``).
Trace ``t`` of profile ``i`` is drawn from its own stream seeded with
``[seed, i, t]``, so any trace can be regenerated in isolation and the corpus
does not depend on generation order.
"""
from __future__ import annotations

import itertools
import json
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from procident.alphabet import EventString, default_config
from procident.exceptions import ParameterError, ProfileError

SUM_TOL = 1e-12


@dataclass(frozen=True)
class ProgramProfile:
    name: str
    states: str
    initial: np.ndarray
    matrix: np.ndarray
    length_range: tuple[int, int] = (50, 500)

    def __post_init__(self):
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))
        object.__setattr__(self, "matrix", np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "length_range", tuple(int(v) for v in self.length_range))
        self.check()

    def check(self):
        n = len(self.states)
        if len(set(self.states)) != n or n == 0:
            raise ProfileError(f"profile {self.name!r}: states must be distinct and non-empty")
        if self.initial.shape != (n,) or self.matrix.shape != (n, n):
            raise ProfileError(f"profile {self.name!r}: shapes do not match {n} states")
        if (self.initial < 0).any() or (self.matrix < 0).any():
            raise ProfileError(f"profile {self.name!r}: negative probability")
        if abs(self.initial.sum() - 1.0) > SUM_TOL:
            raise ProfileError(f"profile {self.name!r}: initial distribution sums to {self.initial.sum()!r}")
        bad = np.flatnonzero(np.abs(self.matrix.sum(axis=1) - 1.0) > SUM_TOL)
        if bad.size:
            raise ProfileError(
                f"profile {self.name!r}: row {self.states[bad[0]]!r} sums to {self.matrix[bad[0]].sum()!r}"
            )
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ProfileError(f"profile {self.name!r}: bad length range {self.length_range}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "states": [ord(c) for c in self.states],
            "initial": self.initial.tolist(),
            "matrix": self.matrix.tolist(),
            "length_range": list(self.length_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProgramProfile":
        return cls(d["name"], "".join(chr(c) for c in d["states"]), d["initial"], d["matrix"],
                   tuple(d.get("length_range", (50, 500))))


def sample_string(profile: ProgramProfile, length: int, rng: np.random.Generator) -> str:
    if length < 1:
        raise ParameterError(f"length must be >= 1, got {length}")
    profile.check()
    last = len(profile.states) - 1
    init_cdf = np.cumsum(profile.initial).tolist()
    cdf = np.cumsum(profile.matrix, axis=1).tolist()
    u = rng.random(length).tolist()
    # bisect_right never lands on a zero-probability state
    s = min(bisect_right(init_cdf, u[0]), last)
    out = [s]
    for x in u[1:]:
        s = min(bisect_right(cdf[s], x), last)
        out.append(s)
    states = profile.states
    return "".join(states[i] for i in out)


def random_profile(name: str, states: str, rng: np.random.Generator, out_degree: int = 4,
                   length_range=(50, 500)) -> ProgramProfile:
    """Each state moves to ``out_degree`` random successors with Dirichlet(1) weights."""
    n = len(states)
    deg = min(out_degree, n)
    matrix = np.zeros((n, n))
    for i in range(n):
        targets = rng.choice(n, size=deg, replace=False)
        matrix[i, targets] = rng.dirichlet(np.ones(deg))
    matrix /= matrix.sum(axis=1, keepdims=True)
    initial = np.zeros(n)
    starts = rng.choice(n, size=min(2, n), replace=False)
    initial[starts] = rng.dirichlet(np.ones(starts.size))
    initial /= initial.sum()
    return ProgramProfile(name, states, initial, matrix, tuple(length_range))


def _embed(profile: ProgramProfile, alphabet: str) -> tuple[np.ndarray, np.ndarray]:
    pos = [alphabet.index(c) for c in profile.states]
    M = np.zeros((len(alphabet), len(alphabet)))
    M[np.ix_(pos, pos)] = profile.matrix
    defined = np.zeros(len(alphabet), dtype=bool)
    defined[pos] = True
    return M, defined


def pair_separation(a: ProgramProfile, b: ProgramProfile) -> float:
    """Largest total-variation distance between corresponding rows of two chains."""
    alphabet = "".join(sorted(set(a.states) | set(b.states)))
    Ma, da = _embed(a, alphabet)
    Mb, db = _embed(b, alphabet)
    both = da & db
    if not both.any():
        return 1.0
    tv = 0.5 * np.abs(Ma[both] - Mb[both]).sum(axis=1)
    return float(tv.max())


def min_separation(profiles: Sequence[ProgramProfile]) -> float:
    if len(profiles) < 2:
        return 1.0
    return min(pair_separation(a, b) for a, b in itertools.combinations(profiles, 2))


@dataclass
class CorpusSpec:
    profiles: list
    traces_per_profile: int
    seed: int = 0
    separation_floor: Optional[float] = None

    def __post_init__(self):
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            raise ParameterError("profile names must be unique")
        if self.traces_per_profile < 0:
            raise ParameterError("traces_per_profile must be >= 0")

    @property
    def separation(self) -> float:
        return min_separation(self.profiles)

    def to_dict(self) -> dict:
        return {
            "format": "procident-corpus-spec",
            "version": 1,
            "seed": self.seed,
            "traces_per_profile": self.traces_per_profile,
            "separation_floor": self.separation_floor,
            "profiles": [p.to_dict() for p in self.profiles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        return cls([ProgramProfile.from_dict(p) for p in d["profiles"]], d["traces_per_profile"],
                   d.get("seed", 0), d.get("separation_floor"))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "CorpusSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SimulatedCorpus:
    strings: list
    separation: float
    alphabet: str = ""

    @property
    def labels(self) -> list:
        return [s.program_name for s in self.strings]


def generate_corpus(spec: CorpusSpec) -> SimulatedCorpus:
    sep = spec.separation
    if spec.separation_floor is not None and sep < spec.separation_floor:
        raise ProfileError(f"profile separation {sep:.4f} is below the requested {spec.separation_floor}")
    strings = []
    for pi, prof in enumerate(spec.profiles):
        lo, hi = prof.length_range
        for ti in range(spec.traces_per_profile):
            rng = np.random.default_rng([spec.seed, pi, ti])
            length = int(rng.integers(lo, hi + 1))
            strings.append(EventString(f"sim:{prof.name}:{ti}", prof.name, sample_string(prof, length, rng)))
    alphabet = "".join(sorted(set().union(*(set(p.states) for p in spec.profiles)))) if spec.profiles else ""
    return SimulatedCorpus(strings, sep, alphabet)


def default_sim_alphabet(size: int = 40) -> str:
    """``size`` characters drawn from the default alphabet: all time characters
    plus the lowest event characters, so simulated strings featurize with the
    default config."""
    cfg = default_config()
    time_chars = cfg.time_chars
    events = [c for c in cfg.alphabet if c not in time_chars]
    if not len(time_chars) < size <= cfg.size:
        raise ParameterError(f"alphabet size must be in ({len(time_chars)}, {cfg.size}]")
    return "".join(sorted(time_chars + "".join(events[: size - len(time_chars)])))


def make_spec(n_profiles: int = 20, traces_per_profile: int = 200, alphabet: Optional[str] = None,
              seed: int = 0, out_degree: int = 4, length_range=(50, 500),
              separation_floor: Optional[float] = None) -> CorpusSpec:
    """Random profiles named ``prog00.exe``, ``prog01.exe``, ..."""
    alphabet = alphabet or default_sim_alphabet()
    rng = np.random.default_rng([seed, 0xA1FA])
    profiles = [
        random_profile(f"prog{i:02d}.exe", alphabet, rng, out_degree, length_range)
        for i in range(n_profiles)
    ]
    return CorpusSpec(profiles, traces_per_profile, seed, separation_floor)
