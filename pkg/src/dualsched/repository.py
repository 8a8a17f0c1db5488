"""Indexed store of validated rules with meta-feature retrieval.

Each entry links a rule to the instance topology it was validated on (job and
machine counts), its improvement at acceptance and its structural
complexity. Retrieval ranks entries by

    value - lam_distance * D(m_new, m_i) - lam_complexity * ln(1 + C_i) + bonus

where ``D`` is the relative Manhattan distance over (jobs, machines) and the
bonus applies only to exact topology matches.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field


from .rules import RuleError, validate_rule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetaFeatures:
    n_jobs: int
    n_machines: int

    def __post_init__(self):
        if self.n_jobs < 1 or self.n_machines < 1:
            raise ValueError(f"meta features must be >= 1, got {self}")

    @classmethod
    def of(cls, instance) -> "MetaFeatures":
        return cls(instance.n_jobs, instance.n_machines)


@dataclass(frozen=True)
class RepoEntry:
    meta: MetaFeatures
    rule_source: str
    value: float
    complexity: int
    benchmark: str = ""
    timestamp: float = 0.0
    version: int = 0

    def to_record(self) -> dict:
        return {
            "n_jobs": self.meta.n_jobs,
            "n_machines": self.meta.n_machines,
            "rule": self.rule_source,
            "value": self.value,
            "complexity": self.complexity,
            "benchmark": self.benchmark,
            "timestamp": self.timestamp,
            "version": self.version,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RepoEntry":
        value = float(rec["value"])
        if not math.isfinite(value):
            raise ValueError("non-finite value")
        return cls(
            MetaFeatures(int(rec["n_jobs"]), int(rec["n_machines"])),
            str(rec["rule"]),
            value,
            int(rec["complexity"]),
            str(rec.get("benchmark", "")),
            float(rec.get("timestamp", 0.0)),
            int(rec.get("version", 0)),
        )


@dataclass(frozen=True)
class RetrievalConfig:
    lam_distance: float = 0.5
    lam_complexity: float = 0.05
    match_bonus: float = 0.05
    k: int = 3

    def __post_init__(self):
        if self.lam_distance < 0 or self.lam_complexity < 0:
            raise ValueError("retrieval weights must be non-negative")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def distance(m_new: MetaFeatures, m_i: MetaFeatures) -> float:
    return abs(m_new.n_jobs - m_i.n_jobs) / m_new.n_jobs + abs(m_new.n_machines - m_i.n_machines) / m_new.n_machines


def score(entry: RepoEntry, m_new: MetaFeatures, config: RetrievalConfig = RetrievalConfig()) -> float:
    d = distance(m_new, entry.meta)
    s = entry.value - config.lam_distance * d - config.lam_complexity * math.log1p(entry.complexity)
    if d == 0:
        s += config.match_bonus
    return s


class RuleRepository:
    """Single-writer, many-reader rule store.

    Readers get a consistent snapshot because ``entries`` is replaced as a
    whole tuple on every insert.
    """

    def __init__(self, entries=()):
        self._entries = tuple(entries)
        self._lock = threading.Lock()

    @property
    def entries(self) -> tuple:
        return self._entries

    def __len__(self):
        return len(self._entries)

    def add(self, entry: RepoEntry) -> None:
        with self._lock:
            self._entries = self._entries + (entry,)

    def insert(self, meta: MetaFeatures, rule, value: float, benchmark: str = "", version: int = 0) -> RepoEntry:
        entry = RepoEntry(meta, rule.source, float(value), rule.complexity.score, benchmark, time.time(), version)
        self.add(entry)
        return entry

    def retrieve(self, m_new: MetaFeatures, config: RetrievalConfig = RetrievalConfig()) -> list:
        return retrieve(self, m_new, config)

    def copy(self) -> "RuleRepository":
        return RuleRepository(self._entries)

    def persist(self, path) -> None:
        persist(self, path)


def retrieve(repo: RuleRepository, m_new: MetaFeatures, config: RetrievalConfig = RetrievalConfig()) -> list:
    """Top-k entries by score, descending; ties keep insertion order."""
    entries = repo.entries
    ranked = sorted(range(len(entries)), key=lambda i: -score(entries[i], m_new, config))
    return [entries[i] for i in ranked[: config.k]]


def persist(repo: RuleRepository, path) -> None:
    """Write newline-delimited JSON records atomically (write, then rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".repo-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for entry in repo.entries:
                fh.write(json.dumps(entry.to_record()) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class LoadResult:
    repository: RuleRepository
    skipped: int = 0
    problems: list = field(default_factory=list)


def load(path) -> LoadResult:
    """Read a repository file, re-validating every rule.

    Records that fail to decode or whose rule no longer parses are skipped
    and counted.
    """
    entries = []
    problems = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entry = RepoEntry.from_record(json.loads(line))
                validate_rule(entry.rule_source)
            except (ValueError, KeyError, TypeError, RuleError) as exc:
                problems.append((lineno, str(exc)))
                log.warning("skipping repository record %d: %s", lineno, exc)
                continue
            entries.append(entry)
    return LoadResult(RuleRepository(entries), len(problems), problems)
