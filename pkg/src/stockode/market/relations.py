"""Relation (hyperedge) file parsing."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from stockode.errors import DataError

log = logging.getLogger(__name__)


@dataclass
class Hyperedge:
    domain: str
    name: str
    members: frozenset


@dataclass
class RelationSet:
    hyperedges: list
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.hyperedges)


def parse_relations(text: str, universe, source: str = "<relations>") -> RelationSet:
    edges, dropped = [], 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split(" ")
        head, tickers = parts[0], parts[1:]
        domain, sep, name = head.partition(":")
        if not sep or not domain or not name or any(t == "" for t in tickers):
            raise DataError(f"{source}:{lineno}: malformed relation line {line!r}")
        members = frozenset(t for t in tickers if t in universe)
        if len(members) < 2:
            dropped += 1
            continue
        edges.append(Hyperedge(domain, name, members))
    if dropped:
        log.warning("%s: dropped %d hyperedge(s) with fewer than 2 known tickers", source, dropped)
    return RelationSet(edges, dropped)


def load_relations(path, universe) -> RelationSet:
    return parse_relations(Path(path).read_text(encoding="utf-8"), universe, str(path))


def write_relations(path, relations: RelationSet, universe) -> None:
    lines = []
    for e in relations.hyperedges:
        members = sorted(e.members, key=lambda t: universe.index[t])
        lines.append(f"{e.domain}:{e.name} " + " ".join(members) + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")
