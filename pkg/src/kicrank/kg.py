"""Knowledge graph loading and indexing.

Datasets are directories of tab-separated triple files (train.txt,
valid.txt, test.txt) plus optional entity2text.txt / relation2text.txt
maps. Everything is indexed once at load time and immutable afterwards.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

log = logging.getLogger(__name__)

TAIL_MISSING = "tail"
HEAD_MISSING = "head"

SPLIT_FILES = {"train": "train.txt", "valid": "valid.txt", "test": "test.txt"}


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Query(NamedTuple):
    """One directed link-prediction question.

    ``direction`` is ``"tail"`` for (anchor, relation, ?) and ``"head"``
    for (?, relation, anchor). ``answer`` is the ground-truth entity.
    """

    direction: str
    anchor: int
    relation: int
    answer: int


class DatasetError(Exception):
    """Raised for missing files or malformed triple lines."""


@dataclass
class KnowledgeGraph:
    entity_labels: list[str]
    relation_labels: list[str]
    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]
    entity_text: dict[int, str] = field(default_factory=dict)
    relation_text: dict[int, str] = field(default_factory=dict)

    # Derived indices, built in __post_init__ over train + valid only.
    by_relation: dict[int, list[Triple]] = field(init=False, default_factory=dict)
    by_head: dict[int, list[Triple]] = field(init=False, default_factory=dict)
    by_tail: dict[int, list[Triple]] = field(init=False, default_factory=dict)
    degree: dict[int, int] = field(init=False, default_factory=dict)

    def __post_init__(self):
        self.entity_index = {lab: i for i, lab in enumerate(self.entity_labels)}
        self.relation_index = {lab: i for i, lab in enumerate(self.relation_labels)}
        self.degree = {e: 0 for e in range(len(self.entity_labels))}
        for t in self.known_triples:
            self.by_relation.setdefault(t.relation, []).append(t)
            self.by_head.setdefault(t.head, []).append(t)
            self.by_tail.setdefault(t.tail, []).append(t)
            self.degree[t.head] += 1
            self.degree[t.tail] += 1
        self._all_by_query = {}
        for split in (self.train, self.valid, self.test):
            for t in split:
                self._all_by_query.setdefault((TAIL_MISSING, t.head, t.relation), set()).add(t.tail)
                self._all_by_query.setdefault((HEAD_MISSING, t.tail, t.relation), set()).add(t.head)

    @property
    def known_triples(self) -> Iterable[Triple]:
        """Train + valid triples, in load order. Test is never indexed."""
        yield from self.train
        yield from self.valid

    @property
    def n_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    def by_entity(self, entity: int) -> list[Triple]:
        """Train+valid triples incident to ``entity``; a self-loop appears once."""
        out = list(self.by_head.get(entity, ()))
        out.extend(t for t in self.by_tail.get(entity, ()) if t.head != entity)
        return out

    def entity_label(self, entity: int) -> str:
        return self.entity_labels[entity]

    def text_of_entity(self, entity: int) -> str:
        return self.entity_text.get(entity, self.entity_labels[entity])

    def text_of_relation(self, relation: int) -> str:
        return self.relation_text.get(relation, self.relation_labels[relation])

    def split(self, name: str) -> list[Triple]:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise DatasetError(f"unknown split {name!r}; expected train, valid or test") from None


def _read_triple_lines(path: Path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{path.name}:{lineno}: expected 3 tab-separated columns, got {len(parts)}")
            rows.append((parts[0], parts[1], parts[2]))
    return rows


def _read_text_map(path: Path) -> dict[str, str]:
    mapping = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            key, _, text = line.partition("\t")
            if not _:
                raise DatasetError(f"{path.name}:{lineno}: expected 'id\\tdescription'")
            mapping[key] = text
    return mapping


def load_dataset(directory: str | Path) -> KnowledgeGraph:
    """Load a benchmark directory into an indexed ``KnowledgeGraph``.

    Vocabulary ids are assigned by first appearance across train, then
    valid, then test, so identical files always produce identical ids.
    Duplicate triples within a split are dropped with a warning.
    """
    directory = Path(directory)
    raw = {}
    for split, fname in SPLIT_FILES.items():
        path = directory / fname
        if not path.exists():
            raise DatasetError(f"missing required file {path}")
        raw[split] = _read_triple_lines(path)

    entity_labels: list[str] = []
    relation_labels: list[str] = []
    ent_idx: dict[str, int] = {}
    rel_idx: dict[str, int] = {}

    def ent(label: str) -> int:
        if label not in ent_idx:
            ent_idx[label] = len(entity_labels)
            entity_labels.append(label)
        return ent_idx[label]

    def rel(label: str) -> int:
        if label not in rel_idx:
            rel_idx[label] = len(relation_labels)
            relation_labels.append(label)
        return rel_idx[label]

    splits: dict[str, list[Triple]] = {}
    for split in ("train", "valid", "test"):
        seen: set[Triple] = set()
        triples: list[Triple] = []
        dupes = 0
        for h, r, t in raw[split]:
            triple = Triple(ent(h), rel(r), ent(t))
            if triple in seen:
                dupes += 1
                continue
            seen.add(triple)
            triples.append(triple)
        if dupes:
            warnings.warn(f"{split}.txt: dropped {dupes} duplicate triple(s)", stacklevel=2)
        splits[split] = triples

    entity_text: dict[int, str] = {}
    relation_text: dict[int, str] = {}
    ent_text_path = directory / "entity2text.txt"
    if ent_text_path.exists():
        for label, text in _read_text_map(ent_text_path).items():
            if label in ent_idx:
                entity_text[ent_idx[label]] = text
    rel_text_path = directory / "relation2text.txt"
    if rel_text_path.exists():
        for label, text in _read_text_map(rel_text_path).items():
            if label in rel_idx:
                relation_text[rel_idx[label]] = text

    kg = KnowledgeGraph(
        entity_labels=entity_labels,
        relation_labels=relation_labels,
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        entity_text=entity_text,
        relation_text=relation_text,
    )
    log.info(
        "loaded %s: %d entities, %d relations, %d/%d/%d train/valid/test",
        directory, kg.n_entities, kg.n_relations, len(kg.train), len(kg.valid), len(kg.test),
    )
    return kg


def known_answers(kg: KnowledgeGraph, anchor: int, relation: int, direction: str) -> set[int]:
    """All entities completing (anchor, relation, ?) or (?, relation, anchor)
    anywhere in train, valid or test. Used for filtered ranking."""
    if direction not in (TAIL_MISSING, HEAD_MISSING):
        raise ValueError(f"direction must be 'tail' or 'head', got {direction!r}")
    return set(kg._all_by_query.get((direction, anchor, relation), ()))


def make_queries(kg: KnowledgeGraph, split: str) -> list[Query]:
    """Two directed queries per triple of ``split``, in file order:
    the tail-missing question first, then the head-missing one."""
    queries = []
    for t in kg.split(split):
        queries.append(Query(TAIL_MISSING, t.head, t.relation, t.tail))
        queries.append(Query(HEAD_MISSING, t.tail, t.relation, t.head))
    return queries
