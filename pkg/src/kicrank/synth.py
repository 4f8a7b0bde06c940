"""Synthetic knowledge graphs for tests and offline demos.

``cycle_kg`` arranges entities on a ring with several fixed-stride
relations; strides present in train make the held-out strides
predictable by composing rotations, which is what the retriever family
can represent. ``random_kg`` is an unstructured graph for exercising
loaders and metrics.
"""

from __future__ import annotations

import random
from pathlib import Path

from .kg import KnowledgeGraph, Triple


def _graph(entity_labels, relation_labels, train, valid, test) -> KnowledgeGraph:
    return KnowledgeGraph(
        entity_labels=list(entity_labels),
        relation_labels=list(relation_labels),
        train=train,
        valid=valid,
        test=test,
    )


def cycle_kg(n_entities: int = 200, seed: int = 7) -> KnowledgeGraph:
    """Compositional ring graph.

    Strides 1, 2 and 5 are fully observed in train; strides 3 and 4 are
    split so that a quarter of each lands in valid and a quarter in
    test, giving n_entities // 2 test triples.
    """
    entities = [f"e{i:03d}" for i in range(n_entities)]
    relations = ["step1", "step2", "step5", "step3", "step4"]
    rel = {name: i for i, name in enumerate(relations)}
    train, valid, test = [], [], []
    for stride, name in ((1, "step1"), (2, "step2"), (5, "step5")):
        for i in range(n_entities):
            train.append(Triple(i, rel[name], (i + stride) % n_entities))
    rng = random.Random(seed)
    for stride, name in ((3, "step3"), (4, "step4")):
        order = list(range(n_entities))
        rng.shuffle(order)
        for pos, i in enumerate(order):
            triple = Triple(i, rel[name], (i + stride) % n_entities)
            if pos % 4 == 0:
                test.append(triple)
            elif pos % 4 == 1:
                valid.append(triple)
            else:
                train.append(triple)
    return _graph(entities, relations, train, valid, test)


def random_kg(
    n_entities: int = 50,
    n_relations: int = 5,
    n_train: int = 200,
    n_valid: int = 30,
    n_test: int = 30,
    seed: int = 11,
) -> KnowledgeGraph:
    """Uniform random triples, deduplicated across all splits."""
    rng = random.Random(seed)
    entities = [f"n{i:02d}" for i in range(n_entities)]
    relations = [f"r{i}" for i in range(n_relations)]
    seen: set[Triple] = set()
    splits = ([], [], [])
    for split, target in zip(splits, (n_train, n_valid, n_test)):
        while len(split) < target:
            t = Triple(rng.randrange(n_entities), rng.randrange(n_relations), rng.randrange(n_entities))
            if t in seen:
                continue
            seen.add(t)
            split.append(t)
    return _graph(entities, relations, *splits)


def write_dataset(kg: KnowledgeGraph, directory: str | Path, texts: bool = False) -> Path:
    """Materialise a graph as the on-disk TSV layout loaders expect."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, triples in (("train", kg.train), ("valid", kg.valid), ("test", kg.test)):
        with open(directory / f"{name}.txt", "w", encoding="utf-8") as fh:
            for t in triples:
                fh.write(f"{kg.entity_labels[t.head]}\t{kg.relation_labels[t.relation]}\t{kg.entity_labels[t.tail]}\n")
    if texts:
        with open(directory / "entity2text.txt", "w", encoding="utf-8") as fh:
            for i, label in enumerate(kg.entity_labels):
                fh.write(f"{label}\t{kg.text_of_entity(i)}\n")
        with open(directory / "relation2text.txt", "w", encoding="utf-8") as fh:
            for i, label in enumerate(kg.relation_labels):
                fh.write(f"{label}\t{kg.text_of_relation(i)}\n")
    return directory
