#!/usr/bin/env python3
"""Loading and inspecting a knowledge graph.

Datasets are three tab-separated files (train/valid/test) plus optional
entity and relation text maps. This script writes a tiny dataset to a
temporary directory, loads it back, and walks the indices the rest of
the toolkit is built on.
"""

import tempfile
from pathlib import Path

from kicrank import known_answers, load_dataset, make_queries

workdir = Path(tempfile.mkdtemp(prefix="kicrank-demo-"))

(workdir / "train.txt").write_text(
    "mel_blanc\t/people/person/spouse_s./people/marriage/type_of_union\tmarriage\n"
    "mel_blanc\t/film/actor/voice\tdaffy_duck\n"
    "oliver_hardy\t/people/person/spouse_s./people/marriage/type_of_union\tmarriage\n"
    "stan_laurel\t/film/actor/film\tway_out_west\n"
)
(workdir / "valid.txt").write_text(
    "oliver_hardy\t/film/actor/film\tway_out_west\n"
)
(workdir / "test.txt").write_text(
    "stan_laurel\t/people/person/spouse_s./people/marriage/type_of_union\tmarriage\n"
)
(workdir / "entity2text.txt").write_text(
    "mel_blanc\tMel Blanc\nmarriage\tMarriage\ndaffy_duck\tDaffy Duck\n"
    "oliver_hardy\tOliver Hardy\nstan_laurel\tStan Laurel\nway_out_west\tWay Out West\n"
)

kg = load_dataset(workdir)
print(f"{kg.n_entities} entities, {kg.n_relations} relations")
print(f"splits: {len(kg.train)} train / {len(kg.valid)} valid / {len(kg.test)} test")

# Adjacency indices cover train+valid only; the test split never leaks
# into pools or degrees.
union = kg.relation_index["/people/person/spouse_s./people/marriage/type_of_union"]
print("\ntriples carrying the marriage relation (train+valid):")
for t in kg.by_relation[union]:
    print("  ", kg.entity_labels[t.head], "->", kg.entity_labels[t.tail])

mel = kg.entity_index["mel_blanc"]
print("\ntriples incident to Mel Blanc:", len(kg.by_entity(mel)))
print("degree table:", {kg.entity_labels[e]: d for e, d in kg.degree.items() if d})

# Each test triple becomes two directed queries.
queries = make_queries(kg, "test")
for q in queries:
    print("\nquery:", q.direction, "missing |", kg.entity_labels[q.anchor],
          "->", kg.entity_labels[q.answer])
    answers = known_answers(kg, q.anchor, q.relation, q.direction)
    # The filtered evaluation setting discounts these when ranking.
    print("known answers across all splits:", sorted(kg.entity_labels[e] for e in answers))
