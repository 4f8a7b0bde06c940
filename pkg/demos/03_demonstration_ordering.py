#!/usr/bin/env python3
"""Building and ordering demonstration pools.

For a query (h, r, ?) two pools are drawn from train+valid: triples
sharing the relation r (analogy) and triples touching the anchor h
(supplement). The analogy pool is ordered for entity diversity, the
supplement pool by BM25 relevance to the query text.
"""

from collections import Counter

from kicrank import (
    Query,
    Verbalizer,
    build_analogy_pool,
    build_supplement_pool,
    order_analogy,
    order_supplement,
    verbalize_query,
)
from kicrank.demonstrations import CorpusStats, bm25_score, tokenize
from kicrank.synth import cycle_kg

kg = cycle_kg(30, seed=1)
verb = Verbalizer(kg, "freebase-of-join")
rel = kg.relation_index["step3"]
query = Query("tail", kg.entity_index["e004"], rel, kg.entity_index["e007"])

analogy = build_analogy_pool(kg, rel)
supplement = build_supplement_pool(kg, query.anchor)
print(f"analogy pool: {len(analogy)} triples sharing step3")
print(f"supplement pool: {len(supplement)} triples touching e004")

# Diversity ordering: greedy minimum of per-entity exposure counters.
ordered = order_analogy(analogy, seed=42)
counters = Counter()
print("\nfirst analogy picks (counter sum at selection time):")
for t in ordered[:6]:
    s = counters[t.head] + counters[t.tail]
    print(f"  sum={s}  {kg.entity_labels[t.head]} -> {kg.entity_labels[t.tail]}")
    counters[t.head] += 1
    counters[t.tail] += 1

# Early picks spread over fresh entities before any entity repeats.
first_entities = [e for t in ordered[:5] for e in (t.head, t.tail)]
print("entities repeat in the first five picks:", len(first_entities) != len(set(first_entities)))

# BM25 ordering ranks the rendered statements against the query text.
query_text = verbalize_query(query, kg)
print("\nquery text:", query_text[:100], "...")
by_relevance = order_supplement(supplement, query_text, verb)
stats = CorpusStats([tokenize(verb.statement(t)) for t in supplement])
print("supplement pool by BM25 score:")
for t in by_relevance:
    score = bm25_score(tokenize(verb.statement(t)), tokenize(query_text), stats)
    print(f"  {score:6.3f}  {verb.statement(t)}")
