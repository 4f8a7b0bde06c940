"""Demonstration pools and their orderings.

For every query two pools are drawn from the train+valid triples: an
analogy pool (same relation as the query) and a supplement pool (triples
incident to the query's anchor entity). The analogy pool is ordered for
entity diversity with greedy per-entity counters; the supplement pool is
ordered by BM25 relevance of each triple's text against the query text.
"""

from __future__ import annotations

import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field

from .kg import KnowledgeGraph, Query, Triple
from .verbalizer import Verbalizer

BM25_K1 = 1.5
BM25_B = 0.75

_TOKEN = re.compile(r"[0-9a-z]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass
class DemonstrationSet:
    """The two pools plus their ordered forms for one query."""

    analogy_pool: list[Triple]
    supplement_pool: list[Triple]
    analogy_order: list[Triple]
    supplement_order: list[Triple]


@dataclass
class CorpusStats:
    """Token statistics of one rendered pool, fixed at build time."""

    doc_tokens: list[list[str]]
    doc_freq: Counter = field(init=False)
    avg_len: float = field(init=False)
    k1: float = BM25_K1
    b: float = BM25_B

    def __post_init__(self):
        self.doc_freq = Counter()
        for tokens in self.doc_tokens:
            self.doc_freq.update(set(tokens))
        n = len(self.doc_tokens)
        self.avg_len = (sum(len(t) for t in self.doc_tokens) / n) if n else 0.0

    @property
    def size(self) -> int:
        return len(self.doc_tokens)

    def idf(self, token: str) -> float:
        df = self.doc_freq.get(token, 0)
        return math.log((self.size - df + 0.5) / (df + 0.5) + 1.0)


def bm25_score(doc: list[str], query: list[str], stats: CorpusStats) -> float:
    """Okapi BM25 of one document against the query token list."""
    if not doc:
        return 0.0
    tf = Counter(doc)
    norm = stats.k1 * (1.0 - stats.b + stats.b * len(doc) / stats.avg_len)
    score = 0.0
    for token in query:
        f = tf.get(token, 0)
        if f == 0:
            continue
        score += stats.idf(token) * f * (stats.k1 + 1.0) / (f + norm)
    return score


def build_analogy_pool(kg: KnowledgeGraph, relation: int) -> list[Triple]:
    """Every train+valid triple carrying ``relation``, in index order."""
    return list(kg.by_relation.get(relation, ()))


def build_supplement_pool(kg: KnowledgeGraph, anchor: int) -> list[Triple]:
    """Train+valid triples incident to ``anchor``: head-position triples
    first, then tail-position ones; a self-loop appears once."""
    return kg.by_entity(anchor)


def order_analogy(pool: list[Triple], seed: int) -> list[Triple]:
    """Greedy diversity ordering.

    Entity counters start at zero. The first triple is drawn uniformly;
    afterwards the remaining triple whose head+tail counter sum is
    minimal is appended (ties broken uniformly), and the counters of its
    endpoints are incremented. All randomness comes from ``seed``:
    one ``randrange`` for the first pick, one ``choice`` over the
    position-ordered minimal set per subsequent step.
    """
    if not pool:
        return []
    rng = random.Random(seed)
    counters: Counter[int] = Counter()
    remaining = list(range(len(pool)))
    ordered: list[Triple] = []

    first = remaining.pop(rng.randrange(len(remaining)))
    ordered.append(pool[first])
    counters[pool[first].head] += 1
    counters[pool[first].tail] += 1

    while remaining:
        sums = [counters[pool[i].head] + counters[pool[i].tail] for i in remaining]
        best = min(sums)
        minimal = [i for i, s in zip(remaining, sums) if s == best]
        pick = minimal[0] if len(minimal) == 1 else rng.choice(minimal)
        remaining.remove(pick)
        ordered.append(pool[pick])
        counters[pool[pick].head] += 1
        counters[pool[pick].tail] += 1
    return ordered


def order_supplement(pool: list[Triple], query_text: str, verbalizer: Verbalizer) -> list[Triple]:
    """Sort the pool by descending BM25 of each triple's rendered text
    against the query text; equal scores keep their pool order."""
    if not pool:
        return []
    docs = [tokenize(verbalizer.statement(t)) for t in pool]
    stats = CorpusStats(docs)
    query_tokens = tokenize(query_text)
    scores = [bm25_score(d, query_tokens, stats) for d in docs]
    order = sorted(range(len(pool)), key=lambda i: (-scores[i], i))
    return [pool[i] for i in order]


def build_demonstrations(
    kg: KnowledgeGraph,
    query: Query,
    verbalizer: Verbalizer,
    ordering_seed: int,
) -> DemonstrationSet:
    """Pools and orders for one query. ``ordering_seed`` should be
    derived per relation so queries sharing a relation share L_a."""
    analogy = build_analogy_pool(kg, query.relation)
    supplement = build_supplement_pool(kg, query.anchor)
    return DemonstrationSet(
        analogy_pool=analogy,
        supplement_pool=supplement,
        analogy_order=order_analogy(analogy, ordering_seed),
        supplement_order=order_supplement(supplement, verbalizer.query_text(query), verbalizer),
    )
