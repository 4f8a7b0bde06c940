import math
import random
from collections import Counter

import pytest

from kicrank.demonstrations import (
    CorpusStats,
    bm25_score,
    build_analogy_pool,
    build_supplement_pool,
    order_analogy,
    order_supplement,
    tokenize,
)
from kicrank.kg import Triple
from kicrank.verbalizer import FREEBASE, Verbalizer

from conftest import graph


# --- reference implementations, kept deliberately naive -----------------

def reference_diversity_order(pool, seed):
    """Straight-line replay of the greedy diversity ordering: uniform
    first pick, then min counter-sum with a uniform tie-break over the
    minimal triples in pool order."""
    if not pool:
        return []
    rng = random.Random(seed)
    counters = Counter()
    remaining = list(range(len(pool)))
    out = []
    first = remaining.pop(rng.randrange(len(remaining)))
    out.append(pool[first])
    counters[pool[first].head] += 1
    counters[pool[first].tail] += 1
    while remaining:
        best = None
        for i in remaining:
            s = counters[pool[i].head] + counters[pool[i].tail]
            if best is None or s < best:
                best = s
        minimal = [i for i in remaining if counters[pool[i].head] + counters[pool[i].tail] == best]
        pick = minimal[0] if len(minimal) == 1 else rng.choice(minimal)
        remaining.remove(pick)
        out.append(pool[pick])
        counters[pool[pick].head] += 1
        counters[pool[pick].tail] += 1
    return out


def reference_bm25(doc_text, query_text, corpus_texts, k1=1.5, b=0.75):
    """Per-term Okapi BM25 computed longhand from the rendered texts."""
    docs = [tokenize(t) for t in corpus_texts]
    doc = tokenize(doc_text)
    n = len(docs)
    avgdl = sum(len(d) for d in docs) / n
    score = 0.0
    for term in tokenize(query_text):
        f = doc.count(term)
        if f == 0:
            continue
        df = sum(1 for d in docs if term in d)
        idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
        score += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * len(doc) / avgdl))
    return score


def random_pool(rng, size=None, n_entities=12):
    size = rng.randint(0, 10) if size is None else size
    return [
        Triple(rng.randrange(n_entities), 0, rng.randrange(n_entities)) for _ in range(size)
    ]


# --- pools ---------------------------------------------------------------

def test_analogy_pool_filters_by_relation():
    kg = graph(train=[("a", "r", "b"), ("c", "r", "d"), ("a", "s", "b")])
    r = kg.relation_index["r"]
    assert build_analogy_pool(kg, r) == [kg.train[0], kg.train[1]]


def test_analogy_pool_absent_relation_is_empty():
    kg = graph(train=[("a", "r", "b")], relations=["s"])
    assert build_analogy_pool(kg, kg.relation_index["s"]) == []


def test_analogy_pool_never_contains_test_triples():
    kg = graph(train=[("a", "r", "b")], test=[("c", "r", "d")])
    pool = build_analogy_pool(kg, kg.relation_index["r"])
    assert kg.test[0] not in pool and len(pool) == 1


def test_supplement_pool_heads_then_tails():
    kg = graph(train=[("a", "r", "b"), ("c", "s", "a")])
    a = kg.entity_index["a"]
    assert build_supplement_pool(kg, a) == [kg.train[0], kg.train[1]]


def test_supplement_pool_isolated_entity():
    kg = graph(train=[("a", "r", "b")], entities=["z"])
    assert build_supplement_pool(kg, kg.entity_index["z"]) == []


def test_supplement_pool_self_loop_once():
    kg = graph(train=[("a", "r", "a"), ("a", "r", "b")])
    pool = build_supplement_pool(kg, kg.entity_index["a"])
    assert pool.count(kg.train[0]) == 1 and len(pool) == 2


# --- diversity ordering --------------------------------------------------

def test_order_analogy_singleton():
    pool = [Triple(0, 0, 1)]
    assert order_analogy(pool, seed=4) == pool


def test_order_analogy_hand_simulated_case():
    # pool entities: (a,b), (a,c), (d,e); after first pick (a,b) the
    # counter sums are 1 for (a,c) and 0 for (d,e).
    pool = [Triple(0, 0, 1), Triple(0, 0, 2), Triple(3, 0, 4)]
    seed = next(s for s in range(100) if random.Random(s).randrange(3) == 0)
    assert order_analogy(pool, seed) == [pool[0], pool[2], pool[1]]


def test_order_analogy_matches_reference_simulator():
    rng = random.Random(2024)
    for trial in range(300):
        pool = random_pool(rng)
        seed = rng.randrange(2**32)
        assert order_analogy(pool, seed) == reference_diversity_order(pool, seed)


def test_order_analogy_is_permutation_and_deterministic():
    rng = random.Random(5)
    for _ in range(100):
        pool = random_pool(rng)
        seed = rng.randrange(2**32)
        out = order_analogy(pool, seed)
        assert sorted(out) == sorted(pool)
        assert out == order_analogy(pool, seed)


def test_order_analogy_minimal_sum_each_step():
    # Replay the order and assert the chosen triple had the minimal
    # counter sum among the remaining ones at that moment.
    rng = random.Random(77)
    for _ in range(50):
        pool = random_pool(rng, size=rng.randint(1, 10))
        out = order_analogy(pool, rng.randrange(2**32))
        counters = Counter()
        remaining = list(pool)
        for k, chosen in enumerate(out):
            if k > 0:
                sums = [counters[t.head] + counters[t.tail] for t in remaining]
                assert counters[chosen.head] + counters[chosen.tail] == min(sums)
            remaining.remove(chosen)
            counters[chosen.head] += 1
            counters[chosen.tail] += 1


# --- BM25 ----------------------------------------------------------------

def test_idf_single_document_value():
    stats = CorpusStats([["apple"]])
    # ln((1 - 1 + 0.5) / (1 + 0.5) + 1) = ln(4/3)
    assert stats.idf("apple") == pytest.approx(math.log(4.0 / 3.0), abs=1e-12)


def test_absent_query_term_contributes_nothing():
    stats = CorpusStats([["apple", "pie"], ["pear"]])
    with_term = bm25_score(["apple", "pie"], ["apple"], stats)
    with_noise = bm25_score(["apple", "pie"], ["apple", "zzz"], stats)
    assert with_term == with_noise > 0


def test_bm25_matches_reference_on_random_corpora():
    rng = random.Random(31)
    vocab = ["ant", "bee", "cat", "dog", "elk", "fox"]
    for _ in range(200):
        corpus = [
            " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 8)))
            for _ in range(rng.randint(1, 6))
        ]
        query = " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 4)))
        stats = CorpusStats([tokenize(t) for t in corpus])
        for text in corpus:
            mine = bm25_score(tokenize(text), tokenize(query), stats)
            ref = reference_bm25(text, query, corpus)
            assert mine == pytest.approx(ref, abs=1e-9)


def test_bm25_monotonicity_single_term_query():
    # Appending another occurrence of the query term (document grows by
    # one token) never decreases a single-term query's score.
    rng = random.Random(13)
    vocab = ["ant", "bee", "cat", "dog"]
    for _ in range(200):
        doc = [rng.choice(vocab) for _ in range(rng.randint(1, 10))]
        term = rng.choice(vocab)
        stats = CorpusStats([doc, [rng.choice(vocab) for _ in range(3)]])
        assert bm25_score(doc + [term], [term], stats) >= bm25_score(doc, [term], stats)


def test_bm25_monotonicity_fixed_length_substitution():
    # Swapping a filler token for the query term at constant length
    # never decreases the score, whatever else the query contains.
    rng = random.Random(14)
    vocab = ["ant", "bee", "cat", "dog", "elk"]
    for _ in range(200):
        doc = [rng.choice(vocab) for _ in range(rng.randint(2, 10))]
        query = [rng.choice(vocab) for _ in range(rng.randint(1, 3))]
        term = query[0]
        slots = [i for i, tok in enumerate(doc) if tok not in query]
        if not slots:
            continue
        swapped = list(doc)
        swapped[rng.choice(slots)] = term
        stats = CorpusStats([doc])
        assert bm25_score(swapped, query, stats) >= bm25_score(doc, query, stats)


# --- supplement ordering -------------------------------------------------

@pytest.fixture
def supplement_kg():
    return graph(
        train=[
            ("blanc", "/film/actor/voice", "daffy"),
            ("blanc", "/people/person/spouse", "estelle"),
            ("warner", "/film/studio/employed", "blanc"),
        ],
        entity_text={
            "blanc": "Mel Blanc",
            "daffy": "Daffy Duck",
            "estelle": "Estelle Rosenbaum",
            "warner": "Warner Bros",
        },
    )


def test_order_supplement_matches_naive_ranking(supplement_kg):
    verb = Verbalizer(supplement_kg, FREEBASE)
    pool = build_supplement_pool(supplement_kg, supplement_kg.entity_index["blanc"])
    query_text = "who is the spouse of Mel Blanc? The answer is"
    ordered = order_supplement(pool, query_text, verb)
    corpus = [verb.statement(t) for t in pool]
    scores = [reference_bm25(verb.statement(t), query_text, corpus) for t in pool]
    expected = [pool[i] for i in sorted(range(len(pool)), key=lambda i: (-scores[i], i))]
    assert ordered == expected
    # The spouse triple mentions "spouse", so it must come first.
    assert ordered[0] == supplement_kg.train[1]


def test_order_supplement_zero_overlap_keeps_pool_order(supplement_kg):
    verb = Verbalizer(supplement_kg, FREEBASE)
    pool = build_supplement_pool(supplement_kg, supplement_kg.entity_index["blanc"])
    assert order_supplement(pool, "zzz qqq", verb) == pool


def test_order_supplement_singleton(supplement_kg):
    verb = Verbalizer(supplement_kg, FREEBASE)
    pool = [supplement_kg.train[0]]
    assert order_supplement(pool, "anything", verb) == pool


def test_order_supplement_permutation_property(supplement_kg):
    verb = Verbalizer(supplement_kg, FREEBASE)
    rng = random.Random(9)
    triples = list(supplement_kg.known_triples)
    for _ in range(100):
        pool = [rng.choice(triples) for _ in range(rng.randint(0, 6))]
        out = order_supplement(pool, "voice actor Mel", verb)
        assert sorted(out) == sorted(pool)
