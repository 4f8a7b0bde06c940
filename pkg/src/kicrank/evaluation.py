"""Ranking merge, filtered metrics and the end-to-end pipeline.

Per query: the retriever ranks all entities, the gateway re-ranks the
top-m window, the window replaces the leading entities of the retriever
order, and the ground truth's filtered rank feeds MRR and Hits@k. The
four ablation switches each perturb exactly one stage of that path.
"""

from __future__ import annotations

import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, derive_seed
from .demonstrations import (
    DemonstrationSet,
    build_analogy_pool,
    build_supplement_pool,
    order_analogy,
    order_supplement,
)
from .kg import KnowledgeGraph, Query, Triple, known_answers, make_queries
from .prompting import PromptConfig, RerankResult, rerank_candidates
from .retriever import Ranking, RetrieverModel, rank_all
from .verbalizer import Verbalizer

HITS_AT = (1, 3, 10)


class MergeError(Exception):
    pass


@dataclass
class QueryResult:
    query: Query
    top_m_before: list[int]
    r_llm: list[int]
    filtered_rank: int
    repairs: RerankResult


@dataclass
class EvalReport:
    metrics: dict[str, float]
    per_direction: dict[str, dict[str, float]]
    groups: dict[int, dict[str, float]]
    query_count: int
    repairs: dict[str, int] = field(default_factory=dict)


def rerank_merge(ranking: Ranking, r_llm: list[int], m: int) -> np.ndarray:
    """Replace the first m entities of the retriever order with the
    re-ranked window; positions beyond m are untouched."""
    order = ranking.entity_order
    m = min(m, order.shape[0])
    if len(r_llm) != m or set(r_llm) != {int(e) for e in order[:m]}:
        raise MergeError("re-ranked window is not a permutation of the retriever's top-m")
    merged = order.copy()
    merged[:m] = r_llm
    return merged


def filtered_rank(order, query: Query, known: set[int]) -> int:
    """1-based rank of the ground truth after discounting other
    known-true entities ranked above it."""
    answer = query.answer
    ignore = known - {answer}
    rank = 1
    for entity in order:
        entity = int(entity)
        if entity == answer:
            return rank
        if entity not in ignore:
            rank += 1
    raise MergeError(f"ground-truth entity {answer} missing from the ranking")


def aggregate_metrics(ranks: list[int]) -> dict[str, float]:
    if not ranks:
        raise ValueError("no ranks to aggregate")
    n = len(ranks)
    metrics = {"MRR": sum(1.0 / r for r in ranks) / n}
    for k in HITS_AT:
        metrics[f"Hits@{k}"] = sum(1 for r in ranks if r <= k) / n
    return metrics


def degree_group(degree: int) -> int:
    return int(math.floor(math.log2(degree + 1)))


def longtail_report(results: list[QueryResult], kg: KnowledgeGraph) -> dict[int, dict[str, float]]:
    """Metrics per logarithmic degree group. A query contributes its
    rank to every group one of its triple's endpoints falls in, once per
    group even when both endpoints share it."""
    buckets: dict[int, list[int]] = {}
    for res in results:
        q = res.query
        endpoints = (q.anchor, q.answer)
        groups = {degree_group(kg.degree.get(e, 0)) for e in endpoints}
        for g in groups:
            buckets.setdefault(g, []).append(res.filtered_rank)
    report = {}
    for g in sorted(buckets):
        ranks = buckets[g]
        report[g] = {
            "Hits@1": sum(1 for r in ranks if r <= 1) / len(ranks),
            "Hits@10": sum(1 for r in ranks if r <= 10) / len(ranks),
            "count": len(ranks),
        }
    return report


def random_baseline_mrr(n_entities: int) -> float:
    """MRR of a uniformly random ranking: (1/n) * sum_k 1/k."""
    return sum(1.0 / k for k in range(1, n_entities + 1)) / n_entities


def _demo_cache_key(kg: KnowledgeGraph, query: Query) -> tuple:
    return (kg.entity_labels[query.anchor], kg.relation_labels[query.relation], query.direction)


def build_demo_set(
    kg: KnowledgeGraph,
    query: Query,
    verbalizer: Verbalizer,
    config: RunConfig,
    cache: dict | None = None,
) -> DemonstrationSet:
    """Pools plus orders for one query, honouring the random-demos
    ablation and any precomputed ordering cache."""
    rel_label = kg.relation_labels[query.relation]
    analogy = build_analogy_pool(kg, query.relation)
    supplement = build_supplement_pool(kg, query.anchor)

    if config.ablations.random_demos:
        pool = list(kg.known_triples)
        rng = random.Random(derive_seed(config.seed, "random-demos", rel_label,
                                        kg.entity_labels[query.anchor], query.direction))
        analogy = _sample(pool, len(analogy), rng)
        supplement = _sample(pool, len(supplement), rng)

    analogy_order = None
    supplement_order = None
    if cache is not None and not config.ablations.random_demos:
        analogy_order = cache.get(("analogy", rel_label))
        supplement_order = cache.get(("supplement",) + _demo_cache_key(kg, query))
    if analogy_order is None:
        analogy_order = order_analogy(analogy, derive_seed(config.seed, "ordering", rel_label))
    if supplement_order is None:
        supplement_order = order_supplement(supplement, verbalizer.query_text(query), verbalizer)
    return DemonstrationSet(analogy, supplement, analogy_order, supplement_order)


def _sample(pool: list[Triple], size: int, rng: random.Random) -> list[Triple]:
    if size >= len(pool):
        return list(pool)
    return rng.sample(pool, size)


def evaluate_query(
    kg: KnowledgeGraph,
    model: RetrieverModel,
    gateway,
    config: RunConfig,
    query: Query,
    verbalizer: Verbalizer,
    demo_cache: dict | None = None,
    query_index: int = 0,
) -> QueryResult:
    """One pass of the two-stage pipeline for a single query."""
    ranking = rank_all(model, query, config.m)
    top_m = ranking.top(config.m)

    candidates = list(top_m)
    if config.ablations.shuffle_candidates:
        random.Random(derive_seed(config.seed, "shuffle", query_index)).shuffle(candidates)

    demos = build_demo_set(kg, query, verbalizer, config, demo_cache)
    prompt_config = PromptConfig(
        verbalizer=verbalizer,
        token_budget=config.conversation_budget,
        demo_batch_size=config.demo_batch_size,
        no_icl=config.ablations.no_icl,
        trivial=config.ablations.trivial_prompt,
    )
    result = rerank_candidates(query, demos, candidates, config.mode, gateway, prompt_config)
    merged = rerank_merge(ranking, result.order, len(top_m))
    rank = filtered_rank(merged, query, known_answers(kg, query.anchor, query.relation, query.direction))
    return QueryResult(query, top_m, result.order, rank, result)


def summarize(results: list[QueryResult], kg: KnowledgeGraph) -> EvalReport:
    ranks = [r.filtered_rank for r in results]
    per_direction = {}
    for direction in ("tail", "head"):
        sub = [r.filtered_rank for r in results if r.query.direction == direction]
        if sub:
            per_direction[direction] = aggregate_metrics(sub)
    repairs = {
        "unknown_dropped": sum(r.repairs.unknown_dropped for r in results),
        "missing_appended": sum(r.repairs.missing_appended for r in results),
        "hard_failures": sum(r.repairs.hard_failures for r in results),
    }
    return EvalReport(
        metrics=aggregate_metrics(ranks),
        per_direction=per_direction,
        groups=longtail_report(results, kg),
        query_count=len(results),
        repairs=repairs,
    )


def run_pipeline(
    kg: KnowledgeGraph,
    model: RetrieverModel,
    gateway,
    config: RunConfig,
    split: str = "test",
    queries: list[Query] | None = None,
    verbalizer: Verbalizer | None = None,
    demo_cache: dict | None = None,
) -> tuple[EvalReport, list[QueryResult]]:
    """Evaluate every query of ``split`` through retrieve, re-rank,
    merge and filtered ranking; ablation flags are honoured per query."""
    if queries is None:
        queries = make_queries(kg, split)
    if not queries:
        raise ValueError(f"split {split!r} has no queries")
    if verbalizer is None:
        verbalizer = Verbalizer(kg, config.scheme)

    def one(item):
        index, query = item
        return evaluate_query(kg, model, gateway, config, query, verbalizer, demo_cache, index)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(one, enumerate(queries)))
    else:
        results = [one(item) for item in enumerate(queries)]
    return summarize(results, kg), results


def retriever_only_metrics(
    kg: KnowledgeGraph,
    model: RetrieverModel,
    queries: list[Query],
) -> tuple[dict[str, float], list[int]]:
    """Filtered metrics of the plain retriever ranking, no re-ranking."""
    ranks = []
    for query in queries:
        ranking = rank_all(model, query, m=1)
        known = known_answers(kg, query.anchor, query.relation, query.direction)
        ranks.append(filtered_rank(ranking.entity_order, query, known))
    return aggregate_metrics(ranks), ranks
