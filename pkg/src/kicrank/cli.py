"""Batch command-line surface.

    kicrank preprocess|train|predict|evaluate|longtail --config <file>
            [--jobs N] [--seed S] [--backend http|identity|oracle|scripted]

Each command reads one config file, writes its artifacts under the
configured output directory and dumps the effective configuration next
to them. Commands that need an earlier stage's artifact name the
command to run first.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import evaluation, gateway as gateway_mod, kg as kg_mod, prompting, retriever
from .config import RunConfig, derive_seed, dump_config, load_config
from .demonstrations import build_analogy_pool, build_supplement_pool, order_analogy, order_supplement
from .kg import KnowledgeGraph, make_queries
from .verbalizer import (
    AlignedTemplate,
    Verbalizer,
    load_aligned_templates,
    save_aligned_templates,
)

CHECKPOINT = "retriever.ckpt"
DEMO_CACHE = "demo_cache.jsonl"
ALIGNED_TEMPLATES = "aligned_templates.tsv"
PREDICTIONS = "predictions.jsonl"
REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
LONGTAIL_CSV = "longtail.csv"
TRAIN_REPORT = "train_report.json"
EFFECTIVE_CONFIG = "effective_config.json"


class MissingArtifact(Exception):
    def __init__(self, path: Path, command: str):
        super().__init__(f"{path} not found; run `kicrank {command}` first")


def _out(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_graph(config: RunConfig) -> KnowledgeGraph:
    return kg_mod.load_dataset(config.dataset_dir)


def _make_gateway(config: RunConfig, kg: KnowledgeGraph, verbalizer: Verbalizer) -> gateway_mod.Gateway:
    if config.gateway.backend == "http" and not config.gateway.cache_path:
        config.gateway.cache_path = str(_out(config) / "gateway_cache.jsonl")
    answers, statements = {}, set()
    if config.gateway.backend == "oracle":
        answers, statements = gateway_mod.oracle_tables(make_queries(kg, "test"), verbalizer)
    return gateway_mod.Gateway(
        config.gateway, oracle_answers=answers, oracle_statements=statements
    )


def _verbalizer(config: RunConfig, kg: KnowledgeGraph) -> Verbalizer:
    aligned_path = _out(config) / ALIGNED_TEMPLATES
    if config.alignment and aligned_path.exists():
        return Verbalizer(kg, "aligned", load_aligned_templates(aligned_path))
    return Verbalizer(kg, config.scheme)


def _triple_ids(kg: KnowledgeGraph):
    return {t: i for i, t in enumerate(kg.known_triples)}


def cmd_preprocess(config: RunConfig) -> None:
    """Write the demonstration-order cache and, when alignment is on,
    the self-aligned relation templates."""
    kg = _load_graph(config)
    out = _out(config)
    verbalizer = Verbalizer(kg, config.scheme)
    ids = _triple_ids(kg)
    records = []
    for relation in sorted(kg.by_relation):
        pool = build_analogy_pool(kg, relation)
        order = order_analogy(pool, derive_seed(config.seed, "ordering", kg.relation_labels[relation]))
        records.append(
            {"kind": "analogy", "key": kg.relation_labels[relation], "triples": [ids[t] for t in order]}
        )
    seen = set()
    for query in make_queries(kg, "test"):
        key = (kg.entity_labels[query.anchor], kg.relation_labels[query.relation], query.direction)
        if key in seen:
            continue
        seen.add(key)
        pool = build_supplement_pool(kg, query.anchor)
        order = order_supplement(pool, verbalizer.query_text(query), verbalizer)
        records.append({"kind": "supplement", "key": "\t".join(key), "triples": [ids[t] for t in order]})
    with open(out / DEMO_CACHE, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"wrote {len(records)} demonstration orders to {out / DEMO_CACHE}")

    if config.alignment:
        gw = _make_gateway(config, kg, verbalizer)
        binding = ("[H]", "[T]") if verbalizer.base == "wordnet-infix" else ("[T]", "[H]")
        templates: dict[str, AlignedTemplate] = {}
        fallbacks = 0
        for relation in range(kg.n_relations):
            label = kg.relation_labels[relation]
            order = order_analogy(
                build_analogy_pool(kg, relation), derive_seed(config.seed, "ordering", label)
            )
            template = None
            if order:
                conv = prompting.build_alignment_prompt(
                    relation, order, config.conversation_budget, verbalizer
                )
                template = prompting.parse_alignment_response(gw.complete(conv), label, binding)
            if template is None:
                fallbacks += 1
                template = _fallback_template(verbalizer, relation, label)
            templates[label] = template
        save_aligned_templates(templates, out / ALIGNED_TEMPLATES)
        print(f"wrote {len(templates)} aligned templates ({fallbacks} fallbacks) to {out / ALIGNED_TEMPLATES}")
    dump_config(config, out / EFFECTIVE_CONFIG)


def _fallback_template(verbalizer: Verbalizer, relation: int, label: str) -> AlignedTemplate:
    phrase = verbalizer.relation_phrase(relation)
    if verbalizer.base == "wordnet-infix":
        return AlignedTemplate(label, f"[H] be {phrase} of [T].")
    return AlignedTemplate(label, f"[T] is the {phrase} of [H].")


def cmd_train(config: RunConfig) -> None:
    kg = _load_graph(config)
    out = _out(config)
    model = retriever.initialize_model(kg.n_entities, kg.n_relations, config.train)
    report = retriever.train(model, kg, config.train)
    retriever.save_model(model, out / CHECKPOINT)
    (out / TRAIN_REPORT).write_text(
        json.dumps(
            {"steps": report.steps, "seconds": report.seconds, "losses": report.losses},
            sort_keys=True,
        )
        + "\n",
        "utf-8",
    )
    final = report.losses[-1] if report.losses else float("nan")
    print(f"trained {report.steps} steps in {report.seconds:.1f}s (final loss {final:.4f})")
    print(f"checkpoint written to {out / CHECKPOINT}")
    dump_config(config, out / EFFECTIVE_CONFIG)


def _load_demo_cache(path: Path, kg: KnowledgeGraph) -> dict:
    triples = list(kg.known_triples)
    cache = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            order = [triples[i] for i in record["triples"]]
            if record["kind"] == "analogy":
                cache[("analogy", record["key"])] = order
            else:
                cache[("supplement",) + tuple(record["key"].split("\t"))] = order
    return cache


def cmd_predict(config: RunConfig) -> None:
    kg = _load_graph(config)
    out = _out(config)
    ckpt = out / CHECKPOINT
    if not ckpt.exists():
        raise MissingArtifact(ckpt, "train")
    model = retriever.load_model(ckpt)
    verbalizer = _verbalizer(config, kg)
    gw = _make_gateway(config, kg, verbalizer)
    cache_path = out / DEMO_CACHE
    demo_cache = _load_demo_cache(cache_path, kg) if cache_path.exists() else None
    report, results = evaluation.run_pipeline(
        kg, model, gw, config, split="test", verbalizer=verbalizer, demo_cache=demo_cache
    )
    with open(out / PREDICTIONS, "w", encoding="utf-8") as fh:
        for res in results:
            q = res.query
            fh.write(
                json.dumps(
                    {
                        "direction": q.direction,
                        "anchor": kg.entity_labels[q.anchor],
                        "relation": kg.relation_labels[q.relation],
                        "answer": kg.entity_labels[q.answer],
                        "top_m_before": [kg.entity_labels[e] for e in res.top_m_before],
                        "r_llm": [kg.entity_labels[e] for e in res.r_llm],
                        "filtered_rank": res.filtered_rank,
                        "repairs": {
                            "unknown_dropped": res.repairs.unknown_dropped,
                            "missing_appended": res.repairs.missing_appended,
                            "hard_failures": res.repairs.hard_failures,
                        },
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    if config.gateway.backend == "http" and config.gateway.cache_path:
        gw.flush_cache()
    print(f"wrote {len(results)} per-query results to {out / PREDICTIONS}")
    print(f"MRR {report.metrics['MRR']:.4f}  " + "  ".join(
        f"Hits@{k} {report.metrics[f'Hits@{k}']:.4f}" for k in (1, 3, 10)
    ))
    dump_config(config, out / EFFECTIVE_CONFIG)


def _read_predictions(out: Path) -> list[dict]:
    path = out / PREDICTIONS
    if not path.exists():
        raise MissingArtifact(path, "predict")
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def cmd_evaluate(config: RunConfig) -> None:
    out = _out(config)
    rows = _read_predictions(out)
    ranks = [r["filtered_rank"] for r in rows]
    metrics = evaluation.aggregate_metrics(ranks)
    per_direction = {}
    for direction in ("tail", "head"):
        sub = [r["filtered_rank"] for r in rows if r["direction"] == direction]
        if sub:
            per_direction[direction] = evaluation.aggregate_metrics(sub)
    repairs = {
        key: sum(r["repairs"][key] for r in rows)
        for key in ("unknown_dropped", "missing_appended", "hard_failures")
    }
    report = {
        "metrics": metrics,
        "per_direction": per_direction,
        "query_count": len(rows),
        "repairs": repairs,
    }
    (out / REPORT_JSON).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", "utf-8")
    with open(out / REPORT_CSV, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "metric", "value"])
        for metric in sorted(metrics):
            writer.writerow(["all", metric, f"{metrics[metric]:.6f}"])
        for direction in sorted(per_direction):
            for metric in sorted(per_direction[direction]):
                writer.writerow([direction, metric, f"{per_direction[direction][metric]:.6f}"])
    for metric in ("MRR", "Hits@1", "Hits@3", "Hits@10"):
        print(f"{metric}: {metrics[metric]:.4f}")
    print(f"report written to {out / REPORT_JSON} and {out / REPORT_CSV}")


def cmd_longtail(config: RunConfig) -> None:
    kg = _load_graph(config)
    out = _out(config)
    rows = _read_predictions(out)
    buckets: dict[int, list[int]] = {}
    for row in rows:
        anchor = kg.entity_index[row["anchor"]]
        answer = kg.entity_index[row["answer"]]
        groups = {evaluation.degree_group(kg.degree.get(e, 0)) for e in (anchor, answer)}
        for g in groups:
            buckets.setdefault(g, []).append(row["filtered_rank"])
    with open(out / LONGTAIL_CSV, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "metric", "value"])
        for g in sorted(buckets):
            ranks = buckets[g]
            writer.writerow([g, "Hits@1", f"{sum(1 for r in ranks if r <= 1) / len(ranks):.6f}"])
            writer.writerow([g, "Hits@10", f"{sum(1 for r in ranks if r <= 10) / len(ranks):.6f}"])
            writer.writerow([g, "count", str(len(ranks))])
    print(f"wrote {len(buckets)} degree groups to {out / LONGTAIL_CSV}")


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "longtail": cmd_longtail,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kicrank", description=__doc__.strip().splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML or JSON run configuration")
    parser.add_argument("--jobs", type=int, default=None, help="worker bound for per-query steps")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--backend", choices=gateway_mod.BACKENDS, default=None)
    parser.add_argument("--output-dir", default=None, help="override the output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.jobs is not None:
            config.jobs = args.jobs
        if args.seed is not None:
            config.seed = args.seed
            config.train.seed = args.seed
        if args.backend is not None:
            config.gateway.backend = args.backend
        if args.output_dir is not None:
            config.output_dir = args.output_dir
        COMMANDS[args.command](config)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"kicrank {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
