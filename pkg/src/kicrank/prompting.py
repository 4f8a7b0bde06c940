"""Multi-round conversation assembly and response parsing.

A conversation walks four stages: a responsibility description, the
question plus a description of the two example kinds, as many
demonstration batches as the token budget admits, and the final request.
Two interaction modes exist: ``sort`` asks for one re-ordering of the
candidate list, ``score`` asks for a 0-100 score per candidate.

Parsing is defensive: unknown items are dropped, missing candidates are
appended in their original order, so the result is always a permutation
of the input. A response with no usable content is a hard failure and
the caller keeps the retriever order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import NamedTuple

from .demonstrations import DemonstrationSet
from .kg import Query
from .verbalizer import AlignedTemplate, VerbalizationError, Verbalizer, candidate_labels

SORT = "sort"
SCORE = "score"
MODES = (SORT, SCORE)

FINAL_ORDER_MARKER = "The final order:"


class PromptError(Exception):
    pass


class PromptBudgetError(PromptError):
    """Budget cannot fit even the demonstration-free conversation."""


def estimate_tokens(text: str) -> int:
    """Default token estimator: one token per four utf-8 bytes."""
    return (len(text.encode("utf-8")) + 3) // 4


def load_templates(path=None) -> dict:
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return json.loads(resources.files("kicrank.templates").joinpath("prompts.json").read_text("utf-8"))


_DEFAULT_TEMPLATES: dict | None = None


def default_templates() -> dict:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = load_templates()
    return _DEFAULT_TEMPLATES


class Message(NamedTuple):
    role: str
    text: str


@dataclass
class Conversation:
    messages: list[Message] = field(default_factory=list)

    @property
    def estimated_tokens(self) -> int:
        return sum(estimate_tokens(m.text) for m in self.messages)

    def add(self, role: str, text: str) -> None:
        self.messages.append(Message(role, text))


@dataclass
class ParseOutcome:
    order: list[str] | None = None
    score: float | None = None
    unknown_dropped: int = 0
    missing_appended: int = 0
    hard_failure: bool = False


@dataclass
class PromptConfig:
    """Everything conversation assembly needs besides the query."""

    verbalizer: Verbalizer
    token_budget: int = 3584
    demo_batch_size: int = 4
    templates: dict | None = None
    no_icl: bool = False
    trivial: bool = False

    def table(self, mode: str) -> dict:
        return (self.templates or default_templates())[mode]


def _format_candidates(labels: list[str]) -> str:
    return ", ".join(labels)


def _demo_message(table: dict, analogy: list[str], supplement: list[str], quote: bool) -> str:
    parts = []
    if analogy:
        body = "\n".join(f'"{d}"' if quote else d for d in analogy)
        parts.append(f"{table['analogy_header']}\n{body}")
    if supplement:
        body = "\n".join(f'"{d}"' if quote else d for d in supplement)
        parts.append(f"{table['supplement_header']}\n{body}")
    parts.append(table["demos_suffix"])
    return "\n".join(parts)


def build_conversation(
    query: Query,
    demos: DemonstrationSet,
    candidates: list[int],
    mode: str,
    config: PromptConfig,
) -> Conversation:
    """Assemble the staged conversation for one query.

    Demonstration rounds take ``demo_batch_size`` items from the analogy
    order then the same from the supplement order, and rounds are added
    while the token estimate stays within budget. ``no_icl`` skips the
    demonstration stage; ``trivial`` collapses everything into a single
    flat message (sort mode only).
    """
    if mode not in MODES:
        raise PromptError(f"unknown mode {mode!r}")
    if not candidates:
        raise PromptError("candidate list is empty")
    verb = config.verbalizer
    table = config.table(mode)
    labels = candidate_labels(verb, candidates)

    if config.trivial:
        if mode != SORT:
            raise PromptError("the trivial single-prompt shape only supports sort mode")
        return _build_trivial(query, demos, labels, config)

    conv = Conversation()
    conv.add("system", table["responsibility"])
    conv.add("assistant", table["responsibility_ack"])
    if mode == SORT:
        conv.add("user", table["context"].format(query=verb.query_text(query)))
    else:
        conv.add("user", table["context"].format(topic=verb.scoring_topic(query)))
    conv.add("assistant", table["context_ack"])

    if mode == SORT:
        finals = [table["final"].format(candidates=_format_candidates(labels), query=verb.query_text(query))]
    else:
        finals = [
            table["final"].format(statement=verb.completed_statement(query, c)) for c in candidates
        ]
    base = conv.estimated_tokens + sum(estimate_tokens(t) for t in finals)
    if base > config.token_budget:
        raise PromptBudgetError(
            f"budget {config.token_budget} cannot fit the demonstration-free conversation ({base} tokens)"
        )

    if not config.no_icl:
        used = base
        k = config.demo_batch_size
        ia = isup = 0
        analogy = [verb.demonstration(t) for t in demos.analogy_order]
        supplement = [verb.demonstration(t) for t in demos.supplement_order]
        while ia < len(analogy) or isup < len(supplement):
            text = _demo_message(
                table, analogy[ia : ia + k], supplement[isup : isup + k], quote=(mode == SORT)
            )
            cost = estimate_tokens(text) + estimate_tokens(table["demos_ack"])
            if used + cost > config.token_budget:
                break
            conv.add("user", text)
            conv.add("assistant", table["demos_ack"])
            used += cost
            ia += k
            isup += k

    for text in finals:
        conv.add("user", text)
    return conv


def _build_trivial(query, demos, labels, config: PromptConfig) -> Conversation:
    verb = config.verbalizer
    table = config.table(SORT)
    final = table["final"].format(candidates=_format_candidates(labels), query=verb.query_text(query))
    if estimate_tokens(final) > config.token_budget:
        raise PromptBudgetError(f"budget {config.token_budget} cannot fit the final query")
    lines: list[str] = []
    used = estimate_tokens(final)
    streams = [
        [verb.demonstration(t) for t in demos.analogy_order],
        [verb.demonstration(t) for t in demos.supplement_order],
    ]
    idx = [0, 0]
    turn = 0
    while idx[0] < len(streams[0]) or idx[1] < len(streams[1]):
        side = turn % 2
        turn += 1
        if idx[side] >= len(streams[side]):
            continue
        line = streams[side][idx[side]]
        cost = estimate_tokens(line + "\n")
        if used + cost > config.token_budget:
            break
        lines.append(line)
        idx[side] += 1
        used += cost
    conv = Conversation()
    conv.add("user", "\n".join(lines + [final]) if lines else final)
    return conv


_WS = re.compile(r"\s+")
_MARKER = re.compile(re.escape(FINAL_ORDER_MARKER), re.IGNORECASE)


def _normalize(text: str) -> str:
    return _WS.sub(" ", text).strip().lower()


def parse_sort_response(text: str, candidates: list[str]) -> ParseOutcome:
    """Parse 'The final order: [a | b | c]' and repair it into a
    permutation of ``candidates``."""
    if not candidates:
        raise PromptError("candidate list is empty")
    lookup: dict[str, int] = {}
    for i, c in enumerate(candidates):
        lookup.setdefault(_normalize(c), i)

    marker = _MARKER.search(text)
    segment = text[marker.end():] if marker else text
    lo, hi = segment.find("["), segment.rfind("]")
    inner = segment[lo + 1 : hi] if 0 <= lo < hi else segment
    items = [s for s in (piece.strip() for piece in inner.split("|")) if s]

    matched: list[int] = []
    seen: set[int] = set()
    dropped = 0
    for item in items:
        idx = lookup.get(_normalize(item))
        if idx is None or idx in seen:
            dropped += 1
            continue
        seen.add(idx)
        matched.append(idx)

    if not matched:
        return ParseOutcome(order=list(candidates), hard_failure=True)
    missing = [i for i in range(len(candidates)) if i not in seen]
    order = [candidates[i] for i in matched + missing]
    return ParseOutcome(order=order, unknown_dropped=dropped, missing_appended=len(missing))


_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")


def parse_score_response(text: str) -> ParseOutcome:
    """First number in the reply, clamped into [0, 100]."""
    match = _NUMBER.search(text)
    if match is None:
        return ParseOutcome(hard_failure=True)
    value = min(100.0, max(0.0, float(match.group())))
    return ParseOutcome(score=value)


def format_sort_response(labels: list[str]) -> str:
    """The exact output syntax the sort instruction requests."""
    return f"{FINAL_ORDER_MARKER} [" + " | ".join(labels) + "]"


@dataclass
class RerankResult:
    order: list[int]
    unknown_dropped: int = 0
    missing_appended: int = 0
    hard_failures: int = 0


def rerank_candidates(
    query: Query,
    demos: DemonstrationSet,
    candidates: list[int],
    mode: str,
    gateway,
    config: PromptConfig,
) -> RerankResult:
    """Run one query's conversation through the gateway and return the
    re-ranked candidate ids, always a permutation of ``candidates``."""
    verb = config.verbalizer
    labels = candidate_labels(verb, candidates)
    by_label = {lab: c for lab, c in zip(labels, candidates)}
    conv = build_conversation(query, demos, candidates, mode, config)

    if mode == SORT or config.trivial:
        reply = gateway.complete(conv)
        outcome = parse_sort_response(reply, labels)
        order = [by_label[lab] for lab in outcome.order]
        return RerankResult(
            order=order,
            unknown_dropped=outcome.unknown_dropped,
            missing_appended=outcome.missing_appended,
            hard_failures=int(outcome.hard_failure),
        )

    n_turns = len(candidates)
    prefix = conv.messages[: len(conv.messages) - n_turns]
    turns = conv.messages[len(conv.messages) - n_turns :]
    history = list(prefix)
    scores: list[float] = []
    failures = 0
    for turn in turns:
        history.append(turn)
        reply = gateway.complete(Conversation(messages=list(history)))
        history.append(Message("assistant", reply))
        outcome = parse_score_response(reply)
        if outcome.hard_failure:
            failures += 1
            scores.append(-1.0)
        else:
            scores.append(outcome.score)
    ranked = sorted(range(n_turns), key=lambda i: (-scores[i], i))
    return RerankResult(order=[candidates[i] for i in ranked], hard_failures=failures)


def build_alignment_prompt(
    relation: int,
    analogy_order,
    budget: int,
    verbalizer: Verbalizer,
    templates: dict | None = None,
) -> Conversation:
    """Single-turn prompt asking the model to restate a relation's
    meaning from its ordered analogy demonstrations."""
    if not analogy_order:
        raise PromptError("relation has no analogy demonstrations to summarise")
    table = (templates or default_templates())["alignment"]
    phrase = verbalizer.relation_phrase(relation)
    if verbalizer.base == "wordnet-infix":
        mention, pattern = f"be {phrase} of", f"be {phrase} of"
    else:
        mention, pattern = f"{phrase} of", f"is the {phrase} of"

    def render(count: int) -> str:
        demos = "\n".join(verbalizer.statement(t) for t in analogy_order[:count])
        return table["prompt"].format(demos=demos, phrase=mention, pattern=pattern)

    count = 0
    for k in range(1, len(analogy_order) + 1):
        if estimate_tokens(render(k)) > budget:
            break
        count = k
    if count == 0:
        raise PromptBudgetError(f"budget {budget} cannot fit a single demonstration")
    conv = Conversation()
    conv.add("user", render(count))
    return conv


_ALIGN_ANCHOR = re.compile(r"it means A is", re.IGNORECASE)
_B_TOKEN = re.compile(r"\bB\b")


def parse_alignment_response(
    text: str,
    relation: str,
    binding: tuple[str, str] = ("[T]", "[H]"),
) -> AlignedTemplate | None:
    """Extract the filled meaning into a placeholder template.

    ``binding`` maps the response's A and B to placeholders; the default
    suits the "T is ... of H" statement form, infix statements pass
    ("[H]", "[T]"). Returns None when no usable fill is found, which
    callers treat as "keep the default verbalization".
    """
    slot_a, slot_b = binding
    match = _ALIGN_ANCHOR.search(text)
    if match is None:
        return None
    fill = text[match.end():].strip()
    stop = fill.find(".")
    if stop >= 0:
        fill = fill[:stop]
    fill = fill.strip()
    if not fill or _B_TOKEN.search(fill) is None:
        return None
    fill, n = _B_TOKEN.subn(slot_b, fill, count=1)
    if _B_TOKEN.search(fill) is not None:
        return None
    try:
        return AlignedTemplate(relation, f"{slot_a} is {fill}.")
    except VerbalizationError:
        return None
