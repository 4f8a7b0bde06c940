"""Render triples, queries and relations as natural-language strings.

Three schemes are supported:

* ``freebase-of-join``: hierarchical relation paths are reversed and
  joined with "of" ("/tv/tv_program/country_of_origin" becomes
  "country of origin of tv program of tv").
* ``wordnet-infix``: lexical relations read as infix statements
  ("red indian be member of domain usage of disparagement"), with
  entity definitions prepended when the text map carries them.
* ``aligned``: per-relation sentence templates with [H] and [T]
  placeholders; relations without a template fall back to the
  "of"-joined rendering.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .kg import HEAD_MISSING, TAIL_MISSING, KnowledgeGraph, Query, Triple

FREEBASE = "freebase-of-join"
WORDNET = "wordnet-infix"
ALIGNED = "aligned"
SCHEMES = (FREEBASE, WORDNET, ALIGNED)

MASK = "[MASK]"


class VerbalizationError(Exception):
    pass


@dataclass(frozen=True)
class AlignedTemplate:
    """A relation rendered as a sentence with [H]/[T] placeholders."""

    relation: str
    template: str

    def __post_init__(self):
        for slot in ("[H]", "[T]"):
            if self.template.count(slot) != 1:
                raise VerbalizationError(
                    f"aligned template for {self.relation!r} must contain {slot} exactly once: {self.template!r}"
                )

    def substitute(self, head_text: str, tail_text: str) -> str:
        return self.template.replace("[H]", head_text).replace("[T]", tail_text)


def load_aligned_templates(path: str | Path) -> dict[str, AlignedTemplate]:
    """Read a 'relation_id\\ttemplate' TSV into a template registry."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            relation, sep, template = line.partition("\t")
            if not sep:
                raise VerbalizationError(f"{path}:{lineno}: expected 'relation_id\\ttemplate'")
            out[relation] = AlignedTemplate(relation, template)
    return out


def save_aligned_templates(templates: dict[str, AlignedTemplate], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for relation in templates:
            fh.write(f"{relation}\t{templates[relation].template}\n")


def verbalize_relation(raw: str, scheme: str = FREEBASE) -> str:
    """Turn a raw relation identifier into a readable phrase."""
    if not raw:
        raise VerbalizationError("empty relation identifier")
    if scheme == WORDNET:
        return raw.lstrip("_").replace("_", " ").strip()
    # Hierarchical path: reverse the segments and join with "of".
    segments = [s.replace("_", " ").strip() for s in raw.split("/") if s]
    segments = [s for s in segments if s]
    if not segments:
        return raw
    return " of ".join(reversed(segments))


def _split_name_definition(text: str) -> tuple[str, str | None]:
    name, sep, definition = text.partition(", ")
    if sep and definition.strip():
        return name.strip(), definition.strip()
    return text.strip(), None


class Verbalizer:
    """Stateless text renderer bound to one graph and one scheme.

    ``aligned`` holds per-relation templates (raw relation label keyed);
    relations missing from it use the base-scheme rendering, which is
    also the behaviour when alignment parsing failed upstream.
    """

    def __init__(
        self,
        kg: KnowledgeGraph,
        scheme: str = FREEBASE,
        aligned: dict[str, AlignedTemplate] | None = None,
    ):
        if scheme not in SCHEMES:
            raise VerbalizationError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        if scheme == ALIGNED and aligned is None:
            raise VerbalizationError("scheme 'aligned' needs a template registry")
        self.kg = kg
        self.scheme = scheme
        self.aligned = aligned or {}
        self.base = FREEBASE if scheme in (FREEBASE, ALIGNED) else WORDNET
        self._phrase_cache: dict[int, str] = {}

    def relation_phrase(self, relation: int) -> str:
        phrase = self._phrase_cache.get(relation)
        if phrase is None:
            phrase = verbalize_relation(self.kg.text_of_relation(relation), self.base)
            self._phrase_cache[relation] = phrase
        return phrase

    def entity_name(self, entity: int) -> str:
        text = self.kg.text_of_entity(entity)
        if self.base == WORDNET:
            return _split_name_definition(text)[0]
        return text

    def _definition_clause(self, entity: int) -> str:
        name, definition = _split_name_definition(self.kg.text_of_entity(entity))
        if definition is None:
            return ""
        return f"{name} : {definition}. "

    def _template_for(self, relation: int) -> AlignedTemplate | None:
        if self.scheme != ALIGNED:
            return None
        return self.aligned.get(self.kg.relation_labels[relation])

    def statement(self, triple: Triple) -> str:
        """Single-sentence fact form, used for BM25 documents, alignment
        prompts and score-mode turns."""
        tmpl = self._template_for(triple.relation)
        if tmpl is not None:
            return tmpl.substitute(self.entity_name(triple.head), self.entity_name(triple.tail))
        phrase = self.relation_phrase(triple.relation)
        if self.base == WORDNET:
            head, tail = self.entity_name(triple.head), self.entity_name(triple.tail)
            defs = self._definition_clause(triple.tail) + self._definition_clause(triple.head)
            return f"{defs}{head} be {phrase} of {tail}."
        head, tail = self.entity_name(triple.head), self.entity_name(triple.tail)
        return f"{tail} is the {phrase} of {head}"

    def demonstration(self, triple: Triple) -> str:
        """In-context example form. The hierarchical scheme uses the
        cloze-and-answer shape; the others read as plain statements."""
        tmpl = self._template_for(triple.relation)
        if tmpl is not None or self.base == WORDNET:
            return self.statement(triple)
        head, tail = self.entity_name(triple.head), self.entity_name(triple.tail)
        phrase = self.relation_phrase(triple.relation)
        return (
            f"predict the tail entity {MASK} from the given ({head},{phrase} of , {MASK}) "
            f'by completing the sentence "what is the {phrase} of {head}? The answer is ". '
            f"The answer is {tail}, so the {MASK} is {tail}."
        )

    def query_statement(self, query: Query) -> str:
        """Statement form of the query with [MASK] in the missing slot."""
        if query.direction == TAIL_MISSING:
            probe = Triple(query.anchor, query.relation, query.answer)
            head_text, tail_text = self.entity_name(probe.head), MASK
        else:
            probe = Triple(query.answer, query.relation, query.anchor)
            head_text, tail_text = MASK, self.entity_name(probe.tail)
        tmpl = self._template_for(query.relation)
        if tmpl is not None:
            return tmpl.substitute(head_text, tail_text)
        phrase = self.relation_phrase(query.relation)
        if self.base == WORDNET:
            return f"{head_text} be {phrase} of {tail_text}."
        return f"{tail_text} is the {phrase} of {head_text}"

    def query_text(self, query: Query) -> str:
        """Full cloze question with the completion instruction."""
        phrase = self.relation_phrase(query.relation)
        anchor = self.entity_name(query.anchor)
        tmpl = self._template_for(query.relation)
        if tmpl is not None:
            slot = "tail" if query.direction == TAIL_MISSING else "head"
            cloze = self.query_statement(query)
            return (
                f"predict the {slot} entity {MASK} from the given statement "
                f'"{cloze}" by filling in {MASK}. The answer is ".'
            )
        if self.base == WORDNET:
            if query.direction == TAIL_MISSING:
                return (
                    f"predict the tail entity {MASK} from the given ({anchor},{phrase}, {MASK}) "
                    f'by completing the sentence "what do {anchor} be {phrase} of? The answer is ".'
                )
            return (
                f"predict the head entity {MASK} from the given ({MASK},{phrase}, {anchor}) "
                f'by completing the sentence "what be {phrase} of {anchor}? The answer is ".'
            )
        if query.direction == TAIL_MISSING:
            return (
                f"predict the tail entity {MASK} from the given ({anchor},{phrase} of , {MASK}) "
                f'by completing the sentence "what is the {phrase} of {anchor}? The answer is ".'
            )
        return (
            f"predict the head entity {MASK} from the given ({MASK},{phrase} of , {anchor}) "
            f'by completing the sentence "{anchor} is the {phrase} of what? The answer is ".'
        )

    def scoring_topic(self, query: Query) -> str:
        """Short topic line for score-mode conversations."""
        phrase = self.relation_phrase(query.relation)
        anchor = self.entity_name(query.anchor)
        if query.direction == HEAD_MISSING:
            topic = f"{phrase} of {anchor}"
        else:
            topic = f"what {anchor} be {phrase} of"
        clause = self._definition_clause(query.anchor) if self.base == WORDNET else ""
        return f"The goal statements are about {topic}. {clause}".rstrip() + " "

    def completed_statement(self, query: Query, candidate: int) -> str:
        """Statement with ``candidate`` filling the missing slot."""
        if query.direction == TAIL_MISSING:
            return self.statement(Triple(query.anchor, query.relation, candidate))
        return self.statement(Triple(candidate, query.relation, query.anchor))


def verbalize_triple(
    triple: Triple,
    kg: KnowledgeGraph,
    scheme: str = FREEBASE,
    aligned: dict[str, AlignedTemplate] | None = None,
) -> str:
    return Verbalizer(kg, scheme, aligned).demonstration(triple)


def verbalize_query(
    query: Query,
    kg: KnowledgeGraph,
    scheme: str = FREEBASE,
    aligned: dict[str, AlignedTemplate] | None = None,
) -> str:
    return Verbalizer(kg, scheme, aligned).query_text(query)


_WS = re.compile(r"\s+")


def candidate_labels(verbalizer: Verbalizer, candidates: list[int]) -> list[str]:
    """Surface forms for the candidate list. When two candidates share a
    surface form, the raw entity label is appended to keep them apart."""
    names = [verbalizer.entity_name(c) for c in candidates]
    norm = [_WS.sub(" ", n).strip().lower() for n in names]
    labels = []
    for i, c in enumerate(candidates):
        if norm.count(norm[i]) > 1:
            labels.append(f"{names[i]} ({verbalizer.kg.entity_labels[c]})")
        else:
            labels.append(names[i])
    return labels
