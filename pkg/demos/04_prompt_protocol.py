#!/usr/bin/env python3
"""The four-stage conversation and the response parsers.

Stage 1 states the assistant's responsibility, stage 2 the question and
how to treat the two example kinds, stage 3 repeats demonstration
batches while the token budget lasts, and stage 4 asks for the sorted
candidate list (or one 0-100 score per candidate in score mode).
"""

from kicrank import (
    Gateway,
    GatewayConfig,
    PromptConfig,
    Query,
    Verbalizer,
    build_conversation,
    build_demonstrations,
    parse_alignment_response,
    parse_score_response,
    parse_sort_response,
)
from kicrank.prompting import build_alignment_prompt
from kicrank.synth import cycle_kg

kg = cycle_kg(30, seed=1)
verb = Verbalizer(kg, "freebase-of-join")
rel = kg.relation_index["step3"]
query = Query("tail", kg.entity_index["e004"], rel, kg.entity_index["e007"])
demos = build_demonstrations(kg, query, verb, ordering_seed=9)
candidates = [kg.entity_index[f"e{i:03d}"] for i in (7, 12, 19, 3)]

config = PromptConfig(verbalizer=verb, token_budget=1400, demo_batch_size=2)
conv = build_conversation(query, demos, candidates, "sort", config)
print(f"conversation: {len(conv.messages)} messages, "
      f"{conv.estimated_tokens}/{config.token_budget} estimated tokens\n")
for m in conv.messages:
    text = m.text if len(m.text) < 160 else m.text[:157] + "..."
    print(f"[{m.role}] {text}\n")

# The identity backend echoes the candidate list in the instructed
# output syntax; real replies get the same defensive parse.
gateway = Gateway(GatewayConfig(backend="identity"))
reply = gateway.complete(conv)
print("identity backend reply:", reply)

labels = [kg.entity_labels[c] for c in candidates]
print("\nclean parse:     ", parse_sort_response(reply, labels).order)
messy = "Sure! The final order: [e012 | e012 | mystery | e007]"
out = parse_sort_response(messy, labels)
print("repaired parse:  ", out.order,
      f"(dropped {out.unknown_dropped}, appended {out.missing_appended})")
refusal = parse_sort_response("I cannot help with that.", labels)
print("hard failure:    ", refusal.hard_failure, "-> keep retriever order")

print("\nscore replies:", [parse_score_response(t).score for t in ("90.", "Score: 150", "7/10")])

# Text self-alignment: ask the model to restate a relation's meaning,
# then parse the fill into a reusable [H]/[T] template.
prompt = build_alignment_prompt(rel, demos.analogy_order, budget=600, verbalizer=verb)
print("\nalignment prompt:\n" + prompt.messages[0].text[:400], "...")
response = "it means A is the entity three steps after B."
template = parse_alignment_response(response, "step3")
print("\nparsed template:", template.template)
