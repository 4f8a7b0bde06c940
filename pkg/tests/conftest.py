import pytest

from kicrank.kg import KnowledgeGraph, Triple


def graph(train, valid=(), test=(), entities=None, relations=None, entity_text=None, relation_text=None):
    """Build a small in-memory graph from label triples like ('a', 'r', 'b')."""
    ents, rels = [], []

    def intern(label, pool):
        if label not in pool:
            pool.append(label)
        return pool.index(label)

    def convert(rows):
        out = []
        for h, r, t in rows:
            out.append(Triple(intern(h, ents), intern(r, rels), intern(t, ents)))
        return out

    train = convert(train)
    valid = convert(valid)
    test = convert(test)
    for label in entities or ():
        intern(label, ents)
    for label in relations or ():
        intern(label, rels)
    kg = KnowledgeGraph(
        entity_labels=ents,
        relation_labels=rels,
        train=train,
        valid=valid,
        test=test,
        entity_text={ents.index(k): v for k, v in (entity_text or {}).items()},
        relation_text={rels.index(k): v for k, v in (relation_text or {}).items()},
    )
    return kg


@pytest.fixture
def toy_kg():
    return graph(
        train=[("a", "r", "b"), ("c", "r", "d"), ("a", "s", "b"), ("c", "s", "a")],
        valid=[("b", "r", "c")],
        test=[("a", "r", "d")],
    )
