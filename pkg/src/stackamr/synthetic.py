"""Deterministic toy corpora with gold token alignments.

Sentences come from a handful of templates (transitive clauses, control verbs
with a reentrant subject, negation, named entities, adjectival modifiers) so
that every graph shape the transition system supports shows up.
"""
from __future__ import annotations

import random
from collections import OrderedDict
from typing import Dict, List, Optional, Tuple

from .align import SEM, AlignmentMap, Span, format_alignments, node_paths
from .amr import AmrGraph, parse_penman, serialize_penman

NOUNS = ["boy", "girl", "cat", "dog", "teacher", "doctor", "city", "book", "car", "bird"]
VERBS = [("sees", "see-01"), ("likes", "like-01"), ("reads", "read-01"), ("finds", "find-01"),
         ("helps", "help-01"), ("follows", "follow-01")]
BARE_VERBS = {"see-01": "see", "like-01": "like", "read-01": "read", "find-01": "find",
              "help-01": "help", "follow-01": "follow"}
CONTROL = [("wants", "want-01"), ("tries", "try-01"), ("needs", "need-01")]
ADJECTIVES = ["big", "small", "old", "young", "red"]
NAMES = [("Barack", "Obama"), ("Ada", "Lovelace"), ("Alan", "Turing"), ("Marie", "Curie")]
SINGLE_NAMES = ["Paris", "London", "Rome", "Berlin"]


class _Builder:
    def __init__(self):
        self.tokens: List[str] = []
        self.nodes: List[Tuple[str, str]] = []
        self.edges: List[Tuple[str, str, str]] = []
        self.attrs: List[Tuple[str, str, str]] = []
        self.spans: Dict[str, Tuple[int, int]] = {}
        self._used = set()

    def word(self, *ws: str) -> Tuple[int, int]:
        start = len(self.tokens)
        self.tokens.extend(ws)
        return start, len(self.tokens) - 1

    def node(self, concept: str, span: Optional[Tuple[int, int]]) -> str:
        base = concept[0]
        k = 1
        var = base
        while var in self._used:
            k += 1
            var = f"{base}{k}"
        self._used.add(var)
        self.nodes.append((var, concept))
        if span is not None:
            self.spans[var] = span
        return var

    def noun_phrase(self, rng: random.Random) -> str:
        self.word("the")
        adj = rng.choice(ADJECTIVES) if rng.random() < 0.3 else None
        if adj:
            aspan = self.word(adj)
        noun = rng.choice(NOUNS)
        v = self.node(noun, self.word(noun))
        if adj:
            self.edges.append((v, "mod", self.node(adj, aspan)))
        return v

    def entity(self, rng: random.Random) -> str:
        if rng.random() < 0.5:
            parts = rng.choice(NAMES)
            etype = "person"
        else:
            parts = (rng.choice(SINGLE_NAMES),)
            etype = "city"
        span = self.word(*parts)
        v = self.node(etype, span)
        n = self.node("name", span)
        self.edges.append((v, "name", n))
        for k, p in enumerate(parts, 1):
            self.attrs.append((n, f"op{k}", p))
        return v

    def argument(self, rng: random.Random) -> str:
        return self.entity(rng) if rng.random() < 0.25 else self.noun_phrase(rng)


def _sentence(rng: random.Random) -> _Builder:
    b = _Builder()
    kind = rng.randrange(4)
    subj = b.argument(rng)
    if kind == 0:
        form, concept = rng.choice(VERBS)
        v = b.node(concept, b.word(form))
        obj = b.argument(rng)
        b.edges += [(v, "ARG0", subj), (v, "ARG1", obj)]
    elif kind == 1:
        form, concept = rng.choice(CONTROL)
        c = b.node(concept, b.word(form))
        b.word("to")
        _, inner = rng.choice(VERBS)
        v = b.node(inner, b.word(BARE_VERBS[inner]))
        obj = b.argument(rng)
        b.edges += [(c, "ARG0", subj), (c, "ARG1", v), (v, "ARG0", subj), (v, "ARG1", obj)]
    elif kind == 2:
        b.word("does", "not")
        _, concept = rng.choice(VERBS)
        v = b.node(concept, b.word(BARE_VERBS[concept]))
        obj = b.argument(rng)
        b.edges += [(v, "ARG0", subj), (v, "ARG1", obj)]
        b.attrs.append((v, "polarity", "-"))
    else:
        form, concept = rng.choice(VERBS)
        v = b.node(concept, b.word(form))
        b.edges.append((v, "ARG0", subj))
    b.word(".")
    b.root = next(s for s, r, _ in b.edges if r.startswith("ARG"))
    return b


def generate(n: int = 60, seed: int = 0, unaligned: float = 0.0) -> List[AmrGraph]:
    """``n`` graphs carrying ``tok``/``snt``/``alignments`` metadata.

    ``unaligned`` is the fraction of nodes whose alignment is withheld.
    """
    rng = random.Random(seed)
    out = []
    for k in range(n):
        b = _sentence(rng)
        g = AmrGraph(b.nodes, b.edges, b.attrs, b.root, OrderedDict())
        # the written form fixes branch order, hence node paths
        g = parse_penman(serialize_penman(g))
        amap = AlignmentMap({v: Span(s, e, SEM) for v, (s, e) in b.spans.items()})
        if unaligned:
            for var, _ in g.nodes:
                if var in amap and rng.random() < unaligned:
                    del amap[var]
        items, _ = format_alignments(g, amap)
        g.metadata["id"] = f"synth.{seed}.{k}"
        g.metadata["snt"] = " ".join(b.tokens)
        g.metadata["tok"] = " ".join(b.tokens)
        g.metadata["alignments"] = items
        out.append(g)
    return out


def isi_line(graph: AmrGraph, amap: AlignmentMap) -> str:
    """``tokidx-path`` items (1-based paths) for every token of every span."""
    paths = node_paths(graph, base=1)
    items = []
    for var, _ in graph.nodes:
        span = amap.get(var)
        if span is None or var not in paths:
            continue
        for t in range(span.start, span.end + 1):
            items.append(f"{t}-{paths[var]}")
    return " ".join(items)


def split(graphs: List[AmrGraph], dev: int) -> Tuple[List[AmrGraph], List[AmrGraph]]:
    return graphs[:-dev], graphs[-dev:]


BUNDLE = {
    "train.amr": dict(n=60, seed=1),
    "dev.amr": dict(n=20, seed=2),
    "unaligned.amr": dict(n=60, seed=1, unaligned=0.1),
}


def aligner_views(graphs: List[AmrGraph], keep: float = 0.7, seed: int = 0) -> Tuple[str, str]:
    """Simulated aligner outputs: a partial ISI file and a complete JAMR file."""
    from .align import alignments_from_metadata
    rng = random.Random(seed)
    sem_lines, jamr_lines = [], []
    for g in graphs:
        amap = alignments_from_metadata(g)
        part = AlignmentMap({v: s for v, s in amap.items() if rng.random() < keep})
        sem_lines.append(isi_line(g, part) + "\n")
        jamr_lines.append(f"# ::alignments {g.metadata['alignments']}\n")
    return "".join(sem_lines), "".join(jamr_lines)


def write_bundle(directory: str) -> None:
    import os
    from .amr import format_corpus
    os.makedirs(directory, exist_ok=True)
    for name, kw in BUNDLE.items():
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            fh.write(format_corpus(generate(**kw)))
    raw = generate(**BUNDLE["train.amr"])[:20]
    sem, jamr = aligner_views(raw)
    for g in raw:
        for key in ("alignments",):
            g.metadata.pop(key, None)
    with open(os.path.join(directory, "raw.amr"), "w", encoding="utf-8") as fh:
        fh.write(format_corpus(raw))
    with open(os.path.join(directory, "raw.isi"), "w", encoding="utf-8") as fh:
        fh.write(sem)
    with open(os.path.join(directory, "raw.jamr"), "w", encoding="utf-8") as fh:
        fh.write(jamr)


def bundled_path(name: str) -> str:
    from importlib.resources import files
    return str(files("stackamr") / "data" / name)


def load_bundled(name: str) -> List[AmrGraph]:
    from .amr import load_corpus
    return load_corpus(bundled_path(name))


if __name__ == "__main__":
    import sys
    write_bundle(sys.argv[1] if len(sys.argv) > 1 else "data")
