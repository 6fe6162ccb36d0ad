"""Random AMR graphs for property tests."""
import random
from collections import OrderedDict
from itertools import permutations

from hypothesis import strategies as st

from stackamr.amr import AmrGraph, to_triples
from stackamr.smatch import normalize_triples

CONCEPTS = ["want-01", "want-02", "boy", "girl", "go-02", "city", "name", "and"]
ROLES = ["ARG0", "ARG1", "ARG2", "mod", "op1", "name"]


def random_graph(rng: random.Random, max_nodes: int = 6, concepts=CONCEPTS) -> AmrGraph:
    n = rng.randint(1, max_nodes)
    vars_ = [f"v{k}" for k in range(n)]
    nodes = [(v, rng.choice(concepts)) for v in vars_]
    edges = set()
    for i in range(1, n):
        edges.add((vars_[rng.randrange(i)], rng.choice(ROLES), vars_[i]))
    for _ in range(rng.randint(0, n)):
        i, j = sorted(rng.sample(range(n), 2)) if n > 1 else (0, 0)
        if i != j:
            edges.add((vars_[i], rng.choice(ROLES), vars_[j]))
    attrs = set()
    for v in vars_:
        r = rng.random()
        if r < 0.15:
            attrs.add((v, "polarity", "-"))
        elif r < 0.25:
            attrs.add((v, "op1", rng.choice(["Paris", "Obama"])))
    return AmrGraph(nodes, sorted(edges), sorted(attrs), vars_[0], OrderedDict())


def perturb(rng: random.Random, g: AmrGraph) -> AmrGraph:
    """Copy of ``g`` with renamed variables and a few local edits."""
    names = {v: f"p{k}" for k, v in enumerate(rng.sample(g.variables, len(g.variables)))}
    nodes = [(names[v], rng.choice(CONCEPTS) if rng.random() < 0.2 else c) for v, c in g.nodes]
    edges = [(names[s], rng.choice(ROLES) if rng.random() < 0.2 else r, names[d])
             for s, r, d in g.edges if rng.random() > 0.1 or d == g.variables[-1]]
    attrs = [(names[v], r, x) for v, r, x in g.attributes if rng.random() > 0.2]
    h = AmrGraph(nodes, edges, attrs, names[g.root], OrderedDict())
    # keep every node reachable: hang orphans off the root
    reach = h.reachable()
    for v, _ in h.nodes:
        if v not in reach:
            h.edges.append((h.root, "ARG1", v))
            reach = h.reachable()
    return h


def random_pair(rng: random.Random, max_nodes: int = 6):
    gold = random_graph(rng, max_nodes)
    if rng.random() < 0.5:
        return perturb(rng, gold), gold
    return random_graph(rng, max_nodes), gold


def brute_force_matches(pred: AmrGraph, gold: AmrGraph) -> int:
    """Best triple overlap over every injection of the smaller variable set.

    Written independently of the scorer: builds the mapped triple set and
    intersects it with the gold set directly.
    """
    P = normalize_triples(to_triples(pred))
    G = normalize_triples(to_triples(gold))
    pv = sorted({v for v, _ in P.instances})
    gv = sorted({v for v, _ in G.instances})
    gold_all = set(G.instances) | set(G.relations) | set(G.attributes)
    swap = len(pv) > len(gv)
    small, big = (gv, pv) if swap else (pv, gv)
    best = 0
    for image in permutations(big + [None] * len(small), len(small)):
        m = dict(zip(small, image))
        if swap:
            # m maps gold vars to pred vars; invert
            m = {p: g for g, p in m.items() if p is not None}
        mapped = set()
        for v, c in P.instances:
            if m.get(v) is not None:
                mapped.add((m[v], c))
        for s, r, d in P.relations:
            if m.get(s) is not None and m.get(d) is not None:
                mapped.add((m[s], r, m[d]))
        for v, r, x in P.attributes:
            if m.get(v) is not None:
                mapped.add((m[v], r, x))
        best = max(best, len(mapped & gold_all))
    return best


@st.composite
def dags(draw, max_nodes=12):
    """Hypothesis strategy: rooted DAGs with reentrancies and attributes."""
    seed = draw(st.integers(0, 2 ** 32 - 1))
    n = draw(st.integers(1, max_nodes))
    return random_graph(random.Random(seed), n)
