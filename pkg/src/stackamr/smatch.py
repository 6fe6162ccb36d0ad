"""Smatch: triple-overlap F1 under the best variable mapping.

Two searches are provided: random-restart hill climbing (what corpus scoring
and the RL reward use) and an exhaustive branch-and-bound search used as an
oracle for small graphs.
"""
from __future__ import annotations

import random
import re
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from .amr import TOP, AmrGraph, TripleSet, strip_sense, to_triples

METRICS = ("smatch", "unlabeled", "no_wsd", "named_entities", "wikification",
           "negations", "concepts", "reentrancies", "srl")
METRIC_TITLES = {
    "smatch": "Smatch", "unlabeled": "Unlabeled", "no_wsd": "No WSD",
    "named_entities": "Named Entities", "wikification": "Wikification",
    "negations": "Negations", "concepts": "Concepts",
    "reentrancies": "Reentrancies", "srl": "SRL",
}

EXACT_LIMIT = 8
_NON_INVERTIBLE = {"consist-of", "prep-out-of", "prep-on-behalf-of"}
_ARG_RE = re.compile(r"^ARG\d+$")


class TooLarge(ValueError):
    pass


def f_score(matched: int, n_pred: int, n_gold: int) -> Tuple[float, float, float]:
    """Precision, recall and F1. Two empty sides agree perfectly."""
    if n_pred == 0 and n_gold == 0:
        return 1.0, 1.0, 1.0
    p = matched / n_pred if n_pred else 0.0
    r = matched / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class MappingResult:
    mapping: Dict[str, str]
    matched: int
    n_pred: int
    n_gold: int
    precision: float = field(init=False)
    recall: float = field(init=False)
    f1: float = field(init=False)

    def __post_init__(self):
        self.precision, self.recall, self.f1 = f_score(self.matched, self.n_pred, self.n_gold)


def normalize_triples(ts: TripleSet) -> TripleSet:
    """Rewrite ``R-of(a, b)`` relations as ``R(b, a)``."""
    rels = set()
    for s, r, d in ts.relations:
        if r.endswith("-of") and r not in _NON_INVERTIBLE:
            rels.add((d, r[:-3], s))
        else:
            rels.add((s, r, d))
    return TripleSet(ts.instances, frozenset(rels), ts.attributes)


class _Problem:
    """Weights of the mapping objective between two triple sets."""

    def __init__(self, pred: TripleSet, gold: TripleSet):
        self.pvars = _variables(pred)
        self.gvars = _variables(gold)
        self.n_pred = len(pred)
        self.n_gold = len(gold)
        gidx = {v: j for j, v in enumerate(self.gvars)}
        pidx = {v: i for i, v in enumerate(self.pvars)}
        P, G = len(self.pvars), len(self.gvars)

        gconcept: Dict[int, str] = {gidx[v]: c for v, c in gold.instances}
        gattrs: Dict[int, set] = {}
        for v, r, val in gold.attributes:
            gattrs.setdefault(gidx[v], set()).add((r, val))
        node_w = [[0] * G for _ in range(P)]
        for i, v in enumerate(self.pvars):
            pc = [c for vv, c in pred.instances if vv == v]
            pa = {(r, val) for vv, r, val in pred.attributes if vv == v}
            for j in range(G):
                w = len(pa & gattrs.get(j, set()))
                if pc and gconcept.get(j) in pc:
                    w += 1
                node_w[i][j] = w
        self.node_w = node_w
        self.max_node = [max(row) if row else 0 for row in node_w]
        self.gold_rels = {(gidx[s], r, gidx[d]) for s, r, d in gold.relations}
        self.pred_rels = [(pidx[s], r, pidx[d]) for s, r, d in sorted(pred.relations)]
        self.incident: List[List[int]] = [[] for _ in range(P)]
        for k, (s, _, d) in enumerate(self.pred_rels):
            self.incident[s].append(k)
            if d != s:
                self.incident[d].append(k)

    def rel_term(self, k: int, m: List[int]) -> int:
        s, r, d = self.pred_rels[k]
        ms, md = m[s], m[d]
        if ms < 0 or md < 0:
            return 0
        return 1 if (ms, r, md) in self.gold_rels else 0

    def total(self, m: List[int]) -> int:
        score = sum(self.node_w[i][j] for i, j in enumerate(m) if j >= 0)
        return score + sum(self.rel_term(k, m) for k in range(len(self.pred_rels)))

    def local(self, vars_: Sequence[int], m: List[int]) -> int:
        score = 0
        rels = set()
        for i in vars_:
            if m[i] >= 0:
                score += self.node_w[i][m[i]]
            rels.update(self.incident[i])
        return score + sum(self.rel_term(k, m) for k in rels)

    def result(self, m: List[int], matched: int) -> MappingResult:
        mapping = {self.pvars[i]: self.gvars[j] for i, j in enumerate(m) if j >= 0}
        return MappingResult(mapping, matched, self.n_pred, self.n_gold)


def _variables(ts: TripleSet) -> List[str]:
    vs = {v for v, _ in ts.instances}
    vs.update(v for v, _, _ in ts.attributes)
    for s, _, d in ts.relations:
        vs.add(s)
        vs.add(d)
    return sorted(vs)


def _greedy_init(prob: _Problem) -> List[int]:
    used = set()
    m = []
    for i in range(len(prob.pvars)):
        choice = -1
        for j, w in enumerate(prob.node_w[i]):
            if w > 0 and j not in used:
                choice = j
                break
        if choice >= 0:
            used.add(choice)
        m.append(choice)
    return m


def _random_init(prob: _Problem, rng: random.Random) -> List[int]:
    G = list(range(len(prob.gvars)))
    rng.shuffle(G)
    return [G[i] if i < len(G) else -1 for i in range(len(prob.pvars))]


def _climb(prob: _Problem, m: List[int]) -> Tuple[List[int], int]:
    P, G = len(prob.pvars), len(prob.gvars)
    score = prob.total(m)
    while True:
        best_gain, best_move = 0, None
        owner = {j: i for i, j in enumerate(m) if j >= 0}
        for i in range(P):
            before = prob.local((i,), m)
            old = m[i]
            for j in range(G):
                if j == old or j in owner:
                    continue
                m[i] = j
                gain = prob.local((i,), m) - before
                if gain > best_gain:
                    best_gain, best_move = gain, ("move", i, j)
            m[i] = old
            for k in range(i + 1, P):
                if m[k] == old:
                    continue
                before2 = prob.local((i, k), m)
                m[i], m[k] = m[k], m[i]
                gain = prob.local((i, k), m) - before2
                m[i], m[k] = m[k], m[i]
                if gain > best_gain:
                    best_gain, best_move = gain, ("swap", i, k)
        if best_move is None:
            return m, score
        kind, a, b = best_move
        if kind == "move":
            m[a] = b
        else:
            m[a], m[b] = m[b], m[a]
        score += best_gain


def smatch_hill_climb(pred: TripleSet, gold: TripleSet, restarts: int = 4,
                      seed: int = 0) -> MappingResult:
    """Best mapping over ``restarts`` hill-climbing runs.

    The first run starts from a greedy concept-match mapping, the rest from
    random injections drawn from ``random.Random(seed)``.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    prob = _Problem(normalize_triples(pred), normalize_triples(gold))
    rng = random.Random(seed)
    best_m, best = None, -1
    for run in range(restarts):
        start = _greedy_init(prob) if run == 0 else _random_init(prob, rng)
        m, score = _climb(prob, start)
        if score > best:
            best_m, best = list(m), score
    return prob.result(best_m, best)


def smatch_exact(pred: TripleSet, gold: TripleSet) -> MappingResult:
    """Globally optimal mapping by exhaustive branch-and-bound search."""
    pred_n, gold_n = normalize_triples(pred), normalize_triples(gold)
    n_p, n_g = len(_variables(pred_n)), len(_variables(gold_n))
    if min(n_p, n_g) > EXACT_LIMIT:
        raise TooLarge(f"exact Smatch limited to {EXACT_LIMIT} variables on the smaller side")
    if n_p > n_g:
        flipped = _exact(_Problem(gold_n, pred_n))
        mapping = {g: p for p, g in flipped.mapping.items()}
        return MappingResult(mapping, flipped.matched, flipped.n_gold, flipped.n_pred)
    return _exact(_Problem(pred_n, gold_n))


def _exact(prob: _Problem) -> MappingResult:
    P, G = len(prob.pvars), len(prob.gvars)
    # relations become scorable at the depth of their later endpoint
    ready: List[List[int]] = [[] for _ in range(P)]
    for k, (s, _, d) in enumerate(prob.pred_rels):
        ready[max(s, d)].append(k)
    rest_bound = [0] * (P + 1)
    for t in range(P - 1, -1, -1):
        rest_bound[t] = rest_bound[t + 1] + prob.max_node[t] + len(ready[t])
    best = [-1, None]
    m = [-1] * P
    used = [False] * G

    def dfs(t: int, score: int) -> None:
        if score + rest_bound[t] <= best[0]:
            return
        if t == P:
            best[0], best[1] = score, list(m)
            return
        for j in list(range(G)) + [-1]:
            if j >= 0 and used[j]:
                continue
            m[t] = j
            gain = prob.node_w[t][j] if j >= 0 else 0
            gain += sum(prob.rel_term(k, m) for k in ready[t])
            if j >= 0:
                used[j] = True
            dfs(t + 1, score + gain)
            if j >= 0:
                used[j] = False
            m[t] = -1

    dfs(0, 0)
    return prob.result(best[1], best[0])


# --------------------------------------------------------------------------
# fine-grained breakdown


def _restrict(ts: TripleSet, relations, attributes) -> TripleSet:
    vs = set()
    for s, _, d in relations:
        vs.update((s, d))
    vs.update(v for v, _, _ in attributes)
    insts = frozenset((v, c) for v, c in ts.instances if v in vs)
    return TripleSet(insts, frozenset(relations), frozenset(attributes))


def metric_views(g: AmrGraph) -> Dict[str, object]:
    """Per-metric transformed triple sets (a Counter for ``concepts``)."""
    ts = normalize_triples(to_triples(g))
    views: Dict[str, object] = {"smatch": ts}
    views["unlabeled"] = TripleSet(
        ts.instances, frozenset((s, "rel", d) for s, _, d in ts.relations), ts.attributes)
    views["no_wsd"] = TripleSet(
        frozenset((v, strip_sense(c)) for v, c in ts.instances), ts.relations,
        frozenset((v, r, strip_sense(val) if r == TOP else val) for v, r, val in ts.attributes))
    name_rels = {(s, r, d) for s, r, d in ts.relations if r == "name"}
    name_nodes = {d for _, _, d in name_rels}
    views["named_entities"] = _restrict(
        ts, name_rels, {a for a in ts.attributes if a[0] in name_nodes and a[1] != TOP})
    # wiki triples are scored without their instances
    views["wikification"] = TripleSet(frozenset(), frozenset(),
                                      frozenset(a for a in ts.attributes if a[1] == "wiki"))
    views["negations"] = _restrict(ts, (), {a for a in ts.attributes if a[1] == "polarity"})
    views["concepts"] = Counter(c for _, c in ts.instances)
    indeg = Counter(d for _, _, d in ts.relations)
    views["reentrancies"] = _restrict(ts, {t for t in ts.relations if indeg[t[2]] > 1}, ())
    views["srl"] = _restrict(ts, {t for t in ts.relations if _ARG_RE.match(t[1])}, ())
    return views


def _bag_counts(pred: Counter, gold: Counter) -> Tuple[int, int, int]:
    return sum((pred & gold).values()), sum(pred.values()), sum(gold.values())


def breakdown_counts(pred: AmrGraph, gold: AmrGraph, restarts: int = 4,
                     seed: int = 0) -> Dict[str, Tuple[int, int, int]]:
    """``(matched, n_pred, n_gold)`` per metric for one graph pair."""
    pv, gv = metric_views(pred), metric_views(gold)
    out = {}
    for name in METRICS:
        if name == "concepts":
            out[name] = _bag_counts(pv[name], gv[name])
            continue
        r = smatch_hill_climb(pv[name], gv[name], restarts, seed)
        out[name] = (r.matched, r.n_pred, r.n_gold)
    return out


@dataclass
class MetricSuite:
    smatch: float
    unlabeled: float
    no_wsd: float
    named_entities: float
    wikification: float
    negations: float
    concepts: float
    reentrancies: float
    srl: float

    @classmethod
    def from_counts(cls, counts: Dict[str, Tuple[int, int, int]]) -> "MetricSuite":
        return cls(**{k: f_score(*counts[k])[2] for k in METRICS})

    def as_dict(self) -> Dict[str, float]:
        return {k: getattr(self, k) for k in METRICS}


def metric_breakdown(pred: AmrGraph, gold: AmrGraph, restarts: int = 4,
                     seed: int = 0) -> MetricSuite:
    return MetricSuite.from_counts(breakdown_counts(pred, gold, restarts, seed))


def sentence_smatch(pred: AmrGraph, gold: AmrGraph, restarts: int = 4, seed: int = 0) -> float:
    return smatch_hill_climb(to_triples(pred), to_triples(gold), restarts, seed).f1


def _pair_counts(args):
    pred, gold, restarts, seed = args
    return breakdown_counts(pred, gold, restarts, seed)


def corpus_counts(preds: Sequence[AmrGraph], golds: Sequence[AmrGraph], restarts: int = 4,
                  seed: int = 0, jobs: int = 1) -> Dict[str, Tuple[int, int, int]]:
    """Micro-averaged counts: matched and sizes summed over sentence pairs."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predicted graphs vs {len(golds)} gold graphs")
    work = [(p, g, restarts, seed + k) for k, (p, g) in enumerate(zip(preds, golds))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_pair_counts, work, chunksize=8))
    else:
        parts = [_pair_counts(w) for w in work]
    totals = {k: [0, 0, 0] for k in METRICS}
    for part in parts:
        for k, (m, p, g) in part.items():
            totals[k][0] += m
            totals[k][1] += p
            totals[k][2] += g
    return {k: tuple(v) for k, v in totals.items()}


def corpus_smatch(preds: Sequence[AmrGraph], golds: Sequence[AmrGraph], restarts: int = 4,
                  seed: int = 0) -> float:
    matched = n_p = n_g = 0
    for k, (p, g) in enumerate(zip(preds, golds)):
        r = smatch_hill_climb(to_triples(p), to_triples(g), restarts, seed + k)
        matched += r.matched
        n_p += r.n_pred
        n_g += r.n_gold
    return f_score(matched, n_p, n_g)[2]


def format_table(counts: Dict[str, Tuple[int, int, int]], csv: bool = False) -> str:
    """One row per metric; CSV carries 4 decimals, text rounds for display."""
    lines = []
    if csv:
        lines.append("metric,precision,recall,f1")
        for k in METRICS:
            p, r, f = f_score(*counts[k])
            lines.append(f"{METRIC_TITLES[k]},{p:.4f},{r:.4f},{f:.4f}")
    else:
        for k in METRICS:
            p, r, f = f_score(*counts[k])
            lines.append(f"{METRIC_TITLES[k]:<16} P {100 * p:5.1f}  R {100 * r:5.1f}  F {100 * f:5.1f}")
    return "\n".join(lines) + "\n"
