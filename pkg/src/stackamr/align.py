"""Word-to-graph alignments: aligner file readers and the three-step merge.

Step 1 takes the SEM (ISI aligner) alignments, step 2 percolates child
alignments up to unaligned parents, step 3 fills remaining gaps from JAMR and
percolates once more.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

from .amr import AmrGraph, strip_sense

SEM = "SEM"
PERCOLATED = "PERCOLATED"
JAMR = "JAMR"
SOURCES = (SEM, PERCOLATED, JAMR)


class AlignmentError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BadPath(AlignmentError):
    pass


class BadSpan(AlignmentError):
    pass


class UnknownNode(AlignmentError):
    pass


@dataclass(frozen=True)
class Span:
    start: int
    end: int  # inclusive
    source: str

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise BadSpan(f"invalid span {self.start}..{self.end}")


class AlignmentMap(dict):
    """``node-id -> Span``; at most one entry per node."""

    def aligned(self) -> int:
        return len(self)

    def tokens_of(self, var: str) -> Optional[Tuple[int, int]]:
        span = self.get(var)
        return None if span is None else (span.start, span.end)

    def check_bounds(self, n_tokens: int) -> None:
        for var, span in self.items():
            if span.end >= n_tokens:
                raise BadSpan(f"span {span.start}..{span.end} of node {var!r} "
                              f"exceeds sentence length {n_tokens}")


# --------------------------------------------------------------------------
# node paths


def resolve_path(graph: AmrGraph, indices: List[int]) -> str:
    """Follow child indices (0-based, counted over textual branches) from the root.

    A path ending on an attribute constant resolves to the node carrying it.
    """
    var = graph.root
    for depth, k in enumerate(indices):
        kids = graph.children(var)
        if k < 0 or k >= len(kids):
            raise BadPath(f"no branch {k} below {var!r}")
        role, target, is_attr = kids[k]
        if is_attr:
            if depth != len(indices) - 1:
                raise BadPath(f"path continues below constant {target!r}")
            return var
        var = target
    return var


def _paths(graph: AmrGraph) -> Dict[str, str]:
    """ISI-style 1-based dotted path of every node's defining occurrence."""
    # preorder: the first visit of a variable is its defining occurrence
    out: Dict[str, str] = {}

    def visit(var: str, path: str) -> None:
        out[var] = path
        for k, (_, target, is_attr) in enumerate(graph.children(var), start=1):
            if not is_attr and target not in out:
                visit(target, f"{path}.{k}")

    if graph.root is not None:
        visit(graph.root, "1")
    return out


def node_paths(graph: AmrGraph, base: int = 1) -> Dict[str, str]:
    paths = _paths(graph)
    if base == 1:
        return paths
    return {v: ".".join(str(int(p) - 1) for p in path.split(".")) for v, path in paths.items()}


def _parse_path(text: str, base: int, line: Optional[int]) -> List[int]:
    try:
        parts = [int(p) for p in text.split(".")]
    except ValueError:
        raise BadPath(f"malformed node path {text!r}", line) from None
    if not parts or parts[0] != base:
        raise BadPath(f"node path {text!r} must start at the root ({base})", line)
    return [p - base for p in parts[1:]]


def _widen(amap: Dict[str, Tuple[int, int]], var: str, start: int, end: int) -> None:
    if var in amap:
        s, e = amap[var]
        amap[var] = (min(s, start), max(e, end))
    else:
        amap[var] = (start, end)


def read_isi_alignments(text: str, graph: AmrGraph, n_tokens: Optional[int] = None,
                        line: Optional[int] = None, source: str = SEM) -> AlignmentMap:
    """Read a line of space-separated ``tokidx-nodepath`` pairs (paths 1-based).

    Role alignments (paths ending in ``.r``) are skipped. A node aligned to
    several tokens gets the covering span.
    """
    spans: Dict[str, Tuple[int, int]] = {}
    for item in text.split():
        tok, sep, path = item.partition("-")
        if not sep or not tok.isdigit():
            raise BadSpan(f"malformed alignment item {item!r}", line)
        if path.endswith(".r"):
            continue
        t = int(tok)
        if n_tokens is not None and t >= n_tokens:
            raise BadSpan(f"token {t} out of range (sentence has {n_tokens})", line)
        try:
            var = resolve_path(graph, _parse_path(path, 1, line))
        except BadPath as exc:
            raise BadPath(f"{item!r}: {exc}", line) from None
        _widen(spans, var, t, t)
    return AlignmentMap({v: Span(s, e, source) for v, (s, e) in spans.items()})


_JAMR_ITEM = re.compile(r"^(\d+)-(\d+)\|(.+)$")


def read_jamr_alignments(text: str, graph: AmrGraph, n_tokens: Optional[int] = None,
                         line: Optional[int] = None, source: str = JAMR) -> AlignmentMap:
    """Read JAMR items ``start-end|path+path`` (end exclusive, paths 0-based).

    ``text`` may be a whole ``# ::alignments`` line; trailing ``::key value``
    annotations are ignored.
    """
    body = text.strip()
    if body.startswith("#"):
        body = body.lstrip("#").strip()
    if body.startswith("::alignments"):
        body = body[len("::alignments"):]
    body = body.split("::", 1)[0]
    spans: Dict[str, Tuple[int, int]] = {}
    for item in body.split():
        m = _JAMR_ITEM.match(item)
        if m is None:
            raise BadSpan(f"malformed alignment item {item!r}", line)
        start, stop = int(m.group(1)), int(m.group(2))
        if stop <= start:
            raise BadSpan(f"empty span in {item!r}", line)
        if n_tokens is not None and stop > n_tokens:
            raise BadSpan(f"span {start}-{stop} exceeds sentence length {n_tokens}", line)
        for path in m.group(3).split("+"):
            try:
                var = resolve_path(graph, _parse_path(path, 0, line))
            except BadPath as exc:
                raise BadPath(f"{item!r}: {exc}", line) from None
            _widen(spans, var, start, stop - 1)
    return AlignmentMap({v: Span(s, e, source) for v, (s, e) in spans.items()})


def format_alignments(graph: AmrGraph, amap: AlignmentMap) -> Tuple[str, str]:
    """``(alignments, sources)`` metadata values in JAMR item syntax."""
    paths = node_paths(graph, base=0)
    groups: Dict[Tuple[int, int], List[str]] = {}
    for var, _ in graph.nodes:
        span = amap.get(var)
        if span is not None and var in paths:
            groups.setdefault((span.start, span.end), []).append(paths[var])
    items = [f"{s}-{e + 1}|{'+'.join(ps)}" for (s, e), ps in sorted(groups.items())]
    sources = [f"{paths[v]}={amap[v].source}" for v, _ in graph.nodes if v in amap and v in paths]
    return " ".join(items), " ".join(sources)


def alignments_from_metadata(graph: AmrGraph, n_tokens: Optional[int] = None) -> AlignmentMap:
    """Rebuild an alignment map from ``# ::alignments`` (+ ``::alignment-sources``)."""
    text = graph.metadata.get("alignments", "")
    amap = read_jamr_alignments(text, graph, n_tokens)
    srcs = graph.metadata.get("alignment-sources")
    if srcs:
        by_path = {}
        for item in srcs.split():
            path, _, src = item.partition("=")
            by_path[path] = src
        paths = node_paths(graph, base=0)
        for var in list(amap):
            src = by_path.get(paths.get(var, ""))
            if src in SOURCES:
                span = amap[var]
                amap[var] = Span(span.start, span.end, src)
    return amap


# --------------------------------------------------------------------------
# merging


def _role_rank(concept: str, role: str) -> Optional[int]:
    """Preference of a child reached through ``role`` (lower wins, None = never)."""
    base = strip_sense(concept)
    if role == "name":
        return 0
    if role == "unit" and concept.endswith("-quantity"):
        return 1
    if role == "ARG2" and base in ("have-org-role", "rate-entity"):
        return 2
    if role == "mod":
        return None
    return 3


def _topological_bottom_up(graph: AmrGraph) -> List[str]:
    """Children before parents (reverse topological order over edges)."""
    succ: Dict[str, List[str]] = {v: [] for v, _ in graph.nodes}
    for s, _, d in graph.edges:
        succ[s].append(d)
    order: List[str] = []
    state: Dict[str, int] = {}
    for start, _ in graph.nodes:
        if start in state:
            continue
        stack: List[Tuple[str, Iterator[str]]] = [(start, iter(succ[start]))]
        state[start] = 1
        while stack:
            v, it = stack[-1]
            for d in it:
                if d not in state:
                    state[d] = 1
                    stack.append((d, iter(succ[d])))
                    break
            else:
                state[v] = 2
                order.append(v)
                stack.pop()
    return order


def percolate(graph: AmrGraph, amap: AlignmentMap) -> AlignmentMap:
    """Fill unaligned nodes from their children until nothing changes."""
    out = AlignmentMap(amap)
    concepts = graph.concepts()
    order = _topological_bottom_up(graph)
    changed = True
    while changed:
        changed = False
        for var in order:
            if var in out:
                continue
            best = None
            for role, child, is_attr in graph.children(var):
                if is_attr or child not in out:
                    continue
                rank = _role_rank(concepts[var], role)
                if rank is None:
                    continue
                span = out[child]
                key = (rank, span.start, span.end, child)
                if best is None or key < best[0]:
                    best = (key, span)
            if best is not None:
                span = best[1]
                out[var] = Span(span.start, span.end, PERCOLATED)
                changed = True
    return out


def _check_known(graph: AmrGraph, amap: AlignmentMap, label: str) -> None:
    known = set(graph.variables)
    for var in amap:
        if var not in known:
            raise UnknownNode(f"{label} alignment refers to unknown node {var!r}")


def merge_steps(graph: AmrGraph, sem: AlignmentMap, jamr: AlignmentMap) -> List[AlignmentMap]:
    """The map after each of the three steps."""
    _check_known(graph, sem, "SEM")
    _check_known(graph, jamr, "JAMR")
    step1 = AlignmentMap(sem)
    step2 = percolate(graph, step1)
    step3 = AlignmentMap(step2)
    for var, _ in graph.nodes:
        if var not in step3 and var in jamr:
            span = jamr[var]
            step3[var] = Span(span.start, span.end, JAMR)
    step3 = percolate(graph, step3)
    return [step1, step2, step3]


def merge_alignments(graph: AmrGraph, sem: AlignmentMap, jamr: AlignmentMap) -> AlignmentMap:
    return merge_steps(graph, sem, jamr)[-1]
