"""AMR graph data model, PENMAN reading/writing and triple extraction."""
from __future__ import annotations

import re
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

Node = Tuple[str, str]
Edge = Tuple[str, str, str]
Attribute = Tuple[str, str, str]

TOP = "TOP"

_VARIABLE_RE = re.compile(r"^[a-z]\d*$|^[a-z]{2}\d+$")
_NUMBER_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")
_SENSE_RE = re.compile(r"-\d+$")


class PenmanError(ValueError):
    """Malformed PENMAN input. ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class UnbalancedParens(PenmanError):
    pass


class DuplicateVariable(PenmanError):
    pass


class DanglingReference(PenmanError):
    pass


class CyclicGraph(PenmanError):
    pass


@dataclass
class AmrGraph:
    """Rooted, labeled, directed graph.

    ``edges`` connect two variables; ``attributes`` attach a constant to a
    variable. ``branches`` optionally records, per variable, the textual order
    of its outgoing edges and attributes (needed to resolve aligner node paths).
    """

    nodes: List[Node]
    edges: List[Edge] = field(default_factory=list)
    attributes: List[Attribute] = field(default_factory=list)
    root: Optional[str] = None
    metadata: Dict[str, str] = field(default_factory=OrderedDict)
    branches: Optional[Dict[str, List[Tuple[str, str, bool]]]] = field(
        default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.root is None and self.nodes:
            self.root = self.nodes[0][0]

    @property
    def variables(self) -> List[str]:
        return [v for v, _ in self.nodes]

    def concept(self, var: str) -> str:
        for v, c in self.nodes:
            if v == var:
                return c
        raise KeyError(var)

    def concepts(self) -> Dict[str, str]:
        return dict(self.nodes)

    def children(self, var: str) -> List[Tuple[str, str, bool]]:
        """Outgoing ``(role, target, is_attribute)`` in textual order.

        Graphs that were not read from text use the serializer's order.
        """
        if self.branches is not None and var in self.branches:
            return list(self.branches[var])
        out = [(r, d, False) for s, r, d in self.edges if s == var]
        out += [(r, val, True) for v, r, val in self.attributes if v == var]
        # same order serialize_penman writes
        return sorted(out)

    def in_degree(self) -> Dict[str, int]:
        deg = {v: 0 for v, _ in self.nodes}
        for _, _, d in self.edges:
            deg[d] = deg.get(d, 0) + 1
        return deg

    def reachable(self, start: Optional[str] = None) -> set:
        start = self.root if start is None else start
        if start is None:
            return set()
        succ: Dict[str, List[str]] = {}
        for s, _, d in self.edges:
            succ.setdefault(s, []).append(d)
        seen = {start}
        todo = [start]
        while todo:
            v = todo.pop()
            for d in succ.get(v, ()):
                if d not in seen:
                    seen.add(d)
                    todo.append(d)
        return seen

    def validate(self, require_connected: bool = True) -> None:
        """Raise ``ValueError`` when a structural invariant does not hold."""
        vars_ = self.variables
        if len(set(vars_)) != len(vars_):
            raise ValueError("duplicate variables")
        known = set(vars_)
        if self.root not in known:
            raise ValueError(f"root {self.root!r} is not a node")
        for s, r, d in self.edges:
            if s not in known or d not in known:
                raise ValueError(f"edge endpoint missing: ({s} :{r} {d})")
        for v, r, _ in self.attributes:
            if v not in known:
                raise ValueError(f"attribute on unknown node: ({v} :{r})")
        if require_connected and self.reachable() != known:
            raise ValueError("graph is not reachable from its root")

    def copy(self) -> "AmrGraph":
        return AmrGraph(list(self.nodes), list(self.edges), list(self.attributes),
                        self.root, OrderedDict(self.metadata),
                        None if self.branches is None
                        else {k: list(v) for k, v in self.branches.items()})


# --------------------------------------------------------------------------
# PENMAN reading


_TOKEN_RE = re.compile(r'\s*(?:(\()|(\))|(/)|(:[^\s()"]*)|("(?:[^"\\]|\\.)*")|([^\s()/:"][^\s()]*))')


def _tokenize(text: str) -> Iterator[Tuple[str, str, int]]:
    pos = 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            rest = text[pos:]
            if not rest.strip():
                return
            stripped = len(rest) - len(rest.lstrip())
            bad = pos + stripped
            if text[bad] == '"':
                raise PenmanError("unterminated string", _byte_offset(text, bad))
            raise PenmanError(f"unexpected character {text[bad]!r}", _byte_offset(text, bad))
        kinds = ("(", ")", "/", "role", "string", "symbol")
        for kind, grp in zip(kinds, m.groups()):
            if grp is not None:
                yield kind, grp, m.start(m.lastindex)
                break
        pos = m.end()


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


def _unquote(s: str) -> str:
    return re.sub(r"\\(.)", r"\1", s[1:-1])


def is_variable_like(symbol: str) -> bool:
    return bool(_VARIABLE_RE.match(symbol))


def is_number(symbol: str) -> bool:
    return bool(_NUMBER_RE.match(symbol))


def parse_penman(text: str) -> AmrGraph:
    """Parse one PENMAN s-expression.

    Bare symbols that name a variable defined anywhere in the graph become
    edges; other bare symbols are constants, except variable-shaped ones,
    which are reported as dangling references.
    """
    tokens = list(_tokenize(text))
    if not tokens:
        raise PenmanError("empty input", 0)
    nodes: List[Node] = []
    branches: Dict[str, List[list]] = {}
    defined: Dict[str, int] = {}
    i = 0

    def off(k):
        return _byte_offset(text, tokens[k][2]) if k < len(tokens) else len(text.encode("utf-8"))

    def parse_node() -> str:
        nonlocal i
        open_at = i
        if i >= len(tokens) or tokens[i][0] != "(":
            raise PenmanError("expected '('", off(i))
        i += 1
        if i >= len(tokens) or tokens[i][0] != "symbol":
            raise UnbalancedParens("expected variable after '('", off(open_at)) \
                if i >= len(tokens) else PenmanError("expected variable", off(i))
        var = tokens[i][1]
        if var in defined:
            raise DuplicateVariable(f"variable {var!r} defined twice", off(i))
        defined[var] = off(i)
        i += 1
        concept = None
        if i < len(tokens) and tokens[i][0] == "/":
            i += 1
            if i >= len(tokens) or tokens[i][0] not in ("symbol", "string"):
                raise PenmanError("expected concept after '/'", off(i))
            kind, val, _ = tokens[i]
            concept = _unquote(val) if kind == "string" else val
            i += 1
        if concept is None:
            raise PenmanError(f"variable {var!r} has no concept", off(i - 1))
        nodes.append((var, concept))
        branches[var] = []
        while i < len(tokens) and tokens[i][0] == "role":
            role = tokens[i][1][1:]
            i += 1
            if i >= len(tokens):
                raise UnbalancedParens("missing ')'", off(open_at))
            kind, val, _ = tokens[i]
            if kind == "(":
                child = parse_node()
                branches[var].append([role, child, False, None])
            elif kind in ("symbol", "string"):
                slot = [role, _unquote(val) if kind == "string" else val, kind == "string", off(i)]
                branches[var].append(slot)
                i += 1
            else:
                raise PenmanError(f"unexpected {val!r} after role", off(i))
        if i >= len(tokens):
            raise UnbalancedParens("missing ')'", off(open_at))
        if tokens[i][0] != ")":
            raise PenmanError(f"unexpected {tokens[i][1]!r}", off(i))
        i += 1
        return var

    root = parse_node()
    if i < len(tokens):
        if tokens[i][0] == ")":
            raise UnbalancedParens("unmatched ')'", off(i))
        raise PenmanError("trailing content after graph", off(i))

    edges: List[Edge] = []
    attributes: List[Attribute] = []
    edge_offsets: List[Optional[int]] = []
    final_branches: Dict[str, List[Tuple[str, str, bool]]] = {}
    for var, _ in nodes:
        out = []
        for role, value, quoted, at in branches[var]:
            if at is None or (not quoted and value in defined):
                edges.append((var, role, value))
                edge_offsets.append(at)
                out.append((role, value, False))
            else:
                if not quoted and is_variable_like(value):
                    raise DanglingReference(f"reference to undefined variable {value!r}", at)
                attributes.append((var, role, value))
                out.append((role, value, True))
        final_branches[var] = out
    _check_acyclic(nodes, edges, edge_offsets)
    return AmrGraph(nodes, edges, attributes, root, OrderedDict(), final_branches)


def _check_acyclic(nodes, edges, offsets) -> None:
    succ: Dict[str, List[Tuple[str, Optional[int]]]] = {v: [] for v, _ in nodes}
    for (s, _, d), at in zip(edges, offsets):
        succ[s].append((d, at))
    state = {v: 0 for v, _ in nodes}  # 0 new, 1 on path, 2 done
    for start, _ in nodes:
        if state[start]:
            continue
        stack = [(start, iter(succ[start]))]
        state[start] = 1
        while stack:
            v, it = stack[-1]
            for d, at in it:
                if state[d] == 1:
                    raise CyclicGraph(f"edge to {d!r} closes a directed cycle", at)
                if state[d] == 0:
                    state[d] = 1
                    stack.append((d, iter(succ[d])))
                    break
            else:
                state[v] = 2
                stack.pop()


# --------------------------------------------------------------------------
# PENMAN writing


def format_constant(value: str) -> str:
    if value in ("-", "+") or is_number(value):
        return value
    if value and re.fullmatch(r"[A-Za-z0-9]+", value) and not is_variable_like(value):
        return value
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _format_concept(concept: str) -> str:
    if re.search(r'[\s()/:"]', concept) or not concept:
        return '"' + concept.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return concept


def serialize_penman(g: AmrGraph, indent: Optional[int] = 4) -> str:
    """Write ``g`` as PENMAN.

    Branches are emitted ordered by role then target; a reentrant node is
    written in full at its first depth-first occurrence and as a bare
    variable afterwards. Every node must be reachable from the root.
    """
    concepts = g.concepts()
    out_edges: Dict[str, List[Tuple[str, str, bool]]] = {v: [] for v in concepts}
    for s, r, d in g.edges:
        out_edges[s].append((r, d, False))
    for v, r, val in g.attributes:
        out_edges[v].append((r, val, True))
    for v in out_edges:
        out_edges[v].sort(key=lambda b: (b[0], b[1], b[2]))
    reach = g.reachable()
    if reach != set(concepts):
        missing = sorted(set(concepts) - reach)
        raise ValueError(f"nodes unreachable from root: {missing}")

    written = set()
    parts: List[str] = []

    def emit(var: str, depth: int) -> None:
        written.add(var)
        parts.append(f"({var} / {_format_concept(concepts[var])}")
        for role, target, is_attr in out_edges[var]:
            if indent is None:
                parts.append(" ")
            else:
                parts.append("\n" + " " * (indent * (depth + 1)))
            parts.append(f":{role} ")
            if is_attr:
                parts.append(format_constant(target))
            elif target in written:
                parts.append(target)
            else:
                emit(target, depth + 1)
        parts.append(")")

    emit(g.root, 0)
    return "".join(parts)


def connect_graph(g: AmrGraph, role: str = "rel") -> AmrGraph:
    """Attach components unreachable from the root under ``:rel`` edges."""
    g = g.copy()
    g.branches = None
    if not g.nodes:
        return g
    reach = g.reachable()
    indeg = g.in_degree()
    # component heads first, then whatever is left (nodes only reachable via cycles)
    for only_heads in (True, False):
        for var, _ in g.nodes:
            if var not in reach and (indeg[var] == 0 or not only_heads):
                g.edges.append((g.root, role, var))
                reach |= g.reachable(var)
    return g


# --------------------------------------------------------------------------
# triples


@dataclass(frozen=True)
class TripleSet:
    instances: frozenset
    relations: frozenset
    attributes: frozenset

    def __len__(self):
        return len(self.instances) + len(self.relations) + len(self.attributes)

    @property
    def variables(self) -> List[str]:
        return sorted(v for v, _ in self.instances)


def to_triples(g: AmrGraph) -> TripleSet:
    """Canonical triple view of ``g``; the root is marked by a TOP attribute."""
    instances = frozenset(g.nodes)
    relations = frozenset(g.edges)
    attrs = set(g.attributes)
    if g.root is not None and g.nodes:
        attrs.add((g.root, TOP, g.concept(g.root)))
    return TripleSet(instances, relations, frozenset(attrs))


def strip_sense(concept: str) -> str:
    return _SENSE_RE.sub("", concept)


# --------------------------------------------------------------------------
# corpus files


def _parse_metadata(lines: Iterable[str]) -> "OrderedDict[str, str]":
    meta: "OrderedDict[str, str]" = OrderedDict()
    for line in lines:
        body = line.lstrip("#").strip()
        if "::" not in body:
            continue
        for chunk in re.split(r"(?:^|\s)::", body)[1:]:
            key, _, value = chunk.strip().partition(" ")
            if key:
                meta[key] = value.strip()
    return meta


def read_corpus_blocks(text: str) -> Iterator[Tuple[int, List[str], str]]:
    """Yield ``(first_body_line_number, comment_lines, penman_text)`` per block."""
    block: List[Tuple[int, str]] = []
    lines = text.splitlines()
    for lineno, line in enumerate(lines + [""], start=1):
        if line.strip():
            block.append((lineno, line))
            continue
        if not block:
            continue
        comments = [l for _, l in block if l.lstrip().startswith("#")]
        body = "\n".join(l for _, l in block if not l.lstrip().startswith("#"))
        first = next((n for n, l in block if not l.lstrip().startswith("#")), block[0][0])
        block = []
        if body.strip():
            yield first, comments, body


class CorpusError(ValueError):
    def __init__(self, path, line, message):
        self.path, self.line = path, line
        super().__init__(f"{path}:{line}: {message}")


def read_corpus(text: str, path: str = "<string>") -> List[AmrGraph]:
    graphs = []
    for lineno, comments, body in read_corpus_blocks(text):
        try:
            g = parse_penman(body)
        except PenmanError as exc:
            line = lineno
            if exc.offset is not None:
                line += body.encode("utf-8")[:exc.offset].decode("utf-8", "ignore").count("\n")
            raise CorpusError(path, line, str(exc)) from exc
        g.metadata = _parse_metadata(comments)
        graphs.append(g)
    return graphs


def load_corpus(path: str) -> List[AmrGraph]:
    with open(path, encoding="utf-8") as fh:
        return read_corpus(fh.read(), path)


def format_corpus(graphs: Iterable[AmrGraph]) -> str:
    chunks = []
    for g in graphs:
        head = "".join(f"# ::{k} {v}\n" for k, v in g.metadata.items())
        chunks.append(head + serialize_penman(g))
    return "\n\n".join(chunks) + "\n"


def sentence_tokens(g: AmrGraph) -> List[str]:
    """Tokens from ``# ::tok`` (falling back to whitespace-split ``# ::snt``)."""
    if "tok" in g.metadata:
        return g.metadata["tok"].split()
    return g.metadata.get("snt", "").split()
