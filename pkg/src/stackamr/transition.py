"""Transition system for AMR parsing and the oracle that drives it from gold graphs.

Prediction is split in two: one of ten action kinds, then (for five of them)
a label. CONFIRM, ENTITY and DEPENDENT take a concept-like payload; LEFT-ARC
and RIGHT-ARC take a role label.

DEPENDENT payloads read ``role=value``: a quoted value, ``-``, ``+`` or a
number becomes an attribute of the stack top, anything else becomes a new leaf
node with that concept.
"""
from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .amr import AmrGraph, is_number
from .align import AlignmentMap


class Action(str, enum.Enum):
    SHIFT = "SHIFT"
    REDUCE = "REDUCE"
    CONFIRM = "CONFIRM"
    MERGE = "MERGE"
    ENTITY = "ENTITY"
    DEPENDENT = "DEPENDENT"
    LEFT_ARC = "LEFT-ARC"
    RIGHT_ARC = "RIGHT-ARC"
    SWAP = "SWAP"
    FINISH = "FINISH"

    def __str__(self):
        return self.value


ACTIONS: Tuple[Action, ...] = tuple(Action)
CONCEPT_ACTIONS = frozenset({Action.CONFIRM, Action.ENTITY, Action.DEPENDENT})
ROLE_ACTIONS = frozenset({Action.LEFT_ARC, Action.RIGHT_ARC})
LABELED_ACTIONS = CONCEPT_ACTIONS | ROLE_ACTIONS
STEPS_PER_TOKEN = 10


def label_family(action: Action) -> Optional[str]:
    if action in CONCEPT_ACTIONS:
        return "concept"
    if action in ROLE_ACTIONS:
        return "role"
    return None


class IllegalAction(ValueError):
    pass


def format_action(action: Action, label: Optional[str]) -> str:
    return str(action) if label is None else f"{action}:{label}"


def parse_action(token: str) -> Tuple[Action, Optional[str]]:
    name, sep, label = token.partition(":")
    try:
        action = Action(name)
    except ValueError:
        raise IllegalAction(f"unknown action {name!r}") from None
    if (action in LABELED_ACTIONS) != bool(sep):
        raise IllegalAction(f"label presence does not match action in {token!r}")
    return action, (label if sep else None)


@dataclass(frozen=True)
class Item:
    """A stack/buffer element: a (possibly merged) token span, or a graph node."""

    id: int
    start: int
    end: int
    node: Optional[str] = None

    @property
    def is_node(self) -> bool:
        return self.node is not None


@dataclass(frozen=True)
class ParserState:
    tokens: Tuple[str, ...]
    stack: Tuple[Item, ...]
    buffer: Tuple[Item, ...]
    history: Tuple[Tuple[Action, Optional[str]], ...] = ()
    nodes: Tuple[Tuple[str, str], ...] = ()
    edges: Tuple[Tuple[str, str, str], ...] = ()
    attributes: Tuple[Tuple[str, str, str], ...] = ()
    node_spans: Tuple[Tuple[str, int, int], ...] = ()
    swapped: FrozenSet[Tuple[int, int]] = frozenset()
    next_id: int = 0
    finished: bool = False

    @property
    def budget(self) -> int:
        return STEPS_PER_TOKEN * max(len(self.tokens), 1)

    @property
    def terminal(self) -> bool:
        return self.finished or (not self.buffer and not self.stack)

    def span_of(self, var: str) -> Tuple[int, int]:
        for v, s, e in self.node_spans:
            if v == var:
                return s, e
        raise KeyError(var)

    def graph(self) -> AmrGraph:
        """The graph built so far (root chosen as in FINISH)."""
        if not self.nodes:
            return AmrGraph([("e", "amr-empty")], root="e",
                            metadata=OrderedDict(status="invalid-empty"))
        return AmrGraph(list(self.nodes), list(self.edges), list(self.attributes),
                        _choose_root(self), OrderedDict())


def initial_state(tokens: Sequence[str]) -> ParserState:
    tokens = tuple(tokens)
    buffer = tuple(Item(i, i, i) for i in range(len(tokens)))
    return ParserState(tokens, (), buffer, next_id=len(tokens))


def _reaches(state: ParserState, src: str, dst: str) -> bool:
    succ: Dict[str, List[str]] = {}
    for s, _, d in state.edges:
        succ.setdefault(s, []).append(d)
    todo, seen = [src], {src}
    while todo:
        v = todo.pop()
        if v == dst:
            return True
        for d in succ.get(v, ()):
            if d not in seen:
                seen.add(d)
                todo.append(d)
    return False


def _choose_root(state: ParserState) -> str:
    indeg = {v: 0 for v, _ in state.nodes}
    succ: Dict[str, List[str]] = {}
    for s, _, d in state.edges:
        indeg[d] += 1
        succ.setdefault(s, []).append(d)
    on_stack = {it.node: k for k, it in enumerate(state.stack) if it.is_node}
    order = {v: k for k, (v, _) in enumerate(state.nodes)}

    def reach(v):
        todo, seen = [v], {v}
        while todo:
            for d in succ.get(todo.pop(), ()):
                if d not in seen:
                    seen.add(d)
                    todo.append(d)
        return len(seen)

    candidates = [v for v, _ in state.nodes if indeg[v] == 0] or [state.nodes[0][0]]
    return min(candidates, key=lambda v: (-reach(v), on_stack.get(v, len(state.stack)), order[v]))


def legal_actions(state: ParserState) -> FrozenSet[Action]:
    """Action kinds applicable in ``state`` (empty once terminal)."""
    if state.terminal:
        return frozenset()
    if len(state.history) >= state.budget - 1:
        return frozenset({Action.FINISH})
    legal = set()
    stack = state.stack
    if state.buffer:
        legal.add(Action.SHIFT)
    else:
        legal.add(Action.FINISH)
    if stack:
        legal.add(Action.REDUCE)
        top = stack[-1]
        if top.is_node:
            legal.add(Action.DEPENDENT)
        else:
            legal.update((Action.CONFIRM, Action.ENTITY))
    if len(stack) >= 2:
        s1, s0 = stack[-2], stack[-1]
        if not s1.is_node and not s0.is_node and s1.end + 1 == s0.start:
            legal.add(Action.MERGE)
        if s1.is_node and s0.is_node:
            if not _reaches(state, s1.node, s0.node):
                legal.add(Action.LEFT_ARC)
            if not _reaches(state, s0.node, s1.node):
                legal.add(Action.RIGHT_ARC)
        if (s1.id, s0.id) not in state.swapped:
            legal.add(Action.SWAP)
    return frozenset(legal)


def _new_var(state_nodes, concept: str) -> str:
    letter = next((ch.lower() for ch in concept if ch.isalpha()), "x")
    if not ("a" <= letter <= "z"):
        letter = "x"
    taken = {v for v, _ in state_nodes}
    if letter not in taken:
        return letter
    k = 2
    while f"{letter}{k}" in taken:
        k += 1
    return f"{letter}{k}"


def split_dependent(payload: str) -> Tuple[str, str, bool]:
    """``role=value`` -> ``(role, value, is_attribute)``."""
    role, sep, value = payload.partition("=")
    if not sep or not role or not value:
        raise IllegalAction(f"DEPENDENT payload must read role=value, got {payload!r}")
    if len(value) >= 2 and value[0] == value[-1] == '"':
        return role, value[1:-1], True
    if value in ("-", "+") or is_number(value):
        return role, value, True
    return role, value, False


def dependent_payload(role: str, value: str, is_attribute: bool) -> str:
    if not is_attribute:
        return f"{role}={value}"
    if value in ("-", "+") or is_number(value):
        return f"{role}={value}"
    return f'{role}="{value}"'


def apply(state: ParserState, action: Action, label: Optional[str] = None) -> ParserState:
    """Successor of ``state`` under ``action`` with its label."""
    action = Action(action)
    if action not in legal_actions(state):
        raise IllegalAction(f"{action} is not legal here")
    if (action in LABELED_ACTIONS) != (label is not None):
        raise IllegalAction(f"{action} {'needs' if action in LABELED_ACTIONS else 'takes no'} label")
    history = state.history + ((action, label),)
    stack, buffer = state.stack, state.buffer

    if action is Action.SHIFT:
        return replace(state, stack=stack + (buffer[0],), buffer=buffer[1:], history=history)
    if action is Action.REDUCE:
        return replace(state, stack=stack[:-1], history=history)
    if action is Action.FINISH:
        return replace(state, history=history, finished=True)
    if action is Action.SWAP:
        s1, s0 = stack[-2], stack[-1]
        return replace(state, stack=stack[:-2] + (s0,), buffer=(s1,) + buffer, history=history,
                       swapped=state.swapped | {(s1.id, s0.id)})
    if action is Action.MERGE:
        s1, s0 = stack[-2], stack[-1]
        merged = Item(state.next_id, s1.start, s0.end)
        return replace(state, stack=stack[:-2] + (merged,), history=history,
                       next_id=state.next_id + 1)
    if action is Action.CONFIRM:
        top = stack[-1]
        var = _new_var(state.nodes, label)
        item = Item(state.next_id, top.start, top.end, var)
        return replace(state, stack=stack[:-1] + (item,), history=history,
                       nodes=state.nodes + ((var, label),),
                       node_spans=state.node_spans + ((var, top.start, top.end),),
                       next_id=state.next_id + 1)
    if action is Action.ENTITY:
        top = stack[-1]
        var = _new_var(state.nodes, label)
        nodes = state.nodes + ((var, label),)
        name = _new_var(nodes, "name")
        nodes = nodes + ((name, "name"),)
        words = state.tokens[top.start:top.end + 1]
        ops = tuple((name, f"op{k}", w) for k, w in enumerate(words, start=1))
        item = Item(state.next_id, top.start, top.end, var)
        return replace(state, stack=stack[:-1] + (item,), history=history, nodes=nodes,
                       edges=state.edges + ((var, "name", name),),
                       attributes=state.attributes + ops,
                       node_spans=state.node_spans + ((var, top.start, top.end),
                                                      (name, top.start, top.end)),
                       next_id=state.next_id + 1)
    if action is Action.DEPENDENT:
        top = stack[-1]
        role, value, is_attr = split_dependent(label)
        if is_attr:
            return replace(state, history=history,
                           attributes=state.attributes + ((top.node, role, value),))
        var = _new_var(state.nodes, value)
        return replace(state, history=history, nodes=state.nodes + ((var, value),),
                       edges=state.edges + ((top.node, role, var),),
                       node_spans=state.node_spans + ((var, top.start, top.end),))
    if action is Action.LEFT_ARC:
        s1, s0 = stack[-2], stack[-1]
        return replace(state, history=history, edges=state.edges + ((s0.node, label, s1.node),))
    if action is Action.RIGHT_ARC:
        s1, s0 = stack[-2], stack[-1]
        return replace(state, stack=stack[:-1], history=history,
                       edges=state.edges + ((s1.node, label, s0.node),))
    raise IllegalAction(str(action))  # pragma: no cover


def replay(tokens: Sequence[str], actions: Sequence[Tuple[Action, Optional[str]]]) -> ParserState:
    state = initial_state(tokens)
    for action, label in actions:
        state = apply(state, action, label)
    return state


# --------------------------------------------------------------------------
# oracle


@dataclass
class OracleResult:
    actions: List[Tuple[Action, Optional[str]]]
    reachable: AmrGraph
    dropped_nodes: List[str] = field(default_factory=list)
    dropped_arcs: List[Tuple[str, str, str]] = field(default_factory=list)


class _OutOfBudget(Exception):
    pass


class _Oracle:
    def __init__(self, tokens: Sequence[str], gold: AmrGraph, align: AlignmentMap):
        self.tokens = list(tokens)
        self.gold = gold
        self.state = initial_state(tokens)
        self.actions: List[Tuple[Action, Optional[str]]] = []
        self.dropped_nodes: List[str] = []
        self.dropped_arcs: List[Tuple[str, str, str]] = []
        self.head_of_item: Dict[str, str] = {}  # state var -> gold var
        self.item_of_head: Dict[str, str] = {}  # gold var -> state var
        self._plan(align)

    # ---- planning
    def _plan(self, align: AlignmentMap) -> None:
        gold = self.gold
        n = len(self.tokens)
        order = {v: k for k, (v, _) in enumerate(gold.nodes)}
        spans: Dict[Tuple[int, int], List[str]] = {}
        for var, _ in gold.nodes:
            span = align.get(var)
            if span is None or span.end >= n:
                self.dropped_nodes.append(var)
                continue
            spans.setdefault((span.start, span.end), []).append(var)
        taken = [False] * n
        groups: Dict[int, Tuple[int, List[str]]] = {}
        for (s, e), members in sorted(spans.items(), key=lambda kv: (kv[0][0], kv[0][0] - kv[0][1])):
            if any(taken[s:e + 1]):
                self.dropped_nodes.extend(members)
                continue
            for t in range(s, e + 1):
                taken[t] = True
            groups[s] = (e, sorted(members, key=order.get))

        concepts = gold.concepts()
        out_edges: Dict[str, List[Tuple[str, str]]] = {v: [] for v in concepts}
        indeg = gold.in_degree()
        for s, r, d in gold.edges:
            out_edges[s].append((r, d))
        has_attrs = {v for v, _, _ in gold.attributes}
        self.plans: Dict[int, Tuple[int, List[Tuple[Action, str]], str]] = {}
        heads: Dict[str, str] = {}
        realized_edges = set()
        for start, (end, members) in groups.items():
            mset = set(members)
            inner = {d for s in members for _, d in out_edges[s] if d in mset}
            roots = [v for v in members if v not in inner]
            head = roots[0] if roots else members[0]
            steps: List[Tuple[Action, str]] = []
            done = {head}
            name = next((d for r, d in out_edges[head]
                         if r == "name" and d in mset and concepts[d] == "name"), None)
            if name is not None:
                steps.append((Action.ENTITY, concepts[head]))
                done.add(name)
                realized_edges.add((head, "name", name))
            else:
                steps.append((Action.CONFIRM, concepts[head]))
            deps = []
            for r, d in out_edges[head]:
                if (d in mset and d not in done and not out_edges[d] and d not in has_attrs
                        and indeg[d] == 1):
                    deps.append((r, concepts[d], False))
                    done.add(d)
                    realized_edges.add((head, r, d))
            for v, r, val in gold.attributes:
                if v == head and r != "wiki":
                    deps.append((r, val, True))
                elif v != head and v in done and v != name and r != "wiki":
                    pass  # attributes of DEPENDENT leaves cannot be expressed
            for r, val, is_attr in sorted(deps, key=lambda d: (d[0], d[1])):
                steps.append((Action.DEPENDENT, dependent_payload(r, val, is_attr)))
            for v in members:
                if v not in done:
                    self.dropped_nodes.append(v)
            heads[head] = head
            self.plans[start] = (end, steps, head)
        self.gold_root = gold.root
        self.pending: Dict[Tuple[str, str], List[str]] = {}
        for s, r, d in gold.edges:
            if (s, r, d) in realized_edges:
                continue
            if s in heads and d in heads:
                self.pending.setdefault((s, d), []).append(r)
            elif s in concepts and d in concepts:
                self.dropped_arcs.append((s, r, d))
        for key in self.pending:
            self.pending[key].sort()

    # ---- execution helpers
    def emit(self, action: Action, label: Optional[str] = None) -> None:
        if len(self.state.history) >= self.state.budget - 1:
            raise _OutOfBudget
        self.state = apply(self.state, action, label)
        self.actions.append((action, label))

    def gold_var(self, item: Item) -> Optional[str]:
        return self.head_of_item.get(item.node) if item.is_node else None

    def has_pending(self, a: str, b: str) -> bool:
        return (a, b) in self.pending or (b, a) in self.pending

    def complete(self, g: str) -> bool:
        return not any(g in key for key in self.pending)

    def _drop_pending(self, a: str, b: str) -> None:
        for key in ((a, b), (b, a)):
            for r in self.pending.pop(key, []):
                self.dropped_arcs.append((key[0], r, key[1]))

    def settle(self) -> None:
        """Connect the stack top with every stack item it still owes an arc."""
        top = self.state.stack[-1]
        w = self.gold_var(top)
        swapped = 0
        while w is not None:
            stack = self.state.stack
            below = [self.gold_var(it) for it in stack[:-1]]
            if not any(v is not None and self.has_pending(w, v) for v in below):
                break
            s1 = below[-1]
            for r in list(self.pending.get((w, s1), [])):
                self.emit(Action.LEFT_ARC, r)
                self.pending[(w, s1)].remove(r)
            if not self.pending.get((w, s1), True):
                del self.pending[(w, s1)]
            deeper = any(v is not None and self.has_pending(w, v) for v in below[:-1])
            owes = self.pending.get((s1, w), [])
            if owes and not deeper and len(owes) == 1 and \
                    all(w not in key or key == (s1, w) for key in self.pending):
                self.emit(Action.RIGHT_ARC, owes[0])
                del self.pending[(s1, w)]
                break
            if not owes and not deeper:
                break
            if Action.SWAP not in legal_actions(self.state):
                for v in below:
                    if v is not None:
                        self._drop_pending(w, v)
                break
            self.emit(Action.SWAP)
            swapped += 1
        for _ in range(swapped):
            self.emit(Action.SHIFT)
            self.settle()
            self.reduce_complete(once=True)

    def reduce_complete(self, once: bool = False) -> None:
        while self.state.stack and self.state.buffer:
            g = self.gold_var(self.state.stack[-1])
            if g is None or not self.complete(g):
                return
            self.emit(Action.REDUCE)
            if once:
                return

    def run(self) -> None:
        while self.state.buffer:
            front = self.state.buffer[0]
            if front.is_node:  # only after an interrupted settle
                self.emit(Action.SHIFT)
                continue
            plan = self.plans.get(front.start)
            if plan is None:
                self.emit(Action.SHIFT)
                self.emit(Action.REDUCE)
                continue
            end, steps, head = plan
            self.emit(Action.SHIFT)
            for _ in range(front.start, end):
                self.emit(Action.SHIFT)
                self.emit(Action.MERGE)
            for action, label in steps:
                self.emit(action, label)
                if action in (Action.CONFIRM, Action.ENTITY):
                    var = self.state.stack[-1].node
                    self.head_of_item[var] = head
                    self.item_of_head[head] = var
            self.settle()
            self.reduce_complete()
        if not self.state.terminal:
            self.emit(Action.FINISH)


def oracle(tokens: Sequence[str], gold: AmrGraph, align: AlignmentMap) -> OracleResult:
    """Action sequence reconstructing ``gold`` from aligned ``tokens``.

    Unaligned nodes, nodes that cannot be expressed from their span, and arcs
    that cannot be brought together are dropped; ``reachable`` is exactly the
    graph that replaying ``actions`` builds.
    """
    run = _Oracle(tokens, gold, align)
    try:
        run.run()
    except _OutOfBudget:
        run.state = apply(run.state, Action.FINISH)
        run.actions.append((Action.FINISH, None))
    for key, roles in run.pending.items():
        run.dropped_arcs.extend((key[0], r, key[1]) for r in roles)
    return OracleResult(run.actions, run.state.graph(), run.dropped_nodes, run.dropped_arcs)
