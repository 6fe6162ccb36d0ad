from collections import OrderedDict

import pytest
from hypothesis import given, settings

from graphgen import dags
from stackamr.amr import (AmrGraph, CorpusError, CyclicGraph, DanglingReference, DuplicateVariable,
                          UnbalancedParens, connect_graph, format_corpus, parse_penman, read_corpus,
                          serialize_penman, strip_sense, to_triples)
from stackamr.smatch import smatch_exact


def test_parse_simple():
    g = parse_penman("(w / want-01 :ARG0 (b / boy))")
    assert g.nodes == [("w", "want-01"), ("b", "boy")]
    assert g.edges == [("w", "ARG0", "b")]
    assert g.root == "w"


def test_parse_reentrancy():
    g = parse_penman("(a / and :op1 (b / boy) :op2 b)")
    assert len(g.nodes) == 2
    assert sorted(g.edges) == [("a", "op1", "b"), ("a", "op2", "b")]


def test_cycle_rejected():
    with pytest.raises(CyclicGraph) as err:
        parse_penman("(a / x :mod (b / y :mod a))")
    assert err.value.offset is not None


@pytest.mark.parametrize("text, exc", [
    ("(a / x :mod (b / y)", UnbalancedParens),
    ("(a / x) )", UnbalancedParens),
    ("(a / x :mod (a / y))", DuplicateVariable),
    ("(a / x :mod b2)", DanglingReference),
])
def test_parse_errors_carry_offsets(text, exc):
    with pytest.raises(exc) as err:
        parse_penman(text)
    assert isinstance(err.value.offset, int)


def test_attributes_and_constants():
    g = parse_penman('(g / go-02 :polarity - :quant 3 :name (n / name :op1 "New York"))')
    assert ("g", "polarity", "-") in g.attributes
    assert ("g", "quant", "3") in g.attributes
    assert ("n", "op1", "New York") in g.attributes
    text = serialize_penman(g)
    assert '"New York"' in text and ":polarity -" in text


def test_triples():
    t = to_triples(parse_penman("(w / want-01 :ARG0 (b / boy))"))
    assert t.instances == {("w", "want-01"), ("b", "boy")}
    assert t.relations == {("w", "ARG0", "b")}
    assert t.attributes == {("w", "TOP", "want-01")}
    t = to_triples(parse_penman("(a / apple)"))
    assert t.relations == frozenset() and t.attributes == {("a", "TOP", "apple")}
    t = to_triples(parse_penman("(g / go-02 :polarity -)"))
    assert ("g", "polarity", "-") in t.attributes


def test_serialize_single_and_reentrant():
    assert serialize_penman(parse_penman("(a / apple)")) == "(a / apple)"
    text = serialize_penman(parse_penman("(a / and :op1 (b / boy) :op2 b)"))
    assert text.count("(b / boy)") == 1
    assert text.split().count("b)") + text.split().count("b") == 1


def test_serializer_orders_by_role_then_target():
    g = AmrGraph([("a", "x"), ("c", "z"), ("b", "y")], [("a", "ARG1", "c"), ("a", "ARG0", "b")], [], "a")
    text = serialize_penman(g, indent=None)
    assert text.index(":ARG0") < text.index(":ARG1")


def _isomorphic(g, h):
    r = smatch_exact(to_triples(g), to_triples(h))
    return r.f1 == 1.0 and len(to_triples(g)) == len(to_triples(h))


@settings(max_examples=60, deadline=None)
@given(dags(max_nodes=12))
def test_round_trip_property(g):
    h = parse_penman(serialize_penman(g))
    # names are preserved, so the triple sets coincide exactly
    assert to_triples(h) == to_triples(g)
    assert h.root == g.root


@settings(max_examples=30, deadline=None)
@given(dags(max_nodes=6))
def test_round_trip_isomorphic(g):
    assert _isomorphic(g, parse_penman(serialize_penman(g)))


@settings(max_examples=60, deadline=None)
@given(dags(max_nodes=12))
def test_triple_count_identity(g):
    t = to_triples(g)
    assert len(t.instances) == len(g.nodes)
    assert len(t) == len(g.nodes) + len(set(g.edges)) + len(set(g.attributes)) + 1
    assert sum(1 for _, r, _ in t.attributes if r == "TOP") == 1


def test_corpus_reading_and_metadata():
    text = "# ::id s1\n# ::snt The boy .\n(b / boy)\n\n# ::id s2 ::date x\n(w / want-01\n  :ARG0 (g / girl))\n"
    gs = read_corpus(text)
    assert [g.metadata["id"] for g in gs] == ["s1", "s2"]
    assert gs[1].metadata["date"] == "x"
    again = read_corpus(format_corpus(gs))
    assert [to_triples(g) for g in again] == [to_triples(g) for g in gs]


def test_corpus_error_reports_line():
    text = "# ::id s1\n(b / boy)\n\n# ::id s2\n(w / want-01\n  :ARG0 (g / girl\n"
    with pytest.raises(CorpusError) as err:
        read_corpus(text, "x.amr")
    assert str(err.value).startswith("x.amr:")
    assert err.value.line in (5, 6)


def test_connect_graph_attaches_fragments():
    g = AmrGraph([("a", "x"), ("b", "y")], [], [], "a", OrderedDict())
    h = connect_graph(g)
    h.validate()
    assert ("a", "rel", "b") in h.edges


def test_strip_sense():
    assert strip_sense("want-01") == "want"
    assert strip_sense("boy") == "boy"
