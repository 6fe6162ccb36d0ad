import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stackamr.amr import parse_penman
from stackamr.preprocess import (ContextualVectors, DegenerateLabels, LayerCount, LinearTagger, SpanGap,
                                 TooSmall, WikiDictionary, format_tag_file, jackknife_tags, named_nodes,
                                 pool_vectors, read_linker, read_tag_file, wikify)


def _cv(n_layers, spans, dim=3, seed=0):
    n = spans[-1][1] + 1 if spans else 0
    layers = np.random.default_rng(seed).normal(size=(n_layers, n, dim))
    return ContextualVectors([f"p{k}" for k in range(n)], spans, layers)


def test_pool_scalar_hand_case():
    # 5 layers, 3 pieces, dim 1; piece value = layer * 10 + piece
    layers = np.array([[[10.0 * l + p] for p in range(3)] for l in range(5)])
    cv = ContextualVectors(["a", "##b", "c"], [(0, 1), (2, 2)], layers)
    out = pool_vectors(cv)
    # last 4 layers are 1..4, mean 2.5 -> 25 + piece
    assert out.shape == (2, 1)
    assert out[0, 0] == pytest.approx((25.0 + 26.0) / 2)
    assert out[1, 0] == pytest.approx(27.0)


def test_pool_loop_oracle():
    cv = _cv(6, [(0, 0), (1, 3), (4, 5)], dim=4, seed=1)
    expect = []
    for s, e in cv.spans:
        acc = np.zeros(4)
        for p in range(s, e + 1):
            acc += sum(cv.layers[l, p] for l in range(2, 6)) / 4
        expect.append(acc / (e - s + 1))
    np.testing.assert_allclose(pool_vectors(cv), np.array(expect))


def test_pool_layer_count():
    with pytest.raises(LayerCount):
        pool_vectors(_cv(3, [(0, 1)]))


@pytest.mark.parametrize("spans", [[(0, 0), (2, 2)], [(0, 1), (1, 2)], [(0, 1)]])
def test_pool_span_gap(spans):
    cv = _cv(4, [(0, 0), (1, 2)])
    cv.spans = spans
    with pytest.raises(SpanGap):
        pool_vectors(cv)


def test_vectors_json_round_trip():
    cv = _cv(4, [(0, 1), (2, 2)])
    back = ContextualVectors.from_json(cv.to_json())
    np.testing.assert_allclose(back.layers, cv.layers)
    assert back.spans == cv.spans
    assert ContextualVectors(["play", "##ing", "go"], [(0, 1), (2, 2)], cv.layers).word_strings() == ["playing", "go"]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=1, max_size=5), st.integers(0, 1000))
def test_pool_permutation_equivariant(lengths, seed):
    spans, start = [], 0
    for n in lengths:
        spans.append((start, start + n - 1))
        start += n
    cv = _cv(4, spans, seed=seed)
    perm = np.random.default_rng(seed).permutation(len(spans))
    # move whole words around, keeping each word's pieces together
    order = [p for w in perm for p in range(spans[w][0], spans[w][1] + 1)]
    new_spans, s = [], 0
    for w in perm:
        n = spans[w][1] - spans[w][0] + 1
        new_spans.append((s, s + n - 1))
        s += n
    moved = ContextualVectors([cv.pieces[p] for p in order], new_spans, cv.layers[:, order])
    np.testing.assert_allclose(pool_vectors(moved), pool_vectors(cv)[perm])


def _blobs(seed=0, n=30):
    rng = np.random.default_rng(seed)
    centers = np.array([[4.0, 0.0], [-4.0, 0.0], [0.0, 4.0]])
    X = np.concatenate([c + rng.normal(scale=0.3, size=(n, 2)) for c in centers])
    y = np.repeat(["NN", "VB", "JJ"], n)
    return X, y


def test_tagger_separable():
    X, y = _blobs()
    t = LinearTagger().fit(X, y)
    assert (t.predict(X) == y).all()
    np.testing.assert_allclose(t.predict_proba(X).sum(axis=1), 1.0)


def test_tagger_loss_non_increasing():
    X, y = _blobs(1)
    curve = LinearTagger(step=50.0, max_iter=200).fit(X, y).loss_curve_
    assert all(b <= a for a, b in zip(curve, curve[1:]))


def test_tagger_duplicated_data_same_decisions():
    X, y = _blobs(2)
    a = LinearTagger(max_iter=300).fit(X, y)
    b = LinearTagger(max_iter=300).fit(np.concatenate([X, X]), np.concatenate([y, y]))
    probe = np.random.default_rng(0).normal(scale=4, size=(200, 2))
    assert (a.predict(probe) == b.predict(probe)).all()


def test_tagger_degenerate():
    with pytest.raises(DegenerateLabels):
        LinearTagger().fit(np.zeros((4, 2)), ["NN"] * 4)


def test_tagger_sklearn_params():
    t = LinearTagger(l2=0.5)
    assert t.get_params()["l2"] == 0.5
    assert t.set_params(max_iter=7).max_iter == 7


def _corpus(n, seed=0):
    rng = np.random.default_rng(seed)
    vecs, labels = [], []
    for _ in range(n):
        k = int(rng.integers(2, 5))
        lab = rng.choice(["A", "B"], size=k)
        vecs.append(np.where(lab[:, None] == "A", 1.0, -1.0) * np.ones((k, 2)) + rng.normal(scale=0.1, size=(k, 2)))
        labels.append(list(lab))
    return vecs, labels


def test_jackknife_too_small():
    vecs, labels = _corpus(5)
    with pytest.raises(TooSmall):
        jackknife_tags(vecs, labels, folds=10)
    with pytest.raises(TooSmall):
        jackknife_tags(vecs, labels, folds=1)


def test_jackknife_deterministic_and_accurate():
    vecs, labels = _corpus(20)
    a = jackknife_tags(vecs, labels, folds=4)
    assert a == jackknife_tags(vecs, labels, folds=4)
    assert a == labels


def test_jackknife_never_sees_own_fold():
    vecs, labels = _corpus(12)
    seen = []

    class Spy(LinearTagger):
        def fit(self, X, y):
            seen.append({tuple(np.round(r, 12)) for r in X})
            return super().fit(X, y)

    jackknife_tags(vecs, labels, folds=3, make_tagger=Spy)
    assert len(seen) == 3
    for f, rows in enumerate(seen):
        for k in range(f, len(vecs), 3):
            assert not any(tuple(np.round(r, 12)) in rows for r in vecs[k])


def test_tag_file_round_trip(tmp_path):
    sents = [(["the", "boy"], ["DT", "NN"]), (["runs"], ["VBZ"])]
    path = tmp_path / "t.tsv"
    path.write_text(format_tag_file(sents))
    assert read_tag_file(str(path)) == [(["the", "boy"], ["DT", "NN"]), (["runs"], ["VBZ"])]


def test_tag_file_malformed(tmp_path):
    path = tmp_path / "t.tsv"
    path.write_text("the\tDT\nboy NN\n")
    with pytest.raises(ValueError, match=":2:"):
        read_tag_file(str(path))


OBAMA = """(p / person :wiki "Barack_Obama"
   :name (n / name :op1 "Barack" :op2 "Obama"))"""


def test_named_nodes():
    g = parse_penman(OBAMA)
    assert named_nodes(g) == [("p", "Barack Obama")]


def test_dictionary_build_and_tie_break():
    graphs = [parse_penman(OBAMA),
              parse_penman('(c / city :wiki "Paris" :name (n / name :op1 "Paris"))'),
              parse_penman('(c / city :wiki "Paris,_Texas" :name (n / name :op1 "Paris"))'),
              parse_penman('(c / city :wiki - :name (n / name :op1 "Rome"))')]
    d = WikiDictionary.build(graphs)
    assert d.lookup("Barack Obama") == "Barack_Obama"
    # one each: lexicographically smallest wins
    assert d.lookup("Paris") == "Paris"
    assert d.lookup("Rome") is None
    assert "Rome" not in d and len(d) == 2


def test_dictionary_majority_and_save_load():
    d = WikiDictionary({"Paris": {"Paris,_Texas": 3, "Paris": 1}})
    assert d.lookup("Paris") == "Paris,_Texas"
    back = WikiDictionary.loads(d.dumps())
    assert back.lookup("Paris") == "Paris,_Texas"
    assert back.dumps() == d.dumps()
    with pytest.raises(ValueError):
        WikiDictionary.loads("Paris\tParis\n")


def _wiki_of(g):
    return [v for _, r, v in g.attributes if r == "wiki"]


def test_wikify_precedence():
    g = parse_penman('(p / person :name (n / name :op1 "Ada"))')
    d = WikiDictionary({"Ada": {"Ada_Lovelace": 2}})
    linker = read_linker("Ada\tAda_(language)\n")
    assert _wiki_of(wikify(g, d, linker)) == ["Ada_Lovelace"]
    assert _wiki_of(wikify(g, WikiDictionary(), linker)) == ["Ada_(language)"]
    assert _wiki_of(wikify(g, WikiDictionary(), None)) == ["-"]


def test_wikify_replaces_existing_links():
    g = parse_penman(OBAMA)
    out = wikify(g, WikiDictionary(), {})
    assert _wiki_of(out) == ["-"]
    assert _wiki_of(g) == ["Barack_Obama"]
