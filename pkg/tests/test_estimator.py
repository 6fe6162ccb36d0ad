import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stackamr import synthetic
from stackamr.amr import sentence_tokens
from stackamr.estimator import AmrParser, check_corpus

SMALL = dict(word_dim=8, input_dim=8, hidden_dim=8, action_dim=4, label_dim=4, tag_dim=4)


@pytest.fixture(scope="module")
def corpus():
    return synthetic.generate(12, seed=7)


def test_params_round_trip():
    p = AmrParser(hidden_dim=12, objective="rl")
    params = p.get_params()
    assert params["hidden_dim"] == 12 and params["objective"] == "rl"
    q = clone(p)
    assert q.get_params() == params
    assert p.set_params(lr=0.5).lr == 0.5


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        AmrParser().predict([["a"]])


def test_bad_objective(corpus):
    with pytest.raises(ValueError, match="objective"):
        AmrParser(objective="nope", **SMALL).fit(None, corpus)


def test_check_corpus_lengths(corpus):
    with pytest.raises(ValueError, match="inconsistent"):
        check_corpus([["a"]], corpus)
    with pytest.raises(TypeError):
        check_corpus(None, ["not a graph"])


def test_fit_predict_score(corpus):
    X = [sentence_tokens(g) for g in corpus]
    est = AmrParser(epochs=3, beam=2, **SMALL).fit(X, corpus)
    assert est.oracle_bound_ == 1.0
    assert len(est.mle_history_) == 3
    preds = est.predict(X)
    assert len(preds) == len(X)
    s = est.score(X, corpus)
    assert 0.0 <= s <= 1.0


def test_fit_rl_and_seeds(corpus):
    est = AmrParser(objective="rl", epochs=1, rl_epochs=1, batch=6, seeds=2, beam=1, **SMALL)
    est.fit(None, corpus, X_dev=None, y_dev=corpus[:4])
    assert est.seed_ in (0, 1)
    assert len(est.rl_history_) == 1
