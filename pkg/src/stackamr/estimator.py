"""scikit-learn style front end for the parser."""
from __future__ import annotations

from typing import List, Optional, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .align import AlignmentMap
from .amr import AmrGraph, sentence_tokens
from .model import ParserConfig, Sentence, as_sentence
from .smatch import corpus_smatch
from .train import (OptimConfig, RlConfig, build_network, parse_all, prepare_examples,
                    train_mle, train_rl, train_seeds)

OBJECTIVES = ("mle", "mle-smatch", "rl")


def check_sentences(X) -> List[Sentence]:
    if X is None:
        raise ValueError("expected a sequence of sentences, got None")
    out = [as_sentence(x) for x in X]
    for k, s in enumerate(out):
        if not all(isinstance(t, str) for t in s.tokens):
            raise TypeError(f"sentence {k}: tokens must be strings")
    return out


def check_graphs(y) -> List[AmrGraph]:
    if y is None:
        raise ValueError("expected a sequence of AMR graphs, got None")
    out = list(y)
    for k, g in enumerate(out):
        if not isinstance(g, AmrGraph):
            raise TypeError(f"item {k}: expected AmrGraph, got {type(g).__name__}")
        g.validate()
    return out


def check_corpus(X, y):
    """Sentences and graphs of equal length; ``X=None`` takes tokens from metadata."""
    graphs = check_graphs(y)
    sents = [Sentence(sentence_tokens(g)) for g in graphs] if X is None else check_sentences(X)
    if len(sents) != len(graphs):
        raise ValueError(f"inconsistent lengths: {len(sents)} sentences vs {len(graphs)} graphs")
    return sents, graphs


class AmrParser(BaseEstimator):
    """Transition-based AMR parser; ``fit`` trains, ``predict`` parses."""

    def __init__(self, word_dim=100, input_dim=100, hidden_dim=100, action_dim=20, label_dim=20,
                 tag_dim=20, pretrained_dim=0, channels=(), attention=True, objective="mle",
                 epochs=10, rl_epochs=10, optimizer="sgd", lr=0.1, decay=0.05, clip=5.0,
                 rl_lr=0.01, epsilon=0.05, batch=40, beam=10, restarts=4, seeds=1,
                 random_state=0):
        self.word_dim = word_dim
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.action_dim = action_dim
        self.label_dim = label_dim
        self.tag_dim = tag_dim
        self.pretrained_dim = pretrained_dim
        self.channels = channels
        self.attention = attention
        self.objective = objective
        self.epochs = epochs
        self.rl_epochs = rl_epochs
        self.optimizer = optimizer
        self.lr = lr
        self.decay = decay
        self.clip = clip
        self.rl_lr = rl_lr
        self.epsilon = epsilon
        self.batch = batch
        self.beam = beam
        self.restarts = restarts
        self.seeds = seeds
        self.random_state = random_state

    def _config(self) -> ParserConfig:
        return ParserConfig(self.word_dim, self.input_dim, self.hidden_dim, self.action_dim,
                            self.label_dim, self.tag_dim, self.pretrained_dim, tuple(self.channels),
                            self.attention)

    def fit(self, X, y, alignments: Optional[Sequence[AlignmentMap]] = None, X_dev=None, y_dev=None):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        sents, graphs = check_corpus(X, y)
        examples = prepare_examples(graphs, sents, alignments)
        dev = []
        if y_dev is not None:
            dsents, dgraphs = check_corpus(X_dev, y_dev)
            dev = prepare_examples(dgraphs, dsents)
        optim = OptimConfig(self.optimizer, self.lr, self.decay, self.clip)
        base = self.random_state

        def one(seed):
            net = build_network(examples, self._config(), seed)
            return train_mle(net, examples, dev, self.epochs, self.objective == "mle-smatch",
                             optim, seed, self.restarts)

        n = self.seeds if isinstance(self.seeds, int) else len(self.seeds)
        seeds = [base + k for k in range(n)] if isinstance(self.seeds, int) else list(self.seeds)
        self.seed_, result = train_seeds(one, seeds)
        self.mle_history_ = result.history
        if self.objective == "rl":
            result = train_rl(examples, result.net, RlConfig(self.epsilon, self.batch, self.restarts),
                              dev, self.rl_epochs, OptimConfig(self.optimizer, self.rl_lr, 0.0, self.clip),
                              self.seed_)
            self.rl_history_ = result.history
        self.network_ = result.net
        self.oracle_bound_ = corpus_smatch([e.reachable for e in examples], graphs, self.restarts, base)
        return self

    def predict(self, X) -> List[AmrGraph]:
        check_is_fitted(self, "network_")
        return parse_all(self.network_, check_sentences(X), self.beam)

    def score(self, X, y) -> float:
        check_is_fitted(self, "network_")
        sents, graphs = check_corpus(X, y)
        return corpus_smatch(self.predict(sents), graphs, self.restarts, self.random_state)
