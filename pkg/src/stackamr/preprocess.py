"""Input preprocessing: contextual-vector pooling, the linear tagger with
jackknifing, tag files, and dictionary wikification."""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .amr import AmrGraph

POOLED_LAYERS = 4
NONE_TAG = "NONE"


class LayerCount(ValueError):
    pass


class SpanGap(ValueError):
    pass


class DegenerateLabels(ValueError):
    pass


class TooSmall(ValueError):
    pass


# --------------------------------------------------------------------------
# contextual vectors


@dataclass
class ContextualVectors:
    """One sentence of word-piece vectors.

    ``layers`` has shape (n_layers, n_pieces, dim); ``spans[w]`` is the
    inclusive piece range of word ``w``.
    """

    pieces: List[str]
    spans: List[Tuple[int, int]]
    layers: np.ndarray
    words: Optional[List[str]] = None

    def to_json(self) -> str:
        d = {"pieces": self.pieces, "spans": [list(s) for s in self.spans],
             "layers": np.asarray(self.layers).tolist()}
        if self.words is not None:
            d["words"] = self.words
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "ContextualVectors":
        d = json.loads(line)
        return cls(list(d["pieces"]), [tuple(s) for s in d["spans"]],
                   np.asarray(d["layers"], dtype=float), d.get("words"))

    def word_strings(self) -> List[str]:
        if self.words is not None:
            return list(self.words)
        return ["".join(p[2:] if p.startswith("##") else p for p in self.pieces[s:e + 1])
                for s, e in self.spans]


def check_spans(spans: Sequence[Tuple[int, int]], n_pieces: int) -> None:
    expect = 0
    for w, (s, e) in enumerate(spans):
        if s != expect or e < s:
            raise SpanGap(f"word {w} spans pieces {s}..{e}; expected to start at {expect}")
        expect = e + 1
    if expect != n_pieces:
        raise SpanGap(f"word spans cover {expect} of {n_pieces} pieces")


def pool_vectors(cv: ContextualVectors) -> np.ndarray:
    """Per-word vectors: mean over the word's pieces of the mean of the last 4 layers."""
    layers = np.asarray(cv.layers, dtype=float)
    if layers.ndim != 3:
        raise ValueError(f"layers must be (n_layers, n_pieces, dim), got shape {layers.shape}")
    if layers.shape[0] < POOLED_LAYERS:
        raise LayerCount(f"need at least {POOLED_LAYERS} layers, got {layers.shape[0]}")
    check_spans(cv.spans, layers.shape[1])
    pieces = layers[-POOLED_LAYERS:].mean(axis=0)
    return np.stack([pieces[s:e + 1].mean(axis=0) for s, e in cv.spans]) if cv.spans \
        else np.zeros((0, layers.shape[2]))


def read_vectors(path: str) -> List[ContextualVectors]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for k, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(ContextualVectors.from_json(line))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{k}: {exc}") from None
    return out


def format_vectors(records: Iterable[ContextualVectors]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


# --------------------------------------------------------------------------
# linear tagger


class LinearTagger(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression fit by full-batch gradient descent.

    The objective is mean cross-entropy plus ``l2 / 2 * |W|^2``; a step that
    raises the loss is rejected and the step size halved, so the recorded
    loss never increases. Training stops when the loss changes by < ``tol``.
    """

    def __init__(self, l2: float = 1e-4, tol: float = 1e-6, max_iter: int = 2000, step: float = 1.0):
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter
        self.step = step

    def _loss_grad(self, W, b, X, Y):
        z = X @ W.T + b
        lse = logsumexp(z, axis=1, keepdims=True)
        n = X.shape[0]
        loss = float(np.sum(lse[:, 0] - np.sum(z * Y, axis=1)) / n + 0.5 * self.l2 * np.sum(W * W))
        P = np.exp(z - lse)
        D = (P - Y) / n
        return loss, D.T @ X + self.l2 * W, D.sum(axis=0)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise DegenerateLabels(f"need at least 2 label classes, got {list(self.classes_)}")
        Y = (y[:, None] == self.classes_[None, :]).astype(float)
        W = np.zeros((len(self.classes_), X.shape[1]))
        b = np.zeros(len(self.classes_))
        loss, gW, gb = self._loss_grad(W, b, X, Y)
        step = self.step
        self.loss_curve_ = [loss]
        self.n_iter_ = 0
        for it in range(self.max_iter):
            while True:
                W2, b2 = W - step * gW, b - step * gb
                loss2, gW2, gb2 = self._loss_grad(W2, b2, X, Y)
                if loss2 <= loss or step < 1e-12:
                    break
                step /= 2.0
            if loss2 > loss:
                break
            done = loss - loss2 < self.tol
            W, b, loss, gW, gb = W2, b2, loss2, gW2, gb2
            self.loss_curve_.append(loss)
            self.n_iter_ = it + 1
            if done:
                break
        self.coef_, self.intercept_ = W, b
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        z = self.decision_function(X)
        return np.exp(z - logsumexp(z, axis=1, keepdims=True))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def tag(tagger: LinearTagger, vectors: np.ndarray) -> List[str]:
    """One label per word, each predicted independently."""
    if len(vectors) == 0:
        return []
    return [str(t) for t in tagger.predict(vectors)]


def jackknife_tags(vectors: Sequence[np.ndarray], labels: Sequence[Sequence[str]], folds: int = 10,
                   make_tagger: Callable[[], LinearTagger] = LinearTagger) -> List[List[str]]:
    """Tag sentence ``k`` with a tagger trained on every fold but ``k % folds``."""
    if folds < 2:
        raise TooSmall(f"jackknifing needs at least 2 folds, got {folds}")
    if len(vectors) < folds:
        raise TooSmall(f"corpus of {len(vectors)} sentences is smaller than {folds} folds")
    if len(vectors) != len(labels):
        raise ValueError(f"{len(vectors)} vector records vs {len(labels)} label records")
    out: List[Optional[List[str]]] = [None] * len(vectors)
    for f in range(folds):
        train = [k for k in range(len(vectors)) if k % folds != f]
        X = np.concatenate([np.asarray(vectors[k], dtype=float) for k in train])
        y = np.array([t for k in train for t in labels[k]])
        model = make_tagger().fit(X, y)
        for k in range(f, len(vectors), folds):
            out[k] = tag(model, np.asarray(vectors[k], dtype=float))
    return out


# --------------------------------------------------------------------------
# tag files


def read_tag_file(path: str) -> List[Tuple[List[str], List[str]]]:
    """``token TAB tag`` lines, blank line between sentences."""
    out: List[Tuple[List[str], List[str]]] = []
    toks: List[str] = []
    tags: List[str] = []
    with open(path, encoding="utf-8") as fh:
        for k, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                if toks:
                    out.append((toks, tags))
                    toks, tags = [], []
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{k}: expected 'token<TAB>tag', got {line!r}")
            toks.append(parts[0])
            tags.append(parts[1])
    if toks:
        out.append((toks, tags))
    return out


def format_tag_file(sentences: Iterable[Tuple[Sequence[str], Sequence[str]]]) -> str:
    blocks = []
    for toks, tags in sentences:
        blocks.append("".join(f"{w}\t{t}\n" for w, t in zip(toks, tags)))
    return "\n".join(blocks)


# --------------------------------------------------------------------------
# wikification


def named_nodes(g: AmrGraph) -> List[Tuple[str, str]]:
    """``(entity var, name string)`` for every node with a ``:name`` child."""
    concepts = g.concepts()
    ops: Dict[str, List[Tuple[int, str]]] = defaultdict(list)
    for var, role, value in g.attributes:
        if role.startswith("op") and role[2:].isdigit():
            ops[var].append((int(role[2:]), value))
    out = []
    for src, role, dst in g.edges:
        if role == "name" and concepts.get(dst) == "name":
            out.append((src, " ".join(v for _, v in sorted(ops[dst]))))
    return out


def strip_wiki(g: AmrGraph) -> AmrGraph:
    out = g.copy()
    out.attributes = [a for a in out.attributes if a[1] != "wiki"]
    out.branches = None
    return out


class WikiDictionary:
    """Name string -> most frequent link (ties to the lexicographically smallest)."""

    def __init__(self, counts: Optional[Dict[str, Counter]] = None):
        self.counts: Dict[str, Counter] = defaultdict(Counter)
        for name, c in (counts or {}).items():
            self.counts[name].update(c)

    @classmethod
    def build(cls, graphs: Iterable[AmrGraph]) -> "WikiDictionary":
        d = cls()
        for g in graphs:
            wiki = {v: val for v, r, val in g.attributes if r == "wiki"}
            for var, name in named_nodes(g):
                link = wiki.get(var)
                if link is not None and link != "-":
                    d.counts[name][link] += 1
        return d

    def lookup(self, name: str) -> Optional[str]:
        c = self.counts.get(name)
        if not c:
            return None
        return min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0]

    def __contains__(self, name: str) -> bool:
        return bool(self.counts.get(name))

    def __len__(self):
        return sum(1 for c in self.counts.values() if c)

    def dumps(self) -> str:
        lines = []
        for name in sorted(self.counts):
            link = self.lookup(name)
            if link is not None:
                lines.append(f"{name}\t{link}\t{self.counts[name][link]}\n")
        return "".join(lines)

    @classmethod
    def loads(cls, text: str, path: str = "<string>") -> "WikiDictionary":
        d = cls()
        for k, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[2].isdigit():
                raise ValueError(f"{path}:{k}: expected 'name<TAB>link<TAB>count', got {line!r}")
            d.counts[parts[0]][parts[1]] += int(parts[2])
        return d


def read_linker(text: str, path: str = "<string>") -> Dict[str, str]:
    """Entity-linker output as ``name TAB link`` lines."""
    out = {}
    for k, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{k}: expected 'name<TAB>link', got {line!r}")
        out[parts[0]] = parts[1]
    return out


def wikify(g: AmrGraph, dictionary: WikiDictionary, linker: Optional[Dict[str, str]] = None) -> AmrGraph:
    """Give every named node one ``:wiki``: dictionary, then linker, then ``-``."""
    out = strip_wiki(g)
    for var, name in named_nodes(out):
        link = dictionary.lookup(name)
        if link is None and linker:
            link = linker.get(name)
        out.attributes.append((var, "wiki", link if link else "-"))
    return out
