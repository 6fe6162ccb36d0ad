"""The parser network.

Three stack LSTMs summarize the stack, the buffer and the action history. An
optional bidirectional encoder plus bilinear ("general") attention, queried
with the action-history summary, is fused into the state vector; the state
then feeds an action softmax and a per-family label softmax.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, StackLstm, Tensor
from .transition import (ACTIONS, Action, Item, ParserState, apply, initial_state,
                         label_family, legal_actions)

TAG_CHANNELS = ("pos", "dep", "ner", "concept")
UNK = "<unk>"
NONE_LABEL = "<none>"


@dataclass
class ParserConfig:
    word_dim: int = 100
    input_dim: int = 100
    hidden_dim: int = 100
    action_dim: int = 20
    label_dim: int = 20
    tag_dim: int = 20
    pretrained_dim: int = 0
    channels: Tuple[str, ...] = ()
    attention: bool = True
    min_word_count: int = 1
    lowercase: bool = True

    def __post_init__(self):
        self.channels = tuple(self.channels)
        bad = [c for c in self.channels if c not in TAG_CHANNELS]
        if bad:
            raise ValueError(f"unknown tag channels {bad}; expected a subset of {TAG_CHANNELS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ParserConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class Sentence:
    tokens: List[str]
    tags: Dict[str, List[str]] = field(default_factory=dict)
    vectors: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.tokens)


def as_sentence(x) -> Sentence:
    if isinstance(x, Sentence):
        return x
    if isinstance(x, str):
        return Sentence(x.split())
    return Sentence(list(x))


class Vocabulary:
    """Index over strings; entry 0 is the reserved unknown/none symbol."""

    def __init__(self, items: Iterable[str] = (), reserved: str = UNK):
        self.items: List[str] = [reserved]
        self.index: Dict[str, int] = {reserved: 0}
        for it in items:
            self.add(it)

    @classmethod
    def from_counts(cls, counts: Counter, min_count: int = 1, reserved: str = UNK) -> "Vocabulary":
        keep = sorted(w for w, c in counts.items() if c >= min_count and w != reserved)
        return cls(keep, reserved)

    def add(self, item: str) -> int:
        if item not in self.index:
            self.index[item] = len(self.items)
            self.items.append(item)
        return self.index[item]

    def get(self, item: str) -> int:
        return self.index.get(item, 0)

    def __len__(self):
        return len(self.items)

    def __contains__(self, item):
        return item in self.index

    def __getitem__(self, k: int) -> str:
        return self.items[k]

    def dumps(self) -> str:
        return "".join(f"{w}\n" for w in self.items)

    @classmethod
    def loads(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        v = cls((), lines[0])
        for w in lines[1:]:
            v.add(w)
        return v


@dataclass
class Vocabularies:
    words: Vocabulary
    concepts: Vocabulary
    roles: Vocabulary
    tags: Dict[str, Vocabulary]
    # action name -> label indices observed with that action
    support: Dict[str, List[int]]

    @classmethod
    def build(cls, sentences: Sequence[Sentence], sequences: Sequence[Sequence[Tuple[Action, Optional[str]]]],
              config: ParserConfig) -> "Vocabularies":
        words = Counter(_norm(w, config) for s in sentences for w in s.tokens)
        concepts = Counter()
        roles = Counter()
        for seq in sequences:
            for a, l in seq:
                fam = label_family(a)
                if fam == "concept":
                    concepts[l] += 1
                elif fam == "role":
                    roles[l] += 1
        cv = Vocabulary.from_counts(concepts, 1, NONE_LABEL)
        rv = Vocabulary.from_counts(roles, 1, NONE_LABEL)
        support: Dict[str, set] = {a.value: set() for a in ACTIONS}
        for seq in sequences:
            for a, l in seq:
                fam = label_family(a)
                if fam == "concept":
                    support[a.value].add(cv.get(l))
                elif fam == "role":
                    support[a.value].add(rv.get(l))
        tags = {}
        for ch in config.channels:
            tags[ch] = Vocabulary.from_counts(
                Counter(t for s in sentences for t in s.tags.get(ch, ())), 1)
        return cls(Vocabulary.from_counts(words, config.min_word_count), cv, rv, tags,
                   {k: sorted(v) for k, v in support.items()})

    def to_dict(self) -> dict:
        return {"words": self.words.items, "concepts": self.concepts.items,
                "roles": self.roles.items,
                "tags": {k: v.items for k, v in self.tags.items()},
                "support": self.support}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabularies":
        def mk(items):
            return Vocabulary(items[1:], items[0])
        return cls(mk(d["words"]), mk(d["concepts"]), mk(d["roles"]),
                   {k: mk(v) for k, v in d["tags"].items()}, d["support"])


def _norm(word: str, config: ParserConfig) -> str:
    return word.lower() if config.lowercase else word


@dataclass
class SentenceContext:
    """Per-sentence tensors shared by every step of one parse."""

    sentence: Sentence
    token_reps: List[Tensor]
    encoded: Optional[Tensor]  # (n, 2H) matrix of encoder states
    cache: Dict[Tuple[int, int, Optional[str]], Tensor] = field(default_factory=dict)


@dataclass(frozen=True)
class NetState:
    parser: ParserState
    stack: ad.StackNode
    buffer: ad.StackNode
    history: ad.StackNode


class ParserNetwork:
    def __init__(self, config: ParserConfig, vocabs: Vocabularies, seed: int = 0):
        self.config = config
        self.vocabs = vocabs
        self.store = ParamStore(seed)
        c, s = config, self.store
        H = c.hidden_dim
        s.add("word_emb", (len(vocabs.words), c.word_dim), "embedding")
        for ch in c.channels:
            s.add(f"tag_emb.{ch}", (len(vocabs.tags[ch]), c.tag_dim), "embedding")
        rep_in = c.word_dim + c.pretrained_dim + c.tag_dim * len(c.channels)
        s.add("input.W", (c.input_dim, rep_in))
        s.add("input.b", (c.input_dim,), "zeros")
        s.add("concept_emb", (len(vocabs.concepts), c.input_dim), "embedding")
        s.add("action_emb", (len(ACTIONS), c.action_dim), "embedding")
        self.n_labels = 1 + len(vocabs.concepts) + len(vocabs.roles)
        s.add("label_emb", (self.n_labels, c.label_dim), "embedding")
        self.stack_lstm = StackLstm(s, "stack", c.input_dim, H)
        self.buffer_lstm = StackLstm(s, "buffer", c.input_dim, H)
        self.history_lstm = StackLstm(s, "history", c.action_dim + c.label_dim, H)
        parts = 3
        if c.attention:
            self.fwd = ad.Lstm(s, "encoder.fwd", c.input_dim, H)
            self.bwd = ad.Lstm(s, "encoder.bwd", c.input_dim, H)
            s.add("attention.W_a", (H, 2 * H))
            s.add("fusion.W1_dec", (H, 2 * H))
            s.add("fusion.W1_att", (H, 2 * H))
            s.add("fusion.W2_dec", (H, 2 * H))
            s.add("fusion.W2_att", (H, 2 * H))
            parts = 4
        s.add("state.W", (H, parts * H))
        s.add("state.d", (H,), "zeros")
        s.add("action.W", (len(ACTIONS), H))
        s.add("action.b", (len(ACTIONS),), "zeros")
        s.add("concept.W", (len(vocabs.concepts), H + c.action_dim))
        s.add("concept.b", (len(vocabs.concepts),), "zeros")
        s.add("role.W", (len(vocabs.roles), H + c.action_dim))
        s.add("role.b", (len(vocabs.roles),), "zeros")
        self._action_index = {a: k for k, a in enumerate(ACTIONS)}
        self._label_masks = {}
        for a in ACTIONS:
            fam = label_family(a)
            if fam is None:
                continue
            size = len(vocabs.concepts) if fam == "concept" else len(vocabs.roles)
            mask = np.zeros(size, dtype=bool)
            mask[vocabs.support.get(a.value, [])] = True
            self._label_masks[a] = mask

    # ---- input representations
    def token_features(self, sentence: Sentence, i: int) -> Tensor:
        c, s = self.config, self.store
        parts = [ad.lookup(s["word_emb"], self.vocabs.words.get(_norm(sentence.tokens[i], c)))]
        if c.pretrained_dim:
            if sentence.vectors is None:
                vec = np.zeros(c.pretrained_dim)
            else:
                vec = np.asarray(sentence.vectors[i], dtype=float)
                if vec.shape != (c.pretrained_dim,):
                    raise ad.ShapeMismatch("pretrained vector", (c.pretrained_dim,), vec.shape)
            parts.append(ad.constant(vec))
        for ch in c.channels:
            tags = sentence.tags.get(ch)
            idx = self.vocabs.tags[ch].get(tags[i]) if tags else 0
            parts.append(ad.lookup(s[f"tag_emb.{ch}"], idx))
        return ad.concat(parts) if len(parts) > 1 else parts[0]

    def token_rep(self, sentence: Sentence, i: int) -> Tensor:
        s = self.store
        return ad.relu(ad.affine(s["input.W"], self.token_features(sentence, i), s["input.b"]))

    def encode_sentence(self, token_reps: Sequence[Tensor]) -> List[Tensor]:
        """Bidirectional encoder: one ``[forward; backward]`` state per token."""
        if not token_reps:
            raise ValueError("cannot encode an empty sentence")
        fwd = self.fwd.run(token_reps)
        bwd = self.bwd.run(reversed(token_reps))[::-1]
        return [ad.concat([f, b]) for f, b in zip(fwd, bwd)]

    def context(self, sentence) -> SentenceContext:
        sentence = as_sentence(sentence)
        reps = [self.token_rep(sentence, i) for i in range(len(sentence))]
        encoded = None
        if self.config.attention and reps:
            encoded = ad.rows(self.encode_sentence(reps))
        return SentenceContext(sentence, reps, encoded)

    def item_rep(self, ctx: SentenceContext, item: Item, concept: Optional[str]) -> Tensor:
        key = (item.start, item.end, concept)
        rep = ctx.cache.get(key)
        if rep is None:
            rep = ad.mean(ctx.token_reps[item.start:item.end + 1])
            if concept is not None:
                emb = ad.lookup(self.store["concept_emb"], self.vocabs.concepts.get(concept))
                rep = ad.add(rep, emb)
            ctx.cache[key] = rep
        return rep

    def _rep(self, ctx: SentenceContext, state: ParserState, item: Item) -> Tensor:
        concept = None
        if item.is_node:
            concept = dict(state.nodes)[item.node]
        return self.item_rep(ctx, item, concept)

    # ---- state
    def initial(self, ctx: SentenceContext) -> NetState:
        parser = initial_state(ctx.sentence.tokens)
        buf = self.buffer_lstm.empty()
        for item in reversed(parser.buffer):
            buf = self.buffer_lstm.push(buf, self._rep(ctx, parser, item))
        return NetState(parser, self.stack_lstm.empty(), buf, self.history_lstm.empty())

    def attend(self, query: Tensor, encoded: Tensor) -> Tuple[Tensor, Tensor]:
        """General attention: ``e_i = q^T W_a h_i``; returns ``(alpha, context)``."""
        e = ad.matvec(encoded, ad.vecmat(query, self.store["attention.W_a"]))
        alpha = ad.softmax(e)
        return alpha, ad.vecmat(alpha, encoded)

    def fuse_state(self, stack_sum: Tensor, buffer_sum: Tensor, history_sum: Tensor,
                   context: Optional[Tensor] = None) -> Tensor:
        """State vector; with ``context`` the attention fusion ``u_j`` is appended."""
        s = self.store
        parts = [stack_sum, buffer_sum, history_sum]
        if context is not None:
            dec = ad.concat([history_sum, stack_sum])
            g = ad.tanh(ad.add(ad.matvec(s["fusion.W1_dec"], dec), ad.matvec(s["fusion.W1_att"], context)))
            u = ad.tanh(ad.add_many([g, ad.matvec(s["fusion.W2_dec"], dec),
                                     ad.matvec(s["fusion.W2_att"], context)]))
            parts.append(u)
        return ad.relu(ad.affine(s["state.W"], ad.concat(parts), s["state.d"]))

    def state_vector(self, ctx: SentenceContext, ns: NetState) -> Tensor:
        st = self.stack_lstm.summary(ns.stack)
        b = self.buffer_lstm.summary(ns.buffer)
        a = self.history_lstm.summary(ns.history)
        context = None
        if self.config.attention and ctx.encoded is not None:
            _, context = self.attend(a, ctx.encoded)
        elif self.config.attention:
            context = ad.constant(np.zeros(2 * self.config.hidden_dim))
        return self.fuse_state(st, b, a, context)

    def allowed(self, state: ParserState) -> np.ndarray:
        """Legal action kinds that also have at least one known label."""
        legal = legal_actions(state)
        mask = np.zeros(len(ACTIONS), dtype=bool)
        for a in legal:
            if a in self._label_masks and not self._label_masks[a].any():
                continue
            mask[self._action_index[a]] = True
        if not mask.any():
            for a in legal:
                mask[self._action_index[a]] = True
        return mask

    def predict(self, s_t: Tensor, mask: np.ndarray) -> Tensor:
        """Log-probabilities over action kinds, restricted to ``mask``."""
        s = self.store
        return ad.log_softmax(ad.affine(s["action.W"], s_t, s["action.b"]), mask)

    def label_logprobs(self, s_t: Tensor, action: Action) -> Optional[Tensor]:
        """Log-probabilities of the label given ``action`` (None if unlabeled)."""
        fam = label_family(action)
        if fam is None:
            return None
        s = self.store
        emb = ad.lookup(s["action_emb"], self._action_index[action])
        logits = ad.affine(s[f"{fam}.W"], ad.concat([s_t, emb]), s[f"{fam}.b"])
        return ad.log_softmax(logits, self._label_masks[action])

    def label_index(self, action: Action, label: Optional[str]) -> int:
        fam = label_family(action)
        if fam == "concept":
            return self.vocabs.concepts.get(label)
        if fam == "role":
            return self.vocabs.roles.get(label)
        return 0

    def label_string(self, action: Action, index: int) -> Optional[str]:
        fam = label_family(action)
        if fam == "concept":
            return self.vocabs.concepts[index]
        if fam == "role":
            return self.vocabs.roles[index]
        return None

    def _label_embedding_index(self, action: Action, label: Optional[str]) -> int:
        fam = label_family(action)
        if fam == "concept":
            return 1 + self.vocabs.concepts.get(label)
        if fam == "role":
            return 1 + len(self.vocabs.concepts) + self.vocabs.roles.get(label)
        return 0

    def advance(self, ctx: SentenceContext, ns: NetState, action: Action,
                label: Optional[str]) -> NetState:
        """Apply a transition and update the three stack LSTMs to match."""
        ps = ns.parser
        new = apply(ps, action, label)
        stack, buf = ns.stack, ns.buffer
        S, B = self.stack_lstm, self.buffer_lstm
        if action is Action.SHIFT:
            buf = B.pop(buf)
            stack = S.push(stack, self._rep(ctx, new, new.stack[-1]))
        elif action in (Action.REDUCE, Action.RIGHT_ARC):
            stack = S.pop(stack)
        elif action in (Action.CONFIRM, Action.ENTITY):
            stack = S.push(S.pop(stack), self._rep(ctx, new, new.stack[-1]))
        elif action is Action.MERGE:
            stack = S.push(S.pop(S.pop(stack)), self._rep(ctx, new, new.stack[-1]))
        elif action is Action.SWAP:
            stack = S.push(S.pop(S.pop(stack)), self._rep(ctx, new, new.stack[-1]))
            buf = B.push(buf, self._rep(ctx, new, new.buffer[0]))
        x = ad.concat([ad.lookup(self.store["action_emb"], self._action_index[action]),
                       ad.lookup(self.store["label_emb"], self._label_embedding_index(action, label))])
        history = self.history_lstm.push(ns.history, x)
        return NetState(new, stack, buf, history)

    def step_loss(self, ctx: SentenceContext, ns: NetState, action: Action,
                  label: Optional[str]) -> Tensor:
        """Negative log-likelihood of one (action, label) decision."""
        s_t = self.state_vector(ctx, ns)
        lp = ad.pick(self.predict(s_t, self.allowed(ns.parser)), self._action_index[action])
        llp = self.label_logprobs(s_t, action)
        if llp is not None:
            lp = ad.add(lp, ad.pick(llp, self.label_index(action, label)))
        return ad.scale(lp, -1.0)

    def sequence_loss(self, sentence, actions: Sequence[Tuple[Action, Optional[str]]]) -> Tensor:
        ctx = self.context(sentence)
        ns = self.initial(ctx)
        losses = []
        for action, label in actions:
            losses.append(self.step_loss(ctx, ns, action, label))
            ns = self.advance(ctx, ns, action, label)
        if not losses:
            return ad.constant(0.0)
        return ad.add_many(losses)

    def action_index(self, action: Action) -> int:
        return self._action_index[action]

    # ---- persistence
    def config_snapshot(self) -> dict:
        return {"model": self.config.to_dict(), "vocabs": self.vocabs.to_dict()}

    @classmethod
    def from_snapshot(cls, snapshot: dict, values: Dict[str, np.ndarray]) -> "ParserNetwork":
        net = cls(ParserConfig.from_dict(snapshot["model"]), Vocabularies.from_dict(snapshot["vocabs"]))
        net.store.load_state_dict(values)
        return net
