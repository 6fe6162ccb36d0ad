"""Decoding (greedy, sampled, beam) and the three training objectives."""
from __future__ import annotations

import csv
import io
import logging
import os
import random
import tempfile
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .align import AlignmentMap, alignments_from_metadata
from .amr import AmrGraph, sentence_tokens
from .model import ParserConfig, ParserNetwork, Sentence, Vocabularies
from .smatch import corpus_smatch, sentence_smatch
from .transition import ACTIONS, Action, ParserState, oracle

log = logging.getLogger(__name__)


class EmptyCorpus(ValueError):
    pass


class MissingInit(ValueError):
    pass


@dataclass
class RlConfig:
    epsilon: float = 0.05
    batch: int = 40
    restarts: int = 4

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")


@dataclass
class BeamConfig:
    width: int = 10

    def __post_init__(self):
        if self.width < 1:
            raise ValueError(f"beam width must be >= 1, got {self.width}")


@dataclass
class OptimConfig:
    optimizer: str = "sgd"
    lr: float = 0.1
    decay: float = 0.05
    clip: Optional[float] = 5.0


@dataclass
class Example:
    sentence: Sentence
    gold: AmrGraph
    actions: List[Tuple[Action, Optional[str]]]
    reachable: AmrGraph
    weight: float = 1.0


def prepare_examples(graphs: Sequence[AmrGraph], sentences: Optional[Sequence[Sentence]] = None,
                     alignments: Optional[Sequence[AlignmentMap]] = None) -> List[Example]:
    """Run the oracle over an aligned corpus."""
    out = []
    for k, g in enumerate(graphs):
        sent = sentences[k] if sentences is not None else Sentence(sentence_tokens(g))
        amap = alignments[k] if alignments is not None else alignments_from_metadata(g, len(sent))
        res = oracle(sent.tokens, g, amap)
        out.append(Example(sent, g, res.actions, res.reachable))
    return out


def build_network(examples: Sequence[Example], config: ParserConfig, seed: int = 0) -> ParserNetwork:
    if not examples:
        raise EmptyCorpus("no training examples")
    vocabs = Vocabularies.build([e.sentence for e in examples], [e.actions for e in examples], config)
    return ParserNetwork(config, vocabs, seed)


# --------------------------------------------------------------------------
# decoding


def flatten(p: np.ndarray) -> np.ndarray:
    """Square root of each probability, renormalized."""
    q = np.sqrt(np.asarray(p, dtype=float))
    return q / q.sum()


@dataclass
class Decoded:
    graph: AmrGraph
    actions: List[Tuple[Action, Optional[str]]]
    score: float
    state: ParserState
    flattened: bool = False
    logprob: Optional[ad.Tensor] = None


def _argmax(lp: np.ndarray) -> int:
    return int(np.argmax(lp))


def _greedy_choice(net: ParserNetwork, s_t, mask, score: float) -> Tuple[Action, Optional[str], float]:
    lp = net.predict(s_t, mask).value
    k = _argmax(lp)
    action = ACTIONS[k]
    # same summation order as the beam, so width 1 reproduces these scores exactly
    score = score + float(lp[k])
    label = None
    llp = net.label_logprobs(s_t, action)
    if llp is not None:
        j = _argmax(llp.value)
        label = net.label_string(action, j)
        score = score + float(llp.value[j])
    return action, label, score


def _sample_index(rng: np.random.Generator, lp: np.ndarray, flat: bool) -> int:
    p = np.exp(lp)
    if flat:
        p = flatten(p)
    p = p / p.sum()
    return int(rng.choice(len(p), p=p))


def decode_greedy(net: ParserNetwork, sentence) -> Decoded:
    with ad.no_grad():
        ctx = net.context(sentence)
        ns = net.initial(ctx)
        score = 0.0
        while not ns.parser.terminal:
            s_t = net.state_vector(ctx, ns)
            action, label, score = _greedy_choice(net, s_t, net.allowed(ns.parser), score)
            ns = net.advance(ctx, ns, action, label)
    return Decoded(ns.parser.graph(), list(ns.parser.history), score, ns.parser)


def decode_sample(net: ParserNetwork, sentence, rng: np.random.Generator, flat: bool = False,
                  record: bool = False) -> Decoded:
    """Draw one action sequence; with ``record`` the summed log-prob keeps its graph."""
    def run():
        ctx = net.context(sentence)
        ns = net.initial(ctx)
        terms = []
        while not ns.parser.terminal:
            s_t = net.state_vector(ctx, ns)
            alp = net.predict(s_t, net.allowed(ns.parser))
            k = _sample_index(rng, alp.value, flat)
            action = ACTIONS[k]
            terms.append(ad.pick(alp, k))
            label = None
            llp = net.label_logprobs(s_t, action)
            if llp is not None:
                j = _sample_index(rng, llp.value, flat)
                label = net.label_string(action, j)
                terms.append(ad.pick(llp, j))
            ns = net.advance(ctx, ns, action, label)
        total = ad.add_many(terms) if terms else ad.constant(0.0)
        return ns, total

    if record:
        ns, total = run()
    else:
        with ad.no_grad():
            ns, total = run()
    return Decoded(ns.parser.graph(), list(ns.parser.history), float(total.value), ns.parser,
                   flat, total if record else None)


def decode_explore(net: ParserNetwork, sentence, rng: np.random.Generator, epsilon: float,
                   record: bool = False) -> Decoded:
    """Sampled decode whose distributions are flattened with probability ``epsilon``."""
    return decode_sample(net, sentence, rng, bool(rng.random() < epsilon), record)


@dataclass
class _Hyp:
    score: float
    ns: object
    greedy: bool


def decode_beam(net: ParserNetwork, sentence, width: int = 10) -> Decoded:
    """Beam search over (action, label) steps scored by summed log-probability.

    The greedy continuation of the greedy hypothesis always keeps a slot, so
    width 1 is exactly greedy decoding and wider beams never end below it.
    """
    BeamConfig(width)
    with ad.no_grad():
        ctx = net.context(sentence)
        beam = [_Hyp(0.0, net.initial(ctx), True)]
        while not all(h.ns.parser.terminal for h in beam):
            cands: List[Tuple[float, int, _Hyp, Optional[Tuple[Action, Optional[str]]], bool]] = []
            order = 0
            for h in beam:
                if h.ns.parser.terminal:
                    cands.append((h.score, order, h, None, h.greedy))
                    order += 1
                    continue
                s_t = net.state_vector(ctx, h.ns)
                mask = net.allowed(h.ns.parser)
                alp = net.predict(s_t, mask).value
                g_action = ACTIONS[_argmax(alp)]
                for k in np.flatnonzero(mask):
                    action = ACTIONS[k]
                    base = h.score + float(alp[k])
                    llp = net.label_logprobs(s_t, action)
                    if llp is None:
                        options = [(None, base, action is g_action)]
                    else:
                        lv = llp.value
                        top = np.argsort(-lv, kind="stable")[:width]
                        top = [j for j in top if np.isfinite(lv[j])]
                        best = _argmax(lv)
                        if best not in top:
                            top.append(best)
                        options = [(net.label_string(action, j), base + float(lv[j]),
                                    action is g_action and j == best) for j in top]
                    for label, sc, is_g in options:
                        cands.append((sc, order, h, (action, label), h.greedy and is_g))
                        order += 1
            cands.sort(key=lambda c: (-c[0], c[1]))
            kept = cands[:width]
            if not any(c[4] for c in kept):
                kept[-1] = next(c for c in cands if c[4])
            beam = []
            for sc, _, h, step, is_g in kept:
                ns = h.ns if step is None else net.advance(ctx, h.ns, *step)
                beam.append(_Hyp(sc, ns, is_g))
        best = max(beam, key=lambda h: h.score)
    p = best.ns.parser
    return Decoded(p.graph(), list(p.history), best.score, p)


def decode(net: ParserNetwork, sentence, mode: str = "greedy", width: int = 10,
           flat: bool = False, rng: Optional[np.random.Generator] = None) -> Decoded:
    if mode == "greedy":
        return decode_greedy(net, sentence)
    if mode == "beam":
        return decode_beam(net, sentence, width)
    if mode == "sample":
        return decode_sample(net, sentence, rng or np.random.default_rng(0), flat)
    raise ValueError(f"unknown decoding mode {mode!r}")


def parse_all(net: ParserNetwork, sentences, beam: int = 1) -> List[AmrGraph]:
    if beam <= 1:
        return [decode_greedy(net, s).graph for s in sentences]
    return [decode_beam(net, s, beam).graph for s in sentences]


def evaluate(net: ParserNetwork, examples: Sequence[Example], beam: int = 1,
             restarts: int = 4, seed: int = 0) -> float:
    if not examples:
        return 0.0
    preds = parse_all(net, [e.sentence for e in examples], beam)
    return corpus_smatch(preds, [e.gold for e in examples], restarts, seed)


# --------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_smatch: Optional[float]


@dataclass
class TrainResult:
    net: ParserNetwork
    history: List[EpochRecord] = field(default_factory=list)
    best_dev: Optional[float] = None
    best_epoch: Optional[int] = None

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "dev_smatch"])
        for r in self.history:
            w.writerow([r.epoch, f"{r.train_loss:.6f}",
                        "" if r.dev_smatch is None else f"{r.dev_smatch:.4f}"])
        return buf.getvalue()


def save_network(path: str, net: ParserNetwork, extra: Optional[dict] = None) -> None:
    snap = net.config_snapshot()
    if extra:
        snap["training"] = extra
    ad.save_checkpoint(path, net.store, snap)


def load_network(path: str) -> ParserNetwork:
    values, snap = ad.load_checkpoint(path)
    return ParserNetwork.from_snapshot(snap, values)


def write_text_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def smatch_weights(examples: Sequence[Example], restarts: int = 4, seed: int = 0) -> List[float]:
    """Sentence Smatch of each oracle-reachable graph against its gold graph."""
    return [sentence_smatch(e.reachable, e.gold, restarts, seed + k) for k, e in enumerate(examples)]


def _snapshot(net: ParserNetwork) -> Dict[str, np.ndarray]:
    return net.store.state_dict()


def train_mle(net: ParserNetwork, examples: Sequence[Example], dev: Sequence[Example] = (),
              epochs: int = 10, weight_by_smatch: bool = False, optim: Optional[OptimConfig] = None,
              seed: int = 0, restarts: int = 4, checkpoint: Optional[str] = None,
              target: Optional[float] = None,
              on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Per-sentence SGD on the oracle negative log-likelihood.

    With ``weight_by_smatch`` each sentence's loss is scaled by the Smatch of
    its oracle-reachable graph. The parameters with the best dev score are
    restored at the end (and written to ``checkpoint``); without a dev set the
    last epoch wins. ``target`` stops early once dev Smatch reaches it.
    """
    if not examples:
        raise EmptyCorpus("no training examples")
    optim = optim or OptimConfig()
    opt = ad.make_optimizer(optim.optimizer, net.store, optim.lr, optim.decay, optim.clip)
    weights = smatch_weights(examples, restarts, seed) if weight_by_smatch else [1.0] * len(examples)
    rng = random.Random(seed)
    order = list(range(len(examples)))
    result = TrainResult(net)
    best_values = None
    for epoch in range(1, epochs + 1):
        opt.epoch = epoch - 1
        rng.shuffle(order)
        total = 0.0
        for k in order:
            ex = examples[k]
            loss = net.sequence_loss(ex.sentence, ex.actions)
            total += float(loss.value) * weights[k]
            if weights[k] != 0.0:
                loss.backward(np.asarray(weights[k]))
                opt.step()
        dev_score = evaluate(net, dev, 1, restarts, seed) if dev else None
        rec = EpochRecord(epoch, total / len(examples), dev_score)
        result.history.append(rec)
        log.info("epoch %d loss %.4f dev %s", epoch, rec.train_loss, dev_score)
        if on_epoch:
            on_epoch(rec)
        if dev_score is None or result.best_dev is None or dev_score > result.best_dev:
            result.best_dev, result.best_epoch = dev_score, epoch
            best_values = _snapshot(net)
        if target is not None and dev_score is not None and dev_score >= target:
            break
    net.store.load_state_dict(best_values)
    if checkpoint:
        save_network(checkpoint, net, {"objective": "mle-smatch" if weight_by_smatch else "mle",
                                       "best_epoch": result.best_epoch})
    return result


@dataclass
class RlStats:
    sentences: int = 0
    flattened: int = 0
    zero_advantage: int = 0
    mean_reward: float = 0.0


def train_rl(examples: Sequence[Example], init, cfg: Optional[RlConfig] = None,
             dev: Sequence[Example] = (), epochs: int = 1, optim: Optional[OptimConfig] = None,
             seed: int = 0, checkpoint: Optional[str] = None,
             on_sentence: Optional[Callable[[float, float], None]] = None,
             on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Self-critical policy gradient from an MLE-trained network.

    ``init`` is a checkpoint path or a trained ``ParserNetwork`` (trained in
    place). For every sentence the greedy decode's reward is the baseline for
    one sampled decode; ``(r(g^s) - r(g_hat)) * -log p(g^s)`` is accumulated
    and applied once per batch. ``on_sentence(advantage, grad_delta_norm)``
    instruments each sentence's gradient contribution.
    """
    if init is None:
        raise MissingInit("self-critical training needs an MLE checkpoint to start from")
    net = load_network(init) if isinstance(init, (str, os.PathLike)) else init
    if not examples:
        raise EmptyCorpus("no training examples")
    cfg = cfg or RlConfig()
    optim = optim or OptimConfig(lr=0.01)
    opt = ad.make_optimizer(optim.optimizer, net.store, optim.lr, optim.decay, optim.clip)
    nrng = np.random.default_rng(seed)
    prng = random.Random(seed)
    order = list(range(len(examples)))
    result = TrainResult(net)
    result.stats = RlStats()
    net.store.zero_grad()
    best_values = _snapshot(net)
    result.best_dev = evaluate(net, dev, 1, cfg.restarts, seed) if dev else None
    result.best_epoch = 0
    rewards = []
    for epoch in range(1, epochs + 1):
        opt.epoch = epoch - 1
        prng.shuffle(order)
        surrogate = 0.0
        for b0 in range(0, len(order), cfg.batch):
            batch = order[b0:b0 + cfg.batch]
            for k in batch:
                ex = examples[k]
                rseed = seed + k
                greedy = decode_greedy(net, ex.sentence)
                r_hat = sentence_smatch(greedy.graph, ex.gold, cfg.restarts, rseed)
                sample = decode_explore(net, ex.sentence, nrng, cfg.epsilon, record=True)
                flat = sample.flattened
                r_s = sentence_smatch(sample.graph, ex.gold, cfg.restarts, rseed)
                adv = r_s - r_hat
                result.stats.sentences += 1
                result.stats.flattened += int(flat)
                result.stats.zero_advantage += int(adv == 0.0)
                rewards.append(r_s)
                surrogate += -adv * float(sample.logprob.value)
                seed_grad = np.asarray(-adv / len(batch))
                if on_sentence is not None:
                    before = {n: t.grad.copy() for n, t in net.store}
                    sample.logprob.backward(seed_grad)
                    delta = np.sqrt(sum(np.sum((t.grad - before[n]) ** 2) for n, t in net.store))
                    on_sentence(adv, float(delta))
                elif adv != 0.0:
                    sample.logprob.backward(seed_grad)
            opt.step()
        dev_score = evaluate(net, dev, 1, cfg.restarts, seed) if dev else None
        rec = EpochRecord(epoch, surrogate / len(examples), dev_score)
        result.history.append(rec)
        log.info("rl epoch %d surrogate %.4f dev %s", epoch, rec.train_loss, dev_score)
        if on_epoch:
            on_epoch(rec)
        if dev_score is None or result.best_dev is None or dev_score > result.best_dev:
            result.best_dev, result.best_epoch = dev_score, epoch
            best_values = _snapshot(net)
    result.stats.mean_reward = float(np.mean(rewards)) if rewards else 0.0
    net.store.load_state_dict(best_values)
    if checkpoint:
        save_network(checkpoint, net, {"objective": "rl", "best_epoch": result.best_epoch,
                                       "epsilon": cfg.epsilon, "batch": cfg.batch})
    return result


def train_seeds(train_one: Callable[[int], TrainResult], seeds: Sequence[int]) -> Tuple[int, TrainResult]:
    """Run ``train_one`` per seed and keep the run with the best dev score."""
    best = None
    for s in seeds:
        res = train_one(s)
        score = res.best_dev if res.best_dev is not None else -res.history[-1].train_loss
        if best is None or score > best[0]:
            best = (score, s, res)
    if best is None:
        raise ValueError("no seeds given")
    return best[1], best[2]
