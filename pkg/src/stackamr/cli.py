"""Command-line entry point: ``stackamr <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional

import numpy as np

from .align import (AlignmentError, format_alignments, merge_steps,
                    read_isi_alignments, read_jamr_alignments)
from .amr import (AmrGraph, CorpusError, PenmanError, connect_graph, format_corpus, load_corpus,
                  parse_penman, sentence_tokens, serialize_penman)
from .autodiff import ShapeMismatch
from .model import ParserConfig, Sentence
from .preprocess import (LinearTagger, WikiDictionary, format_tag_file,
                         jackknife_tags, pool_vectors, read_linker, read_tag_file, read_vectors,
                         strip_wiki, tag, wikify)
from .smatch import corpus_counts, f_score, format_table
from .transition import format_action
from .train import (MissingInit, OptimConfig, RlConfig, build_network, decode_beam, decode_greedy,
                    load_network, prepare_examples, save_network, train_mle, train_rl, train_seeds,
                    write_text_atomic)

log = logging.getLogger("stackamr")


class DataError(Exception):
    """Bad input data; reported with exit status 1."""


def _read_text(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _lines(path: str) -> List[str]:
    return _read_text(path).splitlines()


# --------------------------------------------------------------------------
# align-merge


def _per_sentence_lines(path: str, n: int, keep) -> List[tuple]:
    """``(line_number, text)`` for the lines selected by ``keep``; one per sentence."""
    out = [(k, line) for k, line in enumerate(_lines(path), 1) if keep(line)]
    if len(out) != n:
        raise DataError(f"{path}: {len(out)} alignment lines for {n} sentences")
    return out


def cmd_align_merge(args) -> int:
    graphs = load_corpus(args.corpus)
    sem_lines = _per_sentence_lines(args.sem, len(graphs), lambda l: not l.startswith("#")) \
        if args.sem else [(None, "")] * len(graphs)
    jamr_lines = _per_sentence_lines(args.jamr, len(graphs), lambda l: l.startswith("# ::alignments")) \
        if args.jamr else [(None, "")] * len(graphs)
    out = []
    for g, (sl, stext), (jl, jtext) in zip(graphs, sem_lines, jamr_lines):
        n = len(sentence_tokens(g))
        try:
            sem = read_isi_alignments(stext, g, n)
        except AlignmentError as exc:
            raise DataError(f"{args.sem}:{sl}: {exc}") from None
        try:
            jamr = read_jamr_alignments(jtext, g, n)
        except AlignmentError as exc:
            raise DataError(f"{args.jamr}:{jl}: {exc}") from None
        merged = merge_steps(g, sem, jamr)[-1]
        # paths must refer to the order in which the graph is written back
        h = parse_penman(serialize_penman(g))
        h.metadata = g.metadata.copy()
        items, sources = format_alignments(h, merged)
        h.metadata["alignments"] = items
        h.metadata["alignment-sources"] = sources
        out.append(h)
    write_text_atomic(args.output, format_corpus(out))
    print(f"merged alignments for {len(out)} sentences -> {args.output}")
    return 0


# --------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    graphs = load_corpus(args.corpus)
    examples = prepare_examples(graphs)
    text = "".join(" ".join(format_action(a, l) for a, l in e.actions) + "\n" for e in examples)
    write_text_atomic(args.output, text)
    counts = corpus_counts([e.reachable for e in examples], graphs, args.restarts, args.seed, args.jobs)
    f = f_score(*counts["smatch"])[2]
    print(f"oracle upper bound smatch: {f:.4f} ({len(examples)} sentences)")
    return 0


# --------------------------------------------------------------------------
# train / parse


def _attach_inputs(sentences: List[Sentence], tags: Dict[str, str], vectors: Optional[str]) -> None:
    for channel, path in tags.items():
        records = read_tag_file(path)
        if len(records) != len(sentences):
            raise DataError(f"{path}: {len(records)} tagged sentences for {len(sentences)} inputs")
        for k, (toks, tg) in enumerate(records):
            if len(toks) != len(sentences[k]):
                raise DataError(f"{path}: sentence {k + 1} has {len(toks)} tokens, expected {len(sentences[k])}")
            sentences[k].tags[channel] = tg
    if vectors:
        records = read_vectors(vectors)
        if len(records) != len(sentences):
            raise DataError(f"{vectors}: {len(records)} vector records for {len(sentences)} inputs")
        for k, cv in enumerate(records):
            pooled = pool_vectors(cv)
            if len(pooled) != len(sentences[k]):
                raise DataError(f"{vectors}:{k + 1}: {len(pooled)} word vectors, expected {len(sentences[k])}")
            sentences[k].vectors = pooled


def _parse_tag_flags(items: List[str]) -> Dict[str, str]:
    out = {}
    for item in items or ():
        channel, sep, path = item.partition("=")
        if not sep:
            raise DataError(f"--tags expects CHANNEL=PATH, got {item!r}")
        out[channel] = path
    return out


def _corpus_sentences(graphs: List[AmrGraph], args, prefix: str = "") -> List[Sentence]:
    sents = [Sentence(sentence_tokens(g)) for g in graphs]
    _attach_inputs(sents, _parse_tag_flags(getattr(args, prefix + "tags")),
                   getattr(args, prefix + "vectors"))
    return sents


def cmd_train(args) -> int:
    graphs = [strip_wiki(g) for g in load_corpus(args.train)]
    sents = _corpus_sentences(graphs, args)
    examples = prepare_examples(graphs, sents)
    dev = []
    if args.dev:
        dgraphs = [strip_wiki(g) for g in load_corpus(args.dev)]
        dev = prepare_examples(dgraphs, _corpus_sentences(dgraphs, args, "dev_"))
    optim = OptimConfig(args.optimizer, args.lr, args.decay, args.clip)
    log_rows = []

    if args.objective == "rl":
        if not args.init:
            raise MissingInit("--objective rl requires --init CHECKPOINT")
        res = train_rl(examples, args.init, RlConfig(args.epsilon, args.batch, args.restarts), dev,
                       args.epochs, optim, args.seed, args.output)
        log_rows.append(res.csv())
    else:
        channels = tuple(_parse_tag_flags(args.tags))
        dim = 0
        if args.vectors and sents:
            dim = sents[0].vectors.shape[1]
        config = ParserConfig(args.word_dim, args.input_dim, args.hidden_dim, args.action_dim,
                              args.label_dim, args.tag_dim, dim, channels, not args.no_attention)

        def one(seed):
            net = build_network(examples, config, seed)
            r = train_mle(net, examples, dev, args.epochs, args.objective == "mle-smatch", optim,
                          seed, args.restarts)
            log_rows.append(f"# seed {seed}\n" + r.csv())
            return r

        seed, res = train_seeds(one, [args.seed + k for k in range(args.seeds)])
        save_network(args.output, res.net, {"objective": args.objective, "seed": seed,
                                            "best_epoch": res.best_epoch})
        print(f"selected seed {seed} (best dev {res.best_dev})")
    if args.log:
        write_text_atomic(args.log, "".join(log_rows))
    print(f"checkpoint -> {args.output}")
    return 0


_WORKER_NET = None


def _worker_init(path):
    global _WORKER_NET
    _WORKER_NET = load_network(path)


def _worker_parse(job):
    sent, beam = job
    return _decode(_WORKER_NET, sent, beam)


def _decode(net, sent, beam):
    d = decode_beam(net, sent, beam) if beam > 1 else decode_greedy(net, sent)
    return d.graph


def _read_parse_input(args) -> List[Sentence]:
    text = _read_text(args.input)
    fmt = args.format
    if fmt == "auto":
        fmt = "amr" if any(l.lstrip().startswith("(") for l in text.splitlines()) else "text"
    if fmt == "amr":
        from .amr import read_corpus
        sents = [Sentence(sentence_tokens(g)) for g in read_corpus(text, args.input)]
    else:
        sents = [Sentence(l.split()) for l in text.splitlines() if l.strip()]
    _attach_inputs(sents, _parse_tag_flags(args.tags), args.vectors)
    return sents


def cmd_parse(args) -> int:
    net = load_network(args.model)
    sents = _read_parse_input(args)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs, initializer=_worker_init, initargs=(args.model,)) as pool:
            graphs = list(pool.map(_worker_parse, [(s, args.beam) for s in sents]))
    else:
        graphs = [_decode(net, s, args.beam) for s in sents]
    out = []
    for s, g in zip(sents, graphs):
        g = connect_graph(g)
        g.metadata["snt"] = " ".join(s.tokens)
        g.metadata["tok"] = " ".join(s.tokens)
        out.append(g)
    if args.wiki_dict:
        wd = WikiDictionary.loads(_read_text(args.wiki_dict), args.wiki_dict)
        linker = read_linker(_read_text(args.linker), args.linker) if args.linker else None
        out = [wikify(g, wd, linker) for g in out]
    write_text_atomic(args.output, format_corpus(out))
    print(f"parsed {len(out)} sentences -> {args.output}")
    return 0


# --------------------------------------------------------------------------
# score / wikify / tag


def cmd_score(args) -> int:
    gold = load_corpus(args.gold)
    pred = load_corpus(args.pred)
    if len(gold) != len(pred):
        raise DataError(f"{args.pred}: {len(pred)} graphs but {args.gold} has {len(gold)}")
    counts = corpus_counts(pred, gold, args.restarts, args.seed, args.jobs)
    sys.stdout.write(format_table(counts, csv=args.csv))
    return 0


def cmd_wikify(args) -> int:
    if args.build:
        wd = WikiDictionary.build(load_corpus(args.input))
        write_text_atomic(args.output, wd.dumps())
        print(f"{len(wd)} names -> {args.output}")
        return 0
    if not args.dict:
        raise DataError("wikify needs --dict (or --build to create one)")
    wd = WikiDictionary.loads(_read_text(args.dict), args.dict)
    linker = read_linker(_read_text(args.linker), args.linker) if args.linker else None
    out = [wikify(g, wd, linker) for g in load_corpus(args.input)]
    write_text_atomic(args.output, format_corpus(out))
    print(f"wikified {len(out)} graphs -> {args.output}")
    return 0


def cmd_tag(args) -> int:
    records = read_vectors(args.vectors)
    pooled = [pool_vectors(cv) for cv in records]
    labelled = read_tag_file(args.labels)
    if len(labelled) != len(pooled):
        raise DataError(f"{args.labels}: {len(labelled)} sentences vs {len(pooled)} vector records")
    for k, ((toks, _), vec) in enumerate(zip(labelled, pooled)):
        if len(toks) != len(vec):
            raise DataError(f"{args.labels}: sentence {k + 1} has {len(toks)} tokens, {len(vec)} vectors")

    def make():
        return LinearTagger(l2=args.l2)

    if args.apply:
        X = np.concatenate(pooled)
        y = np.array([t for _, tg in labelled for t in tg])
        model = make().fit(X, y)
        target = read_vectors(args.apply)
        out = [(cv.word_strings(), tag(model, pool_vectors(cv))) for cv in target]
    else:
        tags = jackknife_tags(pooled, [tg for _, tg in labelled], args.folds, make)
        out = [(toks, tg) for (toks, _), tg in zip(labelled, tags)]
    write_text_atomic(args.output, format_tag_file(out))
    print(f"tagged {len(out)} sentences -> {args.output}")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _add_inputs(p, prefix=""):
    dashed = "--" + prefix.replace("_", "-")
    p.add_argument(f"{dashed}tags", dest=f"{prefix}tags", action="append", default=[],
                   metavar="CHANNEL=PATH", help="tag file for a channel (pos, dep, ner, concept); repeatable")
    p.add_argument(f"{dashed}vectors", dest=f"{prefix}vectors", metavar="PATH",
                   help="contextual word-piece vectors (JSON lines), pooled per word")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="JSON", help="JSON file whose keys override flags")
    common.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for scoring/decoding")
    common.add_argument("--restarts", type=int, default=4, help="Smatch hill-climbing restarts")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    ap = argparse.ArgumentParser(prog="stackamr", description="Stack-LSTM AMR parsing toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align-merge", parents=[common], help="merge SEM and JAMR alignments")
    p.add_argument("corpus", help="AMR corpus (PENMAN, # ::tok metadata)")
    p.add_argument("--sem", help="ISI/SEM alignment file, one line per sentence")
    p.add_argument("--jamr", help="file with one '# ::alignments' line per sentence")
    p.add_argument("-o", "--output", required=True, help="output corpus with merged alignments")
    p.set_defaults(func=cmd_align_merge)

    p = sub.add_parser("oracle", parents=[common], help="write oracle action sequences")
    p.add_argument("corpus", help="aligned AMR corpus")
    p.add_argument("-o", "--output", required=True, help="one action sequence per line")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("train", parents=[common], help="train a parser")
    p.add_argument("--train", required=True, help="aligned training corpus")
    p.add_argument("--dev", help="aligned development corpus (checkpoint selection)")
    p.add_argument("--objective", choices=["mle", "mle-smatch", "rl"], default="mle",
                   help="training objective (default mle)")
    p.add_argument("--init", help="MLE checkpoint to start RL from")
    p.add_argument("--seeds", type=int, default=1, help="train this many seeds, keep the best on dev")
    p.add_argument("--epochs", type=int, default=10, help="training epochs (default 10)")
    p.add_argument("--beam", type=int, default=1, help="beam width for dev decoding (default 1)")
    p.add_argument("--epsilon", type=float, default=0.05, help="RL flattening probability (default 0.05)")
    p.add_argument("--batch", type=int, default=40, help="RL batch size (default 40)")
    p.add_argument("--optimizer", choices=["sgd", "adam"], default="sgd", help="optimizer (default sgd)")
    p.add_argument("--lr", type=float, default=0.1, help="learning rate (default 0.1)")
    p.add_argument("--decay", type=float, default=0.05, help="learning-rate decay per epoch (default 0.05)")
    p.add_argument("--clip", type=float, default=5.0, help="gradient-norm clip (default 5)")
    for name, default in (("word-dim", 100), ("input-dim", 100), ("hidden-dim", 100),
                          ("action-dim", 20), ("label-dim", 20), ("tag-dim", 20)):
        p.add_argument(f"--{name}", type=int, default=default, help=f"default {default}")
    p.add_argument("--no-attention", action="store_true", help="disable encoder and attention")
    _add_inputs(p)
    _add_inputs(p, "dev_")
    p.add_argument("-o", "--output", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch CSV log (epoch, train_loss, dev_smatch)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", parents=[common], help="parse sentences to PENMAN")
    p.add_argument("input", help="one tokenized sentence per line, or an AMR corpus")
    p.add_argument("--model", required=True, help="checkpoint")
    p.add_argument("--beam", type=int, default=10, help="beam width (default 10; 1 = greedy)")
    p.add_argument("--format", choices=["auto", "text", "amr"], default="auto", help="input format")
    p.add_argument("--wiki-dict", help="wiki dictionary to wikify the output")
    p.add_argument("--linker", help="entity-linker output (name<TAB>link) used after the dictionary")
    _add_inputs(p)
    p.add_argument("-o", "--output", required=True, help="output PENMAN corpus")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("score", parents=[common], help="Smatch and fine-grained metrics")
    p.add_argument("gold", help="gold corpus")
    p.add_argument("pred", help="predicted corpus")
    p.add_argument("--csv", action="store_true", help="CSV with 4 decimals")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("wikify", parents=[common], help="add :wiki links or build the dictionary")
    p.add_argument("input", help="corpus to wikify (or training corpus with --build)")
    p.add_argument("--dict", help="wiki dictionary (name<TAB>link<TAB>count)")
    p.add_argument("--linker", help="entity-linker output (name<TAB>link)")
    p.add_argument("--build", action="store_true", help="build a dictionary from INPUT instead")
    p.add_argument("-o", "--output", required=True, help="output corpus or dictionary")
    p.set_defaults(func=cmd_wikify)

    p = sub.add_parser("tag", parents=[common], help="linear tagger over contextual vectors")
    p.add_argument("--vectors", required=True, help="training vectors (JSON lines)")
    p.add_argument("--labels", required=True, help="training tag file (token<TAB>tag)")
    p.add_argument("--apply", help="vectors to tag; without it the training data is jackknifed")
    p.add_argument("--folds", type=int, default=10, help="jackknife folds (default 10)")
    p.add_argument("--l2", type=float, default=1e-4, help="L2 weight (default 1e-4)")
    p.add_argument("-o", "--output", required=True, help="output tag file")
    p.set_defaults(func=cmd_tag)
    return ap


def _apply_config(ap, args) -> None:
    if not args.config:
        return
    try:
        with open(args.config, encoding="utf-8") as fh:
            overrides = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        ap.error(f"--config {args.config}: {exc}")
    if not isinstance(overrides, dict):
        ap.error(f"--config {args.config}: expected a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest) or dest in ("func", "command", "config"):
            ap.error(f"--config {args.config}: unknown option {key!r} for {args.command}")
        setattr(args, dest, value)


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    _apply_config(ap, args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DataError, CorpusError, PenmanError, AlignmentError, MissingInit, ShapeMismatch,
            OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
