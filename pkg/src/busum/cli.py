"""Command-line pipeline: preprocess, train-selector, train-summarizer, decode,
evaluate, analyze."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import corpus, metrics
from .beam import InferenceConfig, beam_search
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, resolve_config, write_config
from .corpus import RESERVED, ExamplePair, Vocabulary
from .masking import MaskConfig, TrainMode
from .pointer_gen import PGDims, PGTrainConfig, head_q_for, pg_from_tensors, train_summarizer
from .selector import (
    SelectorDims,
    SelectorTrainConfig,
    load_word_vectors,
    predict_q,
    selector_from_tensors,
    static_table_from_vectors,
    train_selector,
)

PROG = "busum"


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--profile", choices=["cnn-dm", "nyt", "desk"], default=None)
    sub.add_argument("--seed", type=int, default=None, dest="seed")
    sub.add_argument("--threads", type=int, default=None, dest="threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="Bottom-up summarization pipeline: word-level content selection "
                    "masking the copy attention of a pointer-generator.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("preprocess", help="tokenize, truncate, align copy labels")
    _add_common(p)
    p.add_argument("--input", required=True, dest="data_input")
    p.add_argument("--output", required=True, dest="data_output")
    p.add_argument("--vocab-out", dest="data_vocab", default=None)
    p.add_argument("--max-src", type=int, dest="max_src_tokens", default=None)
    p.add_argument("--max-tgt", type=int, dest="max_tgt_tokens", default=None)
    p.add_argument("--max-vocab", type=int, dest="max_vocab", default=None)

    p = sub.add_parser("train-selector", help="train the content selector")
    _add_common(p)
    p.add_argument("--train", required=True, dest="data_train")
    p.add_argument("--val", dest="data_val", default=None)
    p.add_argument("--vocab", dest="data_vocab", default=None)
    p.add_argument("--vectors", dest="vectors", default=None)
    p.add_argument("--out", required=True, dest="out_dir")
    p.add_argument("--epochs", type=int, dest="sel_epochs", default=None)
    p.add_argument("--batch", type=int, dest="sel_batch", default=None)
    p.add_argument("--max-examples", type=int, dest="sel_max_examples", default=None)

    p = sub.add_parser("train-summarizer", help="train the pointer-generator")
    _add_common(p)
    p.add_argument("--train", required=True, dest="data_train")
    p.add_argument("--val", dest="data_val", default=None)
    p.add_argument("--vocab", dest="data_vocab", default=None)
    p.add_argument("--out", required=True, dest="out_dir")
    p.add_argument("--mode", dest="pg_mode", default=None,
                   choices=[m.value for m in TrainMode])
    p.add_argument("--epochs", type=int, dest="pg_epochs", default=None)
    p.add_argument("--batch", type=int, dest="pg_batch", default=None)
    p.add_argument("--multitask-weight", type=float, dest="pg_multitask_weight", default=None)

    p = sub.add_parser("decode", help="beam-search decode a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, dest="checkpoint")
    p.add_argument("--input", required=True, dest="data_input")
    p.add_argument("--output", required=True, dest="data_output")
    p.add_argument("--out", dest="out_dir", default=None, help="run dir for config echo")
    p.add_argument("--mask", action="store_const", const=True, dest="mask_enabled", default=None)
    p.add_argument("--selector", dest="selector_checkpoint", default=None)
    p.add_argument("--q-file", dest="q_file", default=None)
    p.add_argument("--q-out", dest="q_out", default=None)
    p.add_argument("--epsilon", type=float, dest="mask_epsilon", default=None)
    p.add_argument("--lambda", type=float, dest="mask_lambda", default=None)
    p.add_argument("--beam", type=int, dest="beam_size", default=None)
    p.add_argument("--alpha", type=float, dest="alpha", default=None)
    p.add_argument("--beta", type=float, dest="beta", default=None)
    p.add_argument("--min-length", type=int, dest="min_length", default=None)
    p.add_argument("--max-length", type=int, dest="max_length", default=None)
    p.add_argument("--trigram-block", action="store_const", const=True,
                   dest="trigram_block", default=None)
    p.add_argument("--no-trigram-block", action="store_const", const=False,
                   dest="trigram_block")

    p = sub.add_parser("evaluate", help="ROUGE of candidate summaries against references")
    _add_common(p)
    p.add_argument("--candidates", required=True, dest="candidates")
    p.add_argument("--references", required=True, dest="references")
    p.add_argument("--csv", dest="csv_out", default=None)

    p = sub.add_parser("analyze", help="copy analyses and extractive baselines")
    _add_common(p)
    p.add_argument("--data", required=True, dest="data_input")
    p.add_argument("--candidates", required=True, dest="candidates")
    p.add_argument("--q-file", dest="q_file", default=None)
    p.add_argument("--csv", dest="csv_out", default=None)

    return parser


def _resolve(args: argparse.Namespace, command: str) -> tuple[RunConfig, set[str]]:
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    cfg, explicit = resolve_config(flags, config_path=args.config)
    cfg.command = command
    return cfg, explicit


def _echo_config(cfg: RunConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_config(cfg, os.path.join(out_dir, "config.txt"))


def _write_jsonl(rows: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def _read_jsonl(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _load_vocab(cfg: RunConfig, pairs: list[ExamplePair]) -> Vocabulary:
    if cfg.data_vocab:
        return Vocabulary.load(cfg.data_vocab)
    return corpus.build_vocab(pairs, cfg.max_vocab)


def _vocab_tokens(vocab: Vocabulary) -> list[str]:
    return vocab.itos[len(RESERVED):]


def cmd_preprocess(cfg: RunConfig) -> int:
    pairs = corpus.load_dataset(cfg.data_input)
    processed = []
    for ex in pairs:
        cut = corpus.truncate_example(ex, cfg.max_src_tokens, cfg.max_tgt_tokens)
        labels = corpus.align_copy_labels(cut.source_tokens(), cut.target_tokens())
        processed.append(ExamplePair(id=cut.id, source_sentences=cut.source_sentences,
                                     target_sentences=cut.target_sentences, copy_labels=labels))
    corpus.write_dataset(processed, cfg.data_output)
    if cfg.data_vocab:
        corpus.build_vocab(processed, cfg.max_vocab).save(cfg.data_vocab)
    print(f"preprocessed {len(processed)} examples -> {cfg.data_output}")
    return 0


def cmd_train_selector(cfg: RunConfig) -> int:
    train_pairs = corpus.load_dataset(cfg.data_train)
    val_pairs = corpus.load_dataset(cfg.data_val) if cfg.data_val else None
    vocab = _load_vocab(cfg, train_pairs)
    dims = SelectorDims(vocab_size=len(vocab), static_dim=cfg.sel_static_dim,
                        ctx_dim=cfg.sel_ctx_dim, tagger_hidden=cfg.sel_hidden,
                        dropout=cfg.sel_dropout)
    static_table = static_known = None
    if cfg.vectors:
        vectors = load_word_vectors(cfg.vectors, cfg.sel_static_dim)
        static_table, static_known = static_table_from_vectors(vocab, vectors, cfg.sel_static_dim)
    tcfg = SelectorTrainConfig(epochs=cfg.sel_epochs, batch_size=cfg.sel_batch,
                               lr=cfg.sel_lr, accum0=cfg.sel_accum,
                               max_examples=cfg.sel_max_examples, seed=cfg.seed)
    result = train_selector(train_pairs, vocab, dims, tcfg, val_dataset=val_pairs,
                            static_table=static_table, static_known=static_known)
    _echo_config(cfg, cfg.out_dir)
    ckpt_config = {
        "kind": "selector",
        "dims": {"vocab_size": dims.vocab_size, "static_dim": dims.static_dim,
                 "ctx_dim": dims.ctx_dim, "tagger_hidden": dims.tagger_hidden,
                 "dropout": dims.dropout},
        "vocab": _vocab_tokens(vocab),
        "run_config": cfg.to_dict(),
    }
    save_checkpoint(result.params.all_tensors(), ckpt_config,
                    os.path.join(cfg.out_dir, "selector.busm"), model="selector")
    _write_jsonl(result.history, os.path.join(cfg.out_dir, "log.jsonl"))
    best = f"{result.best_auc:.4f}" if result.best_auc is not None else "n/a"
    print(f"trained selector; best val AUC {best}; checkpoint in {cfg.out_dir}")
    return 0


def load_selector_checkpoint(path: str):
    tensors, ckpt_config, model = load_checkpoint(path)
    if model != "selector":
        raise ValueError(f"{path} holds a {model!r} model, expected a selector")
    d = ckpt_config["dims"]
    dims = SelectorDims(vocab_size=int(d["vocab_size"]), static_dim=int(d["static_dim"]),
                        ctx_dim=int(d["ctx_dim"]), tagger_hidden=int(d["tagger_hidden"]),
                        dropout=float(d["dropout"]))
    vocab = Vocabulary(itos=list(RESERVED) + list(ckpt_config["vocab"]))
    return selector_from_tensors(dims, tensors), vocab, ckpt_config


def cmd_train_summarizer(cfg: RunConfig) -> int:
    train_pairs = corpus.load_dataset(cfg.data_train)
    val_pairs = corpus.load_dataset(cfg.data_val) if cfg.data_val else None
    vocab = _load_vocab(cfg, train_pairs)
    mode = TrainMode.parse(cfg.pg_mode)
    dims = PGDims(vocab_size=len(vocab), emb_dim=cfg.pg_emb_dim,
                  enc_hidden=cfg.pg_enc_hidden, dec_hidden=cfg.pg_dec_hidden,
                  attention=cfg.pg_attention,
                  with_selector_head=mode in (TrainMode.MULTI_TASK, TrainMode.DIFFMASK))
    tcfg = PGTrainConfig(epochs=cfg.pg_epochs, batch_size=cfg.pg_batch, lr=cfg.pg_lr,
                         accum0=cfg.pg_accum, clip_norm=cfg.pg_clip_norm,
                         multitask_weight=cfg.pg_multitask_weight, seed=cfg.seed)
    params, history = train_summarizer(train_pairs, vocab, dims, tcfg, mode=mode,
                                       val_dataset=val_pairs)
    _echo_config(cfg, cfg.out_dir)
    ckpt_config = {
        "kind": "pointer-gen",
        "mode": mode.value,
        "dims": {"vocab_size": params.dims.vocab_size, "emb_dim": params.dims.emb_dim,
                 "enc_hidden": params.dims.enc_hidden, "dec_hidden": params.dims.dec_hidden,
                 "attention": params.dims.attention,
                 "with_selector_head": params.dims.with_selector_head},
        "vocab": _vocab_tokens(vocab),
        "run_config": cfg.to_dict(),
    }
    save_checkpoint(params.all_tensors(), ckpt_config,
                    os.path.join(cfg.out_dir, "summarizer.busm"), model="pointer-gen")
    _write_jsonl(history, os.path.join(cfg.out_dir, "log.jsonl"))
    last = history[-1] if history else {}
    print(f"trained summarizer ({mode.value}); final val ppl {last.get('val_ppl')}; "
          f"checkpoint in {cfg.out_dir}")
    return 0


def load_pg_checkpoint(path: str):
    tensors, ckpt_config, model = load_checkpoint(path)
    if model != "pointer-gen":
        raise ValueError(f"{path} holds a {model!r} model, expected a pointer-generator")
    d = ckpt_config["dims"]
    dims = PGDims(vocab_size=int(d["vocab_size"]), emb_dim=int(d["emb_dim"]),
                  enc_hidden=int(d["enc_hidden"]), dec_hidden=int(d["dec_hidden"]),
                  attention=d["attention"],
                  with_selector_head=bool(d["with_selector_head"]))
    vocab = Vocabulary(itos=list(RESERVED) + list(ckpt_config["vocab"]))
    return pg_from_tensors(dims, tensors), vocab, ckpt_config


def cmd_decode(cfg: RunConfig, explicit: set[str]) -> int:
    params, vocab, ckpt_config = load_pg_checkpoint(cfg.checkpoint)
    mode = TrainMode.parse(ckpt_config.get("mode", "baseline"))
    pairs = corpus.load_dataset(cfg.data_input)

    mask_mode = "none"
    q_lookup = None
    if mode is TrainMode.DIFFMASK:
        mask_mode = "soft"

        def q_lookup(pair):
            return head_q_for(params, pair.source_tokens(), vocab)
    elif cfg.mask_enabled:
        mask_mode = "hard"
        if cfg.q_file:
            q_rows = {row["id"]: np.asarray(row["q"], dtype=np.float64)
                      for row in _read_jsonl(cfg.q_file)}

            def q_lookup(pair):
                if pair.id not in q_rows:
                    raise ValueError(f"q-file has no entry for document {pair.id}")
                return q_rows[pair.id]
        elif cfg.selector_checkpoint:
            sel_params, sel_vocab, _ = load_selector_checkpoint(cfg.selector_checkpoint)

            def q_lookup(pair):
                return predict_q(sel_params, pair.source_tokens(), sel_vocab)
        elif mode is TrainMode.MULTI_TASK and params.dims.with_selector_head:

            def q_lookup(pair):
                return head_q_for(params, pair.source_tokens(), vocab)
        else:
            raise ValueError("--mask needs --q-file, --selector, or a multi-task checkpoint")

    beam = cfg.beam_size
    if mask_mode != "none" and "beam_size" not in explicit:
        beam = cfg.beam_size_masked
    icfg = InferenceConfig(
        beam_size=beam, alpha=cfg.alpha, beta=cfg.beta, min_length=cfg.min_length,
        max_length=cfg.max_length, block_trigrams=cfg.trigram_block,
        mask=MaskConfig(epsilon=cfg.mask_epsilon, scale=cfg.mask_lambda),
        mask_mode=mask_mode,
    )
    rows = []
    q_rows_out = []
    for pair in pairs:
        q = q_lookup(pair) if q_lookup is not None else None
        result = beam_search(params, pair, vocab, icfg, q=q)
        rows.append({"id": result.id, "summary": result.summary, "tokens": result.tokens,
                     "score": result.score, "warnings": result.warnings})
        if q is not None and cfg.q_out:
            q_rows_out.append({"id": pair.id, "q": [float(v) for v in q]})
    _write_jsonl(rows, cfg.data_output)
    if cfg.q_out and q_rows_out:
        _write_jsonl(q_rows_out, cfg.q_out)
    if cfg.out_dir:
        _echo_config(cfg, cfg.out_dir)
    print(f"decoded {len(rows)} documents -> {cfg.data_output}")
    return 0


def _reference_tokens(row: dict) -> list[str]:
    if "tgt_sents" in row:
        return [tok for sent in row["tgt_sents"] for tok in corpus.tokenize(sent)]
    if "summary" in row:
        return corpus.tokenize(row["summary"])
    raise ValueError(f"reference row for id {row.get('id')!r} has neither tgt_sents nor summary")


def cmd_evaluate(cfg: RunConfig) -> int:
    cand_rows = {row["id"]: row for row in _read_jsonl(cfg.candidates)}
    ref_rows = {row["id"]: row for row in _read_jsonl(cfg.references)}
    missing = sorted(set(cand_rows) - set(ref_rows))
    if missing:
        raise ValueError(f"references missing for ids: {missing[:5]}")
    ids = sorted(cand_rows)
    cands = [corpus.tokenize(cand_rows[i]["summary"]) for i in ids]
    refs = [_reference_tokens(ref_rows[i]) for i in ids]
    scores = metrics.corpus_rouge(cands, refs)
    rows = metrics.rouge_report_rows(scores)
    print(f"{'metric':<12} value")
    for name, value in rows:
        print(f"{name:<12} {value:.2f}")
    if cfg.csv_out:
        with open(cfg.csv_out, "w", encoding="utf-8") as fh:
            fh.write("metric,value\n")
            for name, value in rows:
                fh.write(f"{name},{value:.2f}\n")
    return 0


def cmd_analyze(cfg: RunConfig) -> int:
    pairs = {p.id: p for p in corpus.load_dataset(cfg.data_input)}
    cand_rows = _read_jsonl(cfg.candidates)
    q_rows = {row["id"]: np.asarray(row["q"], dtype=np.float64)
              for row in _read_jsonl(cfg.q_file)} if cfg.q_file else {}

    precisions = []
    undefined = 0
    novel_rates = []
    hist = {b: 0 for b in metrics.HIST_BUCKETS}
    for row in cand_rows:
        pair = pairs.get(row["id"])
        if pair is None:
            raise ValueError(f"dataset has no document with id {row['id']!r}")
        gen = corpus.tokenize(row["summary"])
        if not gen:
            continue
        src = pair.source_tokens()
        ref = pair.target_tokens()
        prec = metrics.copied_word_precision(gen, src, ref)
        if prec is None:
            undefined += 1
        else:
            precisions.append(prec)
        novel_rates.append(metrics.novel_word_rate(gen, src))
        for bucket, count in metrics.copy_phrase_histogram(gen, src).items():
            hist[bucket] += count

    rows: list[tuple[str, float]] = []
    if precisions:
        rows.append(("copied-word-precision", round(float(np.mean(precisions)), 2)))
    rows.append(("copied-word-precision-undefined", float(undefined)))
    if novel_rates:
        rows.append(("novel-word-rate", round(float(np.mean(novel_rates)), 2)))
    total_copied = sum(hist.values())
    share_11 = 100.0 * hist["11+"] / total_copied if total_copied else 0.0
    rows.append(("copied-tokens", float(total_copied)))
    rows.append(("share-11+", round(share_11, 2)))

    baseline_rows: list[tuple[str, float]] = []
    if q_rows:
        ids = [row["id"] for row in cand_rows if row["id"] in q_rows]
        docs = [pairs[i] for i in ids]
        refs = [d.target_tokens() for d in docs]
        lead = [metrics.lead_k(d, 3) for d in docs]
        top = [metrics.select_top_sentences(d, q_rows[d.id], 3) for d in docs]
        thresh = [metrics.extract_words_threshold(d, q_rows[d.id], max(1, len(r)))
                  for d, r in zip(docs, refs)]
        for tag, cands in (("lead-3", lead), ("top-3-sentences", top), ("threshold-words", thresh)):
            sc = metrics.corpus_rouge(cands, refs)
            for name, value in metrics.rouge_report_rows(sc):
                baseline_rows.append((f"{tag}-{name}", value))

    print(f"{'metric':<34} value")
    for name, value in rows + baseline_rows:
        print(f"{name:<34} {value:.2f}")
    print(f"{'bucket':<34} count")
    for bucket in metrics.HIST_BUCKETS:
        print(f"{bucket:<34} {hist[bucket]}")
    if cfg.csv_out:
        with open(cfg.csv_out, "w", encoding="utf-8") as fh:
            fh.write("metric,value\n")
            for name, value in rows + baseline_rows:
                fh.write(f"{name},{value:.2f}\n")
            for bucket in metrics.HIST_BUCKETS:
                fh.write(f"bucket:{bucket},{hist[bucket]}\n")
    return 0


def run_command(argv: list[str]) -> int:
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg, explicit = _resolve(args, args.command)
        if args.command == "preprocess":
            return cmd_preprocess(cfg)
        if args.command == "train-selector":
            return cmd_train_selector(cfg)
        if args.command == "train-summarizer":
            return cmd_train_summarizer(cfg)
        if args.command == "decode":
            return cmd_decode(cfg, explicit)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        parser.print_usage(sys.stderr)
        return 2
    except (ValueError, OSError, corpus.DatasetError) as err:
        print(f"{PROG}: error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
