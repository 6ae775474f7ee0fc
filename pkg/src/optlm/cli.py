"""Command-line harness: corpus generation, ingest, train, generate, eval,
and inspection of single expressions.

Relative paths resolve under $OPTLM_DATA_DIR when it is set. Exit codes:
0 success, 2 usage or file errors, 3 data errors (malformed input,
misaligned files), 4 internal failures.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from pathlib import Path

import torch

from . import corpus as corpus_mod
from .data import (
    DatasetBundle,
    build_dataset,
    encode_document,
    load_dataset,
    save_dataset,
)
from .decoding import DecoderRules, generate, generate_batch
from .embedding import BITS_PER_ENTRY, bin_encode
from .errors import (
    CapExceeded,
    InvalidTraversal,
    MaskedTarget,
    MathSyntaxError,
    Misaligned,
    OptLmError,
)
from .latex import to_latex
from .metrics import report_to_json, score_predictions
from .model import MathLM, ModelConfig, OptimConfig, load_checkpoint, make_optimizer
from .parser import parse_math
from .tokens import MAX_CHILD_COUNT, MAX_TREE_DEPTH, MixedSequence, TypeTag
from .trees import (
    compute_positions,
    linearize,
    mixed_to_document,
    normalize_tree,
    tree_from_span,
    tree_to_json,
)
from .training import history_from_checkpoint, train_model
from .vocab import MathVocab, TextVocab, id_layout, load_vocab

USER_ERROR = 2
DATA_ERROR = 3
INTERNAL_ERROR = 4

_DATA_ERRORS = (
    MathSyntaxError,
    CapExceeded,
    InvalidTraversal,
    Misaligned,
    MaskedTarget,
)


def _resolve(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    base = os.environ.get("OPTLM_DATA_DIR")
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def cmd_gen_corpus(args) -> int:
    out = _resolve(args.out)
    paths = corpus_mod.write_corpus(out, n=args.n, seed=args.seed)
    if args.folds:
        examples = corpus_mod.generate_examples(args.n, args.seed)
        for i, fold in enumerate(corpus_mod.cross_validation_folds(examples, args.folds)):
            for split, records in fold.items():
                corpus_mod.write_jsonl(out / f"fold{i}_{split}.jsonl", records)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_ingest(args) -> int:
    corpus_dir = _resolve(args.corpus)
    splits = {}
    for name in ("train", "val", "test"):
        path = corpus_dir / f"{name}.jsonl"
        if path.exists():
            splits[name] = corpus_mod.read_jsonl(path)
    if not splits:
        print(f"no corpus splits under {corpus_dir}", file=sys.stderr)
        return USER_ERROR
    math_vocab = text_vocab = None
    if args.vocab:
        math_vocab, text_vocab = load_vocab(_resolve(args.vocab))
    bundle = build_dataset(
        splits,
        max_words=args.max_words,
        number_subtrees=not args.no_num_trees,
        math_vocab=math_vocab,
        text_vocab=text_vocab,
    )
    save_dataset(_resolve(args.out), bundle)
    sizes = {name: len(seqs) for name, seqs in bundle.splits.items()}
    print(
        f"ingested {sizes} -> {args.out} "
        f"(text vocab {bundle.text_vocab.size}, math vocab {bundle.math_vocab.size})"
    )
    return 0


def _model_config_from_args(args, seed: int) -> ModelConfig:
    base = {}
    if args.config:
        base = json.loads(Path(_resolve(args.config)).read_text())
    cfg = ModelConfig.from_json(base) if base else ModelConfig()
    cfg.d_model = args.d_model or cfg.d_model
    cfg.n_layers = args.layers or cfg.n_layers
    cfg.n_heads = args.heads or cfg.n_heads
    cfg.max_seq = args.max_seq or cfg.max_seq
    cfg.seed = seed
    if args.no_tpe:
        cfg.use_tree_pos = False
    if args.no_type_emb:
        cfg.use_type_emb = False
    if args.no_shared_emb:
        cfg.shared_math_emb = False
    if args.no_num_trees:
        cfg.number_subtrees = False
    cfg.__post_init__()
    return cfg


def cmd_train(args) -> int:
    bundle = load_dataset(_resolve(args.data))
    if args.no_num_trees and bundle.number_subtrees:
        print("dataset was ingested with number sub-trees on; re-ingest with "
              "--no-num-trees first", file=sys.stderr)
        return USER_ERROR
    optim = OptimConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        grad_accum=args.grad_accum,
        max_epochs=args.epochs,
        patience=args.patience,
    )
    layout = bundle.layout
    start_epoch, history, optimizer = 0, None, None
    if args.resume:
        model, payload = load_checkpoint(_resolve(args.resume), layout)
        optimizer = make_optimizer(model, optim)
        if payload.get("optimizer"):
            optimizer.load_state_dict(payload["optimizer"])
        torch.set_rng_state(payload["torch_rng"])
        start_epoch, history = history_from_checkpoint(payload)
    else:
        config = _model_config_from_args(args, args.seed)
        config.number_subtrees = bundle.number_subtrees
        model = MathLM(config, layout)
    run_meta = {
        "run": {
            "data": str(args.data),
            "optim": optim.to_json(),
            "seed": model.config.seed,
            "caps": {"depth": MAX_TREE_DEPTH, "width": MAX_CHILD_COUNT},
        }
    }
    history = train_model(
        model,
        bundle,
        optim,
        run_dir=_resolve(args.out),
        optimizer=optimizer,
        start_epoch=start_epoch,
        history=history,
        max_steps=args.max_steps,
        extra_meta=run_meta,
        log=lambda rec: print(json.dumps(rec)) if "val_loss" in rec else None,
    )
    print(f"best val loss: {history.best_val:.4f} "
          f"(early stop: {history.stopped_early})")
    return 0


def cmd_generate(args) -> int:
    bundle = load_dataset(_resolve(args.data))
    layout = bundle.layout
    model, _ = load_checkpoint(_resolve(args.ckpt), layout)
    model.eval()
    rules = bundle.rules()
    prompts = Path(_resolve(args.prompts)).read_text(encoding="utf-8").splitlines()
    encoded = []
    for line in prompts:
        seq = encode_document(line, layout, bundle.number_subtrees)
        if args.formula_only:
            seq.ids.append(rules.fs_id)
            seq.type_tags.append(int(TypeTag.CONTROL))
            seq.positions.append(None)
        encoded.append(seq)
    outputs = []
    trees_dump = []
    if args.mode == "beam":
        results = [
            generate(
                model, rules, seq, mode="beam", beam_width=args.beam,
                max_len=args.max_len, stop_at_formula_end=args.formula_only,
            )
            for seq in encoded
        ]
    else:
        results = generate_batch(
            model, rules, encoded, mode=args.mode, max_len=args.max_len,
            seed=args.seed, stop_at_formula_end=args.formula_only,
        )
    for res in results:
        new_items = MixedSequence(list(res.sequence)[res.prompt_len:])
        outputs.append(mixed_to_document(new_items))
        if args.dump_trees:
            trees_dump.append(
                [
                    tree_to_json(tree_from_span(new_items[s:e]))
                    for s, e in new_items.formula_spans()
                ]
            )
    out_path = _resolve(args.out)
    out_path.write_text("\n".join(outputs) + "\n", encoding="utf-8")
    if args.dump_trees:
        with open(_resolve(args.dump_trees), "w", encoding="utf-8") as fh:
            for row in trees_dump:
                fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(outputs)} predictions to {out_path}")
    return 0


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.gold):
        print("--pred and --gold must pair up", file=sys.stderr)
        return USER_ERROR
    if args.data:
        bundle = load_dataset(_resolve(args.data))
        vocab = bundle.math_vocab
    else:
        vocab = MathVocab.default()
    reports = []
    for pred_path, gold_path in zip(args.pred, args.gold):
        pred_lines = Path(_resolve(pred_path)).read_text(encoding="utf-8").splitlines()
        gold_lines = Path(_resolve(gold_path)).read_text(encoding="utf-8").splitlines()
        report = score_predictions(
            pred_lines, gold_lines, vocab,
            include_end=args.include_end,
            collapse_numbers=args.collapse_numbers,
        )
        reports.append(report)
        print(report.table())
        print()
    if len(reports) > 1:
        agg = {}
        for key in ("tree_match_rate", "solve_rate", "mean_ted", "bleu4", "rouge_l"):
            values = [getattr(r, key) for r in reports]
            agg[key] = {
                "mean": statistics.mean(values),
                "stdev": statistics.stdev(values) if len(values) > 1 else 0.0,
            }
            print(f"{key}: {agg[key]['mean']:.4f} +/- {agg[key]['stdev']:.4f}")
    if args.out:
        payload = (
            reports[0].to_json()
            if len(reports) == 1
            else {"folds": [r.to_json() for r in reports], "aggregate": agg}
        )
        Path(_resolve(args.out)).write_text(json.dumps(payload, indent=1))
    return 0


def cmd_make_prompts(args) -> int:
    records = corpus_mod.read_jsonl(_resolve(args.corpus))
    prompts = [r["problem"] for r in records]
    gold = ["$" + r["equation"] + "$" for r in records]
    Path(_resolve(args.prompts_out)).write_text(
        "\n".join(prompts) + "\n", encoding="utf-8"
    )
    Path(_resolve(args.gold_out)).write_text(
        "\n".join(gold) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(records)} prompts and gold lines")
    return 0


def _format_bits(position) -> str:
    if not position:
        return "(root: all-zero encoding)"
    return " ".join(format(entry, f"0{BITS_PER_ENTRY}b") for entry in position)


def cmd_inspect(args) -> int:
    if args.vocab:
        math_vocab, text_vocab = load_vocab(_resolve(args.vocab))
    else:
        math_vocab, text_vocab = MathVocab.default(), None
    raw = parse_math(args.expr)
    tokenize = text_vocab.tokenize if text_vocab else None
    tree = normalize_tree(raw, math_vocab, oov_tokenize=tokenize)
    print("normalized tree:")
    for node, pos in compute_positions(tree):
        indent = "  " * len(pos)
        label = node.symbol or node.kind.name.lower()
        print(f"{indent}{label:<16} pos={list(pos)}  bits: {_format_bits(pos)}")
    print()
    items = linearize(tree)
    print("depth-first tokens:",
          " ".join(str(i.token.symbol or i.token.kind.name) for i in items))
    print("latex:", to_latex(tree, frac=args.frac))
    if args.json:
        print(json.dumps(tree_to_json(tree, with_positions=True)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optlm",
        description="Operator-tree language modeling toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--folds", type=int, default=0)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("ingest", help="tokenize a corpus into a dataset file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-words", type=int, default=512)
    p.add_argument("--vocab", help="optional prebuilt vocab JSON")
    p.add_argument("--no-num-trees", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model on an ingested dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="model config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--grad-accum", type=int, default=1)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--max-steps", type=int, default=0)
    p.add_argument("--d-model", type=int, default=0)
    p.add_argument("--layers", type=int, default=0)
    p.add_argument("--heads", type=int, default=0)
    p.add_argument("--max-seq", type=int, default=0)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--no-tpe", action="store_true",
                   help="disable tree position embeddings")
    p.add_argument("--no-type-emb", action="store_true",
                   help="disable symbol type embeddings")
    p.add_argument("--no-shared-emb", action="store_true",
                   help="learn math embeddings from scratch")
    p.add_argument("--no-num-trees", action="store_true",
                   help="single-token numbers (dataset must match)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate continuations for prompts")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--prompts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("greedy", "beam", "sample"), default="beam")
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--max-len", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--formula-only", action="store_true",
                   help="open a formula after the prompt and stop at its end")
    p.add_argument("--dump-trees", help="also write generated trees as JSONL")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score prediction files against gold files")
    p.add_argument("--pred", action="append", required=True)
    p.add_argument("--gold", action="append", required=True)
    p.add_argument("--data", help="dataset file providing the math vocabulary")
    p.add_argument("--out", help="write the report as JSON")
    p.add_argument("--include-end", action="store_true")
    p.add_argument("--collapse-numbers", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-prompts",
                       help="split a corpus JSONL into prompt and gold files")
    p.add_argument("--corpus", required=True)
    p.add_argument("--prompts-out", required=True)
    p.add_argument("--gold-out", required=True)
    p.set_defaults(func=cmd_make_prompts)

    p = sub.add_parser("inspect", help="show the pipeline for one expression")
    p.add_argument("--expr", required=True)
    p.add_argument("--vocab")
    p.add_argument("--json", action="store_true")
    p.add_argument("--frac", action="store_true")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USER_ERROR
    except OptLmError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return INTERNAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
