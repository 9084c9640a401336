"""Command-line interface.

Subcommands: gen, train, transcribe, eval, corrupt-eval, export-attn.
Exit codes: 0 success, 1 usage error, 2 data/contract error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from visr import __version__
from visr.config import RunConfig, load_config
from visr.corpus import generate_corpus, load_corpus, decode_ids
from visr.errors import ContractError, DataError, ShapeError
from visr.evaluate import (METHODS, evaluate_split, export_attention,
                           run_corruption_suite, write_corruption_outputs,
                           write_eval_outputs)
from visr.merging import merge_m1, merge_m2, merge_m3
from visr.model import DualStreamModel, transcribe
from visr.nn.checkpoint import load_module
from visr.training import train


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage problems; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _common(parser: _Parser) -> None:
    parser.add_argument("--config", metavar="PATH",
                        help="run configuration file (key = value lines)")
    parser.add_argument("--seed", type=int, metavar="U64",
                        help="seed override")
    parser.add_argument("--out", metavar="DIR",
                        help="output directory (or file, where noted)")


def build_parser() -> _Parser:
    p = _Parser(prog="visr",
                description="dual-stream (audio + image hotword) speech recognition")
    p.add_argument("--version", action="version", version=f"visr {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic correlated corpus")
    _common(g)
    g.add_argument("--words", type=int, default=40)
    g.add_argument("--pairs", type=int, default=8,
                   help="homophone pairs inside the lexicon")
    g.add_argument("--train", type=int, default=600, dest="n_train")
    g.add_argument("--val", type=int, default=200, dest="n_val")
    g.add_argument("--homophone-fraction", type=float, default=0.5)
    g.add_argument("--feat-dim", type=int, default=40)
    g.add_argument("--patch-len", type=int, default=32)
    g.add_argument("--grid", type=int, default=4)

    t = sub.add_parser("train", help="train the dual-stream model")
    _common(t)
    t.add_argument("--data", required=True, metavar="DIR")
    t.add_argument("--freeze-vh", action="store_true",
                   help="ASR-only baseline: freeze the vision/text stack "
                        "and drop its losses")
    t.add_argument("--freeze-vision", action="store_true",
                   help="freeze only the vision encoder")
    t.add_argument("--epochs", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--progress", action="store_true")

    tr = sub.add_parser("transcribe", help="emit hypotheses for a split")
    _common(tr)
    tr.add_argument("--run", required=True, metavar="DIR",
                    help="training output directory (checkpoint + config)")
    tr.add_argument("--data", required=True, metavar="DIR")
    tr.add_argument("--split", default="val", choices=("train", "val"))
    tr.add_argument("--method", default="asr", choices=METHODS)

    e = sub.add_parser("eval", help="score all merge methods on a split")
    _common(e)
    e.add_argument("--run", required=True, metavar="DIR")
    e.add_argument("--data", required=True, metavar="DIR")
    e.add_argument("--split", default="val", choices=("train", "val"))
    e.add_argument("--methods", default=",".join(METHODS),
                   help=f"comma list from {{{','.join(METHODS)}}}")

    c = sub.add_parser("corrupt-eval",
                       help="mask word audio with noise and measure recovery")
    _common(c)
    c.add_argument("--run", required=True, metavar="DIR")
    c.add_argument("--data", required=True, metavar="DIR")
    c.add_argument("--split", default="val", choices=("train", "val"))
    c.add_argument("--ratios", default="0.3,0.5,0.7")
    c.add_argument("--sigma", type=float,
                   help="noise standard deviation (default: corpus sigma)")

    x = sub.add_parser("export-attn",
                       help="export the hotword attention map of one utterance")
    _common(x)
    x.add_argument("--run", required=True, metavar="DIR")
    x.add_argument("--data", required=True, metavar="DIR")
    x.add_argument("--utt", required=True, metavar="ID")
    return p


def _load_run(run_dir: str) -> tuple[DualStreamModel, RunConfig]:
    run = Path(run_dir)
    cfg_path = run / "config.txt"
    ckpt_path = run / "checkpoint.vhas"
    for needed in (cfg_path, ckpt_path):
        if not needed.exists():
            raise DataError(f"{needed}: not found (is {run} a training output?)")
    cfg = load_config(cfg_path)
    model = DualStreamModel(np.random.default_rng(0), cfg)
    load_module(ckpt_path, model)
    return model, cfg


def _resolve_train_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.max_steps is not None:
        cfg.max_steps = args.max_steps
    cfg.freeze_vh = cfg.freeze_vh or args.freeze_vh
    cfg.freeze_vision = cfg.freeze_vision or args.freeze_vision
    return cfg.validate()


def _cmd_gen(args, parser: _Parser) -> int:
    if not args.out:
        parser.error("gen requires --out DIR")
    corpus = generate_corpus(
        args.out, seed=args.seed if args.seed is not None else 0,
        n_words=args.words, n_pairs=args.pairs,
        n_train=args.n_train, n_val=args.n_val,
        homophone_fraction=args.homophone_fraction,
        feat_dim=args.feat_dim, patch_len=args.patch_len, grid=args.grid)
    print(f"wrote {len(corpus.utterances)} utterances to {corpus.root} "
          f"(sigma={corpus.header['feature_sigma']:.6f})")
    return 0


def _cmd_train(args, parser: _Parser) -> int:
    if not args.out:
        parser.error("train requires --out DIR")
    cfg = _resolve_train_config(args)
    corpus = load_corpus(args.data)
    result = train(cfg, corpus, args.out, quiet=not args.progress)
    print(f"trained {result.steps} steps; final loss {result.final_loss:.4f}; "
          f"checkpoint {result.checkpoint_path}")
    return 0


def _cmd_transcribe(args, parser: _Parser) -> int:
    model, cfg = _load_run(args.run)
    corpus = load_corpus(args.data)
    utts = corpus.split(args.split)
    bundles = [transcribe(model, corpus.features(u), corpus.image(u), uid=u.uid)
               for u in utts]
    if args.method == "asr":
        token_seqs = [b.tokens_a for b in bundles]
    elif args.method == "vh":
        token_seqs = [b.tokens_v for b in bundles]
    elif args.method == "m1":
        token_seqs = [merge_m1(b, cfg) for b in bundles]
    elif args.method == "m2":
        token_seqs = [merge_m2(b, model.text) for b in bundles]
    else:
        token_seqs = []
        for start in range(0, len(bundles), cfg.batch_size):
            token_seqs.extend(merge_m3(bundles[start:start + cfg.batch_size],
                                       model.text))
    sink = open(args.out, "w") if args.out else sys.stdout
    try:
        for b, toks in zip(bundles, token_seqs):
            grid = b.p_a if args.method != "vh" else b.p_v
            logp = []
            if len(toks) and grid.shape[0] == len(toks):
                rowp = grid[np.arange(len(toks)), toks]
                logp = [float(x) for x in np.log(np.maximum(rowp, 1e-300))]
            sink.write(json.dumps({
                "id": b.uid, "method": args.method, "empty": b.empty,
                "text": decode_ids(toks), "tokens": [int(t) for t in toks],
                "logprobs": logp,
            }, sort_keys=True) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return 0


def _cmd_eval(args, parser: _Parser) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        parser.error(f"unknown methods {bad}; choose from {list(METHODS)}")
    model, cfg = _load_run(args.run)
    corpus = load_corpus(args.data)
    result = evaluate_split(model, corpus, cfg, split=args.split, methods=methods)
    out = args.out or args.run
    csv_path, jsonl_path = write_eval_outputs(result, out, methods=methods)
    print(",".join(f"wer_{m}" for m in methods))
    print(",".join(f"{result.wer[m]:.6f}" for m in methods))
    print(f"wrote {csv_path} and {jsonl_path}")
    return 0


def _cmd_corrupt_eval(args, parser: _Parser) -> int:
    try:
        ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
    except ValueError:
        parser.error(f"bad --ratios value {args.ratios!r}")
    if not ratios:
        parser.error("--ratios must name at least one ratio")
    model, cfg = _load_run(args.run)
    corpus = load_corpus(args.data)
    rows = run_corruption_suite(model, corpus, cfg, ratios,
                                seed=args.seed if args.seed is not None else 0,
                                split=args.split, noise_sigma=args.sigma)
    out = args.out or args.run
    csv_path, txt_path = write_corruption_outputs(rows, out)
    print(Path(txt_path).read_text(), end="")
    print(f"wrote {csv_path} and {txt_path}")
    return 0


def _cmd_export_attn(args, parser: _Parser) -> int:
    model, cfg = _load_run(args.run)
    corpus = load_corpus(args.data)
    matches = [u for u in corpus.utterances if u.uid == args.utt]
    if not matches:
        raise DataError(f"utterance {args.utt!r} not in manifest")
    u = matches[0]
    bundle = transcribe(model, corpus.features(u), corpus.image(u), uid=u.uid)
    out = Path(args.out) if args.out else Path(args.run) / f"attn-{u.uid}.csv"
    path = export_attention(bundle, out)
    print(f"wrote {path}")
    return 0


_DISPATCH = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "transcribe": _cmd_transcribe,
    "eval": _cmd_eval,
    "corrupt-eval": _cmd_corrupt_eval,
    "export-attn": _cmd_export_attn,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _DISPATCH[args.cmd](args, parser)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0
    except (DataError, ContractError, ShapeError) as exc:
        print(f"visr: data error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"visr: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
