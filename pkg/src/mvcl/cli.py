"""Command-line entry point: ``mvcl <subcommand> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 contract failure (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import dataclasses
import difflib
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .contrastive import build_element_positive
from .corpus import (
    DEFAULT_MAX_TOKENS,
    load_cases,
    load_corpus,
    load_sentence_examples,
    load_triples,
    write_jsonl,
)
from .diagnostics import GradcheckConfig, objective_gradcheck
from .encoder import fixture_dim, load_fixture
from .errors import ConfigError, ContractError, DataError, MvclError
from .evalkit import Bm25Params, CorpusStats, baseline_classify, macro_metrics
from .indicator import IndicatorConfig, IndicatorModel, annotate_corpus, train_indicator
from .matcher import bidirectional_attention
from .ranker import METHODS, prefs_from_model, rank
from .trainer import Checkpoint, TrainConfig, evaluate_checkpoint, train

log = logging.getLogger("mvcl")


class UsageError(Exception):
    def __init__(self, message: str, usage: str = ""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1 here
        raise UsageError(message, self.format_usage())


@dataclasses.dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int | None
    inputs: dict[str, str]
    tool_version: str = __version__
    duration_s: float = 0.0
    argv: list[str] = dataclasses.field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _digests(paths: dict[str, str | None]) -> dict[str, str]:
    out = {}
    for role, path in paths.items():
        if path is None:
            continue
        p = Path(path)
        if p.is_dir():
            for child in sorted(p.iterdir()):
                if child.is_file():
                    out[f"{role}/{child.name}"] = sha256_file(child)
        elif p.exists():
            out[role] = sha256_file(p)
        else:
            raise DataError(f"input file not found: {path}")
    return out


def _resolve_seed(flag: int | None, config_seed: int | None = None) -> int:
    if flag is not None:
        return flag
    if config_seed is not None:
        return config_seed
    env = os.environ.get("MVCL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"MVCL_SEED must be an integer, got {env!r}") from None
    return 0


def _read_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return payload


def _emit(payload, out_file: str | Path | None = None) -> None:
    text = json.dumps(payload, indent=2, ensure_ascii=False)
    if out_file is None:
        print(text)
    else:
        Path(out_file).write_text(text + "\n", encoding="utf-8")


# -- subcommand handlers --------------------------------------------------------
# Each returns (resolved config, seed, input paths, output directory or None).


def _cmd_train_indicator(args):
    payload = _read_config(args.config)
    try:
        config = IndicatorConfig.from_dict(payload)
    except TypeError as exc:
        raise ConfigError(f"bad indicator config: {exc}") from None
    config.seed = _resolve_seed(args.seed, payload.get("seed"))
    for flag, attr in (("steps", "steps"), ("batch_size", "batch_size"),
                       ("lr", "learning_rate"), ("pooling", "pooling")):
        if getattr(args, flag) is not None:
            setattr(config, attr, getattr(args, flag))
    examples = load_sentence_examples(args.examples, args.tokenize)
    model = train_indicator(examples, config)
    model.save(args.out)
    log.info("indicator held-out F1 %.4f", model.best_f1)
    return config.to_dict(), config.seed, {"examples": args.examples}, args.out


def _cmd_annotate(args):
    model = IndicatorModel.load(args.model)
    corpus = load_corpus(args.cases, mode=args.tokenize, max_tokens=args.max_len)
    annotate_corpus(corpus, model, args.out)
    cfg = {"tokenize": args.tokenize, "max_len": args.max_len}
    return cfg, None, {"cases": args.cases, "model": args.model}, None


def _cmd_build_contrastive(args):
    seed = _resolve_seed(args.seed)
    corpus = load_corpus(args.cases, elements_path=args.elements, mode=args.tokenize,
                         max_tokens=args.max_len)
    rng = np.random.default_rng(seed)
    records = []
    for cid in sorted(corpus.annotations):
        inst = build_element_positive(corpus.cases[cid], corpus.annotations[cid], args.l1, rng)
        records.append(inst.to_record())
    write_jsonl(args.out, records)
    cfg = {"l1": args.l1, "tokenize": args.tokenize, "max_len": args.max_len}
    return cfg, seed, {"cases": args.cases, "elements": args.elements}, None


_TRAIN_FLAGS = {
    "steps": "total_steps", "lr": "learning_rate", "batch_size": "batch_size",
    "warmup": "warmup_fraction", "eval_every": "eval_every", "lambda_case": "lambda_case",
    "lambda_ele": "lambda_ele", "tau1": "tau1", "tau2": "tau2", "l1": "l1",
    "max_len": "max_len", "tokenize": "tokenize",
}


def _train_config(args) -> TrainConfig:
    payload = _read_config(args.config)
    config = TrainConfig.from_dict(payload)
    config.seed = _resolve_seed(args.seed, payload.get("seed"))
    for flag, attr in _TRAIN_FLAGS.items():
        if getattr(args, flag) is not None:
            setattr(config, attr, getattr(args, flag))
    if args.no_case_view:
        config.use_case_view = False
    if args.no_element_view:
        config.use_element_view = False
    if args.no_ba:
        config.match.use_ba = False
    if args.no_sr:
        config.match.use_sr = False
    if args.rnn_kind is not None:
        config.match.rnn_kind = args.rnn_kind
    if args.encoder_kind is not None:
        config.encoder.kind = args.encoder_kind
    if args.d is not None:
        config.encoder.d = args.d
    if args.fixture is not None:
        config.encoder.fixture_path = str(args.fixture)
        if args.encoder_kind is None:
            config.encoder.kind = "fixture"
        if config.encoder.kind == "fixture" and args.d is None:
            config.encoder.d = fixture_dim(load_fixture(args.fixture))
    config.validate()
    return config


def _cmd_train(args):
    config = _train_config(args)
    splits = {"train": args.triples}
    if args.validation:
        splits["validation"] = args.validation
    corpus = load_corpus(args.cases, splits, args.elements, config.tokenize, config.max_len)
    if config.use_element_view and corpus.annotations is None:
        raise ConfigError("element-view training needs --elements (see `mvcl annotate`)"
                          " or --no-element-view")
    checkpoint = train(corpus, config)
    checkpoint.save(args.out)
    inputs = {"cases": args.cases, "triples": args.triples, "validation": args.validation,
              "elements": args.elements, "fixture": config.encoder.fixture_path}
    return config.to_dict(), config.seed, inputs, args.out


def _load_model_inputs(args):
    checkpoint = Checkpoint.load(args.model)
    cfg = checkpoint.config
    if args.fixture is not None:
        cfg.encoder.fixture_path = str(args.fixture)
    cases = load_cases(args.cases, cfg.tokenize, cfg.max_len)
    return checkpoint, cases


def _cmd_eval(args):
    checkpoint, cases = _load_model_inputs(args)
    triples = load_triples(args.triples)
    for t in triples:
        for cid in (t.query_id, t.cand_b_id, t.cand_c_id):
            if cid not in cases:
                raise DataError(f"triple references unknown case {cid!r}")
    report = evaluate_checkpoint(checkpoint, triples, cases)
    _emit(report.to_dict(), None if args.out is None else Path(args.out) / "metrics.json")
    inputs = {"model": args.model, "cases": args.cases, "triples": args.triples,
              "fixture": checkpoint.config.encoder.fixture_path}
    return {"model_config": checkpoint.config.to_dict()}, None, inputs, args.out


def _cmd_baseline(args):
    corpus = load_corpus(args.cases, {"eval": args.triples}, mode=args.tokenize,
                         max_tokens=args.max_len)
    stats = CorpusStats.from_corpus(corpus)
    params = Bm25Params(args.k1, args.b)
    triples = corpus.triples("eval")
    preds = [baseline_classify(t, corpus.cases, stats, args.method, params) for t in triples]
    report = macro_metrics(preds, [t.label for t in triples])
    _emit(report.to_dict(), None if args.out is None else Path(args.out) / "metrics.json")
    cfg = {"method": args.method, "k1": args.k1, "b": args.b, "tokenize": args.tokenize,
           "max_len": args.max_len}
    return cfg, None, {"cases": args.cases, "triples": args.triples}, args.out


def _cmd_rank(args):
    checkpoint, cases = _load_model_inputs(args)
    candidates = [c for c in args.candidates.split(",") if c]
    for cid in [args.query] + candidates:
        if cid not in cases:
            raise DataError(f"unknown case id {cid!r}")
    model = checkpoint.model("best")
    prefs = prefs_from_model(model, cases, args.query, candidates)
    result = rank(prefs, args.method)
    _emit(result.to_dict(), None if args.out is None else Path(args.out) / "ranking.json")
    cfg = {"query": args.query, "candidates": candidates, "method": args.method}
    return cfg, None, {"model": args.model, "cases": args.cases}, args.out


def attention_summary(model, cases, query_id: str, cand_id: str, top_k: int = 10) -> dict:
    """Tokens receiving the most attention mass on each side of one pair.

    A query token's weight sums the candidate-to-query attention it receives
    over all candidate tokens; a candidate token's weight sums the
    query-to-candidate attention it receives.
    """
    q, c = cases[query_id], cases[cand_id]
    h, mask = model.encoder.encode_batch([q.tokens, c.tokens], [q.id, c.id])
    _, _, record = bidirectional_attention(h[0:1], h[1:2], mask[0:1], mask[1:2])
    nq, nc = q.token_count, c.token_count
    to_query = record.b_to_a[0][:nq, :nc].sum(axis=1)
    to_cand = record.a_to_b[0][:nq, :nc].sum(axis=0)

    def top(weights, tokens):
        order = sorted(range(len(tokens)), key=lambda i: (-weights[i], i))[:top_k]
        return [{"index": i, "token": tokens[i], "weight": float(weights[i])} for i in order]

    return {"query_id": query_id, "cand_id": cand_id,
            "top_query_tokens": top(to_query, q.tokens),
            "top_cand_tokens": top(to_cand, c.tokens)}


def _cmd_dump_attention(args):
    checkpoint, cases = _load_model_inputs(args)
    if not checkpoint.config.match.use_ba:
        raise ConfigError("this model was trained without bidirectional attention")
    cand_ids = [c for c in args.cand.split(",") if c]
    for cid in [args.query] + cand_ids:
        if cid not in cases:
            raise DataError(f"unknown case id {cid!r}")
    model = checkpoint.model("best")
    dumps = [attention_summary(model, cases, args.query, cid, args.top_k) for cid in cand_ids]
    if args.out is None:
        for d in dumps:
            print(json.dumps(d, ensure_ascii=False))
    else:
        write_jsonl(Path(args.out) / "attention.jsonl", dumps)
    cfg = {"query": args.query, "cand": cand_ids, "top_k": args.top_k}
    return cfg, None, {"model": args.model, "cases": args.cases}, args.out


def _cmd_gradcheck(args):
    payload = _read_config(args.config)
    try:
        config = GradcheckConfig(**payload)
    except TypeError as exc:
        raise ConfigError(f"bad gradcheck config: {exc}") from None
    config.seed = _resolve_seed(args.seed, payload.get("seed"))
    for flag in ("d", "h_rnn", "eps", "tolerance", "max_tokens", "triples"):
        if getattr(args, flag) is not None:
            setattr(config, flag, getattr(args, flag))
    report = objective_gradcheck(config)
    _emit(report.to_dict(), None if args.out is None else Path(args.out) / "gradcheck.json")
    if not report.passed:
        raise ContractError(
            f"gradient check failed: max relative error {report.max_rel_error:.3e}"
            f" > {report.tolerance:g}"
        )
    return config.to_dict(), config.seed, {}, args.out


# -- parser ---------------------------------------------------------------------


def _add_common(p, out_help: str, out_required: bool = False):
    p.add_argument("--out", required=out_required, help=out_help)
    p.add_argument("--manifest", help="also write the run manifest to this path")


def build_parser() -> _Parser:
    parser = _Parser(prog="mvcl", description="Multi-view contrastive legal case matching.")
    parser.add_argument("--version", action="version", version=f"mvcl {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="<subcommand>", parser_class=_Parser)

    p = sub.add_parser("train-indicator", help="train the sentence element indicator")
    p.add_argument("--examples", required=True, help="sentence_examples.jsonl")
    p.add_argument("--config", help="indicator config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--pooling", choices=("cls_token", "last_token", "attention_pool"))
    p.add_argument("--tokenize", choices=("character", "whitespace"), default="character")
    _add_common(p, "checkpoint directory", out_required=True)
    p.set_defaults(handler=_cmd_train_indicator)

    p = sub.add_parser("annotate", help="predict element flags for every sentence")
    p.add_argument("--cases", required=True)
    p.add_argument("--model", required=True, help="indicator checkpoint directory")
    p.add_argument("--tokenize", choices=("character", "whitespace"), default="character")
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_TOKENS)
    _add_common(p, "elements.jsonl to write", out_required=True)
    p.set_defaults(handler=_cmd_annotate)

    p = sub.add_parser("build-contrastive", help="emit [DEL]-masked element-view positives")
    p.add_argument("--cases", required=True)
    p.add_argument("--elements", required=True)
    p.add_argument("--l1", type=int, default=64)
    p.add_argument("--seed", type=int)
    p.add_argument("--tokenize", choices=("character", "whitespace"), default="character")
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_TOKENS)
    _add_common(p, "instances.jsonl to write", out_required=True)
    p.set_defaults(handler=_cmd_build_contrastive)

    p = sub.add_parser("train", help="train the retrieval model")
    p.add_argument("--config", help="training config JSON (missing keys take defaults)")
    p.add_argument("--cases", required=True)
    p.add_argument("--triples", required=True, help="train triples.jsonl")
    p.add_argument("--validation", help="validation triples.jsonl (model selection)")
    p.add_argument("--elements", help="elements.jsonl (gold or from `annotate`)")
    p.add_argument("--fixture", help="embeddings.jsonl for the fixture encoder")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--warmup", type=float)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--lambda-case", type=float)
    p.add_argument("--lambda-ele", type=float)
    p.add_argument("--tau1", type=float)
    p.add_argument("--tau2", type=float)
    p.add_argument("--l1", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--tokenize", choices=("character", "whitespace"))
    p.add_argument("--encoder-kind", choices=("lookup", "lookup_recurrent", "fixture"))
    p.add_argument("--d", type=int)
    p.add_argument("--rnn-kind", choices=("lstm", "gru", "none"))
    p.add_argument("--no-case-view", action="store_true")
    p.add_argument("--no-element-view", action="store_true")
    p.add_argument("--no-ba", action="store_true")
    p.add_argument("--no-sr", action="store_true")
    _add_common(p, "checkpoint directory", out_required=True)
    p.set_defaults(handler=_cmd_train)

    for name, handler, help_text in (
        ("eval", _cmd_eval, "metrics of a checkpoint on labelled triples"),
        ("rank", _cmd_rank, "rank candidates for a query"),
        ("dump-attention", _cmd_dump_attention, "most-attended tokens of query/candidate pairs"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--model", required=True, help="checkpoint directory")
        p.add_argument("--cases", required=True)
        p.add_argument("--fixture", help="embeddings.jsonl (fixture-encoder checkpoints)")
        if name == "eval":
            p.add_argument("--triples", required=True)
        elif name == "rank":
            p.add_argument("--query", required=True)
            p.add_argument("--candidates", required=True, help="comma-separated case ids")
            p.add_argument("--method", choices=tuple(METHODS), default="exhaustive")
        else:
            p.add_argument("--query", required=True)
            p.add_argument("--cand", required=True, help="candidate id(s), comma-separated")
            p.add_argument("--top-k", type=int, default=10)
        _add_common(p, "output directory (default: print to stdout)")
        p.set_defaults(handler=handler)

    p = sub.add_parser("baseline", help="TF-IDF or BM25 triple classification")
    p.add_argument("--method", choices=("tfidf", "bm25"), required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--tokenize", choices=("character", "whitespace"), default="character")
    p.add_argument("--max-len", type=int, default=DEFAULT_MAX_TOKENS)
    _add_common(p, "output directory (default: print to stdout)")
    p.set_defaults(handler=_cmd_baseline)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full training loss")
    p.add_argument("--config", help="gradcheck config JSON")
    p.add_argument("--d", type=int)
    p.add_argument("--h-rnn", type=int)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--triples", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--seed", type=int)
    _add_common(p, "output directory (default: print to stdout)")
    p.set_defaults(handler=_cmd_gradcheck)
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(name)
    return None


def _check_unknown(parser, argv: Sequence[str], unknown: list[str], command: str | None):
    target = _subparser(parser, command) if command else parser
    known = [s for a in target._actions for s in a.option_strings]
    flag = unknown[0].split("=", 1)[0]
    hint = difflib.get_close_matches(flag, known, n=1)
    msg = f"unrecognized argument {unknown[0]!r}"
    if hint:
        msg += f"; did you mean {hint[0]!r}?"
    raise UsageError(msg, target.format_usage())


def _write_manifest(manifest: RunManifest, out_dir, extra_path) -> None:
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True)
    wrote = False
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "manifest.json").write_text(text + "\n")
        wrote = True
    if extra_path is not None:
        Path(extra_path).write_text(text + "\n")
        wrote = True
    if not wrote:
        print(text, file=sys.stderr)


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            args, unknown = parser.parse_known_args(argv)
        except SystemExit as exc:  # --help / --version
            return int(exc.code or 0)
        if unknown:
            _check_unknown(parser, argv, unknown, getattr(args, "command", None))
        if not getattr(args, "command", None):
            raise UsageError("a subcommand is required", parser.format_usage())
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        out = getattr(args, "out", None)
        if out is not None and args.command in ("eval", "rank", "dump-attention", "baseline",
                                                "gradcheck"):
            Path(out).mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        config, seed, inputs, out_dir = args.handler(args)
        manifest = RunManifest(args.command, config, seed, _digests(inputs),
                               duration_s=time.perf_counter() - start, argv=argv)
        _write_manifest(manifest, out_dir, args.manifest)
        return 0
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        print(f"mvcl: error: {exc}", file=sys.stderr)
        return 1
    except MvclError as exc:
        print(f"mvcl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"mvcl: data error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except (AssertionError, FloatingPointError) as exc:
        print(f"mvcl: contract failure: {exc}", file=sys.stderr)
        return ContractError.exit_code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
