'''Command-line entry points for the calibrated retrieval pipeline.

Subcommands: synth (make a synthetic dataset), calibrate (fit and save a
model), retrieve (rank references for queries), evaluate (score a results
file), inspect (summarize a saved model).

Exit codes: 0 success, 1 usage or value errors, 2 unreadable or malformed
files, 3 model/dataset schema mismatch.
'''

import argparse
import json
import logging
import sys
from pathlib import Path

from .dataset import (
    DataFormatError,
    atomic_write_text,
    load_dataset,
    save_dataset,
    split_queries,
)
from .metrics import ranking_metrics, write_report
from .pipeline import ModelDataMismatchError, fit_model, load_model, save_model
from .retrieval import batch_retrieve, read_results_csv, write_results_csv
from .synthgen import SynthConfig, SynthSpace, generate, heuristic_baseline

__all__ = ["main"]

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    '''ArgumentParser whose usage errors exit 1 instead of 2.'''

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Flag grammars
# ---------------------------------------------------------------------------

def _parse_modalities(text: str) -> tuple:
    mods = tuple(m for m in text.split(",") if m)
    if not mods:
        raise ValueError(f"no modality names in {text!r}")
    return mods


def _parse_space(text: str) -> SynthSpace:
    '''Parse "name=s1,dim=64,sigma=0.1,offset=0,query=a+b,reference=all".'''
    fields = {}
    for part in text.split(","):
        if not part:
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise ValueError(f"space field {part!r} is not key=value")
        if key in fields:
            raise ValueError(f"space field {key!r} given twice")
        fields[key] = value
    known = ("name", "dim", "sigma", "offset", "query", "reference")
    unknown = sorted(set(fields) - set(known))
    if unknown:
        raise ValueError(f"unknown space fields {unknown}, expected {known}")
    if "name" not in fields or "dim" not in fields:
        raise ValueError("a space spec needs at least name= and dim=")

    def side(value):
        return None if value in (None, "all") else _parse_modalities(
            value.replace("+", ","))

    return SynthSpace(
        name=fields["name"],
        dim=int(fields["dim"]),
        noise_sigma=float(fields.get("sigma", 0.0)),
        score_offset=float(fields.get("offset", 0.0)),
        query_modalities=side(fields.get("query")),
        reference_modalities=side(fields.get("reference")),
    )


def _parse_dropout(text: str) -> dict:
    '''Parse "a:0.3,b:0.1" into a per-modality probability dict.'''
    out = {}
    for part in text.split(","):
        if not part:
            continue
        mod, sep, prob = part.partition(":")
        if not sep or not mod:
            raise ValueError(f"dropout entry {part!r} is not modality:probability")
        out[mod] = float(prob)
    return out


def _parse_ints(text: str, what: str) -> list:
    try:
        values = [int(part) for part in text.split(",") if part]
    except ValueError as exc:
        raise ValueError(f"{what} must be comma-separated integers: {exc}") from exc
    if not values:
        raise ValueError(f"no {what} given in {text!r}")
    return values


def _parse_subsample(text: str) -> tuple:
    ratio, sep, seed = text.partition(":")
    if not sep:
        raise ValueError(
            f"negative subsample must look like RATIO:SEED, got {text!r}")
    return float(ratio), int(seed)


def _parse_pairs(text: str) -> list:
    pairs = []
    for part in text.split(","):
        if not part:
            continue
        qmod, sep, rmod = part.partition(":")
        if not sep or not qmod or not rmod:
            raise ValueError(f"baseline entry {part!r} is not qmod:rmod")
        pairs.append((qmod, rmod))
    if not pairs:
        raise ValueError(f"no modality pairs in {text!r}")
    return pairs


def _read_queries_file(path) -> list:
    '''Accept a JSON list of ids, or a split file holding a "test" list.'''
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(doc, dict):
        doc = doc.get("test")
    if not isinstance(doc, list) or not all(isinstance(v, int) for v in doc):
        raise ValueError(
            f"{path}: expected a JSON list of integers or an object with a "
            f"\"test\" list")
    return doc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spaces = tuple(_parse_space(spec) for spec in args.space or ())
    if not spaces:
        raise ValueError("at least one --space is required")
    config = SynthConfig(
        n_queries=args.queries,
        n_references=args.references,
        query_modalities=_parse_modalities(args.query_modalities),
        reference_modalities=_parse_modalities(args.reference_modalities),
        spaces=spaces,
        latent_dim=args.latent_dim,
        relevant_per_query=args.relevant_per_query,
        query_dropout=_parse_dropout(args.query_dropout),
        reference_dropout=_parse_dropout(args.reference_dropout),
        keep_at_least_one_query=args.keep_at_least_one_query,
        keep_at_least_one_reference=args.keep_at_least_one_reference,
        seed=args.seed,
    )
    dataset = generate(config)
    save_dataset(dataset, args.out)
    logger.info("synth: wrote %d queries x %d references (%d spaces, seed %d) to %s",
                dataset.n_queries, dataset.n_references, len(spaces), args.seed,
                args.out)
    return 0


def cmd_calibrate(args) -> int:
    dataset = load_dataset(args.data)
    calibration_ids, test_ids = split_queries(
        dataset.n_queries, args.cal_fraction, args.seed)
    subsample = (_parse_subsample(args.negative_subsample)
                 if args.negative_subsample else None)
    model = fit_model(dataset, calibration_ids, fuser=args.fuser,
                      negative_subsample=subsample)
    save_model(model, args.out)
    logger.info(
        "calibrate: %d calibration / %d held-out queries, fuser %s, "
        "subsample %s, %d modality pairs -> %s",
        len(calibration_ids), len(test_ids), args.fuser,
        args.negative_subsample or "none", len(model.first_stage), args.out)
    if args.split_out:
        doc = {"calibration": [int(i) for i in calibration_ids],
               "test": [int(i) for i in test_ids]}
        atomic_write_text(args.split_out, json.dumps(doc, indent=2) + "\n")
    return 0


def cmd_retrieve(args) -> int:
    dataset = load_dataset(args.data)
    model = load_model(args.model)
    query_ids = None
    if args.queries is not None:
        query_ids = _parse_ints(args.queries, "query ids")
    elif args.queries_file is not None:
        query_ids = _read_queries_file(args.queries_file)
    results = batch_retrieve(model, dataset, query_ids=query_ids, k=args.k,
                             mode=args.mode, shortlist_alpha=args.shortlist_alpha,
                             workers=args.workers)
    write_results_csv(args.out, results)
    logger.info("retrieve: %d queries, mode %s, k %s, %d workers -> %s",
                len(results), args.mode, args.k, args.workers, args.out)
    return 0


def _print_report(report, prefix: str = ""):
    print(f"{prefix}queries {report.query_count} "
          f"answerable {report.answerable_query_count}")
    for k in report.ks:
        print(f"{prefix}recall@{k} {report.recall_at[k]:.4f} "
              f"precision@{k} {report.precision_at[k]:.4f} "
              f"map@{k} {report.map_at[k]:.4f}")


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.data)
    results = read_results_csv(args.results)
    ks = _parse_ints(args.ks, "cutoffs")
    report = ranking_metrics(results, dataset.relevance, ks)
    _print_report(report)
    if args.out:
        write_report(report, args.out)
        logger.info("evaluate: report -> %s", args.out)
    if args.baseline:
        pairs = _parse_pairs(args.baseline)
        baseline = heuristic_baseline(
            dataset, pairs, query_ids=[r.query_index for r in results])
        _print_report(ranking_metrics(baseline, dataset.relevance, ks),
                      prefix="baseline ")
    return 0


def cmd_inspect(args) -> int:
    model = load_model(args.model)
    print(f"fuser {model.fuser.value}")
    print(f"schema fingerprint {model.schema_fingerprint}")
    for (qmod, rmod), band in model.first_stage.items():
        print(f"band {qmod}->{rmod} space {model.pair_spaces[(qmod, rmod)]} "
              f"range [{band.theta_min:.6g}, {band.theta_max:.6g}] m {band.size}")
    second = model.second_stage
    print(f"second stage range [{second.theta_min:.6g}, "
          f"{second.theta_max:.6g}] m {second.size}")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(
        prog="conformal-retrieval",
        description="Calibrated cross-modal retrieval with missing modalities.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--queries", type=int, default=200)
    p.add_argument("--references", type=int, default=100)
    p.add_argument("--query-modalities", default="a,b", metavar="A,B")
    p.add_argument("--reference-modalities", default="a,b", metavar="A,B")
    p.add_argument("--space", action="append", metavar="SPEC",
                   help="name=s1,dim=64[,sigma=0.1][,offset=0][,query=a+b]"
                        "[,reference=all]; repeat per space")
    p.add_argument("--latent-dim", type=int, default=32)
    p.add_argument("--relevant-per-query", type=int, default=1)
    p.add_argument("--query-dropout", default="", metavar="A:P,B:P")
    p.add_argument("--reference-dropout", default="", metavar="A:P,B:P")
    p.add_argument("--keep-at-least-one-query", action="store_true")
    p.add_argument("--keep-at-least-one-reference", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="fit a model on a calibration split")
    p.add_argument("--data", required=True, help="dataset directory or manifest")
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--cal-fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--fuser", choices=("mean", "max"), default="mean")
    p.add_argument("--negative-subsample", metavar="RATIO:SEED")
    p.add_argument("--split-out", metavar="PATH",
                   help="also write the calibration/test query ids as JSON")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("retrieve", help="rank references for queries")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="results CSV to write")
    p.add_argument("--k", type=int, default=None,
                   help="entries per query (default: all references)")
    p.add_argument("--mode", choices=("exact", "shortlist"), default="exact")
    p.add_argument("--shortlist-alpha", type=float, default=4.0)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--queries", metavar="I,J,K",
                       help="query ids to process (default: all)")
    group.add_argument("--queries-file", metavar="PATH",
                       help="JSON list of ids, or a --split-out file "
                            "(its \"test\" ids are used)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("evaluate", help="score a results file against relevance")
    p.add_argument("--data", required=True)
    p.add_argument("--results", required=True, help="results CSV from retrieve")
    p.add_argument("--ks", default="1,5,10", metavar="K,K,K")
    p.add_argument("--out", help="also write the report as JSON")
    p.add_argument("--baseline", metavar="QMOD:RMOD,...",
                   help="also report a raw-score baseline using these "
                        "modality pairs in priority order")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="summarize a saved model")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(message)s")
    try:
        return args.func(args)
    except ModelDataMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DataFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
