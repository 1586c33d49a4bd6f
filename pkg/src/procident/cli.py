"""Command-line entry point.

Exit status: 0 on success, 1 on data errors, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

from procident import __version__
from procident.alphabet import AlphabetConfig, default_config, filter_short_strings, transform_trace
from procident.anomaly import summarize, write_verdicts
from procident.evaluation import DEFAULT_GRID, grid_search, stratified_split
from procident.exceptions import ConfigMismatchError, ProcidentError
from procident.knn import VOTING_CHOICES, Hyperparameters
from procident.markov import assemble_feature_matrix
from procident.pipeline import (
    DEFAULT_MIN_LEN,
    classify_strings,
    holdout_evaluation,
    load_strings,
    persist_model,
    projection_from_model,
    projection_from_strings,
    restore_model,
    train_from_strings,
    write_projection,
    write_strings,
)
from procident.simulator import CorpusSpec, default_sim_alphabet, generate_corpus, make_spec
from procident.trace_model import read_traces, validate_trace

log = logging.getLogger("procident")


@contextmanager
def _output(path):
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as fh:
            yield fh


def _config(args) -> AlphabetConfig:
    return AlphabetConfig.load(args.config) if args.config else default_config()


def _hyper(args) -> Hyperparameters:
    return Hyperparameters(k=args.k, voting=args.voting, p=args.p, m=args.m)


def _require_model(args):
    if not args.model:
        raise _Usage("--model is required for this command")
    return restore_model(args.model)


class _Usage(Exception):
    pass


# commands ----------------------------------------------------------------------

def cmd_ingest(args):
    corpus = read_traces(args.inputs)
    bad = 0
    with _output(args.out) as fh:
        for t in corpus:
            problems = validate_trace(t)
            bad += bool(problems)
            fh.write(json.dumps({
                "trace_id": t.trace_id, "host_id": t.host_id, "program_name": t.program_name,
                "executable_path": t.executable_path, "n_events": len(t.events),
                "violations": problems,
            }, ensure_ascii=False) + "\n")
    print(f"{len(corpus)} traces, {len(corpus.labels)} programs, {bad} with violations",
          file=sys.stderr)


def cmd_transform(args):
    config = _config(args)
    corpus = read_traces(args.inputs)
    strings = [transform_trace(t, config) for t in corpus]
    kept = filter_short_strings(strings, args.min_len)
    with _output(args.out) as fh:
        write_strings(kept, fh)
    print(f"{len(kept)} strings kept, {len(strings) - len(kept)} below min length {args.min_len}",
          file=sys.stderr)


def cmd_featurize(args):
    config = _config(args)
    strings = filter_short_strings(load_strings(args.inputs, config), args.min_len)
    fm = assemble_feature_matrix(strings, config)
    X = fm.X
    with _output(args.out) as fh:
        for r, s in enumerate(strings):
            lo, hi = X.indptr[r], X.indptr[r + 1]
            fh.write(json.dumps({
                "trace_id": s.trace_id, "label": s.program_name, "length": X.shape[1],
                "nonzeros": [[int(i), float(v)] for i, v in zip(X.indices[lo:hi], X.data[lo:hi])],
            }) + "\n")


def cmd_train(args):
    if not args.model:
        raise _Usage("--model is required for train")
    config = _config(args)
    strings = load_strings(args.inputs, config)
    model = train_from_strings(strings, config, _hyper(args), args.seed, args.min_len)
    persist_model(model, args.model)
    print(f"trained on {model.index.n} strings of {len(model.labels)} programs -> {args.model}",
          file=sys.stderr)


def _classify(args):
    model = _require_model(args)
    if args.config:
        cfg = AlphabetConfig.load(args.config)
        if cfg.digest() != model.config.digest():
            raise ConfigMismatchError("alphabet config differs from the one the model was trained with")
    return classify_strings(model, load_strings(args.inputs, model.config), args.min_len)


def cmd_classify(args):
    run = _classify(args)
    with _output(args.out) as fh:
        for r in run.results:
            fh.write(json.dumps({
                "trace_id": r.string.trace_id, "natural_name": r.string.program_name,
                "assigned_name": r.prediction.label,
                "neighbors": [list(n) for n in r.prediction.neighbors],
                "votes": r.prediction.votes,
                "low_confidence": r.verdict.low_confidence,
            }, ensure_ascii=False) + "\n")
        for tid, reason in run.skipped:
            fh.write(json.dumps({"trace_id": tid, "skipped": reason}) + "\n")


def cmd_detect(args):
    run = _classify(args)
    with _output(args.out) as fh:
        write_verdicts(run.verdicts, fh)
    summary = summarize(run.verdicts, run.skipped)
    print(summary, file=sys.stderr if args.out in (None, "-") else sys.stdout)
    for tid, reason in run.skipped:
        print(f"skipped {tid}: {reason}", file=sys.stderr)


def cmd_evaluate(args):
    config = _config(args)
    strings = load_strings(args.inputs, config)
    report = holdout_evaluation(strings, config, _hyper(args), args.seed, args.min_len)
    print(report.table())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")


def cmd_tune(args):
    config = _config(args)
    strings = filter_short_strings(load_strings(args.inputs, config), args.min_len)
    tr, _ = stratified_split([s.program_name for s in strings], seed=args.seed)
    train = [strings[i] for i in tr]
    fm = assemble_feature_matrix(train, config)
    result = grid_search(fm.X, fm.labels, DEFAULT_GRID, folds=args.folds, seed=args.seed)
    print(result.table())
    if args.out:
        Path(args.out).write_text(json.dumps(result.to_dict(), indent=1) + "\n", encoding="utf-8")


def cmd_simulate(args):
    if args.spec:
        spec = CorpusSpec.load(args.spec)
    else:
        spec = make_spec(
            n_profiles=args.profiles, traces_per_profile=args.traces,
            alphabet=default_sim_alphabet(args.alphabet_size), seed=args.seed,
            out_degree=args.out_degree, length_range=(args.min_length, args.max_length),
            separation_floor=args.separation_floor,
        )
    if args.save_spec:
        spec.save(args.save_spec)
    corpus = generate_corpus(spec)
    with _output(args.out) as fh:
        write_strings(corpus.strings, fh)
    print(f"{len(corpus.strings)} strings from {len(spec.profiles)} profiles, "
          f"separation {corpus.separation:.4f}", file=sys.stderr)


def cmd_project(args):
    if not args.out:
        raise _Usage("--out DIR is required for project")
    if args.inputs:
        config = _config(args)
        strings = filter_short_strings(load_strings(args.inputs, config), args.min_len)
        data = projection_from_strings(strings, config, args.seed)
    else:
        data = projection_from_model(_require_model(args))
    for p in write_projection(data, args.out, svg=args.svg):
        print(p)


# parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help="alphabet config JSON (default: shipped config)")
    common.add_argument("--model", help="model file path")
    common.add_argument("--out", help="output path ('-' or omitted: stdout)")
    common.add_argument("--min-len", type=int, default=DEFAULT_MIN_LEN,
                        help="drop strings shorter than this (default 6)")
    common.add_argument("-v", "--verbose", action="store_true")

    hyper = argparse.ArgumentParser(add_help=False)
    hyper.add_argument("-k", type=int, default=1, help="number of neighbors (default 1)")
    hyper.add_argument("--voting", choices=VOTING_CHOICES, default="distance_weighted")
    hyper.add_argument("-p", type=float, default=1, help="Minkowski exponent (default 1)")
    hyper.add_argument("-m", type=int, default=100, help="SVD components (default 100)")

    parser = argparse.ArgumentParser(prog="procident", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help, parents=(common,), inputs="+"):
        p = sub.add_parser(name, parents=list(parents), help=help)
        if inputs:
            p.add_argument("inputs", nargs=inputs, help="event logs (JSONL) or string files")
        p.set_defaults(func=func)
        return p

    add("ingest", cmd_ingest, "group event logs into per-process traces and validate them")
    add("transform", cmd_transform, "turn event logs into one string per process")
    add("featurize", cmd_featurize, "emit sparse transition-probability features")
    add("train", cmd_train, "train and save a model", (common, hyper))
    add("classify", cmd_classify, "predict the program of each trace")
    add("detect", cmd_detect, "flag traces whose predicted program differs from their own")
    add("evaluate", cmd_evaluate, "3:1 stratified holdout evaluation", (common, hyper))
    p = add("tune", cmd_tune, "grid search with stratified cross-validation")
    p.add_argument("--folds", type=int, default=3)
    p = add("simulate", cmd_simulate, "generate a synthetic string corpus", inputs=None)
    p.add_argument("--spec", help="corpus spec JSON; overrides the options below")
    p.add_argument("--save-spec", help="write the generated spec here")
    p.add_argument("--profiles", type=int, default=20)
    p.add_argument("--traces", type=int, default=200, help="traces per profile")
    p.add_argument("--alphabet-size", type=int, default=40)
    p.add_argument("--out-degree", type=int, default=4)
    p.add_argument("--min-length", type=int, default=50)
    p.add_argument("--max-length", type=int, default=500)
    p.add_argument("--separation-floor", type=float)
    p = add("project", cmd_project, "3-component projections as CSV (and SVG)", inputs="*")
    p.add_argument("--svg", action="store_true", help="also write SVG scatter plots")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"procident: error: {exc}", file=sys.stderr)
        return 2
    except (ProcidentError, OSError, ValueError) as exc:
        print(f"procident: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
