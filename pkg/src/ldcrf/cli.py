"""Command-line interface: ``ldcrf <command> ...``.

Every command writes JSON (or a dataset file) to ``--out`` or stdout.  JSON is
written with sorted keys and no wall-clock fields, so identical inputs give
byte-identical outputs.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import data as dataio
from .allocation import AllocationError, AllocationRequest, describe, dist
from .complexity import DISTANCES, PAIRINGS, VARIANTS, ComplexityProfile, comp_measure
from .harness import ExperimentConfig, evaluate, nested_cv, report_rows, sensitivity_study, with_workers
from .model import ContractError, LatentMap, Model
from .training import TrainConfig, TrainingError, train

log = logging.getLogger("ldcrf")


def _emit(doc, out: str | None) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_dataset(ds, out: str | None) -> None:
    if out:
        dataio.save(ds, out)
    else:
        sys.stdout.write(dataio.dumps(ds))


def _counts(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        l2_strength=args.l2,
        max_iterations=args.max_iter,
        gradient_tolerance=args.tol,
        seed=args.seed,
        warm_start_epsilon=args.epsilon,
        workers=args.workers,
    )


def _add_train_flags(p) -> None:
    p.add_argument("--l2", type=float, default=TrainConfig.l2_strength, help="L2 penalty (default %(default)s)")
    p.add_argument("--max-iter", type=int, default=TrainConfig.max_iterations)
    p.add_argument("--tol", type=float, default=TrainConfig.gradient_tolerance, help="gradient inf-norm tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=TrainConfig.warm_start_epsilon, help="warm-start scale")
    p.add_argument("--workers", type=int, default=1)


def cmd_synth(args):
    protos = _counts(args.prototypes)
    spec = dataio.SynthSpec(
        n_labels=args.labels,
        prototypes_per_label=protos[0] if len(protos) == 1 else protos,
        feature_dim=args.dim,
        mean_length=args.length,
        length_jitter=args.jitter,
        noise_sigma=args.noise,
        samples_per_label=args.samples,
        seed=args.seed,
        prototype_spread=args.spread,
        walk_scale=args.walk,
    )
    _emit_dataset(dataio.synth(spec), args.out)


def cmd_benchmark(args):
    _emit_dataset(dataio.mixture_benchmark(args.seed), args.out)


def cmd_group(args):
    ds = dataio.load(args.data)
    spec = dataio.GroupingSpec.parse(args.groups)
    _emit_dataset(dataio.make_binary(ds, spec, args.prefix), args.out)


def cmd_concat(args):
    _emit_dataset(dataio.concat_many(dataio.load(args.data), args.group_size, args.seed), args.out)


def cmd_subsample(args):
    _emit_dataset(dataio.subsample(dataio.load(args.data), args.stride), args.out)


def cmd_import_csv(args):
    _emit_dataset(dataio.import_csv(args.csv, name=args.name), args.out)


def cmd_complexity(args):
    profile = comp_measure(dataio.load(args.data), args.variant, args.pairs, args.distance)
    _emit(profile.to_json(), args.out)


def cmd_allocate(args):
    profile = ComplexityProfile.from_json(json.loads(Path(args.profile).read_text()))
    req = AllocationRequest(args.total, profile.values, args.cap)
    latent_map = dist(req, args.criterion, args.cap_rule)
    report = describe(latent_map, req)
    log.info("%s", report["text"])
    _emit({**latent_map.to_json(), "allocation": {k: v for k, v in report.items() if k != "text"}}, args.out)


def cmd_train(args):
    ds = dataio.load(args.data)
    if args.map:
        latent_map = LatentMap.from_json(json.loads(Path(args.map).read_text()))
    elif args.counts:
        latent_map = LatentMap(_counts(args.counts))
    else:
        latent_map = LatentMap((1,) * ds.n_labels)
    result = train(ds, latent_map, _train_config(args))
    model = Model(result.params, latent_map, ds.label_names)
    if args.trace:
        result.write_trace(args.trace)
    if args.out:
        model.save(args.out)
    else:
        sys.stdout.write(json.dumps(model.to_json()) + "\n")
    log.info("final nll %.6f after %d iterations (converged=%s)",
             result.final_nll, result.iterations_used, result.converged)


def cmd_eval(args):
    model = Model.load(args.model)
    ds = dataio.load(args.data)
    report = evaluate(model.params, model.latent_map, ds, normalize=not args.raw)
    _emit({"dataset": ds.name, "n_samples": len(ds), **report}, args.out)


def cmd_experiment(args):
    config = ExperimentConfig.from_json(json.loads(Path(args.config).read_text()))
    path = args.data or config.dataset_path
    if not path:
        raise ContractError("no dataset: give --data or dataset_path in the config")
    report = nested_cv(dataio.load(path), with_workers(config, args.workers))
    _emit(report, args.out)
    if args.csv:
        _write_csv(report_rows(report), args.csv)


def cmd_sensitivity(args):
    assignments = [_counts(part) for part in args.assignments.split(";")]
    config = _train_config(args)
    report = sensitivity_study(dataio.load(args.data), assignments, args.split_seed, config)
    _emit(report, args.out)
    if args.csv:
        _write_csv([{"counts": " ".join(map(str, r["counts"])), "accuracy": r["accuracy"]}
                    for r in report["assignments"]], args.csv)


def _write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ldcrf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a prototype-mixture dataset")
    p.add_argument("--labels", type=int, default=2)
    p.add_argument("--prototypes", default="1", help="one count, or comma-separated per label")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--length", type=int, default=20)
    p.add_argument("--jitter", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--samples", type=int, default=20, help="samples per label")
    p.add_argument("--spread", type=float, default=2.0)
    p.add_argument("--walk", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("benchmark", help="write the bundled mixture benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("group", help="collapse labels into a binary dataset")
    p.add_argument("data")
    p.add_argument("--groups", required=True, help='e.g. "01-2345" or "0,1-2,3,4,5"')
    p.add_argument("--prefix", help="dataset id prefix such as NT or AG")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_group)

    p = sub.add_parser("concat", help="concatenate samples into many-gesture streams")
    p.add_argument("data")
    p.add_argument("--group-size", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_concat)

    p = sub.add_parser("subsample", help="keep every n-th frame")
    p.add_argument("data")
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("import-csv", help="convert a sequence_id,t,f1..fd,label table")
    p.add_argument("csv")
    p.add_argument("--name", default="")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_import_csv)

    p = sub.add_parser("complexity", help="per-label complexity profile")
    p.add_argument("data")
    p.add_argument("--variant", choices=VARIANTS, default="literal-sum")
    p.add_argument("--pairs", choices=PAIRINGS, default="unordered")
    p.add_argument("--distance", choices=DISTANCES, default="framewise")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("allocate", help="distribute latent values from a profile")
    p.add_argument("profile")
    p.add_argument("--total", type=int, required=True)
    p.add_argument("--cap", type=float, default=1.0)
    p.add_argument("--criterion", choices=("normalized", "literal"), default="normalized")
    p.add_argument("--cap-rule", choices=("inclusive", "strict"), default="inclusive")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("data")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--map", help="latent map JSON (from allocate)")
    group.add_argument("--counts", help="explicit latent counts, e.g. 2,1")
    _add_train_flags(p)
    p.add_argument("--trace", help="write the per-iteration NLL trace as CSV")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="frame accuracy and confusion matrix of a model")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--raw", action="store_true", help="do not row-normalize the confusion matrix")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="nested cross-validation from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="overrides dataset_path in the config")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--csv", help="also write the per-fold table as CSV")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sensitivity", help="compare explicit latent assignments on a 2/3-1/3 split")
    p.add_argument("data")
    p.add_argument("--assignments", default="1,2;2,1;1,1;2,2")
    p.add_argument("--split-seed", type=int, default=0)
    _add_train_flags(p)
    p.add_argument("--csv")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except (ContractError, AllocationError, TrainingError, dataio.DatasetFormatError, OSError) as exc:
        print(f"ldcrf: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
