"""Command-line front end: gen | train | estimate | eval | fit-scaling | inspect."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from typing import Optional, Sequence

from . import estimators, evalkit, registry as reg, scaling, synth
from .features import FeatureId
from .gbrt import TrainConfig
from .plan import PlanError, load_corpus, save_corpus
from .registry import RegistryError, load_registry, save_registry, train_registry
from .scaling import FormKind
from .synth import SynthError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_RESOURCE_FLAG = {"cpu": "cpu_us", "io": "logical_io"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    pass


def _resources(flag: str) -> list[str]:
    if flag == "both":
        return list(reg.RESOURCES)
    return [_RESOURCE_FLAG[flag]]


def cmd_gen(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = synth.spec_from_json(fh.read())
    if args.seed is not None:
        spec.rng_seed = args.seed
    corpus = synth.generate_corpus(spec)
    count = save_corpus(corpus, args.out)
    print(f"wrote {count} plans to {args.out} (seed {spec.rng_seed})")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        iterations=args.iterations,
        max_leaves=args.max_leaves,
        learning_rate=args.learning_rate,
        subsample_fraction=args.subsample,
        rng_seed=args.seed if args.seed is not None else 0,
    )


def cmd_train(args) -> int:
    plans = load_corpus(args.corpus)
    resources = _resources(args.resource)
    for resource in resources:
        missing = [p.query_id for p in plans if not p.has_labels(resource)]
        if missing:
            raise RegistryError(
                f"corpus lacks {resource!r} labels (first: {missing[0]})"
            )
    registry = train_registry(plans, resources, _train_config(args), source=args.source)
    save_registry(registry, args.out)
    print(f"trained {len(registry.entries)} operator/resource entries -> {args.out}")
    for (op, resource), entry in sorted(
        registry.entries.items(), key=lambda kv: (int(kv[0][0]), kv[0][1])
    ):
        examples = reg.collect_examples(plans, resource, args.source)[op]
        default = entry.models[entry.default_idx]
        sse = reg._training_sse(default, examples)
        rmse = (sse / len(examples)) ** 0.5
        print(
            f"  {op.name:<16} {resource:<10} models={len(entry.models)} "
            f"default=#{entry.default_idx} train_rmse={rmse:.3f}"
        )
    return EXIT_OK


def cmd_estimate(args) -> int:
    registry = load_registry(args.model)
    plans = load_corpus(args.plans)
    resource = _RESOURCE_FLAG[args.resource]
    out = []
    for plan in plans:
        est = reg.estimate_query(registry, plan, resource, source=args.source)
        out.append(
            {
                "query_id": plan.query_id,
                "total": est.total,
                "per_pipeline": est.per_pipeline,
                "per_operator": [
                    {"op": name, "estimate": value} for name, value in est.per_operator
                ],
            }
        )
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    registry = load_registry(args.model)
    test = load_corpus(args.corpus)
    if not test:
        raise RegistryError("empty test corpus")
    resource = _RESOURCE_FLAG[args.resource]
    table: dict[str, evalkit.EstimatorFn] = {
        "SCALING": estimators.scaling_estimator(registry, resource, args.source),
        "MART": estimators.mart_estimator(registry, resource, args.source),
    }
    if args.baselines:
        if not args.train_corpus:
            raise UsageError("--baselines requires --train-corpus")
        train = load_corpus(args.train_corpus)
        table["LINEAR"] = estimators.train_linear_estimator(
            train, resource, args.source, seed=args.seed or 0
        )
        table["OPT"] = estimators.train_opt_estimator(train, resource)
    reports = evalkit.compare(table, test, resource)
    csv_text = evalkit.report_csv(reports)
    json_text = evalkit.report_json(reports)
    if args.out:
        with open(args.out + ".csv", "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        with open(args.out + ".json", "w", encoding="utf-8") as fh:
            fh.write(json_text + "\n")
    print(csv_text, end="")
    return EXIT_OK


def cmd_fit_scaling(args) -> int:
    feature_names = args.features.split(",")
    features = [FeatureId[name.strip()] for name in feature_names]
    observations = []
    with open(args.csv, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            xs = [float(row[f.name]) for f in features]
            observations.append((xs, float(row[args.resource_column])))
    if len(features) == 1:
        candidates = list(scaling.SINGLE_FEATURE_CANDIDATES)
    else:
        candidates = [FormKind.Product2, FormKind.Sum2, FormKind.FLogSecond]
    report = []
    for kind in candidates:
        orders = [tuple(features)]
        if kind is FormKind.FLogSecond and len(features) == 2:
            orders.append((features[1], features[0]))
        for order in orders:
            perm = [features.index(f) for f in order]
            obs = [([x[i] for i in perm], y) for x, y in observations]
            form, sse = scaling.fit_form(kind, order, obs)
            report.append(
                {
                    "kind": kind.name,
                    "features": [f.name for f in order],
                    "alpha": form.alpha,
                    "beta": form.beta,
                    "sse": sse,
                }
            )
    best = scaling.select_form(candidates, features, observations)
    doc = {
        "candidates": report,
        "selected": {
            "kind": best.kind.name,
            "features": [f.name for f in best.features],
            "alpha": best.alpha,
            "beta": best.beta,
        },
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def _tree_to_dict(tree) -> dict:
    return {
        "child_offsets": [int(c) for c in tree.child],
        "features": [
            FeatureId(int(f)).name if c != 0 else None
            for c, f in zip(tree.child, tree.feature)
        ],
        "values": [float(v) for v in tree.value],
    }


def _mart_to_dict(model, with_trees: bool) -> dict:
    doc = {
        "init": model.init,
        "learning_rate": model.learning_rate,
        "schema": [f.name for f in model.schema],
        "feature_stats": {
            f.name: {"low": lo, "high": hi} for f, (lo, hi) in model.feature_stats.items()
        },
        "n_trees": len(model.trees),
        "target_transform": model.target_transform,
    }
    if with_trees:
        doc["trees"] = [_tree_to_dict(t) for t in model.trees]
    return doc


def cmd_inspect(args) -> int:
    registry = load_registry(args.model)
    doc = []
    for (op, resource), entry in sorted(
        registry.entries.items(), key=lambda kv: (int(kv[0][0]), kv[0][1])
    ):
        models = []
        for model in entry.models:
            if isinstance(model, reg.CombinedModel):
                models.append(
                    {
                        "kind": "combined",
                        "scale_terms": [
                            {
                                "form": t.kind.name,
                                "features": [f.name for f in t.features],
                                "beta": t.beta,
                            }
                            for t in model.terms
                        ],
                        "scaled_model": _mart_to_dict(model.scaled_model, args.trees),
                    }
                )
            else:
                models.append({"kind": "mart", **_mart_to_dict(model, args.trees)})
        doc.append(
            {
                "operator": op.name,
                "resource": resource,
                "default_index": entry.default_idx,
                "models": models,
            }
        )
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qres", description="Plan-level resource estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen")
    p.add_argument("--spec", required=True, help="corpus spec JSON file")
    p.add_argument("--out", required=True, help="output corpus path (line-delimited)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--resource", choices=["cpu", "io", "both"], default="both")
    p.add_argument("--source", choices=["true", "estimated"], default="true")
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--max-leaves", type=int, default=10)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--subsample", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate")
    p.add_argument("--model", required=True)
    p.add_argument("--plans", required=True)
    p.add_argument("--resource", choices=["cpu", "io"], default="cpu")
    p.add_argument("--source", choices=["true", "estimated"], default="true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("eval")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True, help="labeled test corpus")
    p.add_argument("--resource", choices=["cpu", "io"], default="cpu")
    p.add_argument("--source", choices=["true", "estimated"], default="true")
    p.add_argument("--baselines", action="store_true")
    p.add_argument("--train-corpus", default=None, help="training corpus for baselines")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="report path prefix (.csv/.json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit-scaling")
    p.add_argument("--csv", required=True, help="observation CSV")
    p.add_argument("--features", required=True, help="1-2 feature columns, comma-separated")
    p.add_argument("--resource-column", default="resource")
    p.set_defaults(func=cmd_fit_scaling)

    p = sub.add_parser("inspect")
    p.add_argument("--model", required=True)
    p.add_argument("--trees", action="store_true", help="include full tree structures")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PlanError, SynthError, RegistryError, scaling.ScalingError,
            evalkit.EvalError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
