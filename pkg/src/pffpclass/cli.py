"""Command-line interface: ``pffp-classify <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 model error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import CLASS_LABELS, __version__
from .bundle import FORMAT_VERSION, load_bundle, save_bundle
from .config import default_config, default_config_text, load_config
from .corpus import FeatureTable, load_corpus, read_features, write_features
from .errors import ConfigError, DataError, ModelError
from .signal import extract_features, read_raw_csv

log = logging.getLogger("pffpclass")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3
RECOMMENDED_ITERATIONS = (30, 50)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_threads() -> int:
    return os.cpu_count() or 1


# -- commands ----------------------------------------------------------------


def cmd_preprocess(args) -> int:
    deployments, problems = load_corpus(args.manifest, args.raw_dir, threads=args.threads)
    table = FeatureTable.from_deployments(deployments)
    write_features(table, args.out)
    skipped = sum(p.level == "error" for p in problems)
    print(f"wrote {len(table)} feature rows to {args.out}; skipped {skipped}")
    for p in problems:
        print(f"  {p}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import train_pipeline

    config = load_config(args.config) if args.config else default_config()
    table = read_features(args.features)
    bundle, metrics = train_pipeline(table, config, seed=args.seed, threads=args.threads)
    save_bundle(bundle, args.out)
    prov = bundle.provenance
    sizes = prov["split_sizes"]
    print(f"split: train {sizes['train']}, validation {sizes['validation']}, test {sizes['test']}")
    print(f"forest winner: {json.dumps(prov['forest']['winner'], sort_keys=True)}")
    net = prov["network"]
    print(f"network: {net['epochs_run']} epochs run, best epoch {net['best_epoch']}")
    if metrics:
        print(f"validation rows: {metrics['validation_rows']}")
        for key in ("cv_accuracy", "forest_accuracy", "network_accuracy", "fused_accuracy"):
            print(f"{key.replace('_', ' ')}: {metrics[key]:.4f}")
    print(f"saved model to {args.out}")
    return EXIT_OK


def _estimate_record(source, deployment_id, estimate, summary) -> dict:
    return {
        "input": str(source),
        "deployment_id": deployment_id,
        "predicted_class": int(estimate.predicted),
        "summary_features": {
            "norm_max_decel": float(summary.normalized_max_deceleration),
            "depth_m": float(summary.penetration_depth),
        },
        "prior": estimate.prior.tolist(),
        "tempered_prior": estimate.tempered_prior.tolist(),
        "q1": estimate.q1.tolist(),
        "q2": estimate.q2.tolist(),
        "q3": estimate.q3.tolist(),
        "samples": {f"class_{c}": estimate.samples[:, k].tolist() for k, c in enumerate(CLASS_LABELS)},
    }


def _predictions_csv(predictions: list, iterations: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["input", "deployment_id", "predicted_class", "class", "prior", "tempered_prior",
         "q1", "q2", "q3", *(f"sample_{i + 1}" for i in range(iterations))]
    )
    for p in predictions:
        for k, c in enumerate(CLASS_LABELS):
            w.writerow(
                [p["input"], p["deployment_id"], p["predicted_class"], c]
                + [repr(p[key][k]) for key in ("prior", "tempered_prior", "q1", "q2", "q3")]
                + [repr(v) for v in p["samples"][f"class_{c}"]]
            )
    return buf.getvalue()


def cmd_predict(args) -> int:
    bundle = load_bundle(args.model)
    iterations = bundle.fusion.iterations if args.iterations is None else args.iterations
    if iterations < 1:
        raise ConfigError("--iterations must be at least 1")
    lo, hi = RECOMMENDED_ITERATIONS
    if not lo <= iterations <= hi:
        log.warning("%d iterations is outside the recommended %d-%d range", iterations, lo, hi)

    rng = np.random.default_rng(args.seed)
    predictions, errors = [], []
    estimates = []
    for source in args.input:
        try:
            record = read_raw_csv(source, deployment_id=Path(source).stem)
            _, summary, features = extract_features(record)
        except (DataError, OSError) as exc:
            errors.append({"input": str(source), "error": f"{type(exc).__name__}: {exc}"})
            print(f"{source}: {type(exc).__name__}: {exc}", file=sys.stderr)
            continue
        estimate = bundle.predict(summary, features, rng, iterations)
        estimates.append((source, estimate))
        predictions.append(_estimate_record(source, record.deployment_id, estimate, summary))

    if args.format == "json":
        text = json.dumps(
            {
                "model": {"path": str(args.model), "format_version": FORMAT_VERSION},
                "config": {
                    "iterations": iterations,
                    "prior_bias": bundle.fusion.prior_bias,
                    "prior_scale": bundle.fusion.prior_scale,
                    "seed": args.seed,
                },
                "predictions": predictions,
                "errors": errors,
            },
            indent=2,
        ) + "\n"
    else:
        text = _predictions_csv(predictions, iterations)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)

    if args.plots:
        from .plotting import posterior_boxplot, quartile_trace

        out = Path(args.plots)
        out.mkdir(parents=True, exist_ok=True)
        for source, estimate in estimates:
            stem = Path(source).stem
            posterior_boxplot(estimate, out / f"{stem}_boxplot.png", title=stem)
            quartile_trace(estimate, out / f"{stem}_quartiles.png")
    if not predictions:
        return EXIT_DATA
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate, format_accuracy, write_report
    from .pipeline import held_out_test, table_digest

    bundle = load_bundle(args.model)
    table = read_features(args.features)
    subset = held_out_test(bundle, table) if args.split == "test" else table
    result = evaluate(bundle, subset, seed=args.seed, iterations=args.iterations)
    metadata = {
        "model": str(args.model),
        "features": str(args.features),
        "features_sha256": table_digest(table),
        "split": args.split,
        "seed": args.seed,
        "iterations": args.iterations or bundle.fusion.iterations,
        "deployment_ids": result.ids,
        "predicted": result.predicted.tolist(),
    }
    csv_path, json_path = write_report(result.matrix, args.out, metadata)
    m = result.matrix
    print(f"evaluated {m.total} deployments ({args.split})")
    print(f"accuracy: {format_accuracy(m.accuracy)} ({int(np.trace(m.counts))}/{m.total})")
    for c in m.empty_rows:
        print(f"note: class {c} has no deployments in this set")
    print(f"wrote {csv_path} and {json_path}")
    if args.plots:
        from .plotting import confusion_heatmap

        confusion_heatmap(m, Path(args.out) / "confusion.png")
    return EXIT_OK


def cmd_version(args) -> int:
    print(f"pffpclass {__version__} (bundle format {FORMAT_VERSION})")
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(default_config_text())
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import make_corpus, write_corpus

    manifest = write_corpus(make_corpus(args.n, seed=args.seed), args.out)
    print(f"wrote {args.n} synthetic records; manifest {manifest}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pffp-classify", description="Probabilistic sediment classification from PFFP records.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="raw records + manifest -> features CSV")
    p.add_argument("--raw-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="features CSV -> model bundle")
    p.add_argument("--features", required=True)
    p.add_argument("--config", help="key = value config file (see the 'config' command); defaults if omitted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify raw records with uncertainty")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, nargs="+")
    p.add_argument("--iterations", type=int, help="posterior samples (default: bundle setting)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="report file (default stdout)")
    p.add_argument("--plots", metavar="DIR", help="also render box plot and quartile trace PNGs")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="confusion matrix and accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", choices=("test", "all"), default="test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", required=True, help="output directory for confusion.csv and report.json")
    p.add_argument("--plots", action="store_true", help="also render confusion.png")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("version", help="print version")
    p.set_defaults(func=cmd_version)

    p = sub.add_parser("config", help="print the default configuration file")
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("synth", help="write a synthetic corpus (raw CSVs + manifest)")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as exc:
        print(f"model error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (DataError, OSError) as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
