"""Command-line tools: train, encode, eval, sweep, ablate.

Every command is deterministic given identical inputs and seed. Exit codes:
0 success, 1 usage or bad config, 2 data/format problems, 3 numerical
divergence during training. Set MLHASH_LOG=debug|info|warning to control
stderr verbosity.
"""
from __future__ import annotations

import argparse
import logging
import os
import statistics
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, build_dataset, load_run_config, with_overrides
from .bottleneck import GradientEstimator
from .data import save_labels_csv
from .errors import (
    ConfigurationError,
    DimensionError,
    FormatError,
    LabelError,
    OracleCapacityError,
    TrainingDivergenceError,
)
from .network import (
    Variant,
    encode_dataset,
    load_checkpoint,
    save_checkpoint,
    train_new_model,
)
from .retrieval import (
    evaluate_retrieval,
    load_codes,
    mean_average_precision,
    pack_codes,
    report_to_json,
    save_codes,
    write_pr_csv,
    write_precision_csv,
)

log = logging.getLogger("mlhash")

SIG_DIGITS = 6


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; our contract says 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="mlhash", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="train a model from a run config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=None, help="output directory")
    p_train.add_argument("--variant", choices=[v.value for v in Variant])
    p_train.add_argument(
        "--estimator", choices=[e.value for e in GradientEstimator]
    )

    p_encode = sub.add_parser("encode", help="encode a dataset to a code database")
    p_encode.add_argument("--checkpoint", required=True)
    src = p_encode.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", help="feature file (.csv or BHF1 binary)")
    src.add_argument("--config", help="run config; dataset and split come from it")
    p_encode.add_argument(
        "--role",
        choices=["train", "database", "query", "all"],
        default="all",
        help="which split rows to encode (config source only)",
    )
    p_encode.add_argument("--out", required=True, help="output code file")
    p_encode.add_argument("--labels-out", default=None, help="also write labels CSV")

    p_eval = sub.add_parser("eval", help="retrieval metrics for query vs database")
    p_eval.add_argument("--queries", required=True, help="query code file")
    p_eval.add_argument("--database", required=True, help="database code file")
    p_eval.add_argument("--query-labels", required=True)
    p_eval.add_argument("--db-labels", required=True)
    p_eval.add_argument("--k", type=int, default=None, help="mAP cutoff (default all)")
    p_eval.add_argument("--radius", type=int, default=2)
    p_eval.add_argument("--out", required=True, help="output directory")

    p_sweep = sub.add_parser("sweep", help="mAP across a lambda or code-length axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", choices=["lambda", "m"], required=True)
    p_sweep.add_argument(
        "--values", required=True, help="comma-separated axis values"
    )
    p_sweep.add_argument("--seeds", type=int, default=1)
    p_sweep.add_argument("--out", default=None)

    p_ablate = sub.add_parser("ablate", help="mAP for every objective variant")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--seeds", type=int, default=1)
    p_ablate.add_argument("--out", default=None)

    return parser


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    out = getattr(args, "out", None) or (cfg.out_dir if cfg else None)
    if out is None:
        raise ConfigurationError("no output directory: pass --out or set out_dir")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = with_overrides(cfg, seed=args.seed)
    if getattr(args, "variant", None):
        cfg.variant = Variant(args.variant)
    if getattr(args, "estimator", None):
        cfg.estimator = GradientEstimator(args.estimator)
    return cfg


def _fmt(value: float) -> str:
    return f"{value:.{SIG_DIGITS}g}"


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    dataset = build_dataset(cfg)
    log.info(
        "training variant=%s m=%d on %d train rows",
        cfg.variant.value,
        cfg.code_length,
        len(dataset.rows("train")),
    )
    model, history = train_new_model(
        dataset, cfg.code_length, cfg.train, variant=cfg.variant, estimator=cfg.estimator
    )
    ckpt = out / "checkpoint.bin"
    save_checkpoint(model, ckpt)
    log_path = out / "training_log.csv"
    with open(log_path, "w") as fh:
        fh.write("iteration,total,classification,regularizer\n")
        for i, stats in enumerate(history):
            fh.write(
                f"{i},{_fmt(stats.total)},{_fmt(stats.classification)},"
                f"{_fmt(stats.regularizer)}\n"
            )
    final = history[-1].total if history else float("nan")
    print(f"trained {len(history)} epochs, final loss {_fmt(final)}")
    print(f"checkpoint: {ckpt}")
    print(f"log: {log_path}")
    return 0


def cmd_encode(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.config:
        cfg = load_run_config(args.config)
        dataset = build_dataset(cfg)
        rows = (
            np.arange(dataset.n) if args.role == "all" else dataset.rows(args.role)
        )
    else:
        from .data import load_dataset

        dataset = load_dataset(args.dataset)
        if args.role != "all":
            raise ConfigurationError(
                "--role needs --config (raw feature files carry no split)"
            )
        rows = np.arange(dataset.n)
    codes = encode_dataset(model, dataset.features[rows])
    save_codes(pack_codes(codes), args.out)
    if args.labels_out:
        save_labels_csv(dataset.labels[rows], args.labels_out)
    print(f"encoded {len(rows)} rows ({model.code_length} bits) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .data import load_labels_csv

    query_codes = load_codes(args.queries)
    db_codes = load_codes(args.database)
    query_labels = load_labels_csv(args.query_labels)
    db_labels = load_labels_csv(args.db_labels)
    report = evaluate_retrieval(
        query_codes, db_codes, query_labels, db_labels, k=args.k, radius=args.radius
    )
    out = _out_dir(args)
    (out / "report.json").write_text(report_to_json(report, SIG_DIGITS) + "\n")
    write_precision_csv(report.precision_at_k, out / "precision_at_k.csv", SIG_DIGITS)
    write_pr_csv(report.pr_curve, out / "pr_curve.csv", SIG_DIGITS)
    print(f"mAP@{args.k if args.k else 'all'} = {_fmt(report.map_at_k)}")
    print(f"P@H<={args.radius} = {_fmt(report.p_at_h2)}")
    print(f"reports in {out}")
    return 0


def _retrieval_map(cfg: RunConfig, code_length: int, seed: int) -> float:
    """Train on the config's dataset and score mAP@all, query vs database."""
    dataset = build_dataset(cfg)
    train_cfg = with_overrides(cfg, seed=seed).train
    model, _ = train_new_model(
        dataset, code_length, train_cfg, variant=cfg.variant, estimator=cfg.estimator
    )
    query_rows = dataset.rows("query")
    db_rows = dataset.rows("database")
    if len(query_rows) == 0 or len(db_rows) == 0:
        raise ConfigurationError("sweep/ablate need a split with query and database rows")
    query_codes = pack_codes(encode_dataset(model, dataset.features[query_rows]))
    db_codes = pack_codes(encode_dataset(model, dataset.features[db_rows]))
    return mean_average_precision(
        query_codes, db_codes, dataset.labels[query_rows], dataset.labels[db_rows]
    )


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigurationError(f"cannot parse axis values: {args.values!r}") from None
    if not values:
        raise ConfigurationError("no axis values given")
    rows = []
    for value in values:
        scores = []
        for s in range(args.seeds):
            seed = cfg.train.seed + s
            if args.axis == "lambda":
                run_cfg = with_overrides(cfg, reg_weight=value)
                score = _retrieval_map(run_cfg, cfg.code_length, seed)
            else:
                score = _retrieval_map(cfg, int(value), seed)
            scores.append(score)
            log.info("sweep %s=%s seed=%d map=%.4f", args.axis, value, seed, score)
        rows.append((value, statistics.median(scores)))
    path = out / "sweep.csv"
    header = "lambda,map" if args.axis == "lambda" else "m,map"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for value, score in rows:
            axis_fmt = _fmt(value) if args.axis == "lambda" else str(int(value))
            fh.write(f"{axis_fmt},{_fmt(score)}\n")
    for value, score in rows:
        print(f"{args.axis}={value}: map={_fmt(score)}")
    print(f"sweep table: {path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    rows = []
    for variant in Variant:
        run_cfg = with_overrides(cfg)
        run_cfg.variant = variant
        scores = [
            _retrieval_map(run_cfg, cfg.code_length, cfg.train.seed + s)
            for s in range(args.seeds)
        ]
        rows.append((variant.value, statistics.median(scores), scores))
        log.info("ablate %s -> %s", variant.value, scores)
    path = out / "ablation.csv"
    seed_cols = ",".join(f"map_seed{s}" for s in range(args.seeds))
    with open(path, "w") as fh:
        fh.write(f"variant,map_median,{seed_cols}\n")
        for name, med, scores in rows:
            fh.write(f"{name},{_fmt(med)},{','.join(_fmt(s) for s in scores)}\n")
    for name, med, _ in rows:
        print(f"{name}: map={_fmt(med)}")
    print(f"ablation table: {path}")
    return 0


_HANDLERS = {
    "train": cmd_train,
    "encode": cmd_encode,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    level = os.environ.get("MLHASH_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except TrainingDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (
        FormatError,
        DimensionError,
        LabelError,
        OracleCapacityError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
