"""Command-line entry point: `toy`, `bench`, `gradcheck`, `summarize`.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 data error.
Every artifact file starts with a `# config_hash=... seed=...` header line.
The output directory resolves as: --out flag > SPIKEREG_OUT env > config.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluate
from .config import (
    ExperimentConfig,
    TOY_GAUSSIAN_EPOCHS,
    TOY_RAC_EPOCHS,
    apply_overrides,
    bench_defaults,
    config_hash,
    emit_config,
    load_config_file,
    toy_defaults,
)
from .data import gen_toy, load_manifest
from .errors import ConfigError, DataError, NumericError
from .gradcheck import run_gradcheck
from .numcore import Rng

log = logging.getLogger(__name__)

OUT_ENV_VAR = "SPIKEREG_OUT"


def _resolve_config(args, defaults: ExperimentConfig) -> ExperimentConfig:
    cfg = defaults
    if getattr(args, "config", None):
        cfg = load_config_file(args.config, base=cfg)
    flag_fields = (
        "dataset", "head", "seed", "folds", "workers", "epochs", "t_steps",
        "hidden", "k_bins", "batch_size", "learning_rate",
    )
    overrides = {name: getattr(args, name, None) for name in flag_fields}
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    elif os.environ.get(OUT_ENV_VAR):
        overrides["out_dir"] = os.environ[OUT_ENV_VAR]
    cfg = apply_overrides(cfg, **overrides)
    return cfg.validate()


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(run_hash: str, seed: int) -> str:
    return f"# config_hash={run_hash} seed={seed}"


def _toy_epochs(cfg: ExperimentConfig, head: str) -> int:
    if cfg.epochs > 0:
        return cfg.epochs
    return TOY_GAUSSIAN_EPOCHS if head == "gaussian" else TOY_RAC_EPOCHS


def cmd_toy(cfg: ExperimentConfig) -> int:
    """Train both heads on the cubic toy set; emit metrics and plot data."""
    out = _out_dir(cfg)
    run_hash = config_hash(cfg)
    rng = Rng(cfg.seed)
    train, test = gen_toy(rng.child("toy-data"))
    rate = min(cfg.dropout_rates)
    metrics_lines = [_header(run_hash, cfg.seed)]
    for head in cfg.heads():
        model = evaluate.train_model(
            train.X, train.y, head, cfg, rate, rng.child("train", head),
            epochs=_toy_epochs(cfg, head),
        )
        dist = evaluate.predict(
            model, test.X, rng.child("predict", head).substream("dropout"),
            n_stochastic_forwards=cfg.n_forwards,
        )
        point = dist.point
        head_rmse = evaluate.rmse(point, test.y)
        head_nll = float(np.mean(dist.nll(test.y)))
        lower, upper = dist.interval()
        plot_path = out / f"toy_{head}.csv"
        rows = [_header(run_hash, cfg.seed), "x,y_true,y_pred,sigma_lower,sigma_upper"]
        for i in range(test.n):
            rows.append(
                f"{float(test.X[i, 0])!r},{float(test.y[i])!r},{float(point[i])!r},"
                f"{float(lower[i])!r},{float(upper[i])!r}"
            )
        plot_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
        metrics_lines.append(
            f'{{"head": "{head}", "rmse": {head_rmse!r}, "nll": {head_nll!r}, '
            f'"dropout_rate": {float(rate)!r}}}'
        )
        log.info("toy %s: rmse=%.4f nll=%.4f -> %s", head, head_rmse, head_nll, plot_path)
    (out / "toy_metrics.jsonl").write_text("\n".join(metrics_lines) + "\n", encoding="utf-8")
    return 0


def cmd_bench(cfg: ExperimentConfig, manifest_path, dataset_names, folds_override) -> int:
    """Fold protocol over the manifest datasets; writes results and summary."""
    out = _out_dir(cfg)
    run_hash = config_hash(cfg)
    manifest = load_manifest(manifest_path)
    base_dir = Path(manifest_path).parent
    results = evaluate.run_bench(
        cfg, manifest, base_dir, dataset_names=dataset_names,
        folds_override=folds_override,
    )
    evaluate.write_results(out / "results.jsonl", results, run_hash, cfg.seed)
    evaluate.write_timings(out / "timings.txt", results, run_hash, cfg.seed)
    rows = evaluate.summarize(results)
    evaluate.write_summary_csv(out / "summary.csv", rows, run_hash, cfg.seed)
    for row in rows:
        log.info(
            "%s/%s: RMSE %.3f +/- %.3f, NLL %.3f +/- %.3f (%d folds)",
            row.dataset, row.head, row.rmse_mean, row.rmse_se,
            row.nll_mean, row.nll_se, row.n_folds,
        )
    return 0


def cmd_gradcheck(corrupt_slot: str | None = None) -> int:
    report = run_gradcheck(corrupt_slot=corrupt_slot)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 3


def cmd_summarize(results_path, out_dir: str | None) -> int:
    results = evaluate.read_results(results_path)
    if not results:
        raise DataError(f"{results_path}: no fold records")
    rows = evaluate.summarize(results)
    seed = results[0].seed
    header = Path(results_path).read_text(encoding="utf-8").splitlines()[0]
    run_hash = "unknown"
    if header.startswith("#") and "config_hash=" in header:
        run_hash = header.split("config_hash=")[1].split()[0]
    text_rows = ["dataset,head,n_folds,rmse_mean,rmse_se,nll_mean,nll_se"] + [
        f"{r.dataset},{r.head},{r.n_folds},{r.rmse_mean!r},{r.rmse_se!r},"
        f"{r.nll_mean!r},{r.nll_se!r}"
        for r in rows
    ]
    print("\n".join(text_rows))
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        evaluate.write_summary_csv(out / "summary.csv", rows, run_hash, seed)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikereg",
        description="Spiking-network regression with calibrated uncertainty.",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        # accepted before or after the subcommand
        p.add_argument("--verbose", action="store_true", help=argparse.SUPPRESS)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--head", choices=("gaussian", "rac", "both"))
        p.add_argument("--out", help=f"output directory (or ${OUT_ENV_VAR})")
        p.add_argument("--epochs", type=int)
        p.add_argument("--t-steps", dest="t_steps", type=int)
        p.add_argument("--hidden", type=int)
        p.add_argument("--k-bins", dest="k_bins", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--learning-rate", dest="learning_rate", type=float)
        p.add_argument("--workers", type=int)

    p_toy = sub.add_parser("toy", help="run the cubic toy experiment (both heads)")
    add_common(p_toy)

    p_bench = sub.add_parser("bench", help="run the benchmark fold protocol")
    add_common(p_bench)
    p_bench.add_argument("--manifest", default="data/manifest.json")
    p_bench.add_argument("--datasets", help="comma-separated manifest names (default: all)")
    p_bench.add_argument("--folds", type=int, help="override fold count for all datasets")

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of BPTT gradients")
    p_grad.add_argument("--verbose", action="store_true", help=argparse.SUPPRESS)
    p_grad.add_argument("--corrupt-slot", help=argparse.SUPPRESS)  # test hook

    p_sum = sub.add_parser("summarize", help="summarize a results file")
    p_sum.add_argument("--verbose", action="store_true", help=argparse.SUPPRESS)
    p_sum.add_argument("results", help="results.jsonl produced by bench")
    p_sum.add_argument("--out", help="also write summary.csv here")

    p_cfg = sub.add_parser("show-config", help="print the resolved configuration")
    add_common(p_cfg)
    p_cfg.add_argument("--profile", choices=("toy", "bench"), default="bench")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "toy":
            return cmd_toy(_resolve_config(args, toy_defaults()))
        if args.command == "bench":
            cfg = _resolve_config(args, bench_defaults())
            names = args.datasets.split(",") if args.datasets else None
            return cmd_bench(cfg, args.manifest, names, args.folds)
        if args.command == "gradcheck":
            return cmd_gradcheck(corrupt_slot=args.corrupt_slot)
        if args.command == "summarize":
            return cmd_summarize(args.results, args.out)
        if args.command == "show-config":
            defaults = toy_defaults() if args.profile == "toy" else bench_defaults()
            cfg = _resolve_config(args, defaults)
            print(emit_config(cfg), end="")
            return 0
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
