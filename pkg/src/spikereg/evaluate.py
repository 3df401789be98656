"""Metrics, the training loop, dropout-rate selection, the fold protocol,
and aggregation of per-fold results into benchmark-style summaries.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import multiprocessing
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, FoldSplit, ManifestEntry, Standardizer, load_benchmark, make_folds
from .errors import DataError, NumericError, ShapeError
from .heads import (
    BinnedPrediction,
    BinSpec,
    GaussianHead,
    GaussianPrediction,
    RacHead,
    discretize,
    make_bins,
)
from .numcore import Rng, adam_step
from .snn import DropoutPlan, SpikingNet

log = logging.getLogger(__name__)


def rmse(predictions, targets) -> float:
    """Root mean squared error."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.size < 1:
        raise ShapeError(f"rmse needs equal nonempty shapes, got {p.shape} vs {t.shape}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass(frozen=True)
class FoldResult:
    dataset: str
    fold: int
    head: str
    dropout_rate: float
    rmse: float
    nll: float
    wall_clock_seconds: float
    seed: int


@dataclass(frozen=True)
class SummaryRow:
    dataset: str
    head: str
    n_folds: int
    rmse_mean: float
    rmse_se: float
    nll_mean: float
    nll_se: float


def summarize(results: list[FoldResult]) -> list[SummaryRow]:
    """Mean and standard error (std/sqrt(n)) of RMSE and NLL per (dataset, head)."""
    if not results:
        raise DataError("no fold results to summarize")
    groups: dict[tuple[str, str], list[FoldResult]] = {}
    for r in results:
        groups.setdefault((r.dataset, r.head), []).append(r)
    rows = []
    for (dataset, head) in sorted(groups):
        # canonical fold order so the summary is exactly permutation-invariant
        folds = sorted(groups[(dataset, head)], key=lambda f: f.fold)
        if len(folds) < 2:
            raise DataError(f"need >= 2 folds per (dataset, head), got {len(folds)} "
                            f"for ({dataset}, {head})")
        r_vals = np.array([f.rmse for f in folds])
        n_vals = np.array([f.nll for f in folds])
        k = len(folds)
        rows.append(
            SummaryRow(
                dataset=dataset,
                head=head,
                n_folds=k,
                rmse_mean=float(r_vals.mean()),
                rmse_se=float(r_vals.std(ddof=1) / np.sqrt(k)),
                nll_mean=float(n_vals.mean()),
                nll_se=float(n_vals.std(ddof=1) / np.sqrt(k)),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Training and prediction
# ---------------------------------------------------------------------------


@dataclass
class TrainedModel:
    """A fitted network plus everything needed to map predictions back to
    original target units."""

    net: SpikingNet
    head: str  # gaussian | rac
    t_steps: int
    rate: float
    scaler: Standardizer
    y_offset: float  # 0/1 passthrough when targets are not standardized
    y_scale: float
    bins: Optional[BinSpec]
    q_power: float
    tau_entropy: float
    entropy_sign: str = "encourage"

    @property
    def store(self):
        return self.net.store


def _head_impl(model_head: str, bins, q_power, tau_entropy, entropy_sign="encourage"):
    if model_head == "gaussian":
        return GaussianHead()
    return RacHead(bins, q=q_power, tau=tau_entropy, entropy_sign=entropy_sign)


def train_model(
    X: np.ndarray,
    y: np.ndarray,
    head: str,
    cfg: ExperimentConfig,
    rate: float,
    rng: Rng,
    epochs: Optional[int] = None,
    epoch_callback: Optional[Callable[[int, "TrainedModel"], None]] = None,
) -> TrainedModel:
    """Fit one network on original-unit data.

    Features are standardized on the given rows. The Gaussian head trains on
    standardized targets (when configured) and predictions are rescaled; the
    RAC head always trains on bin labels built from original-unit targets.
    """
    if head not in ("gaussian", "rac"):
        raise ValueError(f"unknown head {head!r}")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    scaler = Standardizer.fit(X, y)
    xs = scaler.transform_x(X)
    if head == "gaussian":
        bins = None
        if cfg.standardize_targets:
            targets = scaler.transform_y(y)
            y_offset, y_scale = scaler.y_mean, scaler.y_scale
        else:
            targets = y
            y_offset, y_scale = 0.0, 1.0
        n_out = GaussianHead.n_out
    else:
        bins = make_bins(y, cfg.k_bins)
        targets = discretize(y, bins).astype(np.float64)
        y_offset, y_scale = 0.0, 1.0
        n_out = bins.n_bins

    net = SpikingNet.build(
        X.shape[1], cfg.hidden, n_out, rng.substream("weights"),
        readout_leak=cfg.readout_leak,
    )
    model = TrainedModel(
        net=net, head=head, t_steps=cfg.t_steps, rate=rate, scaler=scaler,
        y_offset=y_offset, y_scale=y_scale, bins=bins,
        q_power=cfg.q_power, tau_entropy=cfg.tau_entropy,
        entropy_sign=cfg.rac_entropy,
    )
    head_impl = _head_impl(head, bins, cfg.q_power, cfg.tau_entropy, cfg.rac_entropy)

    n = X.shape[0]
    batch = min(cfg.batch_size, n)
    gen_shuffle = rng.substream("shuffle")
    gen_drop = rng.substream("dropout")
    n_epochs = cfg.epochs_for(head) if epochs is None else epochs
    for epoch in range(n_epochs):
        order = gen_shuffle.permutation(n) if n > batch else np.arange(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            trace = net.forward(
                xs[idx], cfg.t_steps, DropoutPlan(rate), mask_gen=gen_drop
            )
            loss, grads = head_impl.loss_and_step_grads(trace.outputs, targets[idx])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss ({head} head)")
            net.backward(trace, grads)
            adam_step(net.store, lr=cfg.learning_rate)
        if epoch_callback is not None:
            epoch_callback(epoch, model)
    return model


def predict(
    model: TrainedModel,
    X: np.ndarray,
    gen: np.random.Generator,
    n_stochastic_forwards: int = 1,
    t_steps: Optional[int] = None,
):
    """Predictive distribution in original target units.

    Dropout stays active; one stochastic forward already pools its per-step
    outputs, and n_stochastic_forwards > 1 pools steps across extra passes.
    """
    if n_stochastic_forwards < 1:
        raise ValueError("need at least one stochastic forward")
    t_steps = model.t_steps if t_steps is None else t_steps
    xs = model.scaler.transform_x(np.ascontiguousarray(X, dtype=np.float64))
    pooled = []
    for _ in range(n_stochastic_forwards):
        trace = model.net.forward(
            xs, t_steps, DropoutPlan(model.rate), mask_gen=gen
        )
        pooled.append(trace.outputs)
    outputs = np.concatenate(pooled, axis=0)  # (passes*T, N, n_out)
    head_impl = _head_impl(model.head, model.bins, model.q_power,
                           model.tau_entropy, model.entropy_sign)
    if model.head == "gaussian":
        mu_std, var_std = head_impl.aggregate(outputs)
        return GaussianPrediction(
            mean=model.y_offset + model.y_scale * mu_std,
            var=model.y_scale**2 * var_std,
        )
    probs = head_impl.aggregate(outputs)
    return BinnedPrediction(bins=model.bins, probs=probs)


def fold_metrics(model: TrainedModel, X, y, gen, n_stochastic_forwards: int = 1):
    """(RMSE, mean NLL) of the model's predictive distribution on (X, y)."""
    dist = predict(model, X, gen, n_stochastic_forwards=n_stochastic_forwards)
    y = np.asarray(y, dtype=np.float64)
    return rmse(dist.point, y), float(np.mean(dist.nll(y)))


def select_dropout(
    X_train,
    y_train,
    X_val,
    y_val,
    head: str,
    cfg: ExperimentConfig,
    rng: Rng,
    rates: Optional[tuple[float, ...]] = None,
    fit=None,
    score=None,
) -> tuple[float, dict[float, float]]:
    """Pick the dropout rate with the best validation NLL.

    Trains one model per rate on the train rows only and scores it on the
    validation rows; ties resolve to the smallest rate. `fit` and `score`
    are injectable for tests. Test rows never enter this function.
    """
    rates = tuple(sorted(cfg.dropout_rates if rates is None else rates))
    if not rates:
        raise ValueError("rates must be nonempty")
    if fit is None:
        def fit(rate, rate_rng):
            return train_model(X_train, y_train, head, cfg, rate, rate_rng)
    if score is None:
        def score(model, rate_rng):
            dist = predict(model, X_val, rate_rng.substream("val-predict"),
                           n_stochastic_forwards=cfg.n_forwards)
            return float(np.mean(dist.nll(np.asarray(y_val, dtype=np.float64))))
    best_rate, best_nll = None, np.inf
    val_nlls: dict[float, float] = {}
    for rate in rates:
        rate_rng = rng.child("rate", repr(float(rate)))
        model = fit(rate, rate_rng)
        nll = float(score(model, rate_rng))
        val_nlls[rate] = nll
        if nll < best_nll:
            best_rate, best_nll = rate, nll
    return best_rate, val_nlls


def fold_views(dataset: Dataset, split: FoldSplit):
    """Row views for one fold: (X_tr, y_tr, X_val, y_val, X_te, y_te)."""
    return (
        dataset.X[split.train], dataset.y[split.train],
        dataset.X[split.val], dataset.y[split.val],
        dataset.X[split.test], dataset.y[split.test],
    )


def run_fold(
    dataset: Dataset,
    split: FoldSplit,
    head: str,
    cfg: ExperimentConfig,
) -> FoldResult:
    """Full per-fold protocol: rate selection on validation NLL, retrain on
    train+validation, metrics on the held-out test rows."""
    started = time.perf_counter()
    rng = Rng(cfg.seed).child(dataset.name, head, "fold", split.fold)
    X_tr, y_tr, X_val, y_val, _, _ = fold_views(dataset, split)
    if len(cfg.dropout_rates) > 1 and split.val.size > 0:
        rate, _ = select_dropout(X_tr, y_tr, X_val, y_val, head, cfg, rng)
    else:
        rate = min(cfg.dropout_rates)
    final_idx = np.concatenate([split.train, split.val])
    final = train_model(
        dataset.X[final_idx], dataset.y[final_idx], head, cfg, rate,
        rng.child("final"),
    )
    fold_rmse, fold_nll = fold_metrics(
        final, dataset.X[split.test], dataset.y[split.test],
        rng.child("final").substream("test-predict"),
        n_stochastic_forwards=cfg.n_forwards,
    )
    return FoldResult(
        dataset=dataset.name,
        fold=split.fold,
        head=head,
        dropout_rate=float(rate),
        rmse=fold_rmse,
        nll=fold_nll,
        wall_clock_seconds=time.perf_counter() - started,
        seed=cfg.seed,
    )


def _run_fold_job(args) -> FoldResult:
    dataset, split, head, cfg = args
    return run_fold(dataset, split, head, cfg)


def run_bench(
    cfg: ExperimentConfig,
    manifest: dict[str, ManifestEntry],
    base_dir,
    dataset_names: Optional[list[str]] = None,
    folds_override: Optional[int] = None,
) -> list[FoldResult]:
    """Run the fold protocol over manifest datasets on a small work queue.

    All datasets are loaded and size-verified before any training starts.
    Results merge deterministically by (dataset, head, fold) regardless of
    worker scheduling.
    """
    names = sorted(dataset_names if dataset_names is not None else manifest)
    unknown = [n for n in names if n not in manifest]
    if unknown:
        raise DataError(f"datasets not in manifest: {unknown}")
    datasets: dict[str, Dataset] = {}
    for name in names:
        datasets[name] = load_benchmark(manifest[name], base_dir)

    jobs = []
    for name in names:
        entry = manifest[name]
        n_folds = folds_override or entry.folds or cfg.folds
        folds = make_folds(
            datasets[name].n, n_folds, Rng(cfg.seed).child(name, "splits"),
            val_fraction=cfg.val_fraction,
        )
        for head in cfg.heads():
            for split in folds:
                jobs.append((datasets[name], split, head, cfg))

    if cfg.workers > 1 and len(jobs) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(processes=cfg.workers) as pool:
            results = list(pool.imap_unordered(_run_fold_job, jobs))
    else:
        results = [_run_fold_job(job) for job in jobs]
    results.sort(key=lambda r: (r.dataset, r.head, r.fold))
    return results


# ---------------------------------------------------------------------------
# Results files
# ---------------------------------------------------------------------------

_RESULT_FIELDS = ("dataset", "fold", "head", "dropout_rate", "rmse", "nll", "seed")


def write_results(path, results: list[FoldResult], run_hash: str, seed: int) -> None:
    """Line-delimited records, one per fold, deterministic for a fixed run.

    Wall-clock timings are deliberately left out (see write_timings).
    """
    ordered = sorted(results, key=lambda r: (r.dataset, r.head, r.fold))
    lines = [f"# config_hash={run_hash} seed={seed}"]
    for r in ordered:
        record = {k: getattr(r, k) for k in _RESULT_FIELDS}
        lines.append(json.dumps(record, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_results(path) -> list[FoldResult]:
    results = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        record = json.loads(line)
        results.append(
            FoldResult(
                dataset=record["dataset"],
                fold=int(record["fold"]),
                head=record["head"],
                dropout_rate=float(record["dropout_rate"]),
                rmse=float(record["rmse"]),
                nll=float(record["nll"]),
                wall_clock_seconds=0.0,
                seed=int(record["seed"]),
            )
        )
    return results


def write_timings(path, results: list[FoldResult], run_hash: str, seed: int) -> None:
    """Sidecar wall-clock log; excluded from the determinism contract."""
    ordered = sorted(results, key=lambda r: (r.dataset, r.head, r.fold))
    lines = [f"# config_hash={run_hash} seed={seed}"] + [
        f"{r.dataset} {r.head} fold={r.fold} {r.wall_clock_seconds:.3f}s"
        for r in ordered
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_summary_csv(path, rows: list[SummaryRow], run_hash: str, seed: int) -> None:
    lines = [
        f"# config_hash={run_hash} seed={seed}",
        "dataset,head,n_folds,rmse_mean,rmse_se,nll_mean,nll_se",
    ]
    for row in rows:
        lines.append(
            f"{row.dataset},{row.head},{row.n_folds},{row.rmse_mean!r},"
            f"{row.rmse_se!r},{row.nll_mean!r},{row.nll_se!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def results_to_dicts(results: list[FoldResult]) -> list[dict]:
    return [dataclasses.asdict(r) for r in results]
