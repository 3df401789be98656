"""Uncertainty heads: heteroscedastic Gaussian and bin-classification (RAC).

The network's readout produces one output vector per time step. The Gaussian
head reads (mean, raw-variance) pairs off those vectors; the RAC head treats
them as logits over K equal-width target bins. Both heads define a per-step
training loss averaged over time steps, and an aggregation rule that turns
the per-step outputs into one predictive distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

VAR_FLOOR = 1e-6  # added to softplus(raw) so predicted variances stay positive
DENSITY_FLOOR = 1e-12  # piecewise-uniform density is floored here before log


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# Gaussian head math
# ---------------------------------------------------------------------------


def gaussian_nll(y, mean, var):
    """Negative log-likelihood of y under N(mean, var):
    0.5*log(2*pi*var) + (y - mean)^2 / (2*var)."""
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0.0):
        raise ValueError("gaussian_nll needs var > 0")
    y = np.asarray(y, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    return 0.5 * np.log(2.0 * np.pi * var) + (y - mean) ** 2 / (2.0 * var)


def aggregate_gaussian(means, variances):
    """Pool per-step (mean, variance) pairs into one Gaussian.

    means/variances: arrays with the pooling axis first (steps, ...).
    Returns (mean*, var*) with mean* the step average and
    var* = avg(var + mean^2) - mean*^2 (law of total variance).
    """
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    if means.shape != variances.shape or means.shape[0] < 1:
        raise ValueError("means and variances must share a nonempty leading axis")
    mu_star = means.mean(axis=0)
    var_star = (variances + means**2).mean(axis=0) - mu_star**2
    return mu_star, var_star


def gaussian_nll_grads(y, mean, var):
    """d(nll)/d(mean) and d(nll)/d(var), elementwise."""
    y = np.asarray(y, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    r = mean - y
    return r / var, 0.5 / var - r**2 / (2.0 * var**2)


# ---------------------------------------------------------------------------
# Bins and the piecewise-uniform density
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinSpec:
    """K equal-width bins covering [y_min, y_max]."""

    boundaries: np.ndarray  # (K+1,), strictly increasing

    def __post_init__(self):
        b = np.ascontiguousarray(self.boundaries, dtype=np.float64)
        object.__setattr__(self, "boundaries", b)
        if b.ndim != 1 or b.size < 3:
            raise ValueError("need at least 2 bins (3 boundaries)")
        if not np.all(np.diff(b) > 0):
            raise ValueError("bin boundaries must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return self.boundaries.size - 1

    @property
    def y_min(self) -> float:
        return float(self.boundaries[0])

    @property
    def y_max(self) -> float:
        return float(self.boundaries[-1])

    @property
    def width(self) -> float:
        return (self.y_max - self.y_min) / self.n_bins

    @property
    def midpoints(self) -> np.ndarray:
        b = self.boundaries
        return (b[:-1] + b[1:]) / 2.0


def make_bins(y_train, n_bins: int) -> BinSpec:
    """Equal-width bins spanning the observed target range."""
    if n_bins < 2:
        raise ValueError(f"need at least 2 bins, got {n_bins}")
    y = np.asarray(y_train, dtype=np.float64)
    lo, hi = float(np.min(y)), float(np.max(y))
    if not hi > lo:
        raise DataError("degenerate target range: min == max")
    return BinSpec(np.linspace(lo, hi, n_bins + 1))


def discretize(y, bins: BinSpec):
    """Index of the nearest bin midpoint (smallest index on ties).

    Targets outside [y_min, y_max] map to the nearest boundary bin.
    """
    y_arr = np.atleast_1d(np.asarray(y, dtype=np.float64))
    idx = np.argmin(np.abs(y_arr[:, None] - bins.midpoints[None, :]), axis=1)
    if np.isscalar(y) or np.asarray(y).ndim == 0:
        return int(idx[0])
    return idx


def bin_index(y, bins: BinSpec):
    """Index of the bin *containing* y (boundaries belong to the lower bin;
    out-of-range values clamp to the nearest boundary bin)."""
    y_arr = np.atleast_1d(np.asarray(y, dtype=np.float64))
    inner = bins.boundaries[1:-1]
    idx = np.searchsorted(inner, y_arr, side="left")
    if np.isscalar(y) or np.asarray(y).ndim == 0:
        return int(idx[0])
    return idx


def softmax_probs(logits):
    """Row-stable softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def average_probs(per_step_probs):
    """Arithmetic mean of per-step probability vectors (pooling axis first)."""
    p = np.asarray(per_step_probs, dtype=np.float64)
    if p.shape[0] < 1:
        raise ValueError("need at least one step of probabilities")
    return p.mean(axis=0)


def rac_density(p, bins: BinSpec):
    """Per-bin density values f_k = p_k / bin width."""
    return np.asarray(p, dtype=np.float64) / bins.width


def rac_expectation(p, bins: BinSpec):
    """Expected target value sum_k p_k * m_k of the binned distribution."""
    p = np.asarray(p, dtype=np.float64)
    return p @ bins.midpoints


def entropy(p):
    """Shannon entropy with 0*log(0) defined as 0."""
    p = np.asarray(p, dtype=np.float64)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def distance_loss(p, true_bin: int, q: float, tau: float):
    """Distance-weighted classification loss plus entropy term:
    sum_k |k - j|^q p_k + tau * H(p)."""
    if q <= 0 or tau <= 0:
        raise ValueError("q and tau must be positive")
    p = np.asarray(p, dtype=np.float64)
    k = np.arange(p.shape[-1], dtype=np.float64)
    weights = np.abs(k - float(true_bin)) ** q
    return float(p @ weights + tau * entropy(p))


def rac_nll(y, p, bins: BinSpec):
    """Negative log density of y under the piecewise-uniform distribution.

    The density is floored at DENSITY_FLOOR before the log, so empty bins
    give a large but finite score.
    """
    p = np.asarray(p, dtype=np.float64)
    idx = bin_index(y, bins)
    if p.ndim == 1:
        f = p[idx] / bins.width
    else:
        f = p[np.arange(p.shape[0]), idx] / bins.width
    return -np.log(np.maximum(f, DENSITY_FLOOR))


def time_averaged_loss(step_losses):
    """Mean of the per-step losses (each step contributes 1/T to the gradient)."""
    losses = np.asarray(step_losses, dtype=np.float64)
    if losses.size < 1:
        raise ValueError("need at least one step loss")
    return float(losses.mean())


# ---------------------------------------------------------------------------
# Predictive distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPrediction:
    """Predictive Gaussian per sample: arrays of means and variances."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        var = np.atleast_1d(np.asarray(self.var, dtype=np.float64))
        if mean.shape != var.shape:
            raise ValueError("mean/var shape mismatch")
        if np.any(var <= 0.0):
            raise ValueError("predictive variance must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def point(self) -> np.ndarray:
        return self.mean

    def nll(self, y) -> np.ndarray:
        return gaussian_nll(y, self.mean, self.var)

    def interval(self, n_sigma: float = 2.0):
        half = n_sigma * np.sqrt(self.var)
        return self.mean - half, self.mean + half


@dataclass(frozen=True)
class BinnedPrediction:
    """Piecewise-uniform predictive distribution: per-sample bin probabilities."""

    bins: BinSpec
    probs: np.ndarray  # (N, K) or (K,)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim == 1:
            p = p[None, :]
        if p.shape[-1] != self.bins.n_bins:
            raise ValueError("probability vector length != number of bins")
        if np.any(p < -1e-12) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def point(self) -> np.ndarray:
        return rac_expectation(self.probs, self.bins)

    def density(self) -> np.ndarray:
        return rac_density(self.probs, self.bins)

    def nll(self, y) -> np.ndarray:
        return rac_nll(y, self.probs, self.bins)

    def quantile(self, q: float) -> np.ndarray:
        """Inverse CDF of the piecewise-uniform distribution, per sample."""
        if not 0.0 <= q <= 1.0:
            raise ValueError("quantile level must be in [0, 1]")
        p = self.probs
        cum = np.cumsum(p, axis=-1)
        # first bin whose cumulative mass reaches q
        idx = np.minimum((cum < q).sum(axis=-1), self.bins.n_bins - 1)
        rows = np.arange(p.shape[0])
        prev = cum[rows, idx] - p[rows, idx]
        pk = p[rows, idx]
        frac = np.where(pk > 0.0, (q - prev) / np.where(pk > 0.0, pk, 1.0), 0.0)
        frac = np.clip(frac, 0.0, 1.0)
        y = self.bins.boundaries[idx] + frac * self.bins.width
        return np.clip(y, self.bins.y_min, self.bins.y_max)

    def interval(self, coverage: float = 0.95):
        tail = (1.0 - coverage) / 2.0
        return self.quantile(tail), self.quantile(1.0 - tail)


# ---------------------------------------------------------------------------
# Training glue: per-step losses and gradients w.r.t. the readout outputs
# ---------------------------------------------------------------------------


class GaussianHead:
    """Two readout channels per step: mean and raw (pre-softplus) variance."""

    n_out = 2

    @staticmethod
    def split(outputs):
        """outputs (..., 2) -> (mean, var, raw) with var = softplus(raw) + floor."""
        mean = outputs[..., 0]
        raw = outputs[..., 1]
        return mean, softplus(raw) + VAR_FLOOR, raw

    def loss_and_step_grads(self, outputs, y):
        """Time-averaged Gaussian NLL and its gradient w.r.t. outputs.

        outputs: (T, B, 2) per-step readout values; y: (B,) targets.
        Returns (loss, grads) with grads shaped like outputs.
        """
        n_steps, n_batch, _ = outputs.shape
        mean, var, raw = self.split(outputs)
        loss = float(gaussian_nll(y[None, :], mean, var).mean())
        d_mean, d_var = gaussian_nll_grads(y[None, :], mean, var)
        scale = 1.0 / (n_steps * n_batch)
        grads = np.empty_like(outputs)
        grads[..., 0] = d_mean * scale
        grads[..., 1] = d_var * sigmoid(raw) * scale
        return loss, grads

    def aggregate(self, outputs):
        """Pool per-step outputs (S, B, 2) into per-sample (mean*, var*)."""
        mean, var, _ = self.split(outputs)
        return aggregate_gaussian(mean, var)


class RacHead:
    """K readout channels per step, treated as logits over the target bins.

    The training objective is the distance term plus an entropy term whose
    sign is selectable: "encourage" (default) rewards entropy, which keeps the
    landscape well-behaved and probability mass spread over neighboring bins;
    "penalize" adds the entropy instead, which collapses each prediction onto
    a single bin and in practice traps training in off-by-a-few-bins vertices.
    """

    def __init__(
        self,
        bins: BinSpec,
        q: float = 1.0,
        tau: float = 1.0,
        entropy_sign: str = "encourage",
    ):
        if q <= 0 or tau <= 0:
            raise ValueError("q and tau must be positive")
        if entropy_sign not in ("encourage", "penalize"):
            raise ValueError(f"unknown entropy_sign {entropy_sign!r}")
        self.bins = bins
        self.q = float(q)
        self.tau = float(tau)
        self.sign = -1.0 if entropy_sign == "encourage" else 1.0
        self.n_out = bins.n_bins

    def loss_and_step_grads(self, outputs, labels):
        """Time-averaged training loss and its gradient w.r.t. the logits.

        outputs: (T, B, K) per-step logits; labels: (B,) true bin indices.
        """
        n_steps, n_batch, n_bins = outputs.shape
        p = softmax_probs(outputs)
        k = np.arange(n_bins, dtype=np.float64)
        w = np.abs(k[None, :] - labels[:, None].astype(np.float64)) ** self.q  # (B, K)
        log_p = np.log(np.maximum(p, 1e-300))
        # entropy H = -sum p log p enters as sign * tau * H
        per = (p * w[None, :, :]).sum(axis=-1) - self.sign * self.tau * (
            p * log_p
        ).sum(axis=-1)
        loss = float(per.mean())
        # d(loss)/d(p_k) pushed through the softmax Jacobian
        g = w[None, :, :] - self.sign * self.tau * (log_p + 1.0)
        inner = (p * g).sum(axis=-1, keepdims=True)
        grads = p * (g - inner) / (n_steps * n_batch)
        return loss, grads

    def aggregate(self, outputs):
        """Pool per-step logits (S, B, K) into per-sample averaged probabilities."""
        return average_probs(softmax_probs(outputs))
