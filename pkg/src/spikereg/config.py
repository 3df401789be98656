"""Experiment configuration: a flat dataclass, a `key = value` text format
with exact round-tripping, validation, and a stable content hash.

Precedence when assembling a run: command-line flags > config file > defaults.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

HEADS = ("gaussian", "rac", "both")
BENCH_RATE_GRID = (0.005, 0.01, 0.05, 0.1)
GAUSSIAN_EPOCHS_DEFAULT = 600
RAC_EPOCHS_DEFAULT = 200


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "toy"
    head: str = "both"
    t_steps: int = 8
    hidden: int = 200
    k_bins: int = 50
    q_power: float = 1.0
    tau_entropy: float = 1.0
    dropout_rates: tuple[float, ...] = BENCH_RATE_GRID
    epochs: int = 0  # 0 = per-head default (gaussian 600, rac 200)
    batch_size: int = 100
    learning_rate: float = 1e-3
    folds: int = 20
    val_fraction: float = 0.2
    seed: int = 0
    workers: int = 1
    out_dir: str = "out"
    standardize_targets: bool = True
    readout_leak: str = "learned"  # learned | fixed1
    rac_entropy: str = "encourage"  # encourage | penalize (training-time sign)
    n_forwards: int = 1

    def heads(self) -> tuple[str, ...]:
        return ("gaussian", "rac") if self.head == "both" else (self.head,)

    def epochs_for(self, head: str) -> int:
        if self.epochs > 0:
            return self.epochs
        return GAUSSIAN_EPOCHS_DEFAULT if head == "gaussian" else RAC_EPOCHS_DEFAULT

    def validate(self) -> "ExperimentConfig":
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.t_steps < 1:
            raise ConfigError(f"t_steps must be >= 1, got {self.t_steps}")
        if self.hidden < 1:
            raise ConfigError(f"hidden must be >= 1, got {self.hidden}")
        if "rac" in self.heads() and self.k_bins < 2:
            raise ConfigError(f"k_bins must be >= 2 for the rac head, got {self.k_bins}")
        if self.q_power <= 0:
            raise ConfigError(f"q_power must be > 0, got {self.q_power}")
        if self.tau_entropy <= 0:
            raise ConfigError(f"tau_entropy must be > 0, got {self.tau_entropy}")
        if not self.dropout_rates:
            raise ConfigError("dropout_rates must be nonempty")
        if any(not (0.0 <= r < 1.0) for r in self.dropout_rates):
            raise ConfigError(f"dropout rates must lie in [0, 1): {self.dropout_rates}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.folds < 1:
            raise ConfigError(f"folds must be >= 1, got {self.folds}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.readout_leak not in ("learned", "fixed1"):
            raise ConfigError(f"readout_leak must be learned|fixed1, got {self.readout_leak!r}")
        if self.rac_entropy not in ("encourage", "penalize"):
            raise ConfigError(
                f"rac_entropy must be encourage|penalize, got {self.rac_entropy!r}"
            )
        if self.n_forwards < 1:
            raise ConfigError(f"n_forwards must be >= 1, got {self.n_forwards}")
        return self


def toy_defaults() -> ExperimentConfig:
    """Toy-protocol defaults: 100-neuron hidden layer, T=8, fixed 0.05 dropout,
    150 bins; epoch counts and learning rate calibrated for the tiny set."""
    return ExperimentConfig(
        dataset="toy",
        head="both",
        hidden=100,
        k_bins=150,
        dropout_rates=(0.05,),
        learning_rate=3e-3,
        epochs=0,
        folds=1,
    )


def bench_defaults() -> ExperimentConfig:
    """Benchmark-protocol defaults: 200-neuron hidden layer, T=8, 50 bins,
    dropout grid selection on validation NLL, 20 folds."""
    return ExperimentConfig(dataset="all", head="both")


# Toy runs get more optimizer steps than the benchmark defaults because the
# 100-point set is a single full batch per epoch.
TOY_GAUSSIAN_EPOCHS = 4000
TOY_RAC_EPOCHS = 5000


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name: str, kind, text: str):
    text = text.strip()
    if kind is bool:
        if text not in ("true", "false"):
            raise ConfigError(f"{name}: expected true/false, got {text!r}")
        return text == "true"
    if kind is int:
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"{name}: expected an integer, got {text!r}") from exc
    if kind is float:
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"{name}: expected a real, got {text!r}") from exc
    if kind is str:
        return text
    # tuple of floats
    try:
        return tuple(float(part) for part in text.split(",") if part.strip() != "")
    except ValueError as exc:
        raise ConfigError(f"{name}: expected comma-separated reals, got {text!r}") from exc


_FIELD_TYPES = {
    "dataset": str,
    "head": str,
    "t_steps": int,
    "hidden": int,
    "k_bins": int,
    "q_power": float,
    "tau_entropy": float,
    "dropout_rates": tuple,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "folds": int,
    "val_fraction": float,
    "seed": int,
    "workers": int,
    "out_dir": str,
    "standardize_targets": bool,
    "readout_leak": str,
    "rac_entropy": str,
    "n_forwards": int,
}


def emit_config(config: ExperimentConfig) -> str:
    """Canonical `key = value` text (sorted keys); parse_config inverts it."""
    lines = []
    for name in sorted(_FIELD_TYPES):
        lines.append(f"{name} = {_format_value(getattr(config, name))}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    config = base or ExperimentConfig()
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        overrides[key] = _parse_value(key, _FIELD_TYPES[key], value)
    return replace(config, **overrides)


def load_config_file(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)


def config_hash(config: ExperimentConfig) -> str:
    """Stable short digest of the experiment-relevant config.

    out_dir and workers are placement/scheduling knobs that must not change
    any result, so they are excluded; two runs that differ only there carry
    the same hash.
    """
    lines = [
        line
        for line in emit_config(config).splitlines()
        if not line.startswith(("out_dir ", "workers "))
    ]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:12]


def apply_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Apply non-None keyword overrides (flag semantics)."""
    actual = {k: v for k, v in overrides.items() if v is not None}
    unknown = set(actual) - {f.name for f in fields(ExperimentConfig)}
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    return replace(config, **actual)
