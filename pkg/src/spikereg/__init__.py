"""spikereg: spiking-network regression with calibrated uncertainty.

A time-stepped spiking network (PLIF hidden layer, leaky readout) trained
with hand-written backpropagation-through-time, per-step MC-dropout, and two
predictive heads: a heteroscedastic Gaussian and a bin-classification head
with a piecewise-uniform predictive density.
"""

from .config import ExperimentConfig, bench_defaults, config_hash, toy_defaults
from .data import Dataset, FoldSplit, Standardizer, gen_toy, load_csv, make_folds
from .errors import ConfigError, DataError, NumericError, ShapeError, SpikeRegError
from .evaluate import (
    FoldResult,
    SummaryRow,
    TrainedModel,
    predict,
    rmse,
    run_fold,
    select_dropout,
    summarize,
    train_model,
)
from .heads import (
    BinnedPrediction,
    BinSpec,
    GaussianPrediction,
    aggregate_gaussian,
    average_probs,
    discretize,
    distance_loss,
    gaussian_nll,
    make_bins,
    rac_density,
    rac_expectation,
    rac_nll,
    softmax_probs,
    time_averaged_loss,
)
from .numcore import Matrix, ParamStore, Rng, adam_step, finite_diff_grad, init_dense, matmul
from .snn import DropoutPlan, PLIFLayer, ReadoutLayer, SpikingNet, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
