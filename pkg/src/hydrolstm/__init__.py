"""Sequence-to-sequence LSTM rainfall-runoff modeling.

Library layout:
    network      LSTM cell/network forward and exact BPTT gradients
    optimizers   MSE loss, l2 penalty, Adam, weight-decay SGD
    pipeline     CSV ingest, gap repair, chunking, scaling, year splits
    training     training protocol, checkpoints, prediction
    evaluation   NSE/RMSE, event extraction, split reports
    importance   per-gage sweep, weight norms, correlations, top-k selection
    synthetic    ground-truth synthetic watershed generator
    stats        Pearson/Spearman with t-based p-values
    cli          batch command-line front end
"""

from .errors import DataError, DivergenceError
from .evaluation import evaluate_model, extract_events, nse, rmse
from .importance import (
    flatten_first_layer_weights,
    gage_sweep,
    select_top_k,
    weight_norms,
)
from .network import (
    NetworkParams,
    init_params,
    lrelu,
    lstm_cell_forward,
    network_backward,
    network_forward,
    sigmoid,
)
from .optimizers import AdamState, adam_step, l2_penalty, mse_loss, sgd_weight_decay_step
from .pipeline import (
    CleanSegment,
    DatasetSplit,
    ScalingParams,
    TimeSeriesFrame,
    chunk,
    fit_scaler,
    impute_and_split,
    load_csv,
    split_by_year,
)
from .stats import pearson, spearman
from .synthetic import SynthConfig, generate
from .training import RunConfig, TrainedModel, TrainingReport, predict, train_model, training_error

__version__ = "0.1.0"
