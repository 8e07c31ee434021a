"""Training protocol: chunk-per-iteration Adam, per-epoch validation, best-epoch checkpoint.

Each clean chunk is one optimization example (a batch of one): forward from
the learnable initial states, exact BPTT gradients, one Adam update. After
every epoch the model is scored on the validation split (NSE on re-stitched,
inverse-scaled predictions) and the parameters of the best-scoring epoch are
kept. With validation off, the best epoch is the one with minimum training
loss instead (the single-gage sweep protocol).

The model only ever reads rain channels; observed discharge enters through
the loss and is never part of the input vector.
"""

import json
import logging
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import configio
from .errors import DataError, DivergenceError
from .evaluation import nse
from .network import (
    init_params,
    network_backward,
    network_forward,
    params_from_dict,
    params_to_dict,
)
from .optimizers import AdamState, adam_step, clip_gradients, mse_loss
from .pipeline import (
    DatasetSplit,
    ScalingParams,
    chunk as chunk_segments,
    fit_scaler,
)

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
MODEL_FORMAT_VERSION = 1

# Config file keys, their types, and meaning; surfaced by `hydrolstm train --help`.
RUN_CONFIG_KEYS = {
    "epochs": "int, number of passes over the training chunks (default 200)",
    "learning_rate": "float, Adam step size (default 1e-4)",
    "l2": "float, l2 penalty coefficient added to the loss (default 1e-6)",
    "hidden_size": "int, hidden units per LSTM layer (default 10)",
    "seed": "int, master seed for init and chunk shuffling (default 0)",
    "chunk_len": "int, max steps per training chunk (default 2048)",
    "val_metric": "nse|mse, per-epoch validation score (default nse)",
    "regularization": "bool, apply the l2 penalty (default true)",
    "validation": "bool, score per epoch and select best epoch by it (default true)",
    "candidate_activation": "tanh|sigmoid, LSTM candidate gate nonlinearity (default tanh)",
    "head_activation": "lrelu|identity, output head activation (default lrelu)",
    "clip_norm": "float or 'off', optional global gradient-norm clip (default off)",
    "adam_beta1": "float, Adam first-moment decay (default 0.9)",
    "adam_beta2": "float, Adam second-moment decay (default 0.999)",
    "adam_eps": "float, Adam denominator epsilon (default 1e-8)",
    "train_end_year": "int, last calendar year of the training split (default 2015)",
    "val_year": "int, validation calendar year (default 2016)",
    "test_year": "int, holdout test calendar year (default 2017)",
    "discharge_channel": "str, name of the discharge column (default 'discharge')",
}


@dataclass
class RunConfig:
    """Hyperparameters and protocol switches for one training run."""

    epochs: int = 200
    learning_rate: float = 1e-4
    l2: float = 1e-6
    hidden_size: int = 10
    seed: int = 0
    chunk_len: int = 2048
    val_metric: str = "nse"
    regularization: bool = True
    validation: bool = True
    candidate_activation: str = "tanh"
    head_activation: str = "lrelu"
    clip_norm: float = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    train_end_year: int = 2015
    val_year: int = 2016
    test_year: int = 2017
    discharge_channel: str = "discharge"

    def validate(self):
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise DataError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2 < 0:
            raise DataError(f"l2 must be >= 0, got {self.l2}")
        if self.hidden_size < 1:
            raise DataError(f"hidden_size must be >= 1, got {self.hidden_size}")
        if self.chunk_len < 2:
            raise DataError(f"chunk_len must be >= 2, got {self.chunk_len}")
        if self.val_metric not in ("nse", "mse"):
            raise DataError(f"val_metric must be nse or mse, got {self.val_metric!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        cfg = cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        raw = configio.read_kv(path)
        unknown = set(raw) - set(RUN_CONFIG_KEYS)
        if unknown:
            raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
        kwargs = {}
        for key, value in raw.items():
            if key in ("epochs", "hidden_size", "seed", "chunk_len",
                       "train_end_year", "val_year", "test_year"):
                kwargs[key] = int(value)
            elif key in ("learning_rate", "l2", "adam_beta1", "adam_beta2", "adam_eps"):
                kwargs[key] = float(value)
            elif key in ("regularization", "validation"):
                kwargs[key] = configio.parse_bool(value, key)
            elif key == "clip_norm":
                kwargs[key] = None if value.lower() in ("off", "none", "") else float(value)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class TrainingReport:
    """Per-epoch record of one run, including provenance for reproduction."""

    config: dict
    optimizer: dict
    gages: list
    train_losses: list = field(default_factory=list)  # pooled scaled MSE per epoch
    val_scores: list = field(default_factory=list)  # empty when validation off
    best_epoch: int = -1  # 0-based
    wall_time_s: float = 0.0
    n_train_chunks: int = 0
    n_train_steps: int = 0
    scaler: dict = None

    def best_val_score(self):
        if not self.val_scores:
            raise DataError("report has no validation scores")
        return self.val_scores[self.best_epoch]

    def to_dict(self):
        return {"format_version": REPORT_FORMAT_VERSION, **asdict(self)}

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if data.pop("format_version", None) != REPORT_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported report format_version")
        return cls(**data)


@dataclass
class TrainedModel:
    """Checkpointed network plus everything needed to run it on raw data."""

    params: "NetworkParams"
    gages: list
    discharge_channel: str
    scaler: ScalingParams
    config: RunConfig

    def predict_series(self, rain_values):
        """Physical rain (T, d) in gage order -> physical discharge (T,).

        One forward pass from the learnable initial states; never reads
        observed discharge.
        """
        rain_values = np.asarray(rain_values, dtype=np.float64)
        if rain_values.ndim == 1:
            rain_values = rain_values[:, None]
        if rain_values.shape[1] != len(self.gages):
            raise DataError(
                f"expected {len(self.gages)} rain columns, got {rain_values.shape[1]}"
            )
        x = self.scaler.apply(rain_values, self.gages)
        yhat, _ = network_forward(self.params, x)
        return self.scaler.invert(yhat, [self.discharge_channel])

    def save(self, path):
        payload = {
            "format_version": MODEL_FORMAT_VERSION,
            "network": params_to_dict(self.params),
            "gages": list(self.gages),
            "discharge_channel": self.discharge_channel,
            "scaler": self.scaler.to_dict(),
            "config": self.config.to_dict(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if data.get("format_version") != MODEL_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported model format_version")
        return cls(
            params=params_from_dict(data["network"]),
            gages=list(data["gages"]),
            discharge_channel=data["discharge_channel"],
            scaler=ScalingParams.from_dict(data["scaler"]),
            config=RunConfig.from_dict(data["config"]),
        )


def _scaled_chunks(segments, scaler, gages, discharge, chunk_len):
    """Chunk segments and pre-scale inputs/targets once."""
    chunks = chunk_segments(segments, chunk_len)
    xs, ys, ids, obs = [], [], [], []
    for c in chunks:
        xs.append(np.ascontiguousarray(scaler.apply(c.columns(gages), gages)))
        ys.append(scaler.apply(c.column(discharge), [discharge]))
        obs.append(c.column(discharge))
        ids.append(c.segment_id)
    return chunks, xs, ys, obs, ids


def train_model(config, split, gage_subset):
    """Run the full training protocol; returns (TrainedModel, TrainingReport)."""
    config.validate()
    gages = list(gage_subset)
    if not gages:
        raise DataError("gage_subset must be non-empty")
    if not split.train:
        raise DataError("no training segments")
    for seg in split.train + (split.val if config.validation else []):
        for g in gages:
            seg.channel_index(g)
        seg.channel_index(config.discharge_channel)
    if config.discharge_channel in gages:
        raise DataError("observed discharge cannot be a model input")

    t_start = time.perf_counter()
    scaler = fit_scaler(split.train, gages + [config.discharge_channel])
    _, xs, ys, _, ids = _scaled_chunks(
        split.train, scaler, gages, config.discharge_channel, config.chunk_len
    )
    if config.validation:
        if not split.val:
            raise DataError("validation is on but the validation split is empty")
        _, vxs, _, vobs, _ = _scaled_chunks(
            split.val, scaler, gages, config.discharge_channel, config.chunk_len
        )
        val_observed = np.concatenate(vobs)

    net = init_params(
        config.seed, d=len(gages), p=config.hidden_size,
        candidate_activation=config.candidate_activation,
        head_activation=config.head_activation,
    )
    adam = AdamState(
        alpha=config.learning_rate, beta1=config.adam_beta1,
        beta2=config.adam_beta2, eps=config.adam_eps,
    )
    lam = config.l2 if config.regularization else 0.0
    rng = np.random.default_rng(config.seed)
    n_steps_total = sum(x.shape[0] for x in xs)

    report = TrainingReport(
        config=config.to_dict(),
        optimizer=adam.hyperparams(),
        gages=gages,
        n_train_chunks=len(xs),
        n_train_steps=n_steps_total,
        scaler=scaler.to_dict(),
    )
    best_score = None
    best_params = None

    for epoch in range(config.epochs):
        order = rng.permutation(len(xs))
        sq_sum = 0.0
        for k in order:
            x, y = xs[k], ys[k]
            yhat, caches = network_forward(net, x)
            loss = mse_loss(yhat, y)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, chunk {ids[k]}",
                    epoch=epoch, chunk_id=ids[k],
                )
            grads = network_backward(net, x, y, caches, lam)
            if config.clip_norm is not None:
                clip_gradients(grads, config.clip_norm)
            adam_step(adam, net, grads)
            sq_sum += loss * y.shape[0]
        train_loss = sq_sum / n_steps_total
        report.train_losses.append(float(train_loss))

        if config.validation:
            val_pred = np.concatenate(
                [network_forward(net, vx)[0] for vx in vxs]
            )
            val_phys = scaler.invert(val_pred, [config.discharge_channel])
            if config.val_metric == "nse":
                score = nse(val_phys, val_observed)
                better = best_score is None or score > best_score
            else:
                score = mse_loss(val_phys, val_observed)
                better = best_score is None or score < best_score
            report.val_scores.append(float(score))
        else:
            score = train_loss
            better = best_score is None or score < best_score
        if better:
            best_score = score
            best_params = net.copy()
            report.best_epoch = epoch

    report.wall_time_s = time.perf_counter() - t_start
    model = TrainedModel(
        params=best_params,
        gages=gages,
        discharge_channel=config.discharge_channel,
        scaler=scaler,
        config=replace(config),
    )
    return model, report


def training_error(model, segments):
    """Pooled scaled-unit MSE of a fixed model over the given segments.

    This is the sweep ranking statistic: no regularization term, scaled
    units, all chunks pooled by point count (identical to mse_loss on the
    concatenated predictions).
    """
    _, xs, ys, _, _ = _scaled_chunks(
        segments, model.scaler, model.gages, model.discharge_channel, model.config.chunk_len
    )
    preds = np.concatenate([network_forward(model.params, x)[0] for x in xs])
    targets = np.concatenate(ys)
    return mse_loss(preds, targets)


def predict(model, frame, scaler=None):
    """Predict discharge (cms) from a rain frame; returns (timestamps, series).

    The frame must contain every model gage channel with no missing cells
    in those columns. Observed discharge, if present, is ignored.
    """
    scaler = scaler if scaler is not None else model.scaler
    cols = []
    for g in model.gages:
        c = frame.channel_index(g)
        if frame.missing[:, c].any():
            raise DataError(f"channel {g!r} has missing values; run prepare first")
        cols.append(c)
    rain = frame.values[:, cols]
    x = scaler.apply(rain, model.gages)
    yhat, _ = network_forward(model.params, x)
    return frame.timestamps, scaler.invert(yhat, [model.discharge_channel])
