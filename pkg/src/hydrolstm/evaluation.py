"""Model evaluation: NSE/RMSE metrics, event extraction, and split reports.

Metrics are computed in physical units (cms) after inverse scaling; scaled-
unit scores would not be comparable across experiments. Split scores use
chunked-and-restitched predictions, the same procedure the trainer uses for
its per-epoch validation score.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .pipeline import chunk as chunk_segments

log = logging.getLogger(__name__)

DEFAULT_EVENT_THRESHOLD_CMS = 30.0
DEFAULT_EVENT_SEPARATION_STEPS = 384  # 4 days of 15-minute steps
DEFAULT_BASE_PERCENTILE = 25.0


def nse(predicted, observed):
    """Nash-Sutcliffe efficiency: 1 - sum((p-o)^2) / sum((o-mean(o))^2)."""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    o = np.asarray(observed, dtype=np.float64).reshape(-1)
    if p.size != o.size:
        raise DataError(f"nse: length mismatch {p.size} vs {o.size}")
    if p.size < 2:
        raise DataError(f"nse: need at least 2 points, got {p.size}")
    om = o - o.mean()
    denom = float(om @ om)
    if denom == 0.0:
        raise DataError("nse: undefined for zero observed variance")
    err = p - o
    return 1.0 - float(err @ err) / denom


def rmse(predicted, observed):
    """Root-mean-square error in the units of the inputs."""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1)
    o = np.asarray(observed, dtype=np.float64).reshape(-1)
    if p.size != o.size:
        raise DataError(f"rmse: length mismatch {p.size} vs {o.size}")
    if p.size == 0:
        raise DataError("rmse: empty series")
    err = p - o
    return float(np.sqrt(err @ err / p.size))


@dataclass
class EventWindow:
    """One flood event inside a single clean segment."""

    event_id: str
    start: np.datetime64
    end: np.datetime64
    start_idx: int
    stop_idx: int  # half-open
    peak: float


def extract_events(
    timestamps,
    flow,
    threshold=DEFAULT_EVENT_THRESHOLD_CMS,
    min_separation=DEFAULT_EVENT_SEPARATION_STEPS,
    base_level=None,
    id_prefix="",
):
    """Find windows of elevated flow whose peak reaches `threshold`.

    Contiguous runs above `base_level` (default: the series' 25th
    percentile) are merged when separated by fewer than `min_separation`
    steps; windows peaking below `threshold` are dropped.
    """
    flow = np.asarray(flow, dtype=np.float64).reshape(-1)
    timestamps = np.asarray(timestamps)
    if flow.size != timestamps.size:
        raise DataError("extract_events: timestamps and flow lengths differ")
    if flow.size == 0:
        return []
    if base_level is None:
        base_level = float(np.percentile(flow, DEFAULT_BASE_PERCENTILE))
    above = flow > base_level
    idx = np.nonzero(above)[0]
    if idx.size == 0:
        return []
    breaks = np.nonzero(np.diff(idx) > 1)[0]
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    stops = np.concatenate((idx[breaks] + 1, [idx[-1] + 1]))

    merged = [[int(starts[0]), int(stops[0])]]
    for a, b in zip(starts[1:], stops[1:]):
        if int(a) - merged[-1][1] < min_separation:
            merged[-1][1] = int(b)
        else:
            merged.append([int(a), int(b)])

    events = []
    k = 0
    for a, b in merged:
        peak = float(flow[a:b].max())
        if peak < threshold:
            continue
        events.append(
            EventWindow(
                event_id=f"{id_prefix}e{k:02d}",
                start=timestamps[a],
                end=timestamps[b - 1],
                start_idx=a,
                stop_idx=b,
                peak=peak,
            )
        )
        k += 1
    return events


@dataclass
class SplitScore:
    dataset: str
    n_points: int
    rmse: float
    nse: float


@dataclass
class EventScore:
    event_id: str
    segment_id: str
    start: str
    end: str
    peak: float
    n_points: int
    rmse: float
    nse: float


@dataclass
class EvalReport:
    """Table-shaped evaluation: one row per split plus per-event test rows."""

    splits: list = field(default_factory=list)  # SplitScore
    events: list = field(default_factory=list)  # EventScore


def _stitched_split_series(model, segments):
    """Per-segment chunked predictions, concatenated in deterministic order.

    Returns (timestamps, observed, predicted) over the whole split.
    """
    all_ts, all_obs, all_pred = [], [], []
    for seg in sorted(segments, key=lambda s: str(s.timestamps[0])):
        ts, obs, pred = predict_segment(model, seg)
        all_ts.append(ts)
        all_obs.append(obs)
        all_pred.append(pred)
    if not all_ts:
        return (np.array([], dtype="datetime64[s]"), np.array([]), np.array([]))
    return np.concatenate(all_ts), np.concatenate(all_obs), np.concatenate(all_pred)


def predict_segment(model, segment):
    """Chunked-and-restitched prediction over one segment (physical units)."""
    pieces = chunk_segments([segment], model.config.chunk_len)
    preds = []
    for piece in pieces:  # chunk() preserves in-segment order
        preds.append(model.predict_series(piece.columns(model.gages)))
    return segment.timestamps, segment.column(model.discharge_channel), np.concatenate(preds)


def _apply_exclusions(ts, obs, pred, exclude_windows):
    keep = np.ones(ts.shape[0], dtype=bool)
    for start, end in exclude_windows:
        start = np.datetime64(start, "s")
        end = np.datetime64(end, "s")
        keep &= ~((ts >= start) & (ts <= end))
    return ts[keep], obs[keep], pred[keep]


def evaluate_model(
    model,
    split,
    threshold=DEFAULT_EVENT_THRESHOLD_CMS,
    min_separation=DEFAULT_EVENT_SEPARATION_STEPS,
    exclude_windows=None,
):
    """Score a trained model on every split and on extracted test events.

    `exclude_windows` is an optional list of (start, end) timestamp pairs
    removed from the test set for an extra "test_excluding" row (mirrors
    reporting a holdout score without one extreme event).

    Returns (EvalReport, per_step) where per_step maps split name to
    (timestamps, observed, predicted) arrays exactly as scored.
    """
    report = EvalReport()
    per_step = {}
    for name, segments in (("training", split.train), ("validation", split.val), ("test", split.test)):
        if not segments:
            log.warning("split %r is empty; skipped in evaluation", name)
            continue
        ts, obs, pred = _stitched_split_series(model, segments)
        per_step[name] = (ts, obs, pred)
        report.splits.append(SplitScore(name, int(ts.size), rmse(pred, obs), nse(pred, obs)))

    if exclude_windows and "test" in per_step:
        ts, obs, pred = _apply_exclusions(*per_step["test"], exclude_windows)
        if ts.size >= 2:
            report.splits.append(
                SplitScore("test_excluding", int(ts.size), rmse(pred, obs), nse(pred, obs))
            )
            per_step["test_excluding"] = (ts, obs, pred)
        else:
            log.warning("exclusion windows removed the whole test split")

    for seg in sorted(split.test, key=lambda s: str(s.timestamps[0])):
        ts, obs, pred = predict_segment(model, seg)
        for ev in extract_events(
            ts, obs, threshold=threshold, min_separation=min_separation,
            id_prefix=f"{seg.segment_id}.",
        ):
            sl = slice(ev.start_idx, ev.stop_idx)
            report.events.append(
                EventScore(
                    event_id=ev.event_id,
                    segment_id=seg.segment_id,
                    start=np.datetime_as_string(ev.start, unit="s"),
                    end=np.datetime_as_string(ev.end, unit="s"),
                    peak=ev.peak,
                    n_points=ev.stop_idx - ev.start_idx,
                    rmse=rmse(pred[sl], obs[sl]),
                    nse=nse(pred[sl], obs[sl]) if ev.stop_idx - ev.start_idx >= 2 else float("nan"),
                )
            )
    return report, per_step


def write_report_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "n_points", "rmse", "nse"])
        for row in report.splits:
            writer.writerow([row.dataset, row.n_points, repr(row.rmse), repr(row.nse)])


def write_events_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_id", "segment_id", "start", "end", "peak", "n_points", "rmse", "nse"])
        for ev in report.events:
            writer.writerow(
                [ev.event_id, ev.segment_id, ev.start, ev.end,
                 repr(ev.peak), ev.n_points, repr(ev.rmse), repr(ev.nse)]
            )


def write_predictions_csv(per_step_entry, path):
    """Per-step CSV (timestamp, observed, predicted) for one split."""
    ts, obs, pred = per_step_entry
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "observed", "predicted"])
        for i in range(ts.size):
            writer.writerow(
                [np.datetime_as_string(ts[i], unit="s"), repr(float(obs[i])), repr(float(pred[i]))]
            )


def read_predictions_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["timestamp", "observed", "predicted"]:
            raise DataError(f"{path}: unexpected predictions header {header}")
        ts, obs, pred = [], [], []
        for row in reader:
            ts.append(np.datetime64(row[0], "s"))
            obs.append(float(row[1]))
            pred.append(float(row[2]))
    return np.array(ts, dtype="datetime64[s]"), np.array(obs), np.array(pred)
