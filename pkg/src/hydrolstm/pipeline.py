"""Ingest, repair, chunk, scale, and split 15-minute multi-gage series.

A raw series arrives as a CSV with one timestamp column and one column per
channel (rain gages in mm per 15 min, discharge in cms). Missing cells are
empty or the token "NA". The pipeline imputes short gaps (<= 6 steps, i.e.
90 minutes) by linear interpolation, splits the record wherever any channel
has a longer gap, optionally chunks the resulting clean segments, fits a
min-max scaler with a 0.9 ceiling on the training portion, and assigns
segments to train/validation/test by calendar year.

All operations are pure functions of their inputs.
"""

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

STEP_SECONDS = 900  # 15-minute grid
DEFAULT_MAX_GAP_STEPS = 6  # 90 minutes
DEFAULT_CHUNK_LEN = 2048
DEFAULT_CEILING = 0.9
MISSING_TOKEN = "NA"
MANIFEST_FORMAT_VERSION = 1


@dataclass
class TimeSeriesFrame:
    """Timestamped multi-channel series on the 15-minute grid.

    `values` is (T, C) float64 with NaN wherever `missing` is True.
    """

    timestamps: np.ndarray  # datetime64[s], (T,)
    channels: list
    values: np.ndarray  # (T, C)
    missing: np.ndarray  # (T, C) bool

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing = np.asarray(self.missing, dtype=bool)

    @property
    def n_steps(self):
        return self.timestamps.shape[0]

    def validate(self, rain_channels=None):
        if len(set(self.channels)) != len(self.channels):
            raise DataError("duplicate channel names")
        T = self.n_steps
        if self.values.shape != (T, len(self.channels)) or self.missing.shape != self.values.shape:
            raise DataError("frame array shapes inconsistent")
        if T >= 2:
            deltas = np.diff(self.timestamps).astype("timedelta64[s]").astype(np.int64)
            bad = np.nonzero(deltas != STEP_SECONDS)[0]
            if bad.size:
                raise DataError(f"rows {bad[0]} and {bad[0] + 1} are not 15 minutes apart")
        if rain_channels:
            for ch in rain_channels:
                col = self.channel_index(ch)
                present = ~self.missing[:, col]
                if np.any(self.values[present, col] < 0):
                    raise DataError(f"negative rain value in channel {ch!r}")

    def channel_index(self, name):
        try:
            return self.channels.index(name)
        except ValueError:
            raise DataError(f"channel {name!r} not in frame") from None


@dataclass
class CleanSegment:
    """Contiguous gap-free window of a source frame, origin offsets retained."""

    segment_id: str
    timestamps: np.ndarray  # (T,)
    channels: list
    values: np.ndarray  # (T, C), fully present
    source_start: int = 0
    parent_id: str = None
    parent_offset: int = 0
    imputed: list = field(default_factory=list)  # (channel, start, stop) half-open, local rows

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def n_steps(self):
        return self.timestamps.shape[0]

    def channel_index(self, name):
        try:
            return self.channels.index(name)
        except ValueError:
            raise DataError(f"channel {name!r} not in segment {self.segment_id}") from None

    def column(self, name):
        return self.values[:, self.channel_index(name)]

    def columns(self, names):
        idx = [self.channel_index(n) for n in names]
        return self.values[:, idx]


@dataclass
class ScalingParams:
    """Per-channel affine scaling to [0, ceiling], fit on training data only."""

    channels: list
    mins: np.ndarray
    maxs: np.ndarray
    ceiling: float = DEFAULT_CEILING

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        if np.any(self.maxs < self.mins):
            raise DataError("scaler max < min")

    def _select(self, channels):
        index = {c: i for i, c in enumerate(self.channels)}
        try:
            return np.array([index[c] for c in channels], dtype=np.intp)
        except KeyError as err:
            raise DataError(f"channel {err.args[0]!r} not covered by scaler") from None

    def apply(self, values, channels):
        """Scale columns (ordered per `channels`); out-of-range values are
        mapped by the same affine rule, never clipped."""
        sel = self._select(channels)
        values = np.asarray(values, dtype=np.float64)
        squeeze = values.ndim == 1 and len(channels) == 1
        if squeeze:
            values = values[:, None]
        lo = self.mins[sel]
        span = self.maxs[sel] - lo
        out = np.zeros_like(values)
        nz = span > 0
        # divide before scaling so the fit max lands on the ceiling exactly
        out[..., nz] = self.ceiling * ((values[..., nz] - lo[nz]) / span[nz])
        return out[:, 0] if squeeze else out

    def invert(self, scaled, channels):
        sel = self._select(channels)
        scaled = np.asarray(scaled, dtype=np.float64)
        squeeze = scaled.ndim == 1 and len(channels) == 1
        if squeeze:
            scaled = scaled[:, None]
        lo = self.mins[sel]
        span = self.maxs[sel] - lo
        out = lo + scaled * span / self.ceiling
        return out[:, 0] if squeeze else out

    def to_dict(self):
        return {
            "channels": list(self.channels),
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
            "ceiling": self.ceiling,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["channels"]), d["mins"], d["maxs"], float(d["ceiling"]))


@dataclass
class DatasetSplit:
    """Calendar-year split: train (<= end year), validation, and holdout test."""

    train: list
    val: list
    test: list

    def all_segments(self):
        return list(self.train) + list(self.val) + list(self.test)


def _parse_timestamp(text, row_num):
    try:
        dt = datetime.fromisoformat(text.strip())
    except ValueError:
        raise DataError(f"row {row_num}: malformed timestamp {text!r}") from None
    if dt.tzinfo is not None:
        dt = dt.replace(tzinfo=None)
    if dt.minute % 15 != 0 or dt.second != 0 or dt.microsecond != 0:
        raise DataError(f"row {row_num}: timestamp {text!r} is off the 15-minute grid")
    return np.datetime64(dt, "s")


def load_csv(path):
    """Read a raw series CSV into a TimeSeriesFrame.

    Rows must land on the 15-minute grid, strictly increasing. Timestamps
    skipped in the file are materialized as all-missing rows so the frame
    keeps exact grid spacing.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: header must name a timestamp column and at least one channel")
        channels = [h.strip() for h in header[1:]]
        if len(set(channels)) != len(channels):
            raise DataError(f"{path}: duplicate channel names in header")

        stamps = []
        rows = []
        masks = []
        for i, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(channels) + 1:
                raise DataError(f"row {i}: expected {len(channels) + 1} fields, got {len(row)}")
            ts = _parse_timestamp(row[0], i)
            vals = np.empty(len(channels))
            miss = np.zeros(len(channels), dtype=bool)
            for j, cell in enumerate(row[1:]):
                cell = cell.strip()
                if cell == "" or cell == MISSING_TOKEN:
                    vals[j] = np.nan
                    miss[j] = True
                else:
                    try:
                        vals[j] = float(cell)
                    except ValueError:
                        raise DataError(f"row {i}: bad numeric value {cell!r}") from None
            stamps.append(ts)
            rows.append(vals)
            masks.append(miss)

    if not stamps:
        raise DataError(f"{path}: no data rows")
    stamps = np.array(stamps, dtype="datetime64[s]")
    diffs = np.diff(stamps).astype("timedelta64[s]").astype(np.int64)
    if np.any(diffs == 0):
        k = int(np.nonzero(diffs == 0)[0][0])
        raise DataError(f"row {k + 2}: duplicate timestamp {stamps[k + 1]}")
    if np.any(diffs < 0):
        k = int(np.nonzero(diffs < 0)[0][0])
        raise DataError(f"row {k + 2}: timestamps not increasing at {stamps[k + 1]}")

    n_total = int((stamps[-1] - stamps[0]).astype("timedelta64[s]").astype(np.int64)) // STEP_SECONDS + 1
    values = np.full((n_total, len(channels)), np.nan)
    missing = np.ones((n_total, len(channels)), dtype=bool)
    pos = ((stamps - stamps[0]).astype("timedelta64[s]").astype(np.int64) // STEP_SECONDS).astype(np.intp)
    values[pos] = np.array(rows)
    missing[pos] = np.array(masks)
    timestamps = stamps[0] + np.arange(n_total) * np.timedelta64(STEP_SECONDS, "s")

    frame = TimeSeriesFrame(timestamps, channels, values, missing)
    frame.validate()
    return frame


def write_csv(frame_or_segment, path, timestamp_label="timestamp"):
    """Write a frame or segment back to the standard CSV format.

    Floats are written with repr so a reload is value-exact.
    """
    obj = frame_or_segment
    missing = getattr(obj, "missing", None)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([timestamp_label] + list(obj.channels))
        for t in range(obj.n_steps):
            stamp = np.datetime_as_string(obj.timestamps[t], unit="s")
            row = [stamp]
            for c in range(len(obj.channels)):
                if missing is not None and missing[t, c]:
                    row.append(MISSING_TOKEN)
                else:
                    row.append(repr(float(obj.values[t, c])))
            writer.writerow(row)


def _missing_runs(mask_col):
    """Yield (start, stop) half-open runs of True."""
    idx = np.nonzero(mask_col)[0]
    if idx.size == 0:
        return
    breaks = np.nonzero(np.diff(idx) > 1)[0]
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    stops = np.concatenate((idx[breaks] + 1, [idx[-1] + 1]))
    for a, b in zip(starts, stops):
        yield int(a), int(b)


def impute_and_split(frame, max_gap_steps=DEFAULT_MAX_GAP_STEPS):
    """Fill short gaps by linear interpolation and split at long ones.

    A run of <= max_gap_steps missing points in a channel, bounded by
    present values on both sides, is interpolated. A longer run in any
    channel splits the record there for all channels; leading/trailing
    missing runs are trimmed, never extrapolated.
    """
    T = frame.n_steps
    values = frame.values.copy()
    missing = frame.missing.copy()
    imputed_ranges = []  # (channel, start, stop) in frame rows

    for c, name in enumerate(frame.channels):
        col_missing = missing[:, c]
        if col_missing.all():
            log.warning("channel %r is entirely missing; no segments produced", name)
            return []
        for a, b in _missing_runs(col_missing):
            interior = a > 0 and b < T
            if interior and (b - a) <= max_gap_steps:
                left = values[a - 1, c]
                right = values[b, c]
                steps = b - a + 1
                values[a:b, c] = left + (np.arange(1, b - a + 1) / steps) * (right - left)
                missing[a:b, c] = False
                imputed_ranges.append((name, a, b))

    dirty = missing.any(axis=1)
    segments = []
    clean_idx = np.nonzero(~dirty)[0]
    if clean_idx.size == 0:
        return []
    breaks = np.nonzero(np.diff(clean_idx) > 1)[0]
    starts = np.concatenate(([clean_idx[0]], clean_idx[breaks + 1]))
    stops = np.concatenate((clean_idx[breaks] + 1, [clean_idx[-1] + 1]))
    n = 0
    for a, b in zip(starts, stops):
        a, b = int(a), int(b)
        if b - a < 2:
            log.debug("dropping 1-step sliver at row %d", a)
            continue
        local_imputed = [
            (ch, max(ia, a) - a, min(ib, b) - a)
            for ch, ia, ib in imputed_ranges
            if ia < b and ib > a
        ]
        segments.append(
            CleanSegment(
                segment_id=f"seg{n:04d}",
                timestamps=frame.timestamps[a:b].copy(),
                channels=list(frame.channels),
                values=values[a:b].copy(),
                source_start=a,
                imputed=local_imputed,
            )
        )
        n += 1
    return segments


def _cut(segment, a, b, new_id):
    """Slice rows [a, b) of a segment into a child segment with provenance."""
    local_imputed = [
        (ch, max(ia, a) - a, min(ib, b) - a)
        for ch, ia, ib in segment.imputed
        if ia < b and ib > a
    ]
    return CleanSegment(
        segment_id=new_id,
        timestamps=segment.timestamps[a:b].copy(),
        channels=list(segment.channels),
        values=segment.values[a:b].copy(),
        source_start=segment.source_start + a,
        parent_id=segment.segment_id,
        parent_offset=a,
        imputed=local_imputed,
    )


def chunk(segments, max_len=DEFAULT_CHUNK_LEN):
    """Partition segments into consecutive chunks of at most max_len steps.

    Segments already short enough pass through unchanged. A remainder of
    exactly 1 step would violate the 2-step segment minimum, so the final
    two chunks are rebalanced to (max_len - 1, 2). Chunks record their
    parent and offset so evaluation can re-stitch exactly.
    """
    if max_len < 2:
        raise DataError(f"chunk length must be >= 2, got {max_len}")
    out = []
    for seg in segments:
        T = seg.n_steps
        if T <= max_len:
            out.append(seg)
            continue
        bounds = list(range(0, T, max_len)) + [T]
        if T - bounds[-2] == 1:
            bounds[-2] -= 1
        for k in range(len(bounds) - 1):
            out.append(_cut(seg, bounds[k], bounds[k + 1], f"{seg.segment_id}.c{k:03d}"))
    return out


def stitch(chunks):
    """Concatenate chunk values in original order, grouped by parent.

    Returns (ordered_chunks, values) where values is the row-stacked data.
    Non-chunked segments group under their own id.
    """
    ordered = sorted(chunks, key=lambda s: (s.parent_id or s.segment_id, s.parent_offset))
    if not ordered:
        return [], np.empty((0, 0))
    return ordered, np.vstack([s.values for s in ordered])


def fit_scaler(train_segments, channels=None, ceiling=DEFAULT_CEILING):
    """Per-channel min/max from the training segments only."""
    if not train_segments:
        raise DataError("cannot fit scaler on an empty segment list")
    if channels is None:
        channels = list(train_segments[0].channels)
    stacked = np.vstack([seg.columns(channels) for seg in train_segments])
    return ScalingParams(
        channels=list(channels),
        mins=stacked.min(axis=0),
        maxs=stacked.max(axis=0),
        ceiling=ceiling,
    )


def apply_scaler(scaler, values, channels):
    return scaler.apply(values, channels)


def invert_scaler(scaler, scaled, channels):
    return scaler.invert(scaled, channels)


def _years(timestamps):
    return timestamps.astype("datetime64[Y]").astype(np.int64) + 1970


def split_by_year(segments, train_end_year=2015, val_year=2016, test_year=2017):
    """Assign segments to train/val/test by timestamp year, cutting at boundaries."""
    if not (train_end_year < val_year < test_year):
        raise DataError(
            f"split years must be ordered: train <= {train_end_year}, "
            f"val {val_year}, test {test_year}"
        )
    buckets = {"train": [], "val": [], "test": []}
    for seg in segments:
        years = _years(seg.timestamps)
        labels = np.full(seg.n_steps, "", dtype=object)
        labels[years <= train_end_year] = "train"
        labels[years == val_year] = "val"
        labels[years == test_year] = "test"
        change = np.nonzero(labels[1:] != labels[:-1])[0] + 1
        bounds = [0] + change.tolist() + [seg.n_steps]
        for a, b in zip(bounds[:-1], bounds[1:]):
            label = labels[a]
            if label == "":
                log.warning(
                    "segment %s rows %d:%d fall outside the split years; dropped",
                    seg.segment_id, a, b,
                )
                continue
            if b - a < 2:
                log.debug("dropping 1-step boundary sliver in %s", seg.segment_id)
                continue
            if a == 0 and b == seg.n_steps:
                buckets[label].append(seg)
            else:
                buckets[label].append(_cut(seg, a, b, f"{seg.segment_id}.{label}"))
    for name in ("train", "val", "test"):
        if not buckets[name]:
            log.warning("split %r is empty", name)
    return DatasetSplit(buckets["train"], buckets["val"], buckets["test"])


def write_segments_dir(segments, out_dir):
    """Emit a segment directory: manifest.json plus one CSV per segment."""
    seg_dir = os.path.join(out_dir, "segments")
    os.makedirs(seg_dir, exist_ok=True)
    entries = []
    for seg in segments:
        fname = f"{seg.segment_id}.csv"
        write_csv(seg, os.path.join(seg_dir, fname))
        entries.append(
            {
                "id": seg.segment_id,
                "file": f"segments/{fname}",
                "start": np.datetime_as_string(seg.timestamps[0], unit="s"),
                "end": np.datetime_as_string(seg.timestamps[-1], unit="s"),
                "n_steps": int(seg.n_steps),
                "channels": list(seg.channels),
                "source_start": int(seg.source_start),
                "parent_id": seg.parent_id,
                "parent_offset": int(seg.parent_offset),
                "imputed": [[ch, int(a), int(b)] for ch, a, b in seg.imputed],
            }
        )
    manifest = {"format_version": MANIFEST_FORMAT_VERSION, "segments": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def read_segments_dir(data_dir):
    """Load segments written by write_segments_dir."""
    manifest_path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"{data_dir}: no manifest.json (run prepare first)")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise DataError(f"unsupported manifest format_version {manifest.get('format_version')!r}")
    segments = []
    for entry in manifest["segments"]:
        frame = load_csv(os.path.join(data_dir, entry["file"]))
        if frame.missing.any():
            raise DataError(f"segment file {entry['file']} contains missing cells")
        segments.append(
            CleanSegment(
                segment_id=entry["id"],
                timestamps=frame.timestamps,
                channels=frame.channels,
                values=frame.values,
                source_start=entry["source_start"],
                parent_id=entry["parent_id"],
                parent_offset=entry["parent_offset"],
                imputed=[tuple(x) for x in entry.get("imputed", [])],
            )
        )
    return segments
