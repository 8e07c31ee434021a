"""Gage relevance machinery: per-gage sweep, weight norms, and correlations.

Two complementary probes of what the network learned:

1. Sweep: train one single-gage model per rain gage (200 epochs, no
   regularization, no validation, train+validation merged as the fitting
   set) and rank gages by the minimum training error e reached.
2. Weight norms: on a model trained with all gages, group the first-layer
   input-hidden weights by gage, flatten each group per hidden unit in
   gate order (i, f, g, o), and take l1/l2/linf norms. A model that pays
   attention to a gage carries more first-layer weight mass for it, so the
   norms should anti-correlate with the sweep errors.
"""

import csv
import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, DivergenceError
from .pipeline import CleanSegment, DatasetSplit
from .stats import pearson, spearman
from .training import RunConfig, train_model

log = logging.getLogger(__name__)


def derive_seed(base_seed, gage):
    """Stable per-gage seed: low 32 bits of sha256(base_seed:gage)."""
    digest = hashlib.sha256(f"{base_seed}:{gage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def sweep_run_config(config):
    """The single-gage sweep protocol: no regularization, no validation."""
    return replace(config, regularization=False, validation=False)


@dataclass
class SweepResult:
    gage: str
    error: float  # min training MSE over epochs; +inf on divergence
    diverged: bool
    best_epoch: int
    seed: int


def _restrict(segments, channels):
    out = []
    for seg in segments:
        out.append(
            CleanSegment(
                segment_id=seg.segment_id,
                timestamps=seg.timestamps,
                channels=list(channels),
                values=seg.columns(channels).copy(),
                source_start=seg.source_start,
                parent_id=seg.parent_id,
                parent_offset=seg.parent_offset,
            )
        )
    return out


def _sweep_one(args):
    gage, seed, config, segments = args
    cfg = replace(sweep_run_config(config), seed=seed)
    split = DatasetSplit(train=segments, val=[], test=[])
    try:
        _, report = train_model(cfg, split, [gage])
    except DivergenceError as err:
        log.warning("sweep training diverged for gage %r: %s", gage, err)
        return SweepResult(gage, math.inf, True, -1, seed)
    e = min(report.train_losses)
    return SweepResult(gage, float(e), False, int(np.argmin(report.train_losses)), seed)


def gage_sweep(gages, split, config, jobs=1):
    """Train one model per gage on train+validation merged; map gage -> result.

    Deterministic regardless of `jobs`: each gage's seed derives from
    (config.seed, gage name) alone. Divergence is recorded as e = +inf
    with a flag rather than raised.
    """
    gages = list(gages)
    if not gages:
        raise DataError("gage_sweep: no gages given")
    merged = list(split.train) + list(split.val)
    if not merged:
        raise DataError("gage_sweep: empty fitting set")
    tasks = [
        (g, derive_seed(config.seed, g), config, _restrict(merged, [g, config.discharge_channel]))
        for g in gages
    ]
    results = {}
    if jobs <= 1:
        for task in tasks:
            res = _sweep_one(task)
            results[res.gage] = res
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_sweep_one, tasks):
                results[res.gage] = res
    return results


def flatten_first_layer_weights(params, gage_index):
    """Eq-style per-gage weight vector: (i, f, g, o) per hidden unit, concatenated.

    Extracts the gage's column of each first-layer input-hidden gate block
    and interleaves them unit by unit, giving a vector of length 4p.
    """
    w_ih = params.layer1.w_ih
    p = params.layer1.hidden_size
    d = params.layer1.input_size
    if not 0 <= gage_index < d:
        raise DataError(f"gage index {gage_index} out of range for d={d}")
    col = w_ih[:, gage_index]
    flat = np.empty(4 * p)
    for unit in range(p):
        for gate in range(4):  # i, f, g, o blocks
            flat[4 * unit + gate] = col[gate * p + unit]
    return flat


def weight_norms(w):
    """(l1, l2, linf) of a weight vector."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(w)):
        raise DataError("weight_norms: non-finite entries")
    return float(np.abs(w).sum()), float(math.sqrt(w @ w)), float(np.abs(w).max())


def select_top_k(errors, k):
    """The k gages with smallest error, ascending; ties break lexicographically."""
    if k > len(errors):
        raise DataError(f"k={k} exceeds the {len(errors)} available gages")
    ranked = sorted(errors.items(), key=lambda kv: (kv[1], kv[0]))
    return [name for name, _ in ranked[:k]]


@dataclass
class GageImportanceRow:
    gage: str
    error: float
    l1: float
    l2: float
    linf: float
    rank: int  # 1 = smallest error
    distance: float = None  # straight-line meters to the outlet, when known


@dataclass
class GageImportanceTable:
    rows: list

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = ["gage", "e", "l1", "l2", "linf", "rank"]
            with_distance = any(r.distance is not None for r in self.rows)
            if with_distance:
                header.append("distance")
            writer.writerow(header)
            for r in self.rows:
                row = [r.gage, repr(r.error), repr(r.l1), repr(r.l2), repr(r.linf), r.rank]
                if with_distance:
                    row.append("" if r.distance is None else repr(r.distance))
                writer.writerow(row)

    @classmethod
    def read_csv(cls, path):
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:6] != ["gage", "e", "l1", "l2", "linf", "rank"]:
                raise DataError(f"{path}: unexpected importance header {header}")
            has_distance = len(header) > 6
            for row in reader:
                rows.append(
                    GageImportanceRow(
                        gage=row[0], error=float(row[1]), l1=float(row[2]),
                        l2=float(row[3]), linf=float(row[4]), rank=int(row[5]),
                        distance=float(row[6]) if has_distance and row[6] else None,
                    )
                )
        return cls(rows)


def build_importance_table(model, errors, coords=None):
    """Combine sweep errors with the all-gage model's per-gage weight norms.

    `errors` maps gage name -> sweep error e (floats, +inf allowed).
    `coords`, when given, maps gage name -> (x, y) meters and must include
    an 'outlet' entry for the distance column.
    """
    ranking = select_top_k(errors, len(errors))
    rank_of = {g: i + 1 for i, g in enumerate(ranking)}
    outlet = None
    if coords is not None:
        if "outlet" not in coords:
            raise DataError("coordinates must include an 'outlet' row")
        outlet = coords["outlet"]
    rows = []
    for i, gage in enumerate(model.gages):
        if gage not in errors:
            raise DataError(f"no sweep error supplied for model gage {gage!r}")
        l1, l2, linf = weight_norms(flatten_first_layer_weights(model.params, i))
        distance = None
        if coords is not None:
            if gage not in coords:
                raise DataError(f"no coordinates for gage {gage!r}")
            distance = math.hypot(coords[gage][0] - outlet[0], coords[gage][1] - outlet[1])
        rows.append(
            GageImportanceRow(
                gage=gage, error=float(errors[gage]), l1=l1, l2=l2, linf=linf,
                rank=rank_of[gage], distance=distance,
            )
        )
    return GageImportanceTable(rows)


def norm_error_correlations(table):
    """Pearson and Spearman of each weight norm against the sweep error.

    Rows with non-finite error (diverged sweeps) are excluded. Returns
    {norm: {"pearson_r", "pearson_p", "spearman_rho", "spearman_p"}}.
    """
    e = table.column("error")
    finite = np.isfinite(e)
    if finite.sum() < 3:
        raise DataError("need at least 3 finite sweep errors for correlations")
    out = {}
    for norm in ("l1", "l2", "linf"):
        vals = table.column(norm)[finite]
        r, pr = pearson(vals, e[finite])
        rho, prho = spearman(vals, e[finite])
        out[norm] = {
            "pearson_r": r, "pearson_p": pr,
            "spearman_rho": rho, "spearman_p": prho,
        }
    return out


def distance_error_correlation(table):
    """Pearson of sweep error against straight-line distance to the outlet."""
    d = table.column("distance")
    e = table.column("error")
    ok = np.isfinite(d) & np.isfinite(e)
    if ok.sum() < 3:
        raise DataError("need at least 3 gages with distance and finite error")
    r, p = pearson(e[ok], d[ok])
    return {"pearson_r": r, "pearson_p": p}


def read_coordinates_csv(path):
    """CSV gage,x,y in meters; returns {name: (x, y)}."""
    coords = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip().lower() for h in header] != ["gage", "x", "y"]:
            raise DataError(f"{path}: expected header gage,x,y")
        for row in reader:
            if not row:
                continue
            coords[row[0].strip()] = (float(row[1]), float(row[2]))
    return coords


def write_sweep_csv(results, path):
    """Emit the per-gage error table (gage, e, diverged, best_epoch, seed)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gage", "e", "diverged", "best_epoch", "seed"])
        for gage in sorted(results, key=lambda g: (results[g].error, g)):
            r = results[gage]
            writer.writerow([r.gage, repr(r.error), int(r.diverged), r.best_epoch, r.seed])


def read_sweep_csv(path):
    """Read an error table back to {gage: error}; inf marks diverged runs."""
    errors = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["gage", "e"]:
            raise DataError(f"{path}: unexpected sweep header {header}")
        for row in reader:
            if not row:
                continue
            errors[row[0]] = float(row[1])
    return errors
