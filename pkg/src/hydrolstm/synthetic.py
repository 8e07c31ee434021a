"""Synthetic watershed with known ground-truth gage relevance.

Rainfall comes from a Poisson-cluster storm process. The first `n_relevant`
gages observe a shared regional storm schedule, each through its own
per-storm lognormal intensity multiplier (a patchy rain field: every
relevant gage sees the same storms but its own local intensity). The
remaining noise gages draw schedules of their own with identical marginal
statistics, so nothing distinguishes them pointwise from relevant gages.

Discharge is base flow plus the relevance-weighted sum of each gage's rain
convolved with a discretized gamma unit hydrograph, plus Gaussian noise,
floored at zero:

    q(t) = max(0, base + sum_g w_g * (rain_g * kernel)(t) + eps(t))

Noise gages have weight zero, hence zero causal effect on discharge. The
manifest records the true weights and the exact kernel so tests can
recompute discharge independently.
"""

import json
import logging
from dataclasses import dataclass, asdict

import numpy as np

from . import configio
from .errors import DataError
from .pipeline import STEP_SECONDS, TimeSeriesFrame

log = logging.getLogger(__name__)

STEPS_PER_DAY = 86400 // STEP_SECONDS  # 96
DISCHARGE_CHANNEL = "discharge"


@dataclass
class SynthConfig:
    """Reference configuration: 20 gages, 5 relevant, 3 synthetic years."""

    n_gages: int = 20
    n_relevant: int = 5
    relevance: list = None  # cms per (mm/15min); default: 15 * 0.75^i, zeros for noise
    kernel_shape: float = 2.0  # gamma k
    kernel_scale: float = 12.0  # gamma theta, in 15-minute steps
    base_flow: float = 5.0  # cms
    noise_std: float = 1.0  # cms
    storm_rate: float = 0.35  # storms per day
    storm_duration_mean_steps: float = 24.0  # median storm length, steps
    storm_duration_sigma: float = 0.6  # lognormal sigma of duration
    storm_intensity_mean: float = 2.5  # mm per 15 min, exponential
    intensity_jitter_sigma: float = 1.0  # lognormal sigma of per-gage per-storm multiplier
    start_year: int = 2015
    n_years: int = 3
    seed: int = 0
    missing_rate: float = 2.0  # expected missing runs per channel-year
    missing_max_run: int = 12  # steps; runs longer than 6 force splits downstream

    def __post_init__(self):
        if self.relevance is None:
            self.relevance = [round(15.0 * 0.75**i, 4) for i in range(self.n_relevant)] + [
                0.0
            ] * (self.n_gages - self.n_relevant)

    def validate(self):
        if self.n_relevant > self.n_gages:
            raise DataError("n_relevant exceeds n_gages")
        if len(self.relevance) != self.n_gages:
            raise DataError(
                f"relevance must list {self.n_gages} weights, got {len(self.relevance)}"
            )
        if any(w < 0 for w in self.relevance):
            raise DataError("relevance weights must be >= 0")
        if any(w == 0 for w in self.relevance[: self.n_relevant]) or any(
            w != 0 for w in self.relevance[self.n_relevant :]
        ):
            raise DataError("relevant gages need positive weights, noise gages zero")
        for name in (
            "kernel_shape", "kernel_scale", "storm_rate",
            "storm_duration_mean_steps", "storm_duration_sigma",
            "storm_intensity_mean", "intensity_jitter_sigma",
        ):
            if getattr(self, name) <= 0:
                raise DataError(f"{name} must be positive")
        if self.n_years < 1:
            raise DataError("need at least one synthetic year")

    def gage_names(self):
        return [f"g{i + 1:02d}" for i in range(self.n_gages)]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_file(cls, path):
        raw = configio.read_kv(path)
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
        kwargs = {}
        for key, value in raw.items():
            if key in ("n_gages", "n_relevant", "start_year", "n_years", "seed", "missing_max_run"):
                kwargs[key] = int(value)
            elif key == "relevance":
                kwargs[key] = configio.parse_float_list(value)
            else:
                kwargs[key] = float(value)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def gamma_kernel(shape, scale):
    """Discretized gamma impulse response, normalized to unit sum.

    Midpoint discretization: kernel[j] ~ pdf(j + 0.5), truncated where the
    tail becomes negligible relative to the peak.
    """
    mean = shape * scale
    sd = np.sqrt(shape) * scale
    length = max(int(np.ceil(mean + 14.0 * sd)), 8)
    t = np.arange(length) + 0.5
    logpdf = (shape - 1.0) * np.log(t) - t / scale
    logpdf -= logpdf.max()
    k = np.exp(logpdf)
    k /= k.sum()
    nz = np.nonzero(k > 1e-15)[0]
    k = k[: nz[-1] + 1]
    return k / k.sum()


def discharge_from_rain(rain, weights, kernel, base_flow, noise=None):
    """Discharge series from a (T, G) rain matrix by weighted convolution.

    This is the exact forward map the generator uses; tests recompute with
    it to verify causal structure. `noise` is an optional (T,) array added
    before flooring at zero.
    """
    rain = np.asarray(rain, dtype=np.float64)
    T = rain.shape[0]
    q = np.full(T, float(base_flow))
    for g, w in enumerate(weights):
        if w != 0.0:
            q += w * np.convolve(rain[:, g], kernel)[:T]
    if noise is not None:
        q = q + noise
    return np.maximum(q, 0.0)


def _storm_schedule(rng, n_steps, config):
    """Draw one storm schedule: list of (start, duration, base intensity)."""
    days = n_steps / STEPS_PER_DAY
    n_storms = rng.poisson(config.storm_rate * days)
    starts = np.sort(rng.integers(0, n_steps, size=n_storms))
    durations = np.maximum(
        2,
        np.round(
            config.storm_duration_mean_steps
            * rng.lognormal(0.0, config.storm_duration_sigma, size=n_storms)
        ).astype(np.int64),
    )
    intensities = rng.exponential(config.storm_intensity_mean, size=n_storms)
    return starts, durations, intensities


def _render_storms(rng, n_steps, starts, durations, intensities, gage_multipliers):
    """Accumulate storms into per-gage rain columns.

    gage_multipliers is (n_gages_in_group, n_storms): the per-storm
    intensity factor of each gage in the group. Within-storm raggedness is
    a shared per-step gamma(4, 1/4) texture (mean one).
    """
    n_g = gage_multipliers.shape[0]
    rain = np.zeros((n_steps, n_g))
    for s in range(starts.shape[0]):
        a = int(starts[s])
        b = min(int(a + durations[s]), n_steps)
        if b <= a:
            continue
        texture = rng.gamma(4.0, 0.25, size=b - a)
        profile = intensities[s] * texture
        for g in range(n_g):
            rain[a:b, g] += gage_multipliers[g, s] * profile
    return rain


def generate(config):
    """Build the synthetic frame and its ground-truth manifest.

    Returns (TimeSeriesFrame, manifest dict). Channels are the gages in
    order then 'discharge'. Deterministic for a fixed config.
    """
    config.validate()
    seed_seq = np.random.SeedSequence(config.seed)
    (regional_seed, noise_sched_seed, jitter_seed, q_noise_seed, missing_seed) = seed_seq.spawn(5)

    start = np.datetime64(f"{config.start_year}-01-01T00:00:00", "s")
    end = np.datetime64(f"{config.start_year + config.n_years}-01-01T00:00:00", "s")
    n_steps = int((end - start).astype(np.int64)) // STEP_SECONDS
    timestamps = start + np.arange(n_steps) * np.timedelta64(STEP_SECONDS, "s")

    names = config.gage_names()
    rain = np.zeros((n_steps, config.n_gages))

    # Shared regional storms for the relevant gages, jittered per gage.
    rng_regional = np.random.default_rng(regional_seed)
    starts, durations, intensities = _storm_schedule(rng_regional, n_steps, config)
    rng_jitter = np.random.default_rng(jitter_seed)
    sigma = config.intensity_jitter_sigma
    multipliers = rng_jitter.lognormal(
        -0.5 * sigma**2, sigma, size=(config.n_relevant, starts.shape[0])
    )
    rain[:, : config.n_relevant] = _render_storms(
        rng_regional, n_steps, starts, durations, intensities, multipliers
    )

    # Independent storms for each noise gage, identical marginals.
    rng_noise_sched = np.random.default_rng(noise_sched_seed)
    for g in range(config.n_relevant, config.n_gages):
        s, d, i = _storm_schedule(rng_noise_sched, n_steps, config)
        m = rng_noise_sched.lognormal(-0.5 * sigma**2, sigma, size=(1, s.shape[0]))
        rain[:, g : g + 1] = _render_storms(rng_noise_sched, n_steps, s, d, i, m)

    kernel = gamma_kernel(config.kernel_shape, config.kernel_scale)
    rng_q = np.random.default_rng(q_noise_seed)
    noise = rng_q.normal(0.0, config.noise_std, size=n_steps) if config.noise_std > 0 else None
    discharge = discharge_from_rain(rain, config.relevance, kernel, config.base_flow, noise)

    values = np.column_stack([rain, discharge])
    channels = names + [DISCHARGE_CHANNEL]
    missing = np.zeros(values.shape, dtype=bool)
    rng_missing = np.random.default_rng(missing_seed)
    for c in range(values.shape[1]):
        n_runs = rng_missing.poisson(config.missing_rate * config.n_years)
        for _ in range(n_runs):
            a = int(rng_missing.integers(0, n_steps))
            run = int(rng_missing.integers(1, config.missing_max_run + 1))
            missing[a : min(a + run, n_steps), c] = True
    values = values.copy()
    values[missing] = np.nan

    frame = TimeSeriesFrame(timestamps, channels, values, missing)
    frame.validate()
    manifest = {
        "discharge_channel": DISCHARGE_CHANNEL,
        "gages": [
            {"gage": names[g], "relevance": float(config.relevance[g])}
            for g in range(config.n_gages)
        ],
        "kernel": kernel.tolist(),
        "n_storms_regional": int(starts.shape[0]),
        "config": config.to_dict(),
    }
    return frame, manifest


def write_manifest(manifest, csv_path, json_path=None):
    """Emit the gage,relevance CSV (and optionally the full JSON manifest)."""
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("gage,relevance\n")
        for row in manifest["gages"]:
            fh.write(f"{row['gage']},{row['relevance']!r}\n")
    if json_path:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
