"""
Spectrogram features from strain time series.

A 6 s window sampled at 10 Hz (60 samples) is cut into five 20-sample
frames with a hop of 10.  Each frame is transformed with a DFT and only
the lower half of the magnitude spectrum (bins 0..9, DC included) is kept,
so a window becomes a 10x5 matrix: rows are frequency bins, columns are
frames.  Bin ``j`` of a 20-point frame at 10 Hz sits at ``j * 0.5`` Hz.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, FormatError, MalformedInputError, ShapeError

SAMPLE_RATE_HZ = 10.0
WINDOW_S = 6.0
FRAME_LEN = 20
HOP = 10
N_BINS = FRAME_LEN // 2
N_FRAMES = 5
WINDOW_LEN = FRAME_LEN + (N_FRAMES - 1) * HOP  # 60


@dataclass(frozen=True)
class TimeSeries:
    samples: np.ndarray
    sample_rate_hz: float = SAMPLE_RATE_HZ
    start_time_s: float = 0.0
    label: Optional[str] = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise MalformedInputError("samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise MalformedInputError("samples contain NaN or inf")
        if not self.sample_rate_hz > 0:
            raise ConfigurationError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if self.start_time_s < 0:
            raise MalformedInputError("start_time_s must be nonnegative")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(len(self.samples)) / self.sample_rate_hz

    def __eq__(self, other):
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.start_time_s == other.start_time_s
            and self.label == other.label
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


@dataclass(frozen=True)
class Spectrogram:
    bins: np.ndarray
    window_start_s: float = 0.0
    label: Optional[str] = None

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.float64)
        if bins.shape != (N_BINS, N_FRAMES):
            raise ShapeError(f"spectrogram must be {N_BINS}x{N_FRAMES}, got {bins.shape}")
        if not np.all(np.isfinite(bins)) or np.any(bins < 0):
            raise MalformedInputError("spectrogram entries must be finite and nonnegative")
        bins.flags.writeable = False
        object.__setattr__(self, "bins", bins)

    def with_bins(self, bins) -> "Spectrogram":
        return Spectrogram(bins, self.window_start_s, self.label)

    def __eq__(self, other):
        if not isinstance(other, Spectrogram):
            return NotImplemented
        return (
            self.window_start_s == other.window_start_s
            and self.label == other.label
            and np.array_equal(self.bins, other.bins)
        )

    __hash__ = None


@dataclass(frozen=True)
class NormStats:
    """Global min-max statistics; ``apply`` maps raw bins into [0, 1]."""

    min: float
    max: float
    version: int = field(default=1, compare=False)

    def apply(self, bins: np.ndarray) -> np.ndarray:
        bins = np.asarray(bins, dtype=np.float64)
        span = self.max - self.min
        if span <= 0:
            return np.zeros_like(bins)
        return np.clip((bins - self.min) / span, 0.0, 1.0)

    def out_of_range(self, bins: np.ndarray) -> bool:
        bins = np.asarray(bins)
        return bool(np.any(bins < self.min) or np.any(bins > self.max))

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "version": 1}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        try:
            if int(d.get("version", 1)) != 1:
                raise FormatError(f"unsupported norm stats version {d['version']}")
            return cls(float(d["min"]), float(d["max"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"invalid norm stats record: {exc}") from exc


def window_series(series: TimeSeries, window_s: float = WINDOW_S, overlap: bool = False) -> list:
    """Cut ``series`` into consecutive windows of ``window_s`` seconds.

    Returns an empty list when the series is shorter than one window.  The
    trailing remainder is discarded.  With ``overlap=True`` windows advance
    by half a window instead of a whole one.
    """
    n_float = window_s * series.sample_rate_hz
    n = int(round(n_float))
    if window_s <= 0 or n < 1 or abs(n - n_float) > 1e-9:
        raise ConfigurationError(
            f"window of {window_s} s at {series.sample_rate_hz} Hz is not a whole number of samples"
        )
    step = n // 2 if overlap else n
    if overlap and step < 1:
        raise ConfigurationError("window too short for overlapping mode")
    windows = []
    for start in range(0, len(series) - n + 1, step):
        windows.append(
            TimeSeries(
                series.samples[start:start + n],
                series.sample_rate_hz,
                series.start_time_s + start / series.sample_rate_hz,
                series.label,
            )
        )
    return windows


def dft(frame: Sequence[float]) -> np.ndarray:
    """Discrete Fourier transform ``f_j = sum_k x_k exp(-2*pi*i*j*k/n)``."""
    x = np.asarray(frame, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise MalformedInputError("dft needs a non-empty one-dimensional frame")
    if not np.all(np.isfinite(x)):
        raise MalformedInputError("dft input contains NaN or inf")
    return np.fft.fft(x)


def half_magnitudes(spectrum: np.ndarray) -> np.ndarray:
    spectrum = np.asarray(spectrum)
    if spectrum.shape != (FRAME_LEN,):
        raise ShapeError(f"half_magnitudes expects a {FRAME_LEN}-point spectrum, got {spectrum.shape}")
    return np.abs(spectrum[:N_BINS])


def build_spectrogram(window: TimeSeries) -> Spectrogram:
    if len(window) != WINDOW_LEN:
        raise ShapeError(f"window must hold {WINDOW_LEN} samples, got {len(window)}")
    if window.sample_rate_hz != SAMPLE_RATE_HZ:
        raise ShapeError(f"window must be sampled at {SAMPLE_RATE_HZ} Hz, got {window.sample_rate_hz}")
    x = window.samples
    cols = [half_magnitudes(dft(x[t * HOP:t * HOP + FRAME_LEN])) for t in range(N_FRAMES)]
    return Spectrogram(np.stack(cols, axis=1), window.start_time_s, window.label)


def series_to_spectrograms(series: TimeSeries) -> list:
    return [build_spectrogram(w) for w in window_series(series)]


def fit_norm_stats(specs: Sequence[Spectrogram]) -> NormStats:
    if len(specs) == 0:
        raise MalformedInputError("cannot fit normalization on an empty set")
    stacked = np.stack([s.bins for s in specs])
    return NormStats(float(stacked.min()), float(stacked.max()))


def normalize_spectrograms(specs: Sequence[Spectrogram], stats: Optional[NormStats] = None):
    """Scale every entry into [0, 1] with one global affine map.

    Returns ``(normalized, stats)``.  Passing previously fitted ``stats``
    reuses them instead of refitting.
    """
    if len(specs) == 0:
        raise MalformedInputError("cannot normalize an empty set of spectrograms")
    if stats is None:
        stats = fit_norm_stats(specs)
    return [s.with_bins(stats.apply(s.bins)) for s in specs], stats


# -- JSON Lines batch files -------------------------------------------------

def spectrogram_to_record(spec: Spectrogram) -> dict:
    return {
        "label": spec.label,
        "window_start_s": spec.window_start_s,
        "bins": [[float(v) for v in col] for col in spec.bins.T],
    }


def spectrogram_from_record(rec: dict) -> Spectrogram:
    try:
        cols = np.asarray(rec["bins"], dtype=np.float64)
        label = rec.get("label")
        start = float(rec.get("window_start_s", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid spectrogram record: {exc}") from exc
    if cols.shape != (N_FRAMES, N_BINS):
        raise FormatError(f"spectrogram record must hold {N_FRAMES} columns of {N_BINS} bins")
    return Spectrogram(cols.T, start, None if label is None else str(label))


def _atomic_write_text(path: Path, text: str):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_spectrograms(path, specs: Iterable[Spectrogram]):
    lines = [json.dumps(spectrogram_to_record(s)) for s in specs]
    _atomic_write_text(Path(path), "".join(line + "\n" for line in lines))


def read_spectrograms(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such file: {path}")
    specs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: bad JSON ({exc.msg})") from exc
            try:
                specs.append(spectrogram_from_record(rec))
            except (FormatError, ShapeError, MalformedInputError) as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return specs


def norm_stats_path(spec_path) -> Path:
    """Sidecar location for the stats belonging to a spectrogram batch file."""
    p = Path(spec_path)
    return p.with_name(p.stem + ".norm.json")


def write_norm_stats(path, stats: NormStats):
    _atomic_write_text(Path(path), json.dumps(stats.to_dict()) + "\n")


def read_norm_stats(path) -> NormStats:
    path = Path(path)
    try:
        return NormStats.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except FileNotFoundError as exc:
        raise FormatError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad JSON ({exc.msg})") from exc


def dominant_bin(spec: Spectrogram, skip_dc: bool = False) -> np.ndarray:
    """Index of the largest row in every column."""
    bins = spec.bins[1:] if skip_dc else spec.bins
    return np.argmax(bins, axis=0) + (1 if skip_dc else 0)


def bin_frequency_hz(j: int, sample_rate_hz: float = SAMPLE_RATE_HZ, n: int = FRAME_LEN) -> float:
    return j * sample_rate_hz / n

