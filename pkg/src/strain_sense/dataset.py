"""
Dataset formats, ingestion and the synthetic strain generator.

Three on-disk layouts are understood:

* wide CSV, one time column plus one amplitude column per class
  (``Time (sec), Normal State, Abnormal State 1, ...``);
* canonical long CSV with rows ``time_s,amplitude,label``;
* profile files: a JSON array of :class:`ClassProfile` objects.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, FormatError
from .signal import (
    SAMPLE_RATE_HZ,
    WINDOW_S,
    NormStats,
    TimeSeries,
    fit_norm_stats,
    series_to_spectrograms,
)

TIME_TOLERANCE_S = 1e-6
BUNDLES = ("default4", "impact3")


@dataclass
class LabeledDataset:
    series: dict
    labels: list = field(default_factory=list)

    def __post_init__(self):
        if not self.labels:
            self.labels = list(self.series)
        if set(self.labels) != set(self.series) or len(self.labels) != len(self.series):
            raise DataError("label order must list every series exactly once")
        if len(self.labels) < 2:
            raise DataError("a dataset needs at least two classes")
        rates = {self.series[lab].sample_rate_hz for lab in self.labels}
        if len(rates) > 1:
            raise DataError(f"series disagree on sample rate: {sorted(rates)}")

    @property
    def sample_rate_hz(self) -> float:
        return self.series[self.labels[0]].sample_rate_hz

    def __iter__(self):
        return (self.series[lab] for lab in self.labels)


@dataclass(frozen=True)
class ClassProfile:
    label: str
    dc_offset: float
    components: tuple = ()
    noise_sigma: float = 0.0
    drift_per_s: float = 0.0

    def __post_init__(self):
        comps = tuple((float(f), float(a)) for f, a in self.components)
        object.__setattr__(self, "components", comps)
        for f, a in comps:
            if f < 0 or a < 0:
                raise ConfigurationError(f"{self.label}: frequencies and amplitudes must be nonnegative")
        if self.noise_sigma < 0:
            raise ConfigurationError(f"{self.label}: noise_sigma must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["components"] = [list(c) for c in self.components]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassProfile":
        try:
            return cls(
                label=str(d["label"]),
                dc_offset=float(d["dc_offset"]),
                components=tuple(tuple(c) for c in d.get("components", ())),
                noise_sigma=float(d.get("noise_sigma", 0.0)),
                drift_per_s=float(d.get("drift_per_s", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid class profile {d!r}: {exc}") from exc


def load_profiles(source) -> list:
    """Read profiles from a JSON file, or a bundled set by name."""
    if str(source) in BUNDLES:
        text = resources.files("strain_sense.profiles").joinpath(f"{source}.json").read_text(encoding="utf-8")
        origin = f"bundle {source}"
    else:
        path = Path(source)
        if not path.exists():
            raise FormatError(f"no such profile file: {path}")
        text = path.read_text(encoding="utf-8")
        origin = str(path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{origin}: bad JSON ({exc.msg})") from exc
    if not isinstance(raw, list):
        raise FormatError(f"{origin}: expected a JSON array of profiles")
    return [ClassProfile.from_dict(d) for d in raw]


def save_profiles(path, profiles: Sequence[ClassProfile]):
    Path(path).write_text(json.dumps([p.to_dict() for p in profiles], indent=2) + "\n", encoding="utf-8")


# -- synthetic data -----------------------------------------------------------

def generate_synthetic(profiles: Sequence[ClassProfile], duration_s: float, seed: int = 7,
                       sample_rate_hz: float = SAMPLE_RATE_HZ) -> LabeledDataset:
    """One noisy multi-sine series per profile.

    ``x(t) = dc + drift*t + sum(a*sin(2*pi*f*t + phase)) + N(0, sigma)``
    with ``t = i / sample_rate_hz``.  Phases and noise come from a generator
    seeded by ``(seed, class index)``.
    """
    if len(profiles) < 2:
        raise ConfigurationError("need at least two class profiles")
    if duration_s < WINDOW_S:
        raise ConfigurationError(f"duration must be at least {WINDOW_S} s")
    nyquist = sample_rate_hz / 2
    labels = [p.label for p in profiles]
    if len(set(labels)) != len(labels):
        raise ConfigurationError("profile labels must be unique")
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    series = {}
    for i, p in enumerate(profiles):
        for f, _ in p.components:
            if f >= nyquist:
                raise ConfigurationError(f"{p.label}: component at {f} Hz aliases at {sample_rate_hz} Hz sampling")
        rng = np.random.default_rng([seed, i])
        x = p.dc_offset + p.drift_per_s * t
        for f, a in p.components:
            x = x + a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        if p.noise_sigma > 0:
            x = x + rng.normal(0.0, p.noise_sigma, size=n)
        series[p.label] = TimeSeries(x, sample_rate_hz, 0.0, p.label)
    return LabeledDataset(series, labels)


# -- CSV ingestion --------------------------------------------------------------

def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise FormatError(f"row {row}, column {col!r}: not a number: {cell!r}") from None
    if not math.isfinite(v):
        raise FormatError(f"row {row}, column {col!r}: non-finite value {cell!r}")
    return v


def _rate_from_times(times: np.ndarray, first_row: int) -> float:
    """Infer the sample rate and insist on uniform spacing."""
    if len(times) < 2:
        raise FormatError("need at least two rows to infer the sample rate")
    diffs = np.diff(times)
    if np.any(diffs <= 0):
        bad = int(np.flatnonzero(diffs <= 0)[0]) + 1
        raise FormatError(f"row {first_row + bad}: timestamps must be strictly increasing")
    dt = (times[-1] - times[0]) / (len(times) - 1)
    expected = times[0] + dt * np.arange(len(times))
    off = np.abs(times - expected) > TIME_TOLERANCE_S
    if np.any(off):
        raise FormatError(f"row {first_row + int(np.flatnonzero(off)[0])}: timestamps are not uniformly spaced")
    return round(1.0 / dt, 6)


def import_wide_csv(path, time_column: str = "Time (sec)", label_columns: Optional[Sequence[str]] = None,
                    trim_tail_s: float = 0.0) -> LabeledDataset:
    """Read a wide table with one amplitude column per class.

    ``label_columns`` defaults to every column except the time column.
    ``trim_tail_s`` drops that many seconds from the end of every series.
    Row numbers in errors count the header as row 1.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        if not sample.strip():
            raise FormatError(f"{path}: file is empty")
        try:
            dialect = csv.Sniffer().sniff(sample, delimiters=",\t;")
        except csv.Error:
            dialect = csv.excel
        rows = [r for r in csv.reader(fh, dialect) if any(c.strip() for c in r)]
    header = [h.strip() for h in rows[0]]
    if time_column not in header:
        raise FormatError(f"{path}: missing column {time_column!r}")
    if label_columns is None:
        label_columns = [h for h in header if h != time_column]
    for col in label_columns:
        if col not in header:
            raise FormatError(f"{path}: missing column {col!r}")
    if len(rows) < 3:
        raise FormatError(f"{path}: need at least two data rows")
    ti = header.index(time_column)
    cols = {c: header.index(c) for c in label_columns}
    times, values = [], {c: [] for c in label_columns}
    for rownum, r in enumerate(rows[1:], start=2):
        if len(r) < len(header):
            raise FormatError(f"{path}: row {rownum} has {len(r)} cells, expected {len(header)}")
        times.append(_parse_float(r[ti], rownum, time_column))
        for c, j in cols.items():
            values[c].append(_parse_float(r[j], rownum, c))
    times = np.asarray(times)
    rate = _rate_from_times(times, 2)
    keep = len(times) - int(round(trim_tail_s * rate))
    if keep < 1:
        raise DataError(f"trimming {trim_tail_s} s leaves no samples")
    series = {c: TimeSeries(np.asarray(values[c][:keep]), rate, float(times[0]), c) for c in label_columns}
    return LabeledDataset(series, list(label_columns))


def export_canonical(dataset: LabeledDataset, path=None) -> str:
    """Long CSV ``time_s,amplitude,label``; written to ``path`` when given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "amplitude", "label"])
    for lab in dataset.labels:
        s = dataset.series[lab]
        for t, x in zip(s.times(), s.samples):
            w.writerow([repr(float(t)), repr(float(x)), lab])
    text = buf.getvalue()
    if path is not None:
        path = Path(path)
        tmp = path.with_name(f".{path.name}.tmp")
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)
    return text


def import_canonical(path) -> LabeledDataset:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: file is empty") from None
        for col in ("time_s", "amplitude", "label"):
            if col not in header:
                raise FormatError(f"{path}: missing column {col!r}")
        ti, ai, li = header.index("time_s"), header.index("amplitude"), header.index("label")
        groups = {}
        for rownum, r in enumerate(reader, start=2):
            if not r:
                continue
            if len(r) < len(header):
                raise FormatError(f"{path}: row {rownum} has {len(r)} cells, expected {len(header)}")
            t = _parse_float(r[ti], rownum, "time_s")
            x = _parse_float(r[ai], rownum, "amplitude")
            groups.setdefault(r[li], ([], [], rownum))
            groups[r[li]][0].append(t)
            groups[r[li]][1].append(x)
    if not groups:
        raise FormatError(f"{path}: no data rows")
    series = {}
    for lab, (ts, xs, first_row) in groups.items():
        ts = np.asarray(ts)
        rate = _rate_from_times(ts, first_row)
        series[lab] = TimeSeries(np.asarray(xs), rate, float(ts[0]), lab)
    return LabeledDataset(series, list(groups))


# -- featurization --------------------------------------------------------------

def featurize_dataset(dataset: LabeledDataset):
    """Window every series, build spectrograms and fit global min-max stats.

    Returns ``(spectrograms, stats)``.  The spectrograms keep raw magnitudes;
    ``stats`` is the affine map applied at training and inference time.
    """
    specs = []
    for lab in dataset.labels:
        s = dataset.series[lab]
        if s.duration_s < WINDOW_S:
            raise DataError(f"series {lab!r} is shorter than one {WINDOW_S:g} s window")
        specs.extend(series_to_spectrograms(s))
    stats: NormStats = fit_norm_stats(specs)
    return specs, stats
