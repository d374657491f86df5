"""
Window-by-window classification of a live sample stream.

``feed`` is a pure transition: buffered samples plus new ones are cut into
60-sample windows, each window is classified, and the leftover samples are
carried in the returned state.  ``watch`` tails a growing CSV file and
drives ``feed`` with whatever rows have been appended since the last poll.
"""
from __future__ import annotations

import json
import logging
import math
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .cnn import Network, predict_batch
from .errors import ConfigurationError, StreamError
from .signal import SAMPLE_RATE_HZ, WINDOW_LEN, NormStats, TimeSeries, build_spectrogram

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassificationEvent:
    window_index: int
    window_start_s: float
    predicted_label: str
    probabilities: dict
    out_of_range: bool = False
    emitted_at: float = field(default=0.0, compare=False)
    latency_s: float = field(default=0.0, compare=False)

    def to_record(self) -> dict:
        return {
            "window_index": self.window_index,
            "window_start_s": self.window_start_s,
            "label": self.predicted_label,
            "probs": {k: float(v) for k, v in self.probabilities.items()},
            "out_of_range": self.out_of_range,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())


@dataclass(frozen=True)
class StreamState:
    net: Network = field(repr=False)
    stats: Optional[NormStats] = None
    times: tuple = ()
    samples: tuple = ()
    next_window_index: int = 0
    last_time_s: Optional[float] = None
    samples_seen: int = 0

    def __post_init__(self):
        if self.net.label_map is None:
            raise ConfigurationError("stream classification needs a network with a label map")
        if len(self.samples) >= WINDOW_LEN:
            raise StreamError("buffer holds a complete window; feed should have consumed it")

    @classmethod
    def start(cls, net: Network, stats: Optional[NormStats] = None) -> "StreamState":
        return cls(net, stats if stats is not None else net.norm_stats)

    @property
    def buffered(self) -> int:
        return len(self.samples)


def _as_pairs(new_samples):
    arr = np.asarray(new_samples, dtype=np.float64)
    if arr.size == 0:
        return np.zeros(0), np.zeros(0)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise StreamError("samples must be (time_s, amplitude) pairs")
    return arr[:, 0], arr[:, 1]


def classify_window(state: StreamState, index: int, times, values) -> ClassificationEvent:
    started = time.perf_counter()
    window = TimeSeries(np.asarray(values), SAMPLE_RATE_HZ, max(float(times[0]), 0.0))
    spec = build_spectrogram(window)
    pred, probs = predict_batch(state.net, [spec], state.stats)
    labels = state.net.label_map
    oor = state.stats.out_of_range(spec.bins) if state.stats is not None else False
    return ClassificationEvent(
        window_index=index,
        window_start_s=float(times[0]),
        predicted_label=labels[int(pred[0])],
        probabilities={lab: float(p) for lab, p in zip(labels, probs[0])},
        out_of_range=oor,
        emitted_at=time.time(),
        latency_s=time.perf_counter() - started,
    )


def feed(state: StreamState, new_samples) -> tuple:
    """Append ``(time_s, amplitude)`` pairs and classify every completed window.

    Returns ``(new_state, events)``.  Emits exactly
    ``(state.buffered + len(new_samples)) // 60`` events.
    """
    t_new, x_new = _as_pairs(new_samples)
    if not (np.all(np.isfinite(t_new)) and np.all(np.isfinite(x_new))):
        raise StreamError("stream samples must be finite")
    prev = state.last_time_s
    for i, t in enumerate(t_new):
        if prev is not None and not t > prev:
            raise StreamError(
                f"sample {state.samples_seen + i} at t={t!r} s is not after the previous sample at t={prev!r} s"
            )
        prev = t
    times = np.concatenate([np.asarray(state.times, dtype=np.float64), t_new])
    values = np.concatenate([np.asarray(state.samples, dtype=np.float64), x_new])
    events = []
    index = state.next_window_index
    n_windows = len(values) // WINDOW_LEN
    for w in range(n_windows):
        sl = slice(w * WINDOW_LEN, (w + 1) * WINDOW_LEN)
        events.append(classify_window(state, index, times[sl], values[sl]))
        index += 1
    rest = n_windows * WINDOW_LEN
    new_state = StreamState(
        net=state.net,
        stats=state.stats,
        times=tuple(times[rest:].tolist()),
        samples=tuple(values[rest:].tolist()),
        next_window_index=index,
        last_time_s=prev,
        samples_seen=state.samples_seen + len(t_new),
    )
    return new_state, events


def replay_series(state: StreamState, series: TimeSeries, chunk: int = WINDOW_LEN):
    """Push a whole series through ``feed`` in chunks of ``chunk`` samples."""
    if chunk < 1:
        raise ConfigurationError("chunk size must be positive")
    pairs = np.column_stack([series.times(), series.samples])
    events = []
    for i in range(0, len(pairs), chunk):
        state, ev = feed(state, pairs[i:i + chunk])
        events.extend(ev)
    return state, events


# -- file tailing -------------------------------------------------------------

class _RowParser:
    """Incremental parser for ``time_s,amplitude[,label]`` rows."""

    def __init__(self):
        self.time_col = 0
        self.amp_col = 1
        self.header_seen = False
        self.lineno = 0

    def parse(self, line: str):
        self.lineno += 1
        cells = [c.strip() for c in line.split(",")]
        if not self.header_seen:
            self.header_seen = True
            if "time_s" in cells and "amplitude" in cells:
                self.time_col, self.amp_col = cells.index("time_s"), cells.index("amplitude")
                return None
        try:
            t = float(cells[self.time_col])
            x = float(cells[self.amp_col])
        except (IndexError, ValueError):
            log.warning("line %d: skipping malformed row %r", self.lineno, line)
            return None
        if not (math.isfinite(t) and math.isfinite(x)):
            log.warning("line %d: skipping non-finite row %r", self.lineno, line)
            return None
        return t, x


def _make_sink(sink):
    if sink is None:
        return lambda ev: None
    if callable(sink):
        return sink
    if hasattr(sink, "write"):
        def write(ev):
            sink.write(ev.to_json() + "\n")
            if hasattr(sink, "flush"):
                sink.flush()
        return write
    raise ConfigurationError("sink must be callable or have a write() method")


def run_hook(command: str, event: ClassificationEvent):
    """Run a shell command with the event JSON on its standard input."""
    try:
        subprocess.run(command, shell=True, input=event.to_json() + "\n", text=True, check=False, timeout=30)
    except (OSError, subprocess.SubprocessError) as exc:
        log.warning("event hook failed: %s", exc)


def watch(path, net: Network, stats: Optional[NormStats] = None, poll_interval_ms: int = 200,
          sink=None, stop: Optional[threading.Event] = None, once: bool = False,
          idle_timeout_s: Optional[float] = None, on_event: Optional[str] = None) -> StreamState:
    """Tail ``path`` and classify each completed window.

    Runs until ``stop`` is set, until ``idle_timeout_s`` passes without new
    data, or (with ``once=True``) after the current file content has been
    consumed.  Consumed bytes are never re-read.  A malformed row is logged
    and skipped; a file that shrinks raises :class:`StreamError`.
    """
    path = Path(path)
    emit = _make_sink(sink)
    state = StreamState.start(net, stats)
    parser = _RowParser()
    offset = 0
    pending = b""
    interval = poll_interval_ms / 1000.0
    last_growth = time.monotonic()
    while True:
        if stop is not None and stop.is_set():
            break
        try:
            size = path.stat().st_size
        except FileNotFoundError:
            size = None
        if size is not None and size < offset:
            raise StreamError(f"{path} was truncated (size {size} < consumed {offset})")
        if size is not None and size > offset:
            with path.open("rb") as fh:
                fh.seek(offset)
                chunk = fh.read(size - offset)
            offset += len(chunk)
            last_growth = time.monotonic()
            data = pending + chunk
            lines = data.split(b"\n")
            pending = lines.pop()
            rows = []
            for raw in lines:
                line = raw.decode("utf-8", errors="replace").strip()
                if not line:
                    continue
                row = parser.parse(line)
                if row is not None:
                    rows.append(row)
            if rows:
                state, events = feed(state, rows)
                for ev in events:
                    emit(ev)
                    if on_event:
                        run_hook(on_event, ev)
            continue_now = True
        else:
            continue_now = False
        if once and not continue_now:
            if pending.strip():
                row = parser.parse(pending.decode("utf-8", errors="replace").strip())
                pending = b""
                if row is not None:
                    state, events = feed(state, [row])
                    for ev in events:
                        emit(ev)
                        if on_event:
                            run_hook(on_event, ev)
            break
        if idle_timeout_s is not None and time.monotonic() - last_growth > idle_timeout_s:
            break
        if not continue_now:
            if stop is not None:
                if stop.wait(interval):
                    break
            else:
                time.sleep(interval)
    return state


def events_to_jsonl(events: Sequence[ClassificationEvent]) -> str:
    return "".join(ev.to_json() + "\n" for ev in events)


def collect(events: list) -> Callable:
    """Sink that appends events to ``events``."""
    return events.append
