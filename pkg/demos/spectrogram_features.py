"""
From strain samples to a 10x5 spectrogram
=========================================

A six second window sampled at 10 Hz holds 60 samples.  It is cut into
five 20-sample frames with a hop of 10, each frame is Fourier transformed,
and the first ten magnitudes of each frame become one spectrogram column.
"""

import numpy as np

from strain_sense.signal import TimeSeries, build_spectrogram, normalize_spectrograms, series_to_spectrograms

# A pure 2.5 Hz tone lands in frequency row 5 (row k is k * 0.5 Hz).
t = np.arange(60) / 10.0
tone = TimeSeries(np.sin(2 * np.pi * 2.5 * t))
spec = build_spectrogram(tone)
print("shape:", spec.bins.shape)
print("dominant row per column:", np.argmax(spec.bins, axis=0))

###############################################################################
# A longer recording is cut into back-to-back windows.  Leftover samples that
# do not fill a window are dropped.

rng = np.random.default_rng(0)
series = TimeSeries(360 + np.sin(2 * np.pi * 1.0 * np.arange(6659) / 10) + rng.normal(0, 0.3, 6659),
                    label="Abnormal State 1")
specs = series_to_spectrograms(series)
print(len(specs), "spectrograms from", len(series.samples), "samples")

###############################################################################
# Normalization is a single global min-max map.  The statistics are kept so
# that new data (including a live stream) is scaled the same way.

normed, stats = normalize_spectrograms(specs)
print("stats:", stats)
print("row 0 (DC) vs row 2 (1 Hz), first column:", normed[0].bins[0, 0], normed[0].bins[2, 0])
