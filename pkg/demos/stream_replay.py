"""
Classifying a stream window by window
=====================================

``feed`` takes the current state and some new (time, amplitude) pairs and
returns a new state plus one event per completed 60-sample window.  How the
samples are chunked does not change the events.
"""

import numpy as np

from strain_sense.dataset import featurize_dataset, generate_synthetic, load_profiles
from strain_sense.optim import OptimizerSpec
from strain_sense.stream import StreamState, feed, replay_series
from strain_sense.training import TrainConfig, fit_and_evaluate

profiles = load_profiles("impact3")
specs, stats = featurize_dataset(generate_synthetic(profiles, 300, seed=3))
net, report = fit_and_evaluate(specs, TrainConfig(OptimizerSpec("adam", 0.02), epochs=100, seed=3), stats=stats)
print("impact model test accuracy %.3f" % report.test_accuracy)

###############################################################################
# A fresh hammer recording, replayed 13 samples at a time.

hammer = generate_synthetic(profiles, 60, seed=99).series["Hammer"]
state, events = replay_series(StreamState.start(net, stats), hammer, chunk=13)
for ev in events:
    print(ev.to_json())

###############################################################################
# Fewer than 60 samples only fill the buffer.

pairs = np.column_stack([np.arange(59) / 10.0, np.full(59, 358.5)])
state, events = feed(StreamState.start(net, stats), pairs)
print(len(events), "events,", state.buffered, "samples buffered")
