"""
Importing a wide strain table
=============================

Recorded data often arrives as one time column followed by one column per
class.  The importer checks that timestamps are evenly spaced, infers the
sample rate, and can drop a tail of unreliable samples.
"""

import tempfile
from pathlib import Path

import numpy as np

from strain_sense.dataset import export_canonical, featurize_dataset, import_canonical, import_wide_csv

rng = np.random.default_rng(0)
n = 900
t = (np.arange(n) + 1) / 10.0
cols = {"Normal State": 365.7, "Abnormal State 1": 359.9, "Abnormal State 2": 359.9, "Abnormal State 3": 355.5}

with tempfile.TemporaryDirectory() as tmp:
    wide = Path(tmp) / "states.csv"
    lines = ["Time (sec)," + ",".join(cols)]
    for i in range(n):
        lines.append("%.1f," % t[i] + ",".join("%.2f" % (dc + rng.normal(0, 0.3)) for dc in cols.values()))
    wide.write_text("\n".join(lines) + "\n")

    data = import_wide_csv(wide, trim_tail_s=20)
    print("rate %.1f Hz, %d samples per class" % (data.sample_rate_hz, len(data.series["Normal State"])))

    ###########################################################################
    # The canonical long format round-trips exactly.

    canon = Path(tmp) / "states_long.csv"
    export_canonical(data, canon)
    print(canon.read_text().splitlines()[:3])
    back = import_canonical(canon)
    print("identical:", all(np.array_equal(back.series[k].samples, data.series[k].samples) for k in data.labels))

    specs, stats = featurize_dataset(back)
    print(len(specs), "spectrograms")
