"""
Training a state classifier on synthetic strain data
====================================================

The bundled ``default4`` profiles imitate one normal and three abnormal
loading states.  Each class differs a little in DC level and in one
low-frequency component.  This script trains briefly; the command line
default is 200 epochs.
"""

from strain_sense.dataset import featurize_dataset, generate_synthetic, load_profiles
from strain_sense.optim import OptimizerSpec
from strain_sense.training import TrainConfig, fit_and_evaluate, sweep, sweep_table_csv

data = generate_synthetic(load_profiles("default4"), duration_s=300, seed=7)
specs, stats = featurize_dataset(data)
print(len(specs), "spectrograms,", data.labels)

config = TrainConfig(OptimizerSpec("adam", 0.02), epochs=100, seed=7)
net, report = fit_and_evaluate(specs, config, stats=stats)
print("counts:", report.counts)
print("final train cost %.4f, validation cost %.4f" % (report.train_costs[-1], report.val_costs[-1]))
print("test accuracy %.3f" % report.test_accuracy)
print(report.confusion)

###############################################################################
# A small optimizer sweep.  Every run sees the same split; the row with the
# lowest final validation cost is flagged.

rows = sweep(specs, [OptimizerSpec("gd", 0.0002), OptimizerSpec("adam", 0.02)],
             TrainConfig(epochs=60, seed=7), stats=stats)
print(sweep_table_csv(rows))
