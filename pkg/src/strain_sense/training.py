"""
Training loop, stratified splitting, evaluation and optimizer sweeps.

Costs are mean softmax cross-entropy.  Everything is seeded: the same
config and seed reproduce parameters and cost curves bit for bit.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .cnn import (
    Network,
    cross_entropy,
    forward,
    init_network,
    loss_and_grads,
    predict_batch,
    recalibrate_batchnorm,
    spectrograms_to_batch,
)
from .errors import ConfigurationError, DataError
from .optim import OptimizerSpec, init_state, optimizer_step
from .signal import NormStats, Spectrogram, fit_norm_stats

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    epochs: int = 200
    batch_size: int = 32
    seed: int = 7
    validation_fraction: float = 0.15
    train_fraction: float = 0.85
    growth_rate: int = 8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2 (batchnorm needs batch statistics)")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigurationError("validation_fraction must lie in [0, 1)")
        if not 0 < self.train_fraction < 1:
            raise ConfigurationError("train_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = {"kind": self.optimizer.kind, "learning_rate": self.optimizer.learning_rate}
        return d


@dataclass
class TrainReport:
    label_map: list
    train_costs: list
    val_costs: list
    train_accuracy: float
    val_accuracy: Optional[float]
    test_accuracy: Optional[float] = None
    confusion: Optional[np.ndarray] = None
    wall_clock_s: float = 0.0
    config: Optional[TrainConfig] = None
    counts: dict = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        """JSON-ready form.  Timing is left out by default so that reruns
        with the same seed write byte-identical files."""
        d = {
            "label_map": list(self.label_map),
            "train_costs": [float(c) for c in self.train_costs],
            "val_costs": [None if math.isnan(c) else float(c) for c in self.val_costs],
            "train_accuracy": self.train_accuracy,
            "val_accuracy": self.val_accuracy,
            "test_accuracy": self.test_accuracy,
            "confusion": None if self.confusion is None else self.confusion.tolist(),
            "counts": dict(self.counts),
            "config": None if self.config is None else self.config.to_dict(),
        }
        if include_timing:
            d["wall_clock_s"] = self.wall_clock_s
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2) + "\n"

    def cost_curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_cost", "val_cost"])
        for i, (tc, vc) in enumerate(zip(self.train_costs, self.val_costs), 1):
            w.writerow([i, repr(float(tc)), "" if math.isnan(vc) else repr(float(vc))])
        return buf.getvalue()


# -- labels and splitting -----------------------------------------------------

def label_order(specs: Sequence[Spectrogram]) -> list:
    """Distinct labels in order of first appearance."""
    seen = {}
    for s in specs:
        if s.label is None:
            raise DataError("every spectrogram must carry a label")
        seen.setdefault(s.label, None)
    return list(seen)


def encode_labels(specs: Sequence[Spectrogram], label_map: Sequence[str]) -> np.ndarray:
    index = {lab: i for i, lab in enumerate(label_map)}
    out = np.empty(len(specs), dtype=np.int64)
    for i, s in enumerate(specs):
        if s.label is None:
            raise DataError(f"item {i} is unlabeled")
        if s.label not in index:
            raise DataError(f"item {i} has label {s.label!r} outside the label map {list(label_map)}")
        out[i] = index[s.label]
    return out


def split_dataset(specs: Sequence[Spectrogram], train_fraction: float = 0.85, seed: int = 7,
                  label_map: Optional[Sequence[str]] = None):
    """Stratified, shuffled split into ``(train, test)``.

    The train portion holds ``floor(N * train_fraction)`` items.  Each label
    first gets the floor of its share; leftover slots go to the labels with
    the largest fractional remainders (earlier labels win ties).  Items keep
    their original relative order inside each portion.
    """
    if not 0 < train_fraction < 1:
        raise ConfigurationError("train_fraction must lie in (0, 1)")
    if label_map is None:
        label_map = label_order(specs)
    y = encode_labels(specs, label_map)
    n = len(specs)
    per_class = [np.flatnonzero(y == c) for c in range(len(label_map))]
    for c, idx in enumerate(per_class):
        if len(idx) == 0:
            raise DataError(f"class {label_map[c]!r} has no items")
    # tiny epsilon guards products like 424 * 0.85 = 360.39999...
    total = int(math.floor(n * train_fraction + 1e-9))
    shares = [len(idx) * train_fraction for idx in per_class]
    take = [int(math.floor(s + 1e-9)) for s in shares]
    remainder = total - sum(take)
    order = sorted(range(len(per_class)), key=lambda c: (-(shares[c] - take[c]), c))
    for c in order[:remainder]:
        take[c] += 1
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c, idx in enumerate(per_class):
        perm = rng.permutation(idx)
        train_idx.extend(perm[:take[c]])
        test_idx.extend(perm[take[c]:])
    train_idx.sort()
    test_idx.sort()
    return [specs[i] for i in train_idx], [specs[i] for i in test_idx]


# -- evaluation ---------------------------------------------------------------

def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Rows are ground truth, columns are predictions."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def evaluate(net: Network, test_set: Sequence[Spectrogram], stats: Optional[NormStats] = None):
    """Return ``(accuracy, confusion_matrix)`` of ``net`` on ``test_set``."""
    if len(test_set) == 0:
        raise DataError("cannot evaluate on an empty test set")
    if net.label_map is None:
        raise ConfigurationError("network has no label map")
    if stats is None:
        stats = net.norm_stats
    y = encode_labels(test_set, net.label_map)
    pred, _ = predict_batch(net, test_set, stats)
    cm = confusion_matrix(y, pred, net.num_classes)
    return float(np.trace(cm) / len(y)), cm


def _accuracy(net, x, y) -> float:
    probs, _ = forward(net, x, "infer")
    return float(np.mean(np.argmax(probs, axis=1) == y))


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    chunks = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    # batchnorm cannot train on a single item; fold it into the previous batch
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


# -- training -----------------------------------------------------------------

def train(train_set: Sequence[Spectrogram], config: TrainConfig, num_classes: Optional[int] = None,
          label_map: Optional[Sequence[str]] = None, stats: Optional[NormStats] = None,
          split_seed: Optional[int] = None):
    """Fit a fresh network on ``train_set``.

    A stratified ``config.validation_fraction`` slice of the training items
    is held out to track validation cost; it is drawn with ``split_seed``
    (default ``config.seed``).  If ``stats`` is omitted the
    normalization is fitted on the training items.  Returns
    ``(network, TrainReport)``.
    """
    started = time.perf_counter()
    if len(train_set) == 0:
        raise DataError("training set is empty")
    if label_map is None:
        label_map = label_order(train_set)
    label_map = list(label_map)
    if num_classes is None:
        num_classes = len(label_map)
    if num_classes != len(label_map):
        raise ConfigurationError(f"num_classes={num_classes} but label map has {len(label_map)} labels")
    y_all = encode_labels(train_set, label_map)
    missing = [label_map[c] for c in range(num_classes) if not np.any(y_all == c)]
    if missing:
        raise DataError(f"classes absent from the training portion: {missing}")
    if stats is None:
        stats = fit_norm_stats(train_set)

    if config.validation_fraction > 0:
        fit_set, val_set = split_dataset(
            train_set, 1.0 - config.validation_fraction,
            config.seed if split_seed is None else split_seed, label_map,
        )
    else:
        fit_set, val_set = list(train_set), []
    if len(fit_set) < 2:
        raise DataError("need at least two items to train with batchnorm")
    x = spectrograms_to_batch(fit_set, stats)
    y = encode_labels(fit_set, label_map)
    xv = spectrograms_to_batch(val_set, stats) if val_set else None
    yv = encode_labels(val_set, label_map) if val_set else None

    net = init_network(num_classes, config.growth_rate, seed=config.seed)
    net.label_map = label_map
    net.norm_stats = stats
    opt_state = init_state(net.params, config.optimizer)
    rng = np.random.default_rng([config.seed, 1])

    train_costs, val_costs = [], []
    for epoch in range(config.epochs):
        total = 0.0
        for idx in _batches(len(x), config.batch_size, rng):
            loss, grads = loss_and_grads(net, x[idx], y[idx])
            optimizer_step(net.params, grads, opt_state, config.optimizer)
            total += loss * len(idx)
        train_costs.append(total / len(x))
        recalibrate_batchnorm(net, x)
        if xv is not None:
            probs, _ = forward(net, xv, "infer")
            val_costs.append(cross_entropy(probs, yv))
        else:
            val_costs.append(float("nan"))
        if not np.isfinite(train_costs[-1]):
            log.warning("training cost diverged at epoch %d", epoch + 1)
        log.debug("epoch %d train %.5f val %.5f", epoch + 1, train_costs[-1], val_costs[-1])
    net.trained = True

    report = TrainReport(
        label_map=label_map,
        train_costs=train_costs,
        val_costs=val_costs,
        train_accuracy=_accuracy(net, x, y),
        val_accuracy=_accuracy(net, xv, yv) if xv is not None else None,
        config=config,
        counts={"fit": len(fit_set), "validation": len(val_set)},
    )
    report.wall_clock_s = time.perf_counter() - started
    return net, report


def fit_and_evaluate(specs: Sequence[Spectrogram], config: TrainConfig,
                     label_map: Optional[Sequence[str]] = None, stats: Optional[NormStats] = None):
    """Split 85/15 (per ``config.train_fraction``), train, then score the test part."""
    started = time.perf_counter()
    if label_map is None:
        label_map = label_order(specs)
    train_set, test_set = split_dataset(specs, config.train_fraction, config.seed, label_map)
    net, report = train(train_set, config, len(label_map), label_map, stats)
    report.test_accuracy, report.confusion = evaluate(net, test_set, net.norm_stats)
    report.counts = {"total": len(specs), "train": len(train_set), "test": len(test_set), **report.counts}
    report.wall_clock_s = time.perf_counter() - started
    return net, report


# -- sweeps -------------------------------------------------------------------

@dataclass
class SweepRow:
    optimizer: OptimizerSpec
    final_val_cost: float
    final_train_cost: float
    test_accuracy: float
    optimal: bool = False


def _sweep_job(args):
    train_set, test_set, cfg, label_map, stats, split_seed = args
    net, report = train(train_set, cfg, len(label_map), label_map, stats, split_seed)
    acc, _ = evaluate(net, test_set, stats)
    return report, acc


def sweep(specs: Sequence[Spectrogram], optimizers: Sequence[OptimizerSpec], base: TrainConfig,
          label_map: Optional[Sequence[str]] = None, stats: Optional[NormStats] = None,
          workers: int = 1) -> list:
    """Train one model per optimizer on a shared split.

    Every run sees the same train/validation/test partition; run ``i``
    initialises and shuffles with ``base.seed + i`` so the table does not
    depend on ``workers``.  The row with the lowest final validation cost is
    flagged optimal (lowest index wins ties).
    """
    if len(optimizers) == 0:
        raise ConfigurationError("sweep needs at least one optimizer")
    if label_map is None:
        label_map = label_order(specs)
    train_set, test_set = split_dataset(specs, base.train_fraction, base.seed, label_map)
    if stats is None:
        stats = fit_norm_stats(train_set)
    jobs = [
        (train_set, test_set, replace(base, optimizer=opt, seed=base.seed + i), list(label_map), stats, base.seed)
        for i, opt in enumerate(optimizers)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = []
    for opt, (report, acc) in zip(optimizers, results):
        val = report.val_costs[-1] if not math.isnan(report.val_costs[-1]) else report.train_costs[-1]
        rows.append(SweepRow(opt, float(val), float(report.train_costs[-1]), acc))
    costs = [r.final_val_cost if np.isfinite(r.final_val_cost) else np.inf for r in rows]
    rows[int(np.argmin(costs))].optimal = True
    return rows


def sweep_table_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["optimizer", "learning_rate", "cost", "train_cost", "test_accuracy", "optimal"])
    for r in rows:
        w.writerow([
            r.optimizer.display_name,
            repr(r.optimizer.learning_rate),
            repr(r.final_val_cost),
            repr(r.final_train_cost),
            repr(r.test_accuracy),
            "yes" if r.optimal else "",
        ])
    return buf.getvalue()
