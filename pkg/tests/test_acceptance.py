"""
Acceptance criteria, one test each.

Every test records a PASS/FAIL line through ``record_criterion`` before
asserting, so the terminal summary lists all criteria even when one fails.
The end-to-end tests share one CLI pipeline run (default seed 7).
"""
import json
import time

import numpy as np
import pytest

from conftest import record_criterion
from strain_sense.cli import run
from strain_sense.cnn import init_network, load_model, loss_and_grads, predict_batch
from strain_sense.optim import OptimizerSpec, init_state, optimizer_step
from strain_sense.signal import Spectrogram, TimeSeries, build_spectrogram, dft, read_norm_stats, read_spectrograms
from strain_sense.stream import StreamState, replay_series
from strain_sense.training import TrainConfig, split_dataset, sweep
from strain_sense.tsne import TsneConfig, conditional_probabilities, tsne

pytestmark = pytest.mark.slow


def naive_dft(x):
    """The direct O(n^2) sum, written as a product with the explicit DFT matrix."""
    n = len(x)
    jk = np.outer(np.arange(n), np.arange(n))
    return np.exp(-2j * np.pi * jk / n) @ np.asarray(x, dtype=complex)


def test_dft_oracle():
    rng = np.random.default_rng(2024)
    started = time.perf_counter()
    worst_rel, worst_parseval = 0.0, 0.0
    for i in range(1000):
        n = (1, 2, 20, 64)[i % 4]
        x = rng.normal(size=n) * rng.uniform(0.01, 1000)
        f = dft(x)
        ref = naive_dft(x)
        worst_rel = max(worst_rel, np.linalg.norm(f - ref) / np.linalg.norm(ref))
        e = np.sum(x * x)
        worst_parseval = max(worst_parseval, abs(np.sum(np.abs(f) ** 2) / n - e) / e)
    elapsed = time.perf_counter() - started
    ok = worst_rel <= 1e-10 and worst_parseval <= 1e-9 and elapsed < 5
    record_criterion("DFT oracle", ok,
                     f"max rel err {worst_rel:.2e}, Parseval {worst_parseval:.2e}, {elapsed:.2f} s for 1000 frames")
    assert ok


def test_spectrogram_geometry():
    t = np.arange(60) / 10.0
    spec = build_spectrogram(TimeSeries(np.sin(2 * np.pi * 2.5 * t), sample_rate_hz=10.0))
    rows = np.argmax(spec.bins, axis=0)
    ok = spec.bins.shape == (10, 5) and np.all(rows == 5)
    record_criterion("Spectrogram geometry", ok, f"shape {spec.bins.shape}, argmax rows {rows.tolist()}")
    assert ok


def test_gradient_check():
    # Some random batches put a pre-activation within h of a ReLU kink, where
    # a central difference at h=1e-4 is not a valid oracle; seed 7 does not.
    rng = np.random.default_rng(7)
    net = init_network(4, growth_rate=2, seed=7)
    x = rng.random((4, 1, 10, 5))
    y = np.array([0, 1, 2, 3])
    h = 1e-4
    started = time.perf_counter()
    _, grads = loss_and_grads(net.copy(), x, y)
    worst, worst_name = 0.0, ""
    for name, p in net.params.items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            fp = loss_and_grads(net.copy(), x, y)[0]
            p[idx] = old - h
            fm = loss_and_grads(net.copy(), x, y)[0]
            p[idx] = old
            num[idx] = (fp - fm) / (2 * h)
        rel = np.abs(grads[name] - num) / np.maximum(np.maximum(np.abs(grads[name]), np.abs(num)), 1e-6)
        if rel.max() > worst:
            worst, worst_name = float(rel.max()), name
    elapsed = time.perf_counter() - started
    ok = worst <= 1e-3 and elapsed < 60
    record_criterion("Gradient check", ok,
                     f"{len(net.params)} parameter groups, {net.param_count()} params, "
                     f"worst rel err {worst:.2e} ({worst_name}), {elapsed:.1f} s")
    assert ok


def test_optimizer_oracles():
    spec = OptimizerSpec("adam", 0.02)
    p = {"w": np.array([0.0])}
    optimizer_step(p, {"w": np.array([1.0])}, init_state(p, spec), spec)
    adam_ok = abs(p["w"][0] - (-0.02)) <= 1e-6

    rng = np.random.default_rng(0)
    spec = OptimizerSpec("adagrad", 0.002)
    p = {"w": rng.normal(size=(4, 4))}
    state = init_state(p, spec)
    monotone = True
    for _ in range(100):
        before = state["accum"]["w"].copy()
        optimizer_step(p, {"w": rng.normal(size=(4, 4))}, state, spec)
        monotone &= bool(np.all(state["accum"]["w"] >= before))

    spec = OptimizerSpec("gd", 0.0002)
    p = {"w": np.array([1.0])}
    optimizer_step(p, {"w": np.array([0.5])}, init_state(p, spec), spec)
    gd_ok = p["w"][0] == 1.0 - 0.0002 * 0.5

    ok = adam_ok and monotone and gd_ok
    record_criterion("Optimizer oracles", ok, f"adam {adam_ok}, adagrad monotone {monotone}, gd exact {gd_ok}")
    assert ok


def _labeled(counts):
    return [Spectrogram(np.zeros((10, 5)), 0.0, f"c{c}") for c, n in enumerate(counts) for _ in range(n)]


def test_split_counts():
    a = split_dataset(_labeled([106] * 4), 0.85, seed=7)
    b = split_dataset(_labeled([162] * 3), 0.85, seed=7)
    got = ((len(a[0]), len(a[1])), (len(b[0]), len(b[1])))
    ok = got == ((360, 64), (413, 73))
    record_criterion("Split counts", ok, f"424 -> {got[0][0]}/{got[0][1]}, 486 -> {got[1][0]}/{got[1][1]}")
    assert ok


# -- end to end ----------------------------------------------------------------------

def _pipeline(d):
    """gen -> featurize -> train -> eval -> embed with default settings and seed 7."""
    timings = {}
    steps = [
        ("gen", ["gen", "--profiles", "default4", "--duration", "700", "-o", str(d / "data.csv")]),
        ("featurize", ["featurize", str(d / "data.csv"), "-o", str(d / "specs.jsonl")]),
        ("train", ["train", str(d / "specs.jsonl"), "--optimizer", "adam", "--lr", "0.02",
                   "--report-dir", str(d / "reports"), "-o", str(d / "model.json")]),
        ("eval", ["eval", str(d / "specs.jsonl"), "--model", str(d / "model.json"),
                  "--report-dir", str(d / "eval")]),
        ("embed", ["embed", str(d / "specs.jsonl"), "--model", str(d / "model.json"), "-o", str(d / "embed")]),
    ]
    for name, argv in steps:
        started = time.perf_counter()
        code = run(argv)
        timings[name] = time.perf_counter() - started
        assert code == 0, f"{name} failed"
    return timings


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    first = tmp_path_factory.mktemp("run1")
    second = tmp_path_factory.mktemp("run2")
    t1 = _pipeline(first)
    t2 = _pipeline(second)
    return first, second, t1, t2


def test_synthetic_state_experiment(pipeline_runs):
    first, second, t1, t2 = pipeline_runs
    report = json.loads((first / "reports" / "report.json").read_text())
    n_specs = len(read_spectrograms(first / "specs.jsonl"))
    acc = report["test_accuracy"]
    same = (first / "model.json").read_bytes() == (second / "model.json").read_bytes()
    runtime = t1["train"]
    ok = n_specs >= 424 and acc >= 0.89 and same and runtime < 300
    record_criterion("Synthetic state experiment", ok,
                     f"{n_specs} spectrograms, test accuracy {acc:.4f} on {report['counts']['test']} items, "
                     f"deterministic {same}, train {runtime:.1f} s")
    assert ok


def test_sweep_ordering(pipeline_runs):
    first, _, _, _ = pipeline_runs
    specs = read_spectrograms(first / "specs.jsonl")
    stats = read_norm_stats(first / "specs.norm.json")
    grid = [OptimizerSpec.parse(g) for g in ("gd:0.0002", "adagrad:0.002", "adam:0.04", "adam:0.02")]
    started = time.perf_counter()
    rows = sweep(specs, grid, TrainConfig(seed=7), stats=stats)
    elapsed = time.perf_counter() - started
    gd, ada, _, best = (r.final_val_cost for r in rows)
    ok = best < gd and best < ada
    table = ", ".join(f"{r.optimizer.display_name} {r.optimizer.learning_rate:g}: {r.final_val_cost:.4f}" for r in rows)
    optimal = next(r for r in rows if r.optimal)
    record_criterion("Sweep ordering", ok,
                     f"{table}; optimum {optimal.optimizer.display_name} {optimal.optimizer.learning_rate:g}, "
                     f"{elapsed:.0f} s")
    assert ok


def test_tsne_criterion():
    rng = np.random.default_rng(13)
    centers = rng.normal(0, 8, size=(3, 10))
    x = np.concatenate([c + rng.normal(0, 1, size=(100, 10)) for c in centers])
    labels = np.repeat(np.arange(3), 100)
    cfg = TsneConfig(perplexity=13, early_exaggeration=4)
    started = time.perf_counter()
    _, _, h = conditional_probabilities(x, cfg.perplexity)
    emb = tsne(x, cfg)
    elapsed = time.perf_counter() - started
    calib = float(np.max(np.abs(2.0 ** h - 13)))
    y = emb.coords
    cents = np.array([y[labels == c].mean(axis=0) for c in range(3)])
    spread = max(float(np.sqrt(np.mean(np.sum((y[labels == c] - cents[c]) ** 2, axis=1)))) for c in range(3))
    inter = min(float(np.linalg.norm(cents[a] - cents[b])) for a in range(3) for b in range(a + 1, 3))
    ok = calib <= 1e-3 and emb.kl < emb.kl_after_exaggeration and inter > 3 * spread and elapsed < 120
    record_criterion("t-SNE", ok,
                     f"max |2^H - 13| {calib:.1e}, KL {emb.kl_after_exaggeration:.3f} -> {emb.kl:.3f}, "
                     f"separation ratio {inter / spread:.2f}, {elapsed:.1f} s for N=300")
    assert ok


def test_streaming_equivalence(pipeline_runs):
    first, _, _, _ = pipeline_runs
    net = load_model(first / "model.json")
    stats = net.norm_stats
    lines = (first / "data.csv").read_text().splitlines()[1:]
    by_label = {}
    for line in lines:
        t, x, lab = line.split(",", 2)
        by_label.setdefault(lab, ([], []))
        by_label[lab][0].append(float(t))
        by_label[lab][1].append(float(x))
    specs = read_spectrograms(first / "specs.jsonl")
    offline_idx, _ = predict_batch(net, specs, stats)
    offline = [net.label_map[i] for i in offline_idx]

    per_chunk = {}
    latencies = []
    for chunk in (1, 7, 60, 600):
        labels = []
        for lab in net.label_map:
            ts, xs = by_label[lab]
            series = TimeSeries(np.array(xs), 10.0, ts[0], lab)
            _, events = replay_series(StreamState.start(net, stats), series, chunk=chunk)
            labels.extend(e.predicted_label for e in events)
            latencies.extend(e.latency_s for e in events)
        per_chunk[chunk] = labels
    identical = per_chunk[60] == offline
    invariant = all(v == per_chunk[60] for v in per_chunk.values())
    worst = max(latencies)
    ok = identical and invariant and worst < 0.1
    record_criterion("Streaming equivalence", ok,
                     f"{len(offline)} windows match offline {identical}, chunk invariant {invariant}, "
                     f"max latency {worst * 1000:.1f} ms")
    assert ok


def test_determinism(pipeline_runs):
    first, second, _, _ = pipeline_runs
    files = ["model.json", "reports/report.json", "reports/cost_curve.csv", "reports/confusion.csv",
             "eval/confusion.csv", "embed/embedding.csv", "embed/embedding.svg"]
    diff = [f for f in files if (first / f).read_bytes() != (second / f).read_bytes()]
    ok = not diff
    record_criterion("Determinism", ok, f"{len(files)} files byte-identical" if ok else f"differs: {diff}")
    assert ok
