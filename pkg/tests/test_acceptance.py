"""Acceptance criteria 1 to 9.

Each test prints one PASS/FAIL line (also collected in the terminal summary).
The trained-network criteria run the full-size ``repro`` pipelines through the
CLI; set ``RADIUSNET_ACCEPTANCE_DIR`` to keep their outputs.  Expect roughly
two hours of single-core CPU time for the whole module.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from _acceptance_log import record
from _oracles import finite_difference_grads, gradient_cases, max_relative_error, random_network
from radiusnet import cli
from radiusnet.analyzer import intensity_slope
from radiusnet.designer import REF_DELTA, design_relu_positive, design_sigmoid, design_two_layer
from radiusnet.manifest import hash_outputs
from radiusnet.nncore import backward_batch, forward_batch, predict
from radiusnet.synthgen import GenConfig, SignalParams, clean_dataset, gen_dataset

CLEAN_256 = dict(D=256, sigma_g=0.0, sigma_n=0.0)


@pytest.fixture(scope="session")
def runs_dir(tmp_path_factory):
    path = os.environ.get("RADIUSNET_ACCEPTANCE_DIR")
    if path:
        Path(path).mkdir(parents=True, exist_ok=True)
        return Path(path)
    return tmp_path_factory.mktemp("acceptance")


def _repro(runs_dir: Path, table: str, name: str | None = None) -> dict:
    out = runs_dir / (name or table)
    code = cli.run(["repro", table, "--out", str(out)])
    assert code == 0, f"repro {table} exited with {code}"
    return json.loads((out / "comparison.json").read_text())


@pytest.fixture(scope="session")
def table1(runs_dir):
    return _repro(runs_dir, "table1")


@pytest.fixture(scope="session")
def table3(runs_dir):
    return _repro(runs_dir, "table3")


@pytest.fixture(scope="session")
def figd(runs_dir):
    return _repro(runs_dir, "figD")


def _checks(comp, *, include=(), exclude=()):
    rows = comp["checks"]
    if include:
        rows = [c for c in rows if any(s in c["name"] for s in include)]
    return [c for c in rows if not any(s in c["name"] for s in exclude)]


def _summarise(rows):
    return "; ".join(f"{c['name']}={c['obtained'] if isinstance(c['obtained'], str) else round(c['obtained'], 4)}" + ("" if c["passed"] else " (fail)") for c in rows)


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    worst = 0.0
    for dims, kind, C, depth, seed in gradient_cases():
        rng = np.random.default_rng(seed)
        net = random_network(rng, dims, C, depth, kind)
        X = rng.normal(size=(2,) + (net.D,) * dims)
        w = rng.normal(size=2)
        analytic = backward_batch(net, forward_batch(net, X, keep=False), w)
        worst = max(worst, max_relative_error(analytic, finite_difference_grads(net, X, w)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 60
    record(1, ok, f"20 random nets, worst relative error {worst:.2e} (< 1e-5), {elapsed:.1f} s (< 60 s)")
    assert ok


def test_criterion_2_prop1_design():
    net = design_relu_positive(256)
    ds = gen_dataset(GenConfig(polarity_mode="positive_only", **CLEAN_256), 1000, 2)
    err = np.abs(predict(net, ds.X) - ds.r).max()
    # invariance: shift both intensities, and scale the contrast, keeping contrast >= delta
    rng = np.random.default_rng(0)
    worst_inv = 0.0
    base = predict(net, ds.X[:200])
    for i in range(200):
        p = ds[i].params
        c = p.f - p.b
        shift = rng.uniform(-p.b, 1 - p.f)
        scale = rng.uniform(REF_DELTA / c, (1 - p.b) / c)
        moved = [SignalParams(p.r, p.b + shift, p.f + shift), SignalParams(p.r, p.b, p.b + scale * c)]
        est = predict(net, clean_dataset(moved, 256).X)
        worst_inv = max(worst_inv, float(np.abs(est - base[i]).max()))
    ok = err <= 1 / 255 and worst_inv <= 1e-9
    record(2, ok, f"D=256 max |err| = {err * 255:.3f} grid steps (<= 1); shift/scale invariance {worst_inv:.1e} (<= 1e-9)")
    assert ok


def test_criterion_3_prop2_failure_certificate():
    net = design_relu_positive(256)
    fits = [intensity_slope(net, r, polarity=-1) for r in (0.15, 0.25, 0.35)]
    ok = all(f.significant for f in fits)
    detail = ", ".join(f"r={f.r}: |slope|/se = {abs(f.slope) / f.stderr:.3g}" if f.stderr > 0 else f"r={f.r}: slope {f.slope:.3g}, se 0" for f in fits)
    record(3, ok, f"negative polarity, {detail} (> 10)")
    assert ok


def test_criterion_4_two_layer_and_sigmoid():
    ds = gen_dataset(GenConfig(polarity_mode="both", **CLEAN_256), 1000, 2)
    flipped = clean_dataset([s.params.flipped() for s in ds], 256)
    results = {}
    for name, make in (("two_layer", design_two_layer), ("sigmoid", design_sigmoid)):
        net = make(256)
        est = predict(net, ds.X)
        results[name] = (np.abs(est - ds.r).max() * 255, np.abs(est - predict(net, flipped.X)).max())
    net32 = design_sigmoid(32)
    ds32 = gen_dataset(GenConfig(polarity_mode="both", D=32, sigma_g=0.0, sigma_n=0.0), 1000, 2)
    flip32 = np.abs(predict(net32, ds32.X) - predict(net32, clean_dataset([s.params.flipped() for s in ds32], 32).X)).max() * 31
    ok = results["two_layer"][0] <= 1 and results["two_layer"][1] <= 1e-9 and results["sigmoid"][0] <= 1 and flip32 <= 1
    record(
        4,
        ok,
        f"two-layer D=256 max err {results['two_layer'][0]:.3f} steps, flip diff {results['two_layer'][1]:.1e}; "
        f"sigmoid D=256 max err {results['sigmoid'][0]:.3f} steps, D=32 flip diff {flip32:.3f} steps",
    )
    assert ok


def test_criterion_5_table1(table1):
    rows = _checks(table1, exclude=("filter class", "head"))
    ok = len(rows) == 9 and all(c["passed"] for c in rows)
    record(5, ok, _summarise(rows))
    assert ok


def test_criterion_6_tables_2_and_3(table3):
    rows = _checks(table3, exclude=("filter class", "Spearman"))
    ok = len(rows) == 8 and all(c["passed"] for c in rows)
    record(6, ok, _summarise(rows))
    assert ok


def test_criterion_7_learned_structure(table1, table3):
    rows = _checks(table1, include=("filter class", "head")) + _checks(table3, include=("filter class", "Spearman"))
    ok = len(rows) == 5 and all(c["passed"] for c in rows)
    record(7, ok, _summarise(rows))
    assert ok


def test_criterion_8_resolution_sweep(figd):
    rows = _checks(figd)
    ok = len(rows) == 4 and all(c["passed"] for c in rows)
    record(8, ok, _summarise(rows))
    assert ok


def test_criterion_9_determinism(table1, runs_dir):
    first = runs_dir / "table1"
    again = runs_dir / "table1_rerun"
    code = cli.run(["rerun", str(first), "--out", str(again)])
    a, b = hash_outputs(first, ("*.csv",)), hash_outputs(again, ("*.csv",))
    ok = code == 0 and a == b and len(a) > 0
    record(9, ok, f"table1 rerun from manifest: {len(a)} CSV files, {sum(a[k] == b.get(k) for k in a)} identical")
    assert ok


def test_both_polarity_network_is_not_intensity_invariant(table1, runs_dir):
    from radiusnet.analyzer import sweep_manifold
    from radiusnet.nncore import load_network

    net = load_network(runs_dir / "table1" / "1d_both_sn10" / "network.json")
    m = sweep_manifold(net, "fixed_radius")
    valid = m.region != "low_contrast"
    spread = float(np.ptp(m.estimate[valid])) * net.D
    assert spread > 1.0, f"estimate range over valid (f, b) is only {spread:.3f} px"
