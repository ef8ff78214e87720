"""Canned training/evaluation pipelines for the reported tables and sweeps.

Each pipeline is a list of :class:`Cell` (one training run each) plus a list
of :class:`Check` rows comparing obtained values with the published ones.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analyzer
from .manifest import gen_config, net_shape, resolved, train_config
from .nncore import Network, save_network
from .synthgen import ConfigError, GenConfig
from .trainer import NetShape, TrainConfig, TrainHistory, make_splits, train

log = logging.getLogger(__name__)

NOISE_LEVELS = {0: 0.0, 5: 5 / 255, 10: 10 / 255}
MODES = ("both", "positive_only")

PUBLISHED_TABLE1 = {
    ("both", 0): 1.50787,
    ("both", 5): 1.61251,
    ("both", 10): 1.72602,
    ("positive_only", 0): 0.54118,
    ("positive_only", 5): 0.78567,
    ("positive_only", 10): 1.07317,
}
PUBLISHED_TABLE3 = {
    ("both", 1): 2.61833,
    ("both", 4): 1.76942,
    ("both", 16): 1.74973,
    ("positive_only", 1): 0.68386,
    ("positive_only", 4): 0.64562,
    ("positive_only", 16): 0.64027,
}
TABLE1_TOL = {"positive_only": 0.25, "both": 0.35}
TABLE2_TOL = {"positive_only": 0.25, "both": 0.6}
FIGD_SIZES = (16, 32, 64, 128, 256)
FIGD_CHECKED = (32, 64, 128)


@dataclass
class Cell:
    name: str
    gen: GenConfig
    train: TrainConfig
    shape: NetShape

    def config(self) -> dict:
        return {"gen": resolved(self.gen), "train": resolved(self.train), "shape": resolved(self.shape)}


@dataclass
class CellResult:
    cell: Cell
    net: Network
    history: TrainHistory
    report: analyzer.EvalReport

    @property
    def rmse_px(self) -> float:
        return self.report.rmse_px


@dataclass
class Check:
    name: str
    published: float | str | None
    obtained: float | str
    tolerance: str
    passed: bool

    def row(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ReproResult:
    table: str
    cells: dict[str, CellResult] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


# -- cell construction --------------------------------------------------------------


def _merge(base: dict, overrides: dict | None, section: str) -> dict:
    out = dict(base)
    out.update((overrides or {}).get(section, {}))
    return out


def make_cell(name: str, gen: dict, train_: dict, shape: dict, overrides: dict | None) -> Cell:
    return Cell(
        name,
        gen_config(_merge(gen, overrides, "gen")),
        train_config(_merge(train_, overrides, "train")),
        net_shape(_merge(shape, overrides, "shape")),
    )


def table1_cells(overrides=None) -> list[Cell]:
    cells = []
    for mode in MODES:
        for level, sn in NOISE_LEVELS.items():
            cells.append(
                make_cell(f"1d_{mode}_sn{level}", {"polarity_mode": mode, "sigma_n": sn}, {"optimizer": "adam"}, {"dims": 1}, overrides)
            )
    return cells


def table3_cells(overrides=None, channels=(1, 4, 16)) -> list[Cell]:
    cells = []
    for mode in MODES:
        for C in channels:
            cells.append(
                make_cell(f"2d_{mode}_C{C}", {"polarity_mode": mode, "dims": 2}, {"optimizer": "sgd"}, {"dims": 2, "channels": C}, overrides)
            )
    return cells


def figd_cells(overrides=None) -> list[Cell]:
    sizes = (overrides or {}).get("D_values", FIGD_SIZES)
    return [
        make_cell(f"1d_D{D}", {"D": D, "polarity_mode": "positive_only", "sigma_g": 0.0, "sigma_n": 0.0}, {"optimizer": "adam"}, {"dims": 1, "D": D}, overrides)
        for D in sizes
    ]


TABLES = {
    "table1": table1_cells,
    "table2": lambda o=None: table3_cells(o, channels=(1,)),
    "table3": table3_cells,
    "figD": figd_cells,
}


def select(cells: list[Cell], names) -> list[Cell]:
    if not names:
        return cells
    known = {c.name for c in cells}
    for n in names:
        if n not in known:
            raise ConfigError("cells", f"unknown cell {n!r}; available: {sorted(known)}")
    return [c for c in cells if c.name in names]


# -- running ------------------------------------------------------------------------


def run_cell(cell: Cell, out_dir: str | Path, progress=None) -> CellResult:
    out = Path(out_dir) / cell.name
    out.mkdir(parents=True, exist_ok=True)
    splits = make_splits(cell.gen, cell.train)
    net, hist = train(cell.train, cell.gen, cell.shape, splits, progress)
    report = analyzer.evaluate(net, splits[2], {"cell": cell.name})
    save_network(net, out / "network.json")
    write_history(hist, out / "history.csv")
    report.write_scatter(out / "scatter.csv")
    metrics = {
        "cell": cell.name,
        **report.summary(),
        "best_epoch": hist.best_epoch,
        "final_val_mse": hist.val_mse[-1],
        "dataset_hashes": {name: ds.content_hash() for name, ds in zip(("train", "val", "test"), splits)},
        "config": cell.config(),
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True))
    return CellResult(cell, net, hist, report)


def write_history(hist: TrainHistory, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, tr, va in hist.rows():
            w.writerow([epoch, repr(tr), repr(va)])
    return path


def _within(name, published, got, tol) -> Check:
    return Check(name, published, got, f"+/-{tol}", abs(got - published) <= tol)


def structure_checks_1d(res: CellResult) -> list[Check]:
    net = res.net
    fc = analyzer.classify_filter(net.conv1_w[0])
    pat = analyzer.head_pattern_1d(net)
    name = res.cell.name
    return [
        Check(f"{name}: filter class", "edge", fc.kind, "k=1", fc.kind == "edge"),
        Check(f"{name}: head left/right mean|a|", None, pat.left_ratio, "< 0.2", pat.left_ratio < 0.2),
        Check(f"{name}: head right-half slope", None, pat.right_slope, "< 0", pat.right_slope < 0),
    ]


def structure_checks_2d(res: CellResult, out_dir: Path | None = None) -> list[Check]:
    net = res.net
    fc = analyzer.classify_filter(net.conv1_w[0])
    t, prof = analyzer.cut_profile(net.head_map()[0], fc.orientation)
    rho = analyzer.decreasing_half_spearman(t, prof)
    if out_dir is not None:
        analyzer.write_profile(Path(out_dir) / res.cell.name / "cut_profile.csv", t, prof)
    name = res.cell.name
    return [
        Check(f"{name}: filter class", "edge", fc.kind, "k=1", fc.kind == "edge"),
        Check(f"{name}: cut-profile Spearman (decreasing half)", None, rho, "|rho| > 0.8", abs(rho) > 0.8),
    ]


def checks_for(table: str, res: dict[str, CellResult], out_dir: Path | None = None) -> list[Check]:
    checks: list[Check] = []
    if table == "table1":
        for (mode, level), published in PUBLISHED_TABLE1.items():
            name = f"1d_{mode}_sn{level}"
            if name in res:
                checks.append(_within(f"{name}: RMSE px", published, res[name].rmse_px, TABLE1_TOL[mode]))
        for level in NOISE_LEVELS:
            a, b = res.get(f"1d_both_sn{level}"), res.get(f"1d_positive_only_sn{level}")
            if a and b:
                checks.append(Check(f"sn{level}: both > positive", None, a.rmse_px - b.rmse_px, "> 0", a.rmse_px > b.rmse_px))
        if "1d_positive_only_sn10" in res:
            checks.extend(structure_checks_1d(res["1d_positive_only_sn10"]))
    elif table in ("table2", "table3"):
        for (mode, C), published in PUBLISHED_TABLE3.items():
            name = f"2d_{mode}_C{C}"
            if name not in res:
                continue
            if C == 1:
                checks.append(_within(f"{name}: RMSE px", published, res[name].rmse_px, TABLE2_TOL[mode]))
            elif mode == "both":
                got = res[name].rmse_px
                ref = res.get("2d_both_C1")
                if ref:
                    checks.append(Check(f"{name}: improves on C=1", published, got, f"< {ref.rmse_px:.4f}", got < ref.rmse_px))
                checks.append(Check(f"{name}: stays above 1.4 px", published, got, "> 1.4", got > 1.4))
            else:
                got = res[name].rmse_px
                checks.append(Check(f"{name}: RMSE px", published, got, "< 0.9", got < 0.9))
        if "2d_positive_only_C1" in res:
            checks.extend(structure_checks_2d(res["2d_positive_only_C1"], out_dir))
    elif table == "figD":
        sizes = [D for D in FIGD_CHECKED if f"1d_D{D}" in res]
        for D in sizes:
            got = res[f"1d_D{D}"].rmse_px
            checks.append(Check(f"1d_D{D}: RMSE px", None, got, "<= 0.8", got <= 0.8))
        unit = [res[f"1d_D{D}"].report.rmse for D in sizes]
        if len(unit) > 1:
            ok = all(b <= a for a, b in zip(unit, unit[1:]))
            checks.append(Check("unit-domain RMSE non-increasing in D", None, " > ".join(f"{u:.5f}" for u in unit), "non-increasing", ok))
    return checks


def run_repro(table: str, out_dir: str | Path, overrides: dict | None = None, progress=None) -> ReproResult:
    if table not in TABLES:
        raise ConfigError("table", f"unknown table {table!r}; choose from {sorted(TABLES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = select(TABLES[table](overrides), (overrides or {}).get("cells"))
    result = ReproResult(table)
    for cell in cells:
        log.info("training %s", cell.name)
        cb = None if progress is None else (lambda e, tr, va, name=cell.name: progress(name, e, tr, va))
        result.cells[cell.name] = run_cell(cell, out, cb)
    result.checks = checks_for(table, result.cells, out)
    write_comparison(result, out)
    return result


def write_comparison(result: ReproResult, out_dir: Path) -> None:
    rows = [c.row() for c in result.checks]
    with (out_dir / "comparison.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["name", "published", "obtained", "tolerance", "passed"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "obtained": repr(r["obtained"]) if isinstance(r["obtained"], float) else r["obtained"]})
    summary = {
        "table": result.table,
        "passed": result.passed,
        "checks": rows,
        "cells": {name: {"rmse_px": c.rmse_px, "rmse": c.report.rmse} for name, c in result.cells.items()},
        "px_per_unit": "D",
    }
    (out_dir / "comparison.json").write_text(json.dumps(summary, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


def is_finite(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)
