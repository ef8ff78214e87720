"""Command-line driver: ``radiusnet <command> [options]``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
``radiusnet rerun <manifest>`` repeats a run from its manifest.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 ``repro --strict`` with at least one failed comparison.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import analyzer, designer, experiments
from .manifest import gen_config, load_json_config, net_shape, read_manifest, resolved, train_config, write_manifest
from .nncore import load_network, save_network
from .synthgen import ConfigError, gen_dataset, load_dataset, save_dataset
from .trainer import TEST, TRAIN, VAL, train

log = logging.getLogger("radiusnet")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3
SPLITS = {"train": TRAIN, "val": VAL, "test": TEST}
CONFIG_SECTIONS = {"gen", "train", "shape", "cells", "D_values"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- helpers ------------------------------------------------------------------------


def _load_config(path: str | None) -> dict:
    cfg = {} if path is None else load_json_config(path)
    for key in cfg:
        if key not in CONFIG_SECTIONS:
            raise ConfigError(key, f"unknown config section; expected one of {sorted(CONFIG_SECTIONS)}")
    for key in ("gen", "train", "shape"):
        if key in cfg and not isinstance(cfg[key], dict):
            raise ConfigError(key, "section must be an object")
    return cfg


def _apply_seed(cfg: dict, seed: int | None) -> dict:
    """``--seed`` overrides the data seed and both training seeds."""
    if seed is None:
        return cfg
    cfg = {**cfg, "gen": {**cfg.get("gen", {}), "seed": seed}, "train": {**cfg.get("train", {}), "seed": seed, "shuffle_seed": seed}}
    return cfg


def _seeds(gen, tr=None) -> dict:
    out = {"gen.seed": gen.seed}
    if tr is not None:
        out.update({"train.seed": tr.seed, "train.shuffle_seed": tr.shuffle_seed})
    return out


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=experiments._json_default))


# -- commands -----------------------------------------------------------------------


def cmd_gen(args, cfg: dict) -> int:
    gen = gen_config(cfg.get("gen"))
    tr = train_config(cfg.get("train"))
    out = Path(args.out)
    sizes = {"train": tr.n_train, "val": tr.n_val, "test": tr.n_test}
    hashes = {}
    for name in args.splits:
        ds = gen_dataset(gen, sizes[name], SPLITS[name])
        save_dataset(ds, out, name)
        hashes[name] = ds.content_hash()
    write_manifest(out, "gen", {"gen": resolved(gen), "sizes": sizes, "splits": list(args.splits)}, _seeds(gen), {"dataset_hashes": hashes})
    print(json.dumps(hashes, indent=2))
    return EXIT_OK


def _splits_from(args, gen, tr):
    if args.data is None:
        return tuple(gen_dataset(gen, n, s) for n, s in ((tr.n_train, TRAIN), (tr.n_val, VAL), (tr.n_test, TEST)))
    return tuple(load_dataset(args.data, name) for name in ("train", "val", "test"))


def cmd_train(args, cfg: dict) -> int:
    tr = train_config(cfg.get("train"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = None
    if args.data is not None:
        splits = _splits_from(args, None, tr)
        if "gen" in cfg:
            raise ConfigError("gen", "give either --data or a gen section, not both")
        gen = splits[0].cfg
    else:
        gen = gen_config(cfg.get("gen"))
    shape = net_shape({"dims": gen.dims, "D": gen.D, **cfg.get("shape", {})})
    splits = splits or _splits_from(args, gen, tr)

    def progress(epoch, tr_mse, va_mse):
        if epoch % args.log_every == 0 or epoch == tr.epochs:
            log.info("epoch %d train_mse %.6g val_mse %.6g", epoch, tr_mse, va_mse)

    net, hist = train(tr, gen, shape, splits, progress)
    report = analyzer.evaluate(net, splits[2])
    save_network(net, out / "network.json")
    experiments.write_history(hist, out / "history.csv")
    report.write_scatter(out / "scatter.csv")
    _dump_json(out / "metrics.json", {**report.summary(), "best_epoch": hist.best_epoch})
    config = {"gen": resolved(gen), "train": resolved(tr), "shape": resolved(shape), "data": None if args.data is None else str(Path(args.data).resolve())}
    write_manifest(out, "train", config, _seeds(gen, tr), {"wall_clock_s": hist.wall_clock})
    print(f"test RMSE {report.rmse_px:.4f} px (best epoch {hist.best_epoch})")
    return EXIT_OK


def cmd_design(args, cfg: dict) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    D = args.D
    if args.kind == "prop1":
        net = designer.design_relu_positive(D, args.delta, args.alpha or 1.0, args.b_h)
    elif args.kind == "two_layer":
        net = designer.design_two_layer(D, args.delta, args.alpha or 1.0)
    elif args.kind == "sigmoid":
        net = designer.design_sigmoid(D, args.delta, args.tau, args.b_h, args.alpha)
    else:
        net = designer.design_higher_order(args.k, D, args.alpha or 1.0, args.b_h or 0.0)
    save_network(net, out / "network.json")
    params = {"kind": args.kind, "D": D, "delta": args.delta, "alpha": args.alpha, "b_h": args.b_h, "tau": args.tau, "k": args.k}
    write_manifest(out, "design", params, {})
    print(json.dumps(net.provenance, indent=2, default=experiments._json_default))
    return EXIT_OK


def _load_split(args):
    return load_dataset(args.data, args.split)


def cmd_eval(args, cfg: dict) -> int:
    net = load_network(args.net)
    ds = _load_split(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = analyzer.evaluate(net, ds, {"net": str(args.net)})
    report.write_scatter(out / "scatter.csv")
    err = report.r_est - report.r_true
    summary = {**report.summary(), "max_abs_err": float(abs(err).max()), "max_abs_err_grid_steps": float(abs(err).max() * (net.D - 1))}
    _dump_json(out / "metrics.json", summary)
    write_manifest(out, "eval", {"net": str(Path(args.net).resolve()), "data": str(Path(args.data).resolve()), "split": args.split}, {})
    print(f"RMSE {report.rmse_px:.4f} px, max |err| {summary['max_abs_err_grid_steps']:.4f} grid steps")
    return EXIT_OK


def cmd_dump(args, cfg: dict) -> int:
    net = load_network(args.net)
    ds = _load_split(args)
    files = analyzer.dump_trace(net, ds, args.out, args.n)
    write_manifest(args.out, "dump", {"net": str(Path(args.net).resolve()), "data": str(Path(args.data).resolve()), "split": args.split, "n": args.n}, {})
    print(f"wrote {len(files)} files")
    return EXIT_OK


def cmd_sweep(args, cfg: dict) -> int:
    net = load_network(args.net)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode in ("fixed_intensity", "fixed_radius"):
        fixed = None
        if args.fixed is not None:
            fixed = tuple(args.fixed) if args.mode == "fixed_intensity" else args.fixed[0]
            if args.mode == "fixed_intensity" and len(fixed) != 2:
                raise ConfigError("fixed", "fixed_intensity needs two values: f b")
        m = analyzer.sweep_manifold(net, args.mode, fixed, args.n)
        m.write_csv(out / f"{args.mode}.csv")
    elif args.mode == "filters":
        rows = []
        for c in range(net.channels):
            fc = analyzer.classify_filter(net.conv1_w[c])
            rows.append({"channel": c, "kind": fc.kind, "k": fc.k, "orientation": fc.orientation})
        _dump_json(out / "filters.json", rows)
    elif args.mode == "cut_profile":
        if net.dims != 2:
            raise ConfigError("mode", "cut_profile needs a 2D network")
        hm = net.head_map()
        rows = []
        for c in range(net.channels):
            angle = analyzer.classify_filter(net.conv1_w[c]).orientation
            t, prof = analyzer.cut_profile(hm[c], angle)
            analyzer.write_profile(out / f"cut_profile_channel{c}.csv", t, prof)
            rows.append({"channel": c, "orientation": angle, "spearman_decreasing_half": analyzer.decreasing_half_spearman(t, prof)})
        _dump_json(out / "cut_profiles.json", rows)
    write_manifest(out, "sweep", {"net": str(Path(args.net).resolve()), "mode": args.mode, "n": args.n, "fixed": args.fixed}, {})
    return EXIT_OK


def cmd_repro(args, cfg: dict) -> int:
    out = Path(args.out)

    def progress(name, epoch, tr_mse, va_mse):
        if epoch % args.log_every == 0:
            log.info("%s epoch %d train_mse %.6g val_mse %.6g", name, epoch, tr_mse, va_mse)

    result = experiments.run_repro(args.table, out, cfg, progress)
    walls = {name: c.history.wall_clock for name, c in result.cells.items()}
    cells = {name: c.cell.config() for name, c in result.cells.items()}
    seeds = {name: _seeds(c.cell.gen, c.cell.train) for name, c in result.cells.items()}
    write_manifest(out, "repro", {"table": args.table, "overrides": cfg, "cells": cells}, seeds, {"wall_clock_s": walls, "passed": result.passed})
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: obtained {c.obtained} (published {c.published}, {c.tolerance})")
    if args.strict and not result.passed:
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_rerun(args, cfg: dict) -> int:
    """Repeat the run recorded in a manifest, writing into ``--out``."""
    man = read_manifest(args.manifest)
    argv = man.get("argv")
    if not argv:
        raise ConfigError("manifest", "manifest has no recorded argv")
    cfg_path = Path(args.out) / "rerun_config.json"
    Path(args.out).mkdir(parents=True, exist_ok=True)
    # drop --config/--out and their values from the recorded argv
    cleaned, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a in ("--config", "--out"):
            skip = True
            continue
        cleaned.append(a)
    cfg_path.write_text(json.dumps(man.get("user_config", {}), indent=2, sort_keys=True))
    rerun_argv = cleaned[:1] + ["--config", str(cfg_path), "--out", str(args.out)] + cleaned[1:]
    log.info("rerunning: %s", " ".join(rerun_argv))
    code = run(rerun_argv)
    cfg_path.unlink(missing_ok=True)
    return code


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config with optional sections gen, train, shape (repro also: cells, D_values)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="override gen.seed, train.seed and train.shuffle_seed")
    common.add_argument("--threads", type=int, help="limit BLAS threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="radiusnet", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate train/val/test datasets")
    g.add_argument("--splits", nargs="+", choices=list(SPLITS), default=list(SPLITS))

    t = sub.add_parser("train", parents=[common], help="train a network")
    t.add_argument("--data", help="directory written by 'gen' (default: generate from --config)")
    t.add_argument("--log-every", type=int, default=50)

    d = sub.add_parser("design", parents=[common], help="emit a hand-designed network")
    d.add_argument("kind", choices=["prop1", "two_layer", "sigmoid", "higher_order"])
    d.add_argument("--D", type=int, default=32)
    d.add_argument("--delta", type=float, default=designer.REF_DELTA)
    d.add_argument("--alpha", type=float)
    d.add_argument("--b-h", dest="b_h", type=float)
    d.add_argument("--tau", type=float, default=2.0)
    d.add_argument("--k", type=int, default=1, help="filter order for higher_order")

    for name, helptext in (("eval", "evaluate a network on a dataset"), ("dump", "write intermediate traces")):
        e = sub.add_parser(name, parents=[common], help=helptext)
        e.add_argument("net", help="network.json")
        e.add_argument("--data", required=True)
        e.add_argument("--split", choices=list(SPLITS), default="test")
        if name == "dump":
            e.add_argument("--n", type=int, default=4)

    s = sub.add_parser("sweep", parents=[common], help="estimation manifolds, filter classes, cut profiles")
    s.add_argument("net")
    s.add_argument("--mode", choices=["fixed_intensity", "fixed_radius", "filters", "cut_profile"], required=True)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--fixed", type=float, nargs="+", help="f b (fixed_intensity) or r (fixed_radius)")

    r = sub.add_parser("repro", parents=[common], help="reproduce a table or sweep")
    r.add_argument("table", choices=sorted(experiments.TABLES))
    r.add_argument("--strict", action="store_true", help="exit 3 if any comparison fails")
    r.add_argument("--log-every", type=int, default=100)

    rr = sub.add_parser("rerun", help="repeat a run from its manifest")
    rr.add_argument("manifest", help="manifest.json or the directory containing it")
    rr.add_argument("--out", required=True)
    rr.add_argument("--threads", type=int)
    rr.add_argument("-v", "--verbose", action="store_true")
    return p


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "design": cmd_design,
    "eval": cmd_eval,
    "dump": cmd_dump,
    "sweep": cmd_sweep,
    "repro": cmd_repro,
    "rerun": cmd_rerun,
}


def _record_invocation(out: Path, argv: list[str], user_cfg: dict) -> None:
    """Add the invocation to the manifest written by the command so ``rerun`` can replay it."""
    path = out / "manifest.json"
    if not path.exists():
        return
    man = json.loads(path.read_text())
    man["argv"] = argv
    man["user_config"] = user_cfg
    path.write_text(json.dumps(man, indent=2, sort_keys=True))


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"radiusnet: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.verbose or not logging.getLogger().handlers:
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = {} if args.command == "rerun" else _apply_seed(_load_config(args.config), args.seed)
        with threadpool_limits(limits=args.threads):
            code = COMMANDS[args.command](args, cfg)
        if args.command != "rerun":
            _record_invocation(Path(args.out), argv, cfg)
        return code
    except (ConfigError, UsageError) as e:
        print(f"radiusnet: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"radiusnet: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
