"""Command-line entry point: ``gode <command> [flags]``.

Settings come from built-in defaults, then an optional ``--config`` file
(``key = value`` lines under any ``[section]``), then command-line flags.
Every setting can be given either way under the same name.

Exit codes: 0 on success, 1 on internal errors, 2 on usage or input errors.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .datapipe import (k_core_filter, load_checkpoint, load_dataset, load_interactions, save_checkpoint,
                       save_dataset, split)
from .errors import DimensionMismatch, EmptyInput, GodeError, InputError, IsolatedNode
from .evaluation import evaluate, run_variant_study
from .graphcore import build_graph
from .postconv import ConvConfig, apply_conv, conv_discrete, embedding_discrepancy, ode_solve_euler
from .trainer import Adam, TrainConfig, config_dict, fit, init_embeddings, train_epoch

log = logging.getLogger("gode")

T_GRID = (0.5, 0.8, 1.0, 1.2, 1.5, 1.8, 2.0, 2.2, 2.5, 3.0, 3.5, 5.0)
GAMMA_GRID = (0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 15.0, 20.0)
K_GRID = (0, 1, 2, 3, 4, 5, 6)

CHECKPOINT_NAME = "embeddings.gode"


def _floats(text):
    return tuple(float(x) for x in str(text).replace(" ", "").split(",") if x)


def _ints(text):
    return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# name -> (parser, default, help)
SETTINGS = {
    "dataset": (str, None, "prepared dataset directory"),
    "raw": (str, None, "raw interaction file (user, item[, timestamp])"),
    "format": (str, "tsv", "raw file format: tsv or csv"),
    "checkpoint": (str, None, "embedding checkpoint file"),
    "out": (str, None, "output file or directory"),
    "seed": (int, 0, "random seed"),
    "k_core": (int, 5, "minimum user and item degree"),
    "ratios": (_floats, (0.8, 0.1, 0.1), "train,valid,test split ratios"),
    "mode": (str, "mf", "training mode: mf or gcn"),
    "d": (int, 64, "embedding width"),
    "batch_size": (int, 256, "positive pairs per batch"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "gamma": (float, 0.5, "uniformity weight"),
    "patience": (int, 10, "early-stopping patience in epochs"),
    "max_epochs": (int, 100, "epoch cap"),
    "squared_uniformity": (_bool, False, "use squared distances in the uniformity term"),
    "conv": (str, "ode", "post-training convolution: discrete, discrete_sl or ode"),
    "K": (int, 2, "number of convolution layers"),
    "t": (float, 1.0, "ODE end time"),
    "dt": (float, 0.1, "Euler step size"),
    "readout": (str, "layer_sum", "discrete readout: layer_sum or last_layer"),
    "Ks": (_ints, (20, 50), "cutoffs for Recall and NDCG"),
    "split": (str, "test", "evaluation split: test or valid"),
    "grid": (str, "t", "sweep grid: t, gamma or K"),
    "values": (_floats, None, "comma-separated grid values (default: the standard grid)"),
    "epochs": (int, 5, "epochs timed per mode by bench"),
    "n_users": (int, 3000, "synthetic users"),
    "n_items": (int, 2500, "synthetic items"),
    "mean_length": (float, 10.0, "synthetic mean history length"),
}

COMMANDS = {
    "synth": "write a seeded synthetic interaction log",
    "prepare": "k-core filter and split a raw log into a dataset directory",
    "train": "train embeddings and write the best checkpoint",
    "convolve": "apply post-training convolution to a checkpoint",
    "eval": "full-ranking Recall/NDCG of a checkpoint",
    "sweep": "metrics and discrepancy over a t, gamma or K grid",
    "bench": "seconds per epoch of mf and gcn training",
    "study": "MF/LightGCN initial-vs-convolved comparison",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="settings file")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    for name, (_, default, text) in SETTINGS.items():
        flags = [f"--{name}"] + ([f"--{name.replace('_', '-')}"] if "_" in name else [])
        common.add_argument(*flags, dest=name, default=argparse.SUPPRESS,
                            help=f"{text} (default: {default})")
    parser = argparse.ArgumentParser(prog="gode", description="Post-training graph ODE recommender tools.")
    parser.add_argument("--version", action="version", version=f"gode {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def read_config_file(path) -> dict:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep "K" distinct from "k_core"
    if not cp.read(path, encoding="utf-8"):
        raise InputError(f"{path}: config file not found")
    out = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            if key not in SETTINGS:
                raise InputError(f"{path}: unknown setting {key!r} in [{section}]")
            out[key] = value
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (later wins) and parse values."""
    raw = {name: spec[1] for name, spec in SETTINGS.items()}
    given = vars(args)
    if "config" in given:
        raw.update(read_config_file(given["config"]))
    raw.update({k: v for k, v in given.items() if k in SETTINGS})
    cfg = {}
    for name, value in raw.items():
        parse = SETTINGS[name][0]
        try:
            cfg[name] = value if value is None or not isinstance(value, str) else parse(value)
        except ValueError as exc:
            raise InputError(f"bad value for {name}: {exc}") from None
    if cfg["Ks"] is not None:
        cfg["Ks"] = tuple(sorted(cfg["Ks"]))
    return cfg


def _need(cfg: dict, *names: str) -> None:
    for name in names:
        if cfg[name] is None:
            raise InputError(f"--{name} is required")
    for name in ("dataset", "raw", "checkpoint"):
        if name in names and not Path(cfg[name]).exists():
            raise InputError(f"{cfg[name]}: no such file or directory")


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(d=cfg["d"], batch_size=cfg["batch_size"], lr=cfg["lr"], gamma=cfg["gamma"],
                       patience=cfg["patience"], max_epochs=cfg["max_epochs"], seed=cfg["seed"],
                       train_mode=cfg["mode"], K=cfg["K"],
                       squared_uniformity=cfg["squared_uniformity"]).validate()


def conv_config(cfg: dict) -> ConvConfig:
    return ConvConfig(mode=cfg["conv"], K=cfg["K"], t=cfg["t"], dt=cfg["dt"], readout=cfg["readout"])


def _load(cfg: dict):
    ds = load_dataset(cfg["dataset"])
    E = load_checkpoint(cfg["checkpoint"], expect=(ds.n_users, ds.n_items))
    return ds, E


def _emit(text: str, path=None) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_synth(cfg: dict) -> None:
    from .synth import generate, write_tsv
    _need(cfg, "out")
    rows = generate(n_users=cfg["n_users"], n_items=cfg["n_items"], mean_length=cfg["mean_length"],
                    seed=cfg["seed"])
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    write_tsv(rows, cfg["out"])
    print(f"wrote {len(rows)} interactions to {cfg['out']}")


def stats_line(ds) -> str:
    s = ds.stats()
    return (f"users={s['users']} items={s['items']} interactions={s['interactions']} "
            f"sparsity={100 * s['sparsity']:.4f}%")


def cmd_prepare(cfg: dict) -> None:
    _need(cfg, "raw", "out")
    table = load_interactions(cfg["raw"], cfg["format"])
    ds = split(k_core_filter(table, cfg["k_core"]), cfg["ratios"], cfg["seed"])
    save_dataset(ds, cfg["out"])
    line = stats_line(ds)
    (Path(cfg["out"]) / "stats.txt").write_text(line + "\n", encoding="utf-8")
    print(line)


def cmd_train(cfg: dict) -> None:
    _need(cfg, "dataset", "out")
    tc = train_config(cfg)
    ds = load_dataset(cfg["dataset"])
    t0 = time.perf_counter()
    E, trace = fit(ds, tc)
    wall = time.perf_counter() - t0
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(E, out / CHECKPOINT_NAME)
    _write_json(out / f"{CHECKPOINT_NAME}.json", {"flavor": "initial", "train": config_dict(tc),
                                                  "best_epoch": trace.best_epoch})
    # timings live in their own files so the rest stays byte-reproducible
    (out / "train_log.csv").write_text(trace.to_csv(timings=False), encoding="utf-8")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "seconds_per_epoch", "epochs", "best_epoch", "train_seconds", "wall_seconds"])
    w.writerow([tc.train_mode, f"{trace.seconds_per_epoch:.4f}", len(trace), trace.best_epoch,
                f"{trace.total_seconds:.2f}", f"{wall:.2f}"])
    (out / "timing.csv").write_text(buf.getvalue(), encoding="utf-8")
    print(f"{tc.train_mode}: {len(trace)} epochs, best {trace.best_epoch}, "
          f"{trace.seconds_per_epoch:.3f} s/epoch, {trace.total_seconds:.1f} s total")


def cmd_convolve(cfg: dict) -> None:
    _need(cfg, "dataset", "checkpoint", "out")
    cc = conv_config(cfg)
    ds, E = _load(cfg)
    Ec = apply_conv(build_graph(ds), E, cc)
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(Ec, cfg["out"])
    _write_json(f"{cfg['out']}.json", {"flavor": "convolved", "conv": cc.describe(),
                                       "source": Path(cfg["checkpoint"]).name})
    print(f"wrote {cfg['out']} ({json.dumps(cc.describe(), sort_keys=True)})")


def cmd_eval(cfg: dict) -> None:
    _need(cfg, "dataset", "checkpoint")
    ds, E = _load(cfg)
    rep = evaluate(ds, E, cfg["Ks"], split=cfg["split"])
    if cfg["out"]:
        Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
        (Path(cfg["out"]) / "metrics.csv").write_text(rep.to_csv(), encoding="utf-8")
    print(rep.pretty())


def sweep_rows(cfg: dict) -> str:
    grid = cfg["grid"]
    if grid not in ("t", "gamma", "K"):
        raise InputError(f"unknown grid {grid!r}; use t, gamma or K")
    values = cfg["values"] if cfg["values"] is not None else {"t": T_GRID, "gamma": GAMMA_GRID,
                                                              "K": K_GRID}[grid]
    if len(values) == 0:
        raise EmptyInput("empty sweep grid")
    if grid == "gamma":
        _need(cfg, "dataset")
        ds = load_dataset(cfg["dataset"])
        E = None
    else:
        _need(cfg, "dataset", "checkpoint")
        ds, E = _load(cfg)
    g = build_graph(ds)
    cc = conv_config(cfg)
    Ks = cfg["Ks"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([grid] + [f"{m}@{k}" for k in Ks for m in ("recall", "ndcg")] + ["discrepancy"])
    for value in values:
        if grid == "t":
            base, conv = E, ode_solve_euler(g, E, value, cc.dt)
        elif grid == "K":
            if value != int(value) or value < 0:
                raise InputError(f"K grid values must be non-negative integers, got {value}")
            # K sweeps are discrete; --conv discrete_sl adds self-loops
            conv = conv_discrete(g, E, int(value), cc.mode == "discrete_sl", cc.readout)
            base = E
        else:
            base, _ = fit(ds, replace(train_config(cfg), gamma=value), graph=g)
            conv = apply_conv(g, base, cc)
        row = evaluate(ds, conv, Ks, split=cfg["split"]).row()
        label = int(value) if grid == "K" else value
        w.writerow([label] + [f"{v:.6f}" for v in row.values()]
                   + [f"{embedding_discrepancy(base, conv):.6f}"])
        log.info("%s=%s done", grid, value)
    return buf.getvalue()


def cmd_sweep(cfg: dict) -> None:
    _emit(sweep_rows(cfg), cfg["out"])


def bench_report(ds, tc: TrainConfig, n_epochs: int) -> tuple[str, dict]:
    """Time ``n_epochs`` of mf and gcn training from identical starting points."""
    if n_epochs < 1:
        raise InputError("epochs must be >= 1")
    g = build_graph(ds)
    train = np.asarray(ds.train, dtype=np.int64)
    E0 = init_embeddings(ds.n_users, ds.n_items, tc.d, tc.seed)
    samples = {}
    for mode in ("mf", "gcn"):
        mcfg = replace(tc, train_mode=mode)
        E = E0.copy()
        opt = Adam(E, mcfg.lr)
        rng = np.random.default_rng(tc.seed)
        times = []
        for _ in range(n_epochs):
            t0 = time.perf_counter()
            train_epoch(train, E, opt, mcfg, rng, g)
            times.append(time.perf_counter() - t0)
        samples[mode] = np.array(times)
    base = samples["mf"].mean()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "epochs", "mean_seconds", "sd_seconds", "ratio_to_mf"])
    for mode, s in samples.items():
        sd = f"{s.std(ddof=1):.6f}" if len(s) > 1 else ""
        w.writerow([mode, len(s), f"{s.mean():.6f}", sd, f"{s.mean() / base:.4f}"])
    return buf.getvalue(), samples


def cmd_bench(cfg: dict) -> None:
    _need(cfg, "dataset")
    text, _ = bench_report(load_dataset(cfg["dataset"]), train_config(cfg), cfg["epochs"])
    _emit(text, cfg["out"])


def cmd_study(cfg: dict) -> None:
    _need(cfg, "dataset")
    ds = load_dataset(cfg["dataset"])
    study = run_variant_study(ds, train_config(cfg), Ks=cfg["Ks"], K=cfg["K"])
    _emit(study.to_csv(), cfg["out"])


HANDLERS = {"synth": cmd_synth, "prepare": cmd_prepare, "train": cmd_train, "convolve": cmd_convolve,
            "eval": cmd_eval, "sweep": cmd_sweep, "bench": cmd_bench, "study": cmd_study}

USAGE_ERRORS = (InputError, DimensionMismatch, IsolatedNode, FileNotFoundError, NotADirectoryError,
                IsADirectoryError, PermissionError)


def _thread_limit():
    value = os.environ.get("GODE_THREADS")
    if not value:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(value))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        limiter = _thread_limit()
        try:
            HANDLERS[args.command](cfg)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except USAGE_ERRORS as exc:
        print(f"gode: error: {exc}", file=sys.stderr)
        return 2
    except GodeError as exc:
        print(f"gode: failed: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"gode: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
