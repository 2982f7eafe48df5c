"""Command-line entry point: ``cglbench <subcommand> [flags]``.

Every campaign flag can also come from an INI-style config file given with
``--config``; command-line flags win over the file, the file wins over the
built-in defaults.  Sections and keys::

    [data]      dataset, classes_per_task
    [trainer]   epochs, learning_rate, optimizer
    [backbone]  kind, depth, width
    [campaign]  methods, mode, orders, class_orders, repeats, master_seed,
                permutation_cap, workers, param_profile
    [store]     path
    [method.<name>]  any MethodConfig field, e.g. frac_memories = 0.1
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import fields, replace
from pathlib import Path

from .backbones import SWEEP_DEPTHS, SWEEP_WIDTHS, BackboneConfig
from .data import PROFILES, generate_synthetic
from .dataio import save_dataset
from .methods import METHODS, MethodConfig, TrainerConfig
from .metrics import AccuracyMatrix, bound_violations, emit_scatter
from .orchestrator import (
    ORDER_MODES,
    ExperimentPlan,
    HyperGrid,
    ResultStore,
    grid_search,
    execute,
    load_dataset_ref,
    plan_cells,
    report_from_records,
    run_architecture_sweep,
    run_class_order_campaign,
    run_task_order_campaign,
)

DEFAULTS = {
    "data": {"dataset": None, "classes_per_task": 2},
    "trainer": {"epochs": 100, "learning_rate": 0.001, "optimizer": "adam"},
    "backbone": {"kind": "gcn", "depth": 2, "width": 64},
    "campaign": {
        "methods": "bare,replay",
        "mode": "task-sampled",
        "orders": 10,
        "class_orders": 0,
        "repeats": 1,
        "master_seed": 0,
        "permutation_cap": 120,
        "workers": None,
        "param_profile": "ucla",
    },
    "store": {"path": "results"},
}

# Full-scale protocol: every task order, 100 class orders, 5 repeats, all methods.
FULL_PRESET = {
    "trainer": {"epochs": 100, "learning_rate": 0.001},
    "campaign": {
        "methods": ",".join(METHODS),
        "mode": "task-exhaustive",
        "class_orders": 100,
        "repeats": 5,
    },
}

_METHOD_FIELDS = {f.name: f.type for f in fields(MethodConfig) if f.name != "method"}


class UsageError(Exception):
    pass


class Settings:
    """Layered lookup: flags, then config file, then preset, then defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file = configparser.ConfigParser()
        if getattr(args, "config", None):
            path = Path(args.config)
            if not path.exists():
                raise UsageError(f"config file {path} does not exist")
            self.file.read(path)
        self.preset = FULL_PRESET if getattr(args, "preset", None) == "full" else {}

    def get(self, section: str, key: str, flag: str | None = None, cast=str):
        val = getattr(self.args, flag or key, None)
        if val is not None:
            return val
        if self.file.has_option(section, key):
            raw = self.file.get(section, key)
            return cast(raw) if cast is not str else raw
        if key in self.preset.get(section, {}):
            return self.preset[section][key]
        return DEFAULTS[section][key]

    def method_params(self) -> dict:
        out = {}
        for section in self.file.sections():
            if not section.startswith("method."):
                continue
            name = section.split(".", 1)[1]
            if name not in METHODS:
                raise UsageError(f"config section [{section}] names an unknown method")
            params = {}
            for key, raw in self.file.items(section):
                if key not in _METHOD_FIELDS:
                    raise UsageError(f"unknown key {key!r} in [{section}]")
                params[key] = float(raw)
            out[name] = params
        return out


def _int_or_none(v):
    return None if v in (None, "", "none") else int(v)


def build_plan(s: Settings, order_mode: str | None = None) -> ExperimentPlan:
    dataset = s.get("data", "dataset")
    if not dataset:
        raise UsageError("no dataset given (use --dataset or [data] dataset)")
    methods = s.get("campaign", "methods")
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(",") if m.strip()]
    trainer = TrainerConfig(
        epochs=int(s.get("trainer", "epochs", cast=int)),
        learning_rate=float(s.get("trainer", "learning_rate", "lr", cast=float)),
        optimizer=s.get("trainer", "optimizer"),
    )
    backbone = BackboneConfig(
        kind=s.get("backbone", "kind", "backbone"),
        depth=int(s.get("backbone", "depth", cast=int)),
        width=int(s.get("backbone", "width", cast=int)),
    )
    plan = ExperimentPlan(
        dataset=dataset,
        methods=tuple(methods),
        order_mode=order_mode or s.get("campaign", "mode"),
        num_orders=int(s.get("campaign", "orders", cast=int)),
        repeats=int(s.get("campaign", "repeats", cast=int)),
        backbone=backbone,
        trainer=trainer,
        master_seed=int(s.get("campaign", "master_seed", "seed", cast=int)),
        classes_per_task=int(s.get("data", "classes_per_task", cast=int)),
        permutation_cap=int(s.get("campaign", "permutation_cap", cast=int)),
        method_params=s.method_params(),
        param_profile=s.get("campaign", "param_profile"),
    )
    try:
        plan.validate()
        trainer.validate()
        backbone.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return plan


def _store(s: Settings) -> ResultStore:
    return ResultStore(s.get("store", "path", "store"))


def _workers(s: Settings):
    return _int_or_none(s.get("campaign", "workers", cast=str))


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, s) -> int:
    if args.profile not in PROFILES:
        raise UsageError(f"unknown profile {args.profile!r}")
    ds = generate_synthetic(PROFILES[args.profile], args.data_seed, noise=args.noise)
    path = save_dataset(args.out, ds)
    print(f"wrote {len(ds)} sequences ({ds.frames} frames, {ds.joints} joints) to {path}")
    return 0


def cmd_run(args, s) -> int:
    plan = build_plan(s, order_mode="canonical")
    plan = replace(plan, methods=(args.method,), repeats=1)
    ds = load_dataset_ref(plan.dataset)
    (cell,) = plan_cells(plan, ds, "canonical")
    cell = replace(cell, order_id=args.order, repeat=args.repeat)
    store = _store(s)
    existing = store.get(cell.key()) if store.has(cell.key()) else None
    (rec,) = execute([cell], ds, None, workers=1)
    if existing is not None and existing["hash"] != rec["hash"]:
        print(f"error: rerun hash {rec['hash']} differs from stored {existing['hash']}", file=sys.stderr)
        return 3
    store.put(rec)
    store.write_index()
    _print({"key": rec["key"], "summary": rec["summary"], "accuracy_matrix": rec["accuracy_matrix"],
            "hash": rec["hash"]})
    return 0


def cmd_order_campaign(args, s) -> int:
    plan = build_plan(s)
    ds = load_dataset_ref(plan.dataset)
    store = _store(s)
    workers = _workers(s)
    out = {}
    if plan.order_mode == "class-sampled":
        res = run_class_order_campaign(plan, ds, store, workers, num_orders=plan.num_orders)
        out["class"] = res.report().to_dict()
    else:
        res = run_task_order_campaign(plan, ds, store, workers)
        out["task"] = res.report().to_dict()
        n_class = int(s.get("campaign", "class_orders", cast=int))
        if n_class:
            cres = run_class_order_campaign(plan, ds, store, workers, num_orders=n_class)
            out["class"] = cres.report().to_dict()
    out["records"] = len(store.records())
    _print(out)
    return 0


def cmd_sweep_arch(args, s) -> int:
    plan = build_plan(s, order_mode="canonical")
    ds = load_dataset_ref(plan.dataset)
    values = [int(v) for v in args.values.split(",")] if args.values else None
    if args.axis == "width":
        res = run_architecture_sweep(plan, ds, _store(s), _workers(s), widths=values or SWEEP_WIDTHS)
    else:
        res = run_architecture_sweep(plan, ds, _store(s), _workers(s), depths=values or SWEEP_DEPTHS)
    _print(res)
    return 0


def cmd_grid_search(args, s) -> int:
    plan = build_plan(s, order_mode="canonical")
    ds = load_dataset_ref(plan.dataset)
    res = grid_search(args.method, HyperGrid(), plan, ds, _store(s), _workers(s))
    _print({"best": res.best.relevant(), "candidates": res.table})
    return 0


def _load_records(s: Settings) -> tuple[ResultStore, list[dict]]:
    store = _store(s)
    records = store.records()
    if not records:
        raise UsageError(f"no records in store {store.root}")
    return store, records


def _scatter_points(records) -> tuple[list[tuple], int]:
    pts, ks = [], set()
    for r in records:
        if r["key"]["campaign"] in ("canonical", "task", "class") and r["summary"]["AF"] is not None:
            pts.append((r["key"]["method"], r["summary"]["AA"], r["summary"]["AF"]))
            ks.add(r["num_tasks"])
    return pts, (ks.pop() if len(ks) == 1 else max(ks, default=5))


def cmd_analyze(args, s) -> int:
    store, records = _load_records(s)
    try:
        store.verify()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    out = Path(args.out or store.root / "analysis")
    out.mkdir(parents=True, exist_ok=True)
    cpt = int(s.get("data", "classes_per_task", cast=int))
    report = report_from_records(records, cpt)
    report.write(out / "report.json")
    pts, k = _scatter_points(records)
    emit_scatter(pts, out / "scatter.csv", k=k)
    for r in records:
        m = AccuracyMatrix.from_rows(r["accuracy_matrix"])
        if bound_violations(m):
            print(f"error: record {r['hash'][:12]} violates the forgetting bound", file=sys.stderr)
            return 5
    print(report.to_json())
    print(f"wrote {out / 'report.json'} and {out / 'scatter.csv'}", file=sys.stderr)
    return 0


def cmd_emit_plots(args, s) -> int:
    store, records = _load_records(s)
    out = Path(args.out or store.root / "plots")
    out.mkdir(parents=True, exist_ok=True)
    pts, k = _scatter_points(records)
    emit_scatter(pts, out / "scatter.csv", k=k)
    written = [out / "scatter.csv"]
    for axis in ("width", "depth"):
        rs = [r for r in records if r["key"]["campaign"] == f"arch-{axis}"]
        if not rs:
            continue
        rows = {}
        for r in rs:
            key = (r["key"]["method"], r["backbone"][axis])
            rows.setdefault(key, []).append((r["summary"]["AA"], r["summary"]["AF"]))
        path = out / f"arch_{axis}.csv"
        lines = ["series,x,y"]
        for (method, value), vals in sorted(rows.items()):
            lines.append(f"{method}:AA,{value},{sum(v[0] for v in vals) / len(vals)!r}")
            lines.append(f"{method}:AF,{value},{sum(v[1] for v in vals) / len(vals)!r}")
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    for p in written:
        print(p)
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, campaign: bool = True) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--preset", choices=["full"], help="full-scale protocol values")
    p.add_argument("--dataset", help="dataset file or synthetic:<profile>:<seed>")
    p.add_argument("--store", help="result store directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--backbone", choices=["gcn", "stgcn-lite"])
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--classes-per-task", dest="classes_per_task", type=int)
    p.add_argument("--param-profile", dest="param_profile", choices=sorted(PROFILES))
    if campaign:
        p.add_argument("--methods", help="comma-separated method names")
        p.add_argument("--repeats", type=int)
        p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cglbench", description="Continual learning benchmark on skeleton graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic skeleton dataset")
    p.add_argument("--profile", default="ucla", choices=sorted(PROFILES))
    p.add_argument("--data-seed", dest="data_seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True, help="output path (.cglskel binary or .jsonl)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="one curriculum for one method")
    _common(p, campaign=False)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--order", default="canonical", help="canonical, task:a-b-..., or class:a-b-...")
    p.add_argument("--repeat", type=int, default=0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("order-campaign", help="learning-order sensitivity campaign")
    _common(p)
    p.add_argument("--mode", choices=[m for m in ORDER_MODES if m != "canonical"])
    p.add_argument("--orders", type=int, help="number of sampled orders")
    p.add_argument("--class-orders", dest="class_orders", type=int,
                   help="also run this many class orders after a task-order campaign")
    p.add_argument("--permutation-cap", dest="permutation_cap", type=int)
    p.set_defaults(func=cmd_order_campaign)

    p = sub.add_parser("sweep-arch", help="vary GCN width or depth")
    _common(p)
    p.add_argument("--axis", required=True, choices=["width", "depth"])
    p.add_argument("--values", help="comma-separated values (default: the standard sweep)")
    p.set_defaults(func=cmd_sweep_arch)

    p = sub.add_parser("grid-search", help="select hyperparameters on validation data")
    _common(p)
    p.add_argument("--method", required=True, choices=METHODS)
    p.set_defaults(func=cmd_grid_search)

    for name, func, helptext in (("analyze", cmd_analyze, "metric report and scatter data from a store"),
                                 ("emit-plots", cmd_emit_plots, "plot-data CSV files from a store")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--store", help="result store directory")
        p.add_argument("--out", help="output directory")
        p.add_argument("--classes-per-task", dest="classes_per_task", type=int)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, Settings(args))
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
