"""Campaign planning, deterministic execution and the on-disk result store."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from threadpoolctl import threadpool_limits

from .backbones import BackboneConfig, build_backbone
from .data import (
    PROFILES,
    SkeletonDataset,
    all_task_orders,
    curriculum_for_order,
    generate_synthetic,
    sample_class_orders,
    sample_task_orders,
)
from .dataio import load_dataset
from .graphs import graph_for_joints
from .methods import (
    METHODS,
    DataSource,
    MethodConfig,
    TrainerConfig,
    evaluate,
    new_state,
    tuned_defaults,
    train_task,
)
from .metrics import (
    AccuracyMatrix,
    MetricReport,
    OrderCampaignRecord,
    aggregate_task_and_class_campaigns,
    aopd,
    average_accuracy,
    average_forgetting,
    mopd,
)

ORDER_MODES = ("canonical", "task-exhaustive", "task-sampled", "class-sampled")
RECORD_VERSION = 1
WORKERS_ENV = "CGLBENCH_WORKERS"

# Candidate lists searched per method.
TABLE4_GRID: dict[str, dict[str, list]] = {
    "ewc": {"memory_strength": [1.0, 100.0, 1e4, 1e6]},
    "mas": {"memory_strength": [1.0, 100.0, 1e4, 1e6]},
    "twp": {"lambda_l": [100.0, 1e4], "lambda_t": [100.0, 1e4], "beta": [0.01, 0.1]},
    "lwf": {"lambda_dist": [0.1, 1.0, 10.0], "temperature": [0.2, 2.0, 20.0]},
    "gem": {"memory_strength": [0.05, 0.5, 5.0], "frac_memories": [0.05, 0.1, 0.2]},
    "replay": {"frac_memories": [0.05, 0.1, 0.2]},
}


class RunError(RuntimeError):
    """A single curriculum failed; carries the plan coordinates."""

    def __init__(self, coords: dict, cause: BaseException):
        self.coords = coords
        self.cause = cause
        where = ", ".join(f"{k}={v}" for k, v in coords.items())
        super().__init__(f"run failed at {where}: {type(cause).__name__}: {cause}")


# ---------------------------------------------------------------------------
# seeds


def stable_hash64(*parts) -> int:
    """64-bit integer from the SHA-256 of the JSON encoding of ``parts``."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def derive_seed(master_seed: int, method: str, order_id: str, repeat: int, arch: str) -> int:
    return stable_hash64("run", master_seed, method, order_id, repeat, arch)


def derive_split_seed(master_seed: int, repeat: int) -> int:
    """Data splits are redrawn per repeat but shared by all runs of a repeat."""
    return stable_hash64("split", master_seed, repeat)


# ---------------------------------------------------------------------------
# datasets


def load_dataset_ref(ref: str) -> SkeletonDataset:
    """Load a dataset file, or generate one from ``synthetic:<profile>:<seed>``."""
    if ref.startswith("synthetic:"):
        parts = ref.split(":")
        if len(parts) != 3 or parts[1] not in PROFILES:
            raise ValueError(f"bad synthetic reference {ref!r}; use synthetic:<ucla|ntu>:<seed>")
        return generate_synthetic(PROFILES[parts[1]], int(parts[2]))
    path = Path(ref)
    if not path.exists():
        raise FileNotFoundError(f"dataset file {ref} does not exist")
    return load_dataset(path)


def dataset_label(ds: SkeletonDataset) -> str:
    return f"{ds.name}@{ds.content_hash()[:12]}"


def backbone_for(ds: SkeletonDataset, base: BackboneConfig) -> BackboneConfig:
    feat = 3 * ds.frames if base.kind == "gcn" else 3
    return replace(base, num_classes=ds.num_classes, input_feature_length=feat)


# ---------------------------------------------------------------------------
# plans


@dataclass(frozen=True)
class HyperGrid:
    """Per-method candidate lists, enumerated as a Cartesian product in listed order."""

    axes: dict = field(default_factory=lambda: TABLE4_GRID)

    def candidates(self, method: str, base: MethodConfig | None = None) -> list[MethodConfig]:
        base = base or MethodConfig(method=method)
        axes = self.axes.get(method, {})
        if not axes:
            return [base]
        names = list(axes)
        out = []
        for combo in itertools.product(*(axes[n] for n in names)):
            cfg = base.with_params(**dict(zip(names, combo)))
            cfg.validate()
            out.append(cfg)
        return out

    def size(self, method: str) -> int:
        return math.prod(len(v) for v in self.axes.get(method, {}).values()) if self.axes.get(method) else 1


@dataclass(frozen=True)
class ExperimentPlan:
    dataset: str
    methods: tuple[str, ...] = ("bare",)
    order_mode: str = "canonical"
    num_orders: int = 10
    repeats: int = 5
    backbone: BackboneConfig = BackboneConfig()
    trainer: TrainerConfig = TrainerConfig()
    master_seed: int = 0
    classes_per_task: int = 2
    permutation_cap: int = 120
    method_params: dict = field(default_factory=dict)
    param_profile: str = "ucla"
    eval_split: str = "test"

    def validate(self) -> None:
        if self.order_mode not in ORDER_MODES:
            raise ValueError(f"unknown order mode {self.order_mode!r}; expected one of {ORDER_MODES}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.order_mode in ("task-sampled", "class-sampled") and self.num_orders < 1:
            raise ValueError("sampled modes need at least one order")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if not self.methods:
            raise ValueError("plan has no methods")

    def method_config(self, method: str) -> MethodConfig:
        cfg = tuned_defaults(method, self.param_profile)
        extra = self.method_params.get(method, {})
        if extra:
            cfg = cfg.with_params(**extra)
        cfg.validate()
        return cfg


def order_ids(plan: ExperimentPlan, num_classes: int) -> list[str]:
    """The order list of a campaign; identical for every method (paired design)."""
    cpt = plan.classes_per_task
    if num_classes % cpt:
        raise ValueError(f"{num_classes} classes cannot form tasks of {cpt}")
    b = num_classes // cpt
    mode = plan.order_mode
    if mode == "canonical":
        return ["canonical"]
    if mode == "task-exhaustive":
        if math.factorial(b) > plan.permutation_cap:
            raise ValueError(
                f"{b}! = {math.factorial(b)} task orders exceed the cap of {plan.permutation_cap}; "
                "use --mode task-sampled"
            )
        perms = all_task_orders(b)
    elif mode == "task-sampled":
        perms = sample_task_orders(b, plan.num_orders, stable_hash64("task-orders", plan.master_seed))
    else:
        perms = sample_class_orders(num_classes, plan.num_orders, stable_hash64("class-orders", plan.master_seed))
        return ["class:" + "-".join(map(str, p)) for p in perms]
    return ["task:" + "-".join(map(str, p)) for p in perms]


@dataclass(frozen=True)
class RunCell:
    """One curriculum: a (method, order, repeat, arch) coordinate of a plan."""

    dataset: str
    method: MethodConfig
    order_id: str
    repeat: int
    backbone: BackboneConfig
    trainer: TrainerConfig
    master_seed: int
    classes_per_task: int = 2
    campaign: str = "canonical"
    eval_split: str = "test"

    @property
    def seed(self) -> int:
        return derive_seed(self.master_seed, self.method.method, self.order_id, self.repeat, self.backbone.arch_key())

    @property
    def split_seed(self) -> int:
        return derive_split_seed(self.master_seed, self.repeat)

    def key(self) -> dict:
        t = self.trainer
        return {
            "dataset": self.dataset,
            "method": self.method.method,
            "params": self.method.relevant(),
            "order_id": self.order_id,
            "repeat": self.repeat,
            "arch": self.backbone.arch_key(),
            "campaign": self.campaign,
            "split": self.eval_split,
            "master_seed": self.master_seed,
            "protocol": f"{t.optimizer}-lr{t.learning_rate!r}-e{t.epochs}-cpt{self.classes_per_task}",
        }

    def coords(self) -> dict:
        return {
            "method": self.method.method,
            "order_id": self.order_id,
            "repeat": self.repeat,
            "arch": self.backbone.arch_key(),
        }


def key_id(key: dict) -> str:
    blob = json.dumps(key, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


def plan_cells(plan: ExperimentPlan, dataset: SkeletonDataset, campaign: str | None = None) -> list[RunCell]:
    plan.validate()
    label = dataset_label(dataset)
    bb = backbone_for(dataset, plan.backbone)
    orders = order_ids(plan, dataset.num_classes)
    tag = campaign or {"canonical": "canonical", "task-exhaustive": "task", "task-sampled": "task",
                       "class-sampled": "class"}[plan.order_mode]
    return [
        RunCell(label, plan.method_config(m), oid, r, bb, plan.trainer, plan.master_seed,
                plan.classes_per_task, tag, plan.eval_split)
        for r in range(plan.repeats)
        for oid in orders
        for m in plan.methods
    ]


# ---------------------------------------------------------------------------
# single runs


def record_hash(record: dict) -> str:
    body = {k: v for k, v in record.items() if k not in ("hash", "wall_time_ms")}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def run_curriculum(cell: RunCell, dataset: SkeletonDataset) -> dict:
    """Train through every task of the cell's curriculum and build its record."""
    start = time.perf_counter()
    try:
        curriculum = curriculum_for_order(dataset, cell.order_id, cell.classes_per_task, cell.split_seed)
        graph = graph_for_joints(dataset.joints)
        model = build_backbone(cell.backbone, graph, cell.seed)
        source = DataSource(dataset, "gcn" if cell.backbone.kind == "gcn" else "sequence")
        tcfg = replace(cell.trainer, seed=cell.seed)
        state = new_state(cell.method)
        rows = []
        result = None
        for k, task in enumerate(curriculum.tasks, start=1):
            train_task(model, state, task, source, cell.method, tcfg)
            result = evaluate(model, curriculum, k, source, cell.eval_split)
            rows.append(result.row)
    except Exception as exc:  # noqa: BLE001 - re-raised with coordinates
        raise RunError(cell.coords(), exc) from exc
    matrix = AccuracyMatrix.from_rows(rows)
    b = matrix.num_tasks
    record = {
        "version": RECORD_VERSION,
        "key": cell.key(),
        "seed": cell.seed,
        "split_seed": cell.split_seed,
        "splits_reseeded_per_repeat": True,
        "task_classes": [list(t.class_ids) for t in curriculum.tasks],
        "accuracy_matrix": matrix.to_list(),
        "class_accuracies": {str(c): result.class_accuracy[c] for c in sorted(result.class_accuracy)},
        "summary": summary_of(matrix),
        "method_config": asdict(cell.method),
        "backbone": asdict(cell.backbone),
        "trainer": asdict(tcfg),
        "num_tasks": b,
    }
    record["wall_time_ms"] = round((time.perf_counter() - start) * 1000.0, 3)
    record["hash"] = record_hash(record)
    return record


def summary_of(matrix: AccuracyMatrix) -> dict:
    b = matrix.num_tasks
    return {
        "AA": average_accuracy(matrix, b),
        "AF": average_forgetting(matrix, b) if b > 1 else None,
    }


# ---------------------------------------------------------------------------
# store


class ResultStore:
    """Directory of one JSON file per record plus a sorted index.

    Records are written to a temporary file and renamed, so a reader never
    sees a partial record.  Only the coordinating process writes.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.records_dir = self.root / "records"
        self.index_path = self.root / "index.json"

    def _path(self, kid: str) -> Path:
        return self.records_dir / f"{kid}.json"

    def has(self, key: dict) -> bool:
        return self._path(key_id(key)).exists()

    def get(self, key: dict) -> dict:
        return json.loads(self._path(key_id(key)).read_text())

    def put(self, record: dict) -> str:
        if record.get("hash") != record_hash(record):
            raise ValueError("record hash does not match its payload")
        kid = key_id(record["key"])
        path = self._path(kid)
        if path.exists():
            old = json.loads(path.read_text())
            if old["hash"] != record["hash"]:
                raise ValueError(f"record {kid} already stored with a different payload hash")
            return kid
        self.records_dir.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}")
        tmp.write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")
        os.replace(tmp, path)
        return kid

    def records(self) -> list[dict]:
        if not self.records_dir.exists():
            return []
        return [json.loads(p.read_text()) for p in sorted(self.records_dir.glob("*.json"))]

    def write_index(self) -> Path:
        entries = sorted(
            ({"id": key_id(r["key"]), "key": r["key"], "hash": r["hash"]} for r in self.records()),
            key=lambda e: e["id"],
        )
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = self.index_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(entries, sort_keys=True, indent=1) + "\n")
        os.replace(tmp, self.index_path)
        return self.index_path

    def fingerprint(self) -> str:
        """Digest of all (key, hash) pairs; ignores wall times."""
        pairs = sorted((key_id(r["key"]), r["hash"]) for r in self.records())
        return hashlib.sha256(json.dumps(pairs).encode()).hexdigest()

    def verify(self) -> None:
        """Recompute hashes and summaries; raise on any mismatch."""
        for r in self.records():
            if record_hash(r) != r["hash"]:
                raise ValueError(f"record {key_id(r['key'])} fails its hash check")
            if summary_of(AccuracyMatrix.from_rows(r["accuracy_matrix"])) != r["summary"]:
                raise ValueError(f"record {key_id(r['key'])} summary disagrees with its matrix")


# ---------------------------------------------------------------------------
# execution

_WORKER_DATASET: SkeletonDataset | None = None


def _init_worker(dataset: SkeletonDataset) -> None:
    global _WORKER_DATASET
    _WORKER_DATASET = dataset
    threadpool_limits(1)


def _run_in_worker(cell: RunCell) -> dict:
    return run_curriculum(cell, _WORKER_DATASET)


def resolve_workers(requested: int | None = None) -> int:
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get(WORKERS_ENV)
    if cap:
        n = min(n, int(cap))
    return max(1, n)


def execute(
    cells: Sequence[RunCell],
    dataset: SkeletonDataset,
    store: ResultStore | None = None,
    workers: int | None = None,
    limit: int | None = None,
    progress=None,
) -> list[dict]:
    """Run every cell not already in ``store``; return records in cell order.

    ``limit`` stops after that many new runs, which leaves a partially
    filled store that a later call completes.
    """
    pending = [c for c in cells if store is None or not store.has(c.key())]
    if limit is not None:
        pending = pending[:limit]
    n_workers = min(resolve_workers(workers), max(1, len(pending)))
    fresh: dict[str, dict] = {}

    def keep(rec):
        fresh[key_id(rec["key"])] = rec
        if store is not None:
            store.put(rec)
        if progress:
            progress(rec)

    if n_workers == 1:
        with threadpool_limits(1):
            for c in pending:
                keep(run_curriculum(c, dataset))
    else:
        with ProcessPoolExecutor(n_workers, initializer=_init_worker, initargs=(dataset,)) as pool:
            futures = [pool.submit(_run_in_worker, c) for c in pending]
            for fut in as_completed(futures):
                keep(fut.result())
    if store is not None:
        store.write_index()
    out = []
    for c in cells:
        kid = key_id(c.key())
        if kid in fresh:
            out.append(fresh[kid])
        elif store is not None and store.has(c.key()):
            out.append(store.get(c.key()))
    return out


# ---------------------------------------------------------------------------
# campaigns


def task_level_record(records: Sequence[dict], classes_per_task: int = 2) -> OrderCampaignRecord:
    """Final accuracy per canonical task across task-permutation runs."""
    orders, ids = [], []
    for r in records:
        final = r["accuracy_matrix"][-1]
        units = {}
        for pos, classes in enumerate(r["task_classes"]):
            tid = min(classes) // classes_per_task
            if sorted(classes) != [tid * classes_per_task + i for i in range(classes_per_task)]:
                raise ValueError(f"order {r['key']['order_id']} does not present canonical tasks")
            units[tid] = final[pos]
        orders.append(units)
        ids.append(r["key"]["order_id"])
    return OrderCampaignRecord("task", tuple(orders), tuple(ids))


def class_level_record(records: Sequence[dict]) -> OrderCampaignRecord:
    orders = [{int(c): v for c, v in r["class_accuracies"].items()} for r in records]
    return OrderCampaignRecord("class", tuple(orders), tuple(r["key"]["order_id"] for r in records))


@dataclass
class CampaignResult:
    campaign: str
    order_ids: list[str]
    records: list[dict]
    classes_per_task: int = 2

    def runs(self, method: str, repeat: int) -> list[dict]:
        return [r for r in self.records if r["key"]["method"] == method and r["key"]["repeat"] == repeat]

    def methods(self) -> list[str]:
        return sorted({r["key"]["method"] for r in self.records})

    def repeats(self) -> list[int]:
        return sorted({r["key"]["repeat"] for r in self.records})

    def task_record(self, method: str, repeat: int) -> OrderCampaignRecord:
        return task_level_record(self.runs(method, repeat), self.classes_per_task)

    def class_record(self, method: str, repeat: int) -> OrderCampaignRecord:
        return class_level_record(self.runs(method, repeat))

    def report(self) -> MetricReport:
        return report_from_records(self.records, self.classes_per_task)


def _campaign(plan, dataset, store, workers, campaign, limit=None) -> CampaignResult:
    cells = plan_cells(plan, dataset, campaign)
    records = execute(cells, dataset, store, workers, limit)
    return CampaignResult(campaign, order_ids(plan, dataset.num_classes), records, plan.classes_per_task)


def run_task_order_campaign(plan: ExperimentPlan, dataset: SkeletonDataset, store=None, workers=None,
                            limit=None) -> CampaignResult:
    if plan.order_mode not in ("task-exhaustive", "task-sampled"):
        raise ValueError("task-order campaigns need mode task-exhaustive or task-sampled")
    return _campaign(plan, dataset, store, workers, "task", limit)


def run_class_order_campaign(plan: ExperimentPlan, dataset: SkeletonDataset, store=None, workers=None,
                             num_orders: int = 100, limit=None) -> CampaignResult:
    plan = replace(plan, order_mode="class-sampled", num_orders=num_orders)
    return _campaign(plan, dataset, store, workers, "class", limit)


def aggregated_class_campaign(task_result: CampaignResult, class_result: CampaignResult, method: str,
                              repeat: int) -> OrderCampaignRecord:
    return aggregate_task_and_class_campaigns(
        task_result.class_record(method, repeat), class_result.class_record(method, repeat)
    )


def run_architecture_sweep(
    plan: ExperimentPlan,
    dataset: SkeletonDataset,
    store=None,
    workers=None,
    widths: Sequence[int] | None = None,
    depths: Sequence[int] | None = None,
) -> dict[str, list[dict]]:
    """Vary graph width or depth (exactly one) with everything else fixed.

    Width sweeps pin the classifier head at the default hidden width.
    Returns per method a list of ``{axis, value, AA, AF, arch}`` points in sweep order.
    """
    if (widths is None) == (depths is None):
        raise ValueError("an architecture sweep varies exactly one axis: pass widths or depths")
    base = plan.backbone
    if widths is not None:
        axis, values = "width", list(widths)
        configs = [replace(base, width=w, head_width=base.head_hidden) for w in values]
    else:
        axis, values = "depth", list(depths)
        configs = [replace(base, depth=d) for d in values]
    cells = []
    for cfg in configs:
        cells.extend(plan_cells(replace(plan, backbone=cfg), dataset, f"arch-{axis}"))
    records = execute(cells, dataset, store, workers)
    out: dict[str, list[dict]] = {}
    for m in plan.methods:
        series = []
        for value, cfg in zip(values, configs):
            arch = backbone_for(dataset, cfg).arch_key()
            rs = [r for r in records if r["key"]["method"] == m and r["key"]["arch"] == arch]
            aa = [r["summary"]["AA"] for r in rs]
            af = [r["summary"]["AF"] for r in rs]
            series.append({"axis": axis, "value": value, "arch": arch,
                           "AA": sum(aa) / len(aa), "AF": sum(af) / len(af), "runs": len(rs)})
        out[m] = series
    return out


@dataclass
class GridSearchResult:
    best: MethodConfig
    table: list[dict]


def grid_search(
    method: str,
    grid: HyperGrid,
    plan: ExperimentPlan,
    dataset: SkeletonDataset,
    store=None,
    workers=None,
) -> GridSearchResult:
    """Pick the candidate with the best final validation AA on the canonical order.

    Ties go to the lower final AF, then to the earlier candidate.
    """
    candidates = grid.candidates(method, MethodConfig(method=method))
    if not candidates:
        raise ValueError(f"empty grid for {method}")
    plan = replace(plan, methods=(method,), order_mode="canonical", repeats=1, eval_split="val")
    cells = []
    for cfg in candidates:
        (cell,) = plan_cells(plan, dataset, "grid")
        cells.append(replace(cell, method=cfg))
    records = execute(cells, dataset, store, workers)
    table = []
    for i, (cfg, r) in enumerate(zip(candidates, records)):
        table.append({"index": i, "params": cfg.relevant(), "AA": r["summary"]["AA"], "AF": r["summary"]["AF"]})
    return GridSearchResult(candidates[select_best(table)], table)


def select_best(table: Sequence[dict]) -> int:
    """Index of the row with the highest AA, then lowest AF, then earliest."""
    if not table:
        raise ValueError("no candidates to select from")
    best = min(table, key=lambda row: (-row["AA"], row["AF"] if row["AF"] is not None else 0.0, row["index"]))
    return best["index"]


def report_from_records(records: Iterable[dict], classes_per_task: int = 2) -> MetricReport:
    """Metrics for every method found in a store.

    AA/AF come from every record.  Order disparity is computed per
    (method, repeat) over task-campaign runs (task level) and over task plus
    class campaign runs pooled (class level), then averaged over repeats.
    """
    records = list(records)
    rep = MetricReport()
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        k = r["key"]
        if k["campaign"] in ("canonical", "task", "class"):
            rep.add(k["method"], "AA", r["summary"]["AA"])
            if r["summary"]["AF"] is not None:
                rep.add(k["method"], "AF", r["summary"]["AF"])
        groups.setdefault((k["method"], k["repeat"], k["arch"], k["dataset"], json.dumps(k["params"])), []).append(r)
    for (method, *_), rs in sorted(groups.items()):
        task_runs = [r for r in rs if r["key"]["campaign"] == "task"]
        class_runs = [r for r in rs if r["key"]["campaign"] == "class"]
        if len(task_runs) >= 2:
            tr = task_level_record(task_runs, classes_per_task)
            rep.add(method, "AOPD", aopd(tr))
            rep.add(method, "MOPD", mopd(tr))
        pooled = task_runs + class_runs
        if len(pooled) >= 2:
            cr = class_level_record(pooled)
            rep.add(method, "AOPD_class", aopd(cr))
            rep.add(method, "MOPD_class", mopd(cr))
    return rep
