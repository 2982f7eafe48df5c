import json
import math

import numpy as np
import pytest

from cglbench.backbones import BackboneConfig
from cglbench.data import DatasetProfile, build_tasks, curriculum_for_order, generate_synthetic
from cglbench.methods import TrainerConfig
from cglbench.metrics import AccuracyMatrix, average_accuracy, bound_violations
from cglbench.orchestrator import (
    TABLE4_GRID,
    ExperimentPlan,
    HyperGrid,
    ResultStore,
    RunError,
    derive_seed,
    execute,
    grid_search,
    key_id,
    load_dataset_ref,
    order_ids,
    plan_cells,
    record_hash,
    report_from_records,
    resolve_workers,
    run_architecture_sweep,
    run_class_order_campaign,
    run_curriculum,
    run_task_order_campaign,
    select_best,
    stable_hash64,
)

FAST = TrainerConfig(epochs=2)
SMALL = BackboneConfig(width=8)


def plan(ds_ref="tiny", **kw):
    base = dict(dataset=ds_ref, methods=("bare",), repeats=1, trainer=FAST, backbone=SMALL)
    base.update(kw)
    return ExperimentPlan(**base)


def test_seed_derivation_stable_and_distinct():
    a = derive_seed(0, "bare", "canonical", 0, "gcn-d2-w64")
    assert a == derive_seed(0, "bare", "canonical", 0, "gcn-d2-w64")
    assert 0 <= a < 2**64
    others = {derive_seed(0, "ewc", "canonical", 0, "gcn-d2-w64"), derive_seed(1, "bare", "canonical", 0, "gcn-d2-w64"),
              derive_seed(0, "bare", "task:1-0-2-3-4", 0, "gcn-d2-w64"), derive_seed(0, "bare", "canonical", 1, "gcn-d2-w64"),
              derive_seed(0, "bare", "canonical", 0, "gcn-d4-w64")}
    assert a not in others and len(others) == 5
    # documented scheme: first 8 bytes of sha256 over the JSON-encoded coordinates
    import hashlib

    blob = json.dumps(["run", 0, "bare", "canonical", 0, "gcn-d2-w64"], separators=(",", ":")).encode()
    assert a == int.from_bytes(hashlib.sha256(blob).digest()[:8], "big")


def test_exhaustive_and_capped_orders():
    assert len(order_ids(plan(order_mode="task-exhaustive"), 10)) == 120
    assert len(order_ids(plan(order_mode="task-exhaustive"), 6)) == 6
    with pytest.raises(ValueError, match="task-sampled"):
        order_ids(plan(order_mode="task-exhaustive"), 12)


def test_sampled_orders_shared_across_methods(tiny_dataset):
    p = plan(methods=("bare", "replay", "ewc"), order_mode="task-sampled", num_orders=10)
    cells = plan_cells(p, tiny_dataset)
    by_method = {}
    for c in cells:
        by_method.setdefault(c.method.method, []).append(c.order_id)
    assert by_method["bare"] == by_method["replay"] == by_method["ewc"]
    assert len(set(by_method["bare"])) == 10
    from cglbench.data import sample_task_orders

    expect = sample_task_orders(5, 10, stable_hash64("task-orders", 0))
    assert by_method["bare"] == ["task:" + "-".join(map(str, o)) for o in expect]
    assert order_ids(p, 10) == order_ids(p, 10)


def test_class_orders_hundred_distinct(tiny_dataset):
    ids = order_ids(plan(order_mode="class-sampled", num_orders=100), 10)
    assert len(ids) == 100 == len(set(ids))
    for oid in ids[:10]:
        cur = curriculum_for_order(tiny_dataset, oid)
        assert cur.num_tasks == 5


def test_identity_class_order_is_canonical(tiny_dataset):
    canon = build_tasks(tiny_dataset, range(10), split_seed=5)
    same = curriculum_for_order(tiny_dataset, "class:" + "-".join(map(str, range(10))), split_seed=5)
    assert same.tasks == canon.tasks


def test_run_record_shape_and_determinism(tiny_dataset):
    (cell,) = plan_cells(plan(), tiny_dataset)
    a = run_curriculum(cell, tiny_dataset)
    b = run_curriculum(cell, tiny_dataset)
    assert [len(r) for r in a["accuracy_matrix"]] == [1, 2, 3, 4, 5]
    assert a["hash"] == b["hash"] == record_hash(a)
    assert set(a) >= {"key", "accuracy_matrix", "class_accuracies", "wall_time_ms", "seed", "hash"}
    assert len(a["class_accuracies"]) == 10
    assert a["summary"]["AA"] == average_accuracy(a["accuracy_matrix"], 5)


def test_joint_beats_bare(tiny_dataset):
    p = plan(methods=("bare", "joint"), trainer=TrainerConfig(epochs=40))
    recs = execute(plan_cells(p, tiny_dataset), tiny_dataset, workers=1)
    aa = {r["key"]["method"]: r["summary"]["AA"] for r in recs}
    assert aa["joint"] >= aa["bare"]


def test_run_error_carries_coordinates(tiny_dataset):
    from dataclasses import replace

    (cell,) = plan_cells(plan(), tiny_dataset)
    bad = replace(cell, order_id="task:0-0-1-2-3")
    with pytest.raises(RunError) as info:
        run_curriculum(bad, tiny_dataset)
    assert "order_id=task:0-0-1-2-3" in str(info.value) and "method=bare" in str(info.value)


def test_store_roundtrip_and_conflicts(tmp_path, tiny_dataset):
    store = ResultStore(tmp_path / "s")
    assert store.records() == []
    (cell,) = plan_cells(plan(), tiny_dataset)
    rec = run_curriculum(cell, tiny_dataset)
    store.put(rec)
    store.put(dict(rec, wall_time_ms=rec["wall_time_ms"] + 1))  # same payload hash: accepted
    assert store.get(rec["key"])["hash"] == rec["hash"]
    tampered = dict(rec, accuracy_matrix=[[0.0]] + rec["accuracy_matrix"][1:])
    with pytest.raises(ValueError, match="hash"):
        store.put(tampered)
    tampered["hash"] = record_hash(tampered)
    with pytest.raises(ValueError, match="different payload"):
        store.put(tampered)
    store.write_index()
    index = json.loads(store.index_path.read_text())
    assert [e["id"] for e in index] == [key_id(rec["key"])]
    store.verify()


def test_store_verify_detects_edited_summary(tmp_path, tiny_dataset):
    store = ResultStore(tmp_path / "s")
    (cell,) = plan_cells(plan(), tiny_dataset)
    rec = run_curriculum(cell, tiny_dataset)
    rec["summary"]["AA"] += 0.1
    rec["hash"] = record_hash(rec)
    store.put(rec)
    with pytest.raises(ValueError, match="summary"):
        store.verify()


def test_worker_count_does_not_change_store(tmp_path, tiny_dataset):
    p = plan(methods=("bare", "replay", "gem"), order_mode="task-sampled", num_orders=3)
    cells = plan_cells(p, tiny_dataset)
    s2, s8 = ResultStore(tmp_path / "w2"), ResultStore(tmp_path / "w8")
    execute(cells, tiny_dataset, s2, workers=2)
    execute(cells, tiny_dataset, s8, workers=8)
    assert len(s2.records()) == 9
    assert s2.fingerprint() == s8.fingerprint()
    assert s2.index_path.read_bytes() == s8.index_path.read_bytes()


def test_resume_matches_uninterrupted(tmp_path, tiny_dataset):
    p = plan(methods=("bare", "replay"), order_mode="task-sampled", num_orders=3)
    cells = plan_cells(p, tiny_dataset)
    full, part = ResultStore(tmp_path / "full"), ResultStore(tmp_path / "part")
    execute(cells, tiny_dataset, full, workers=1)
    execute(cells, tiny_dataset, part, workers=1, limit=2)
    assert len(part.records()) == 2
    out = execute(cells, tiny_dataset, part, workers=1)
    assert len(out) == 6
    assert part.fingerprint() == full.fingerprint()


def test_workers_env_cap(monkeypatch):
    monkeypatch.setenv("CGLBENCH_WORKERS", "3")
    assert resolve_workers(8) == 3
    monkeypatch.delenv("CGLBENCH_WORKERS")
    assert resolve_workers(8) == 8
    assert resolve_workers(0) == 1


def test_task_campaign_counts_and_records(tiny_dataset):
    tiny6 = generate_synthetic(DatasetProfile("six", 20, 8, num_classes=6, seqs_per_class=10), 0)
    p = plan(methods=("bare", "replay"), order_mode="task-exhaustive", repeats=2)
    res = run_task_order_campaign(p, tiny6, workers=1)
    assert len(res.records) == 6 * 2 * 2
    for method in ("bare", "replay"):
        for r in (0, 1):
            tr = res.task_record(method, r)
            assert tr.num_orders == 6 and tr.units == [0, 1, 2]
            cr = res.class_record(method, r)
            assert cr.units == list(range(6))
    rep = res.report().to_dict()
    for m in ("bare", "replay"):
        assert rep[m]["AOPD"]["n"] == 2
        assert 0.0 <= rep[m]["AOPD"]["mean"] <= rep[m]["MOPD"]["mean"] <= 1.0


def test_task_campaign_requires_task_mode(tiny_dataset):
    with pytest.raises(ValueError):
        run_task_order_campaign(plan(), tiny_dataset)


def test_class_campaign_and_aggregate(tiny_dataset):
    p = plan(methods=("bare",), order_mode="task-sampled", num_orders=3)
    task = run_task_order_campaign(p, tiny_dataset, workers=1)
    cls = run_class_order_campaign(p, tiny_dataset, workers=1, num_orders=4)
    assert len(cls.records) == 4 and all(r["key"]["order_id"].startswith("class:") for r in cls.records)
    from cglbench.orchestrator import aggregated_class_campaign

    agg = aggregated_class_campaign(task, cls, "bare", 0)
    assert agg.num_orders == 7
    rep = report_from_records(task.records + cls.records).to_dict()
    assert rep["bare"]["AOPD_class"]["n"] == 1
    assert rep["bare"]["AA"]["n"] == 7


@pytest.mark.parametrize("axis", ["width", "depth"])
def test_architecture_sweep_points(tmp_path, tiny_dataset, axis):
    store = ResultStore(tmp_path)
    p = plan(methods=("bare", "replay"), trainer=TrainerConfig(epochs=1), backbone=BackboneConfig())
    kw = {"widths": [32, 64, 128, 256, 512]} if axis == "width" else {"depths": [1, 2, 4, 8, 16]}
    out = run_architecture_sweep(p, tiny_dataset, store, workers=1, **kw)
    for m in ("bare", "replay"):
        assert [pt["value"] for pt in out[m]] == list(kw.values())[0]
        archs = {r["key"]["arch"] for r in store.records() if r["key"]["method"] == m}
        assert {pt["arch"] for pt in out[m]} == archs
    if axis == "width":
        assert all(r["backbone"]["head_width"] == 64 for r in store.records())


def test_architecture_sweep_single_axis(tiny_dataset):
    with pytest.raises(ValueError, match="exactly one axis"):
        run_architecture_sweep(plan(), tiny_dataset, widths=[32], depths=[1])
    with pytest.raises(ValueError):
        run_architecture_sweep(plan(), tiny_dataset)


def test_grid_sizes_match_candidate_table():
    grid = HyperGrid()
    sizes = {m: grid.size(m) for m in TABLE4_GRID}
    assert sizes == {"ewc": 4, "mas": 4, "twp": 8, "lwf": 9, "gem": 9, "replay": 3}
    assert len(grid.candidates("gem")) == 9
    assert [c.frac_memories for c in grid.candidates("replay")] == [0.05, 0.1, 0.2]
    assert len(grid.candidates("bare")) == 1


def test_grid_search_runs_and_selects(tmp_path, tiny_dataset):
    res = grid_search("replay", HyperGrid(), plan(), tiny_dataset, ResultStore(tmp_path), workers=1)
    assert len(res.table) == 3
    assert res.best.frac_memories in (0.05, 0.1, 0.2)
    assert all(r["key"]["split"] == "val" for r in ResultStore(tmp_path).records())
    single = HyperGrid({"replay": {"frac_memories": [0.1]}})
    assert grid_search("replay", single, plan(), tiny_dataset, workers=1).best.frac_memories == 0.1


def test_select_best_tie_breaks():
    rows = [{"index": 0, "AA": 0.5, "AF": 0.3}, {"index": 1, "AA": 0.6, "AF": 0.4},
            {"index": 2, "AA": 0.6, "AF": 0.2}, {"index": 3, "AA": 0.6, "AF": 0.2}]
    assert select_best(rows) == 2
    with pytest.raises(ValueError):
        select_best([])


def test_records_satisfy_forgetting_bound(tiny_dataset):
    p = plan(methods=("bare", "lwf", "gem"), order_mode="task-sampled", num_orders=2)
    for r in execute(plan_cells(p, tiny_dataset), tiny_dataset, workers=1):
        assert bound_violations(AccuracyMatrix.from_rows(r["accuracy_matrix"])) == []


def test_dataset_refs(tmp_path):
    ds = load_dataset_ref("synthetic:ucla:1")
    assert len(ds) == 600
    with pytest.raises(ValueError):
        load_dataset_ref("synthetic:kinetics:1")
    with pytest.raises(FileNotFoundError):
        load_dataset_ref(str(tmp_path / "missing.cglskel"))
