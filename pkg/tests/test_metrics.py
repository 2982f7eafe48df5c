import csv
import json
import math

import numpy as np
import pytest

from cglbench.metrics import (
    BOUND_SERIES,
    AccuracyMatrix,
    MetricReport,
    OrderCampaignRecord,
    af_upper_bound,
    aggregate_task_and_class_campaigns,
    aopd,
    average_accuracy,
    average_forgetting,
    bound_line,
    bound_violations,
    emit_scatter,
    forgetting,
    mean_std,
    mopd,
    opd,
    read_scatter,
    summarize_matrix,
)
from oracles import naive_aa, naive_af, naive_opd, random_accuracy_matrix, bound_fuzz_violations


def test_aa_examples():
    m = [[0.9], [0.4, 0.8]]
    assert math.isclose(average_accuracy(m, 2), 0.6)
    ones = [[1.0] * k for k in range(1, 6)]
    assert all(average_accuracy(ones, k) == 1.0 for k in range(1, 6))
    with pytest.raises(IndexError):
        average_accuracy(m, 3)


def test_forgetting_examples():
    m = [[0.9], [0.3, 0.8]]
    assert math.isclose(forgetting(m, 1, 2), 0.6)
    assert forgetting([[0.2], [0.7, 0.5]], 1, 2) < 0
    with pytest.raises(ValueError):
        average_forgetting(m, 1)
    with pytest.raises(ValueError):
        forgetting(m, 2, 2)


def test_matrix_validation():
    with pytest.raises(ValueError):
        AccuracyMatrix.from_rows([[0.5], [0.5]])
    with pytest.raises(ValueError):
        AccuracyMatrix.from_rows([[1.5]])


def test_metrics_match_oracle_on_random_matrices(rng):
    for _ in range(50):
        b = int(rng.integers(1, 7))
        rows = random_accuracy_matrix(rng, b)
        m = AccuracyMatrix.from_rows(rows)
        for k in range(1, b + 1):
            assert abs(average_accuracy(m, k) - naive_aa(rows, k)) <= 1e-12
            if k > 1:
                assert abs(average_forgetting(m, k) - naive_af(rows, k)) <= 1e-12
        orders = [{u: float(rng.random()) for u in range(4)} for _ in range(int(rng.integers(2, 6)))]
        rec = OrderCampaignRecord("class", orders)
        for u in range(4):
            assert abs(opd(rec, u) - naive_opd(orders, u)) <= 1e-12
        assert abs(aopd(rec) - sum(naive_opd(orders, u) for u in range(4)) / 4) <= 1e-12


def test_bound_examples():
    assert af_upper_bound(0.5, 1.0, 2) == 1.0
    assert af_upper_bound(1.0, 1.0, 5) == 0.0
    assert math.isclose(bound_line(0.8, 5), 0.25)
    with pytest.raises(ValueError):
        af_upper_bound(0.5, 1.0, 1)


def test_bound_line_is_a_kk_one_specialisation(rng):
    for _ in range(100):
        k = int(rng.integers(2, 10))
        aa = float(rng.random())
        assert bound_line(aa, k) == af_upper_bound(aa, 1.0, k)


def test_bound_tight_cases():
    # earlier tasks perfect then fully forgotten, last task perfect
    m = [[1.0], [1.0, 1.0], [0.0, 0.0, 1.0]]
    k = 3
    assert math.isclose(average_forgetting(m, k), af_upper_bound(average_accuracy(m, k), 1.0, k))
    assert bound_violations(m) == []


def test_bound_fuzz_small(rng):
    assert bound_fuzz_violations(rng, 50_000) == 0


def test_fuzz_oracle_detects_false_bound(rng):
    assert bound_fuzz_violations(rng, 50_000, slack=0.05) > 0


def test_opd_examples():
    rec = OrderCampaignRecord("task", [{1: 1.0}, {1: 0.0}])
    assert opd(rec, 1) == 1.0
    same = OrderCampaignRecord("task", [{1: 0.4}, {1: 0.4}, {1: 0.4}])
    assert opd(same, 1) == 0.0
    rec = OrderCampaignRecord("task", [{0: 0.2, 1: 0.5}, {0: 0.5, 1: 0.55}, {0: 0.9, 1: 0.6}])
    assert math.isclose(opd(rec, 0), 0.7)
    assert math.isclose(aopd(rec), 0.4)
    assert math.isclose(mopd(rec), 0.7)
    assert mopd(rec) >= aopd(rec) >= 0


def test_opd_needs_two_orders():
    with pytest.raises(ValueError):
        opd(OrderCampaignRecord("task", [{0: 0.5}]), 0)


def test_campaign_record_invariants():
    with pytest.raises(ValueError):
        OrderCampaignRecord("task", [{0: 0.5}, {1: 0.5}])
    with pytest.raises(ValueError):
        OrderCampaignRecord("node", [{0: 0.5}])


def test_aggregation_counts_and_monotone(rng):
    def campaign(r):
        return OrderCampaignRecord("class", [{c: float(rng.random()) for c in range(10)} for _ in range(r)])

    task, cls = campaign(120), campaign(100)
    agg = aggregate_task_and_class_campaigns(task, cls)
    assert agg.num_orders == 220
    for c in range(10):
        assert opd(agg, c) >= max(opd(task, c), opd(cls, c))
    self_agg = aggregate_task_and_class_campaigns(task, task)
    assert all(opd(self_agg, c) == opd(task, c) for c in range(10))


def test_aggregation_rejects_mismatch():
    a = OrderCampaignRecord("class", [{0: 0.1, 1: 0.2}, {0: 0.3, 1: 0.2}])
    b = OrderCampaignRecord("class", [{0: 0.1, 2: 0.2}, {0: 0.3, 2: 0.2}])
    with pytest.raises(ValueError, match="class sets"):
        aggregate_task_and_class_campaigns(a, b)
    t = OrderCampaignRecord("task", [{0: 0.1}, {0: 0.3}])
    with pytest.raises(ValueError):
        aggregate_task_and_class_campaigns(t, t)


def test_scatter_points_below_line(tmp_path, rng):
    results = []
    for i in range(30):
        rows = random_accuracy_matrix(rng, 5)
        rows[-1][-1] = 1.0
        results.append((f"m{i % 3}", average_accuracy(rows, 5), average_forgetting(rows, 5)))
    path = tmp_path / "s.csv"
    emit_scatter(results, path, k=5)
    rows = read_scatter(path)
    line = [(x, y) for s, x, y in rows if s == BOUND_SERIES]
    assert line[0][0] == pytest.approx(0.2) and line[-1][0] == 1.0
    for s, x, y in rows:
        if s != BOUND_SERIES:
            assert y <= bound_line(x, 5) + 1e-9
        else:
            assert y == bound_line(x, 5)


def test_scatter_empty_is_header_only(tmp_path):
    text = emit_scatter([], tmp_path / "e.csv")
    assert text == "series,x,y\n"
    with open(tmp_path / "e.csv") as fh:
        assert list(csv.reader(fh)) == [["series", "x", "y"]]


def test_report_json_shape():
    rep = MetricReport()
    for v in (0.2, 0.4, 0.6):
        rep.add("bare", "AA", v)
    rep.add("bare", "AOPD", 0.5)
    data = json.loads(rep.to_json())
    assert data["bare"]["AA"]["mean"] == pytest.approx(0.4)
    assert data["bare"]["AA"]["std"] == pytest.approx(0.2)
    assert data["bare"]["AOPD"] == {"mean": 0.5, "std": 0.0, "n": 1}
    with pytest.raises(ValueError):
        mean_std([])


def test_summary_and_purity(rng):
    rows = random_accuracy_matrix(rng, 4)
    a, b = summarize_matrix(rows), summarize_matrix([list(r) for r in rows])
    assert a == b
    assert a["AF"][0] is None and len(a["AA"]) == 4
    for k in range(2, 5):
        assert a["AF"][k - 1] <= a["bound"][k - 1] + 1e-9
