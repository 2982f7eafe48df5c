"""Accuracy-matrix metrics, order disparity and plot data.

Task indices in this module are 1-based to match the usual ``a[k][j]``
notation; ``AccuracyMatrix.rows[k - 1][j - 1]`` holds ``a[k][j]``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

BOUND_SERIES = "af_bound"
SCATTER_COLUMNS = ("series", "x", "y")


@dataclass(frozen=True)
class AccuracyMatrix:
    """Lower-triangular accuracies; row ``k`` has ``k`` entries."""

    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(float(v) for v in r) for r in self.rows)
        object.__setattr__(self, "rows", rows)
        for k, row in enumerate(rows, start=1):
            if len(row) != k:
                raise ValueError(f"row {k} has {len(row)} entries, expected {k}")
            for v in row:
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"accuracy {v} in row {k} outside [0, 1]")

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence[float]]) -> "AccuracyMatrix":
        return cls(tuple(tuple(r) for r in rows))

    @property
    def num_tasks(self) -> int:
        return len(self.rows)

    def entry(self, k: int, j: int) -> float:
        self._check_row(k)
        if not 1 <= j <= k:
            raise IndexError(f"a[{k}][{j}] is undefined")
        return self.rows[k - 1][j - 1]

    def _check_row(self, k: int) -> None:
        if not 1 <= k <= self.num_tasks:
            raise IndexError(f"row {k} out of range 1..{self.num_tasks}")

    def to_list(self) -> list[list[float]]:
        return [list(r) for r in self.rows]


def _as_matrix(m) -> AccuracyMatrix:
    return m if isinstance(m, AccuracyMatrix) else AccuracyMatrix.from_rows(m)


def average_accuracy(m, k: int) -> float:
    m = _as_matrix(m)
    m._check_row(k)
    return math.fsum(m.rows[k - 1]) / k


def forgetting(m, j: int, k: int) -> float:
    """``max_{l<k} a[l][j] - a[k][j]`` for ``j < k``."""
    m = _as_matrix(m)
    m._check_row(k)
    if not 1 <= j < k:
        raise ValueError(f"forgetting needs 1 <= j < k, got j={j}, k={k}")
    best = max(m.rows[l - 1][j - 1] for l in range(j, k))
    return best - m.rows[k - 1][j - 1]


def average_forgetting(m, k: int) -> float:
    m = _as_matrix(m)
    m._check_row(k)
    if k < 2:
        raise ValueError("average forgetting is undefined after the first task")
    return math.fsum(forgetting(m, j, k) for j in range(1, k)) / (k - 1)


def af_upper_bound(aa_k: float, a_kk: float, k: int) -> float:
    """Largest AF_k compatible with a given AA_k and last-task accuracy."""
    if k < 2:
        raise ValueError("the forgetting bound needs k >= 2")
    return 1.0 - (k / (k - 1)) * aa_k + a_kk / (k - 1)


def bound_line(aa: float, k: int) -> float:
    """Bound with the last task learned perfectly (``a_kk = 1``)."""
    return af_upper_bound(aa, 1.0, k)


def bound_violations(m, tol: float = 1e-9) -> list[int]:
    """Rows ``k >= 2`` where AF_k exceeds its bound by more than ``tol``."""
    m = _as_matrix(m)
    bad = []
    for k in range(2, m.num_tasks + 1):
        bound = af_upper_bound(average_accuracy(m, k), m.entry(k, k), k)
        if average_forgetting(m, k) > bound + tol:
            bad.append(k)
    return bad


def summarize_matrix(m) -> dict:
    """AA_k, AF_k and bound_k for every row (AF/bound are None at k = 1)."""
    m = _as_matrix(m)
    aa, af, bound = [], [], []
    for k in range(1, m.num_tasks + 1):
        aa.append(average_accuracy(m, k))
        if k == 1:
            af.append(None)
            bound.append(None)
        else:
            af.append(average_forgetting(m, k))
            bound.append(af_upper_bound(aa[-1], m.entry(k, k), k))
    return {"AA": aa, "AF": af, "bound": bound}


# ---------------------------------------------------------------------------
# order disparity


@dataclass(frozen=True)
class OrderCampaignRecord:
    """Final accuracy of every unit (task or class) under each order.

    ``orders[r]`` maps unit id to final accuracy; all orders cover the same
    units.  ``order_ids`` labels each order and is kept for provenance.
    """

    unit_kind: str
    orders: tuple[Mapping, ...]
    order_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.unit_kind not in ("task", "class"):
            raise ValueError(f"unit kind must be 'task' or 'class', got {self.unit_kind!r}")
        orders = tuple(dict(o) for o in self.orders)
        object.__setattr__(self, "orders", orders)
        if self.order_ids and len(self.order_ids) != len(orders):
            raise ValueError("order_ids must label every order")
        object.__setattr__(self, "order_ids", tuple(self.order_ids))
        if orders:
            units = set(orders[0])
            for r, o in enumerate(orders):
                if set(o) != units:
                    raise ValueError(f"order {r} reports units {sorted(o)}, expected {sorted(units)}")
                for v in o.values():
                    if not 0.0 <= v <= 1.0:
                        raise ValueError(f"accuracy {v} outside [0, 1]")

    @property
    def num_orders(self) -> int:
        return len(self.orders)

    @property
    def units(self) -> list:
        return sorted(self.orders[0]) if self.orders else []

    def _require_orders(self) -> None:
        if self.num_orders < 2:
            raise ValueError(f"order disparity needs at least 2 orders, got {self.num_orders}")


def opd(record: OrderCampaignRecord, unit) -> float:
    record._require_orders()
    vals = [o[unit] for o in record.orders]
    return max(vals) - min(vals)


def opd_all(record: OrderCampaignRecord) -> dict:
    return {u: opd(record, u) for u in record.units}


def mopd(record: OrderCampaignRecord) -> float:
    return max(opd_all(record).values())


def aopd(record: OrderCampaignRecord) -> float:
    vals = list(opd_all(record).values())
    return math.fsum(vals) / len(vals)


def aggregate_task_and_class_campaigns(
    task_campaign: OrderCampaignRecord, class_campaign: OrderCampaignRecord
) -> OrderCampaignRecord:
    """Pool two class-level campaigns into one with ``R_task + R_class`` orders.

    A task order is itself a class order, so the task campaign only has to
    carry per-class accuracies.
    """
    for c in (task_campaign, class_campaign):
        if c.unit_kind != "class":
            raise ValueError("both campaigns must be evaluated per class")
    if task_campaign.units != class_campaign.units:
        raise ValueError("campaigns cover different class sets")
    ids = ()
    if task_campaign.order_ids and class_campaign.order_ids:
        ids = task_campaign.order_ids + class_campaign.order_ids
    return OrderCampaignRecord("class", task_campaign.orders + class_campaign.orders, ids)


# ---------------------------------------------------------------------------
# reports and plot data


def mean_std(values: Sequence[float]) -> dict:
    """Mean and sample standard deviation (0 for a single value)."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("no values to summarise")
    std = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return {"mean": statistics.fmean(vals), "std": std, "n": len(vals)}


@dataclass
class MetricReport:
    """Per-method metric samples (one per repeat) reduced to mean and std."""

    samples: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    def add(self, method: str, metric: str, value: float) -> None:
        self.samples.setdefault(method, {}).setdefault(metric, []).append(float(value))

    def to_dict(self) -> dict:
        return {
            method: {name: mean_std(vals) for name, vals in sorted(metrics.items())}
            for method, metrics in sorted(self.samples.items())
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path


def scatter_rows(results: Iterable[tuple[str, float, float]], k: int = 5, samples: int = 21) -> list[tuple]:
    """Points ``(method, AA, AF)`` followed by the bound line over ``AA in [1/k, 1]``."""
    rows = [(str(m), float(aa), float(af)) for m, aa, af in results]
    if not rows:
        return []
    if k < 2:
        raise ValueError("the bound line needs k >= 2")
    for aa in np.linspace(1.0 / k, 1.0, samples):
        rows.append((BOUND_SERIES, float(aa), bound_line(float(aa), k)))
    return rows


def emit_scatter(results: Iterable[tuple[str, float, float]], path=None, k: int = 5, samples: int = 21) -> str:
    """CSV text with columns ``series,x,y``; written to ``path`` when given.

    An empty result set yields only the header.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCATTER_COLUMNS)
    for series, x, y in scatter_rows(results, k, samples):
        writer.writerow((series, repr(x), repr(y)))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_scatter(path) -> list[tuple[str, float, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SCATTER_COLUMNS:
            raise ValueError(f"unexpected scatter header {header}")
        return [(s, float(x), float(y)) for s, x, y in reader]
