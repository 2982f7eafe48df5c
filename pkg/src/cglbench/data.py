"""Skeleton datasets, class-incremental task construction and learning orders."""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class DatasetProfile:
    name: str
    joints: int
    frames: int
    num_classes: int = 10
    seqs_per_class: int = 60

    @property
    def gcn_feature_length(self) -> int:
        return 3 * self.frames


UCLA_PROFILE = DatasetProfile("ucla", joints=20, frames=52, num_classes=10, seqs_per_class=60)
NTU_PROFILE = DatasetProfile("ntu", joints=25, frames=300, num_classes=10, seqs_per_class=60)
PROFILES = {"ucla": UCLA_PROFILE, "ntu": NTU_PROFILE}


@dataclass(frozen=True)
class SkeletonSequence:
    coords: np.ndarray  # frames x joints x 3
    label: int
    source_id: str


@dataclass
class SkeletonDataset:
    """Immutable collection of equally shaped skeleton sequences."""

    coords: np.ndarray  # N x frames x joints x 3
    labels: np.ndarray  # N
    num_classes: int
    source_ids: tuple[str, ...] = ()
    name: str = "dataset"
    _gcn_cache: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.coords.ndim != 4 or self.coords.shape[3] != 3:
            raise ValueError(f"coords must be N x frames x joints x 3, got {self.coords.shape}")
        if self.labels.shape != (self.coords.shape[0],):
            raise ValueError("one label per sequence required")
        if not np.isfinite(self.coords).all():
            raise ValueError("coordinates must be finite")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels outside [0, num_classes)")
        if not self.source_ids:
            self.source_ids = tuple(f"{self.name}:{i}" for i in range(len(self)))
        self.coords.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def frames(self) -> int:
        return self.coords.shape[1]

    @property
    def joints(self) -> int:
        return self.coords.shape[2]

    def sequence(self, i: int) -> SkeletonSequence:
        return SkeletonSequence(self.coords[i], int(self.labels[i]), self.source_ids[i])

    def gcn_features(self) -> np.ndarray:
        """Node features for every sequence, shape N x joints x 3*frames."""
        if self._gcn_cache is None:
            feats = np.ascontiguousarray(preprocess_gcn_batch(self.coords))
            feats.setflags(write=False)
            self._gcn_cache = feats
        return self._gcn_cache

    def inputs(self, kind: str, indices) -> np.ndarray:
        """Backbone inputs for ``indices``: node features for gcn, raw coords otherwise."""
        idx = np.asarray(indices, dtype=np.intp)
        if kind == "gcn":
            return self.gcn_features()[idx]
        return self.coords[idx]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.coords.shape, dtype=np.int64).tobytes())
        h.update(self.coords.tobytes())
        h.update(self.labels.tobytes())
        h.update(str(self.num_classes).encode())
        return h.hexdigest()


def preprocess_gcn(seq: SkeletonSequence | np.ndarray) -> np.ndarray:
    """Per-joint feature rows ``[x1, y1, z1, ..., xT, yT, zT]`` (joints x 3T)."""
    coords = seq.coords if isinstance(seq, SkeletonSequence) else np.asarray(seq, dtype=np.float64)
    frames, joints, _ = coords.shape
    return np.transpose(coords, (1, 0, 2)).reshape(joints, 3 * frames)


def preprocess_gcn_batch(coords: np.ndarray) -> np.ndarray:
    n, frames, joints, _ = coords.shape
    return np.transpose(coords, (0, 2, 1, 3)).reshape(n, joints, 3 * frames)


# ---------------------------------------------------------------------------
# synthetic data


def generate_synthetic(profile: DatasetProfile, seed: int, noise: float = 0.05) -> SkeletonDataset:
    """Oscillating joint-group motions, one signature per class.

    Classes are paired on a shared joint group and differ in frequency,
    amplitude and motion direction, so neighbouring classes are related but
    separable.  Each sequence starts at a random point of its cycle, which
    keeps the problem from being linearly trivial.  Coordinates are rounded to float32 so a binary round trip is
    exact.
    """
    if min(profile.joints, profile.frames, profile.num_classes, profile.seqs_per_class) < 1:
        raise ValueError("profile sizes must be positive")
    rng = np.random.default_rng(seed)
    j, t, c = profile.joints, profile.frames, profile.num_classes
    rest = rng.uniform(-1.0, 1.0, size=(j, 3))
    n_groups = max(1, math.ceil(c / 2))
    groups = np.array_split(rng.permutation(j), n_groups)
    time = np.arange(t) / t

    signatures = []
    for k in range(c):
        direction = rng.normal(size=3)
        signatures.append(
            dict(
                joints=groups[(k // 2) % n_groups],
                freq=1.0 + 1.5 * (k % 2) + rng.uniform(0.0, 0.5),
                amp=rng.uniform(0.4, 0.7),
                phase=rng.uniform(0.0, 2 * np.pi),
                direction=direction / np.linalg.norm(direction),
            )
        )

    n = c * profile.seqs_per_class
    coords = np.empty((n, t, j, 3))
    labels = np.repeat(np.arange(c), profile.seqs_per_class)
    for i, label in enumerate(labels):
        sig = signatures[label]
        amp = sig["amp"] * rng.uniform(0.8, 1.2)
        phase = sig["phase"] + rng.uniform(-np.pi, np.pi)
        wave = amp * np.sin(2 * np.pi * sig["freq"] * time + phase)
        seq = np.broadcast_to(rest, (t, j, 3)).copy()
        seq[:, sig["joints"], :] += wave[:, None, None] * sig["direction"][None, None, :]
        seq += noise * rng.normal(size=seq.shape)
        coords[i] = seq
    coords = coords.astype(np.float32).astype(np.float64)
    return SkeletonDataset(coords, labels, c, name=f"synthetic-{profile.name}-{seed}")


# ---------------------------------------------------------------------------
# tasks and curricula


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    class_ids: tuple[int, ...]
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def split(self, name: str) -> tuple[int, ...]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class Curriculum:
    """Ordered class-disjoint tasks; ``tasks[k]`` is presented k-th."""

    tasks: tuple[TaskSpec, ...]
    num_classes: int
    order_kind: str = "canonical"
    order_id: str = "canonical"

    def __post_init__(self):
        seen: set[int] = set()
        for task in self.tasks:
            overlap = seen.intersection(task.class_ids)
            if overlap:
                raise ValueError(f"task {task.task_id} repeats classes {sorted(overlap)}")
            seen.update(task.class_ids)

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def seen_classes(self, k: int) -> tuple[int, ...]:
        """Classes of the first ``k`` presented tasks."""
        if not 0 <= k <= self.num_tasks:
            raise ValueError(f"k={k} outside [0, {self.num_tasks}]")
        return tuple(sorted(c for task in self.tasks[:k] for c in task.class_ids))

    def class_order(self) -> tuple[int, ...]:
        return tuple(c for task in self.tasks for c in task.class_ids)

    def task_ids(self) -> tuple[int, ...]:
        return tuple(task.task_id for task in self.tasks)


def _check_permutation(order: Sequence[int], n: int, what: str) -> list[int]:
    order = [int(x) for x in order]
    if sorted(order) != list(range(n)):
        raise ValueError(f"{what} must be a permutation of 0..{n - 1}, got {order}")
    return order


def stratified_split(indices: np.ndarray, rng: np.random.Generator):
    """Shuffle and cut one class's indices 8:1:1."""
    idx = rng.permutation(np.sort(indices))
    n = idx.size
    n_train = int(round(0.8 * n))
    n_val = int(round(0.1 * n))
    if n >= 3:
        n_val = max(n_val, 1)
        n_train = min(n_train, n - n_val - 1)
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


def build_tasks(
    dataset: SkeletonDataset,
    class_order: Sequence[int],
    classes_per_task: int = 2,
    split_seed: int = 0,
    order_kind: str = "canonical",
) -> Curriculum:
    """Group ``class_order`` into consecutive tasks with per-class 8:1:1 splits.

    The split of each class depends only on ``(split_seed, class)``, so the
    same sample lands in the same split under every learning order.
    """
    num_classes = dataset.num_classes
    order = _check_permutation(class_order, num_classes, "class_order")
    if classes_per_task < 1 or num_classes % classes_per_task:
        raise ValueError(f"{num_classes} classes cannot form tasks of {classes_per_task}")
    per_class = {}
    for c in range(num_classes):
        rng = np.random.default_rng([split_seed, c])
        per_class[c] = stratified_split(np.flatnonzero(dataset.labels == c), rng)
    tasks = []
    for t in range(num_classes // classes_per_task):
        cls = tuple(order[t * classes_per_task:(t + 1) * classes_per_task])
        parts = [np.concatenate([per_class[c][s] for c in cls]) for s in range(3)]
        tasks.append(TaskSpec(t, cls, *(tuple(int(i) for i in np.sort(p)) for p in parts)))
    if order == list(range(num_classes)):
        kind, oid = order_kind, "canonical"
    else:
        kind = "class-shuffle" if order_kind == "canonical" else order_kind
        oid = "class:" + "-".join(map(str, order))
    return Curriculum(tuple(tasks), num_classes, kind, oid)


def permute_task_order(curriculum: Curriculum, permutation: Sequence[int]) -> Curriculum:
    """Present the same tasks in a new order; ``permutation`` lists task ids."""
    perm = _check_permutation(permutation, curriculum.num_tasks, "task permutation")
    by_id = {task.task_id: task for task in curriculum.tasks}
    if sorted(by_id) != list(range(curriculum.num_tasks)):
        raise ValueError("curriculum task ids are not 0..B-1")
    if perm == list(range(curriculum.num_tasks)) and curriculum.order_kind == "canonical":
        return replace(curriculum, tasks=tuple(by_id[t] for t in perm))
    return replace(
        curriculum,
        tasks=tuple(by_id[t] for t in perm),
        order_kind="task-permutation",
        order_id="task:" + "-".join(map(str, perm)),
    )


def task_order_to_class_order(task_order: Sequence[int], classes_per_task: int = 2) -> list[int]:
    """Class order equivalent to presenting canonical tasks in ``task_order``.

    Canonical task ``t`` owns classes ``t*cpt .. t*cpt + cpt - 1``.
    """
    order = _check_permutation(task_order, len(task_order), "task order")
    return [t * classes_per_task + i for t in order for i in range(classes_per_task)]


def all_task_orders(num_tasks: int) -> list[tuple[int, ...]]:
    return list(itertools.permutations(range(num_tasks)))


def sample_task_orders(num_tasks: int, count: int, seed: int) -> list[tuple[int, ...]]:
    """``count`` distinct task permutations drawn uniformly without repetition."""
    total = math.factorial(num_tasks)
    if count > total:
        raise ValueError(f"cannot draw {count} distinct orders of {num_tasks} tasks ({total} exist)")
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=count, replace=False)
    return [_nth_permutation(num_tasks, int(i)) for i in picks]


def _nth_permutation(n: int, index: int) -> tuple[int, ...]:
    items = list(range(n))
    out = []
    for k in range(n, 0, -1):
        q, index = divmod(index, math.factorial(k - 1))
        out.append(items.pop(q))
    return tuple(out)


def sample_class_orders(num_classes: int, count: int, seed: int) -> list[tuple[int, ...]]:
    """``count`` distinct uniformly random class permutations."""
    if count > math.factorial(num_classes):
        raise ValueError("more class orders requested than exist")
    rng = np.random.default_rng(seed)
    out: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    while len(out) < count:
        perm = tuple(int(x) for x in rng.permutation(num_classes))
        if perm not in seen:
            seen.add(perm)
            out.append(perm)
    return out


def parse_order_id(order_id: str) -> tuple[str, list[int] | None]:
    """Inverse of the ``order_id`` strings written into curricula."""
    if order_id == "canonical":
        return "canonical", None
    kind, _, body = order_id.partition(":")
    values = [int(x) for x in body.split("-")] if body else []
    if kind == "task":
        return "task-permutation", values
    if kind == "class":
        return "class-shuffle", values
    raise ValueError(f"unrecognised order id {order_id!r}")


def curriculum_for_order(
    dataset: SkeletonDataset, order_id: str, classes_per_task: int = 2, split_seed: int = 0
) -> Curriculum:
    kind, values = parse_order_id(order_id)
    base = build_tasks(dataset, range(dataset.num_classes), classes_per_task, split_seed)
    if kind == "canonical":
        return base
    if kind == "task-permutation":
        return permute_task_order(base, values)
    return build_tasks(dataset, values, classes_per_task, split_seed)


def union_indices(tasks: Iterable[TaskSpec], split: str) -> np.ndarray:
    parts = [np.asarray(t.split(split), dtype=np.intp) for t in tasks]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.intp)
