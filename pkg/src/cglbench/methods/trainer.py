"""One trainer contract for every continual-learning strategy."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..backbones import Model, clone_model, model_from_state
from ..data import Curriculum, SkeletonDataset, TaskSpec
from ..optim import make_optimizer
from ..tensor import Tape, cross_entropy
from .config import MethodConfig, TrainerConfig
from .gem import gem_project
from .regularizers import (
    ImportanceMap,
    ewc_importance,
    importance_penalty,
    lwf_loss,
    mas_importance,
    twp_importance,
)

CHECKPOINT_VERSION = 1


class DataSource:
    """Read access to backbone inputs by sample index.

    Every read goes through :meth:`fetch`, which makes it the single place
    to audit which samples a trainer touched.
    """

    def __init__(self, dataset: SkeletonDataset, kind: str = "gcn"):
        self.dataset = dataset
        self.kind = kind

    def fetch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.intp)
        return self.dataset.inputs(self.kind, idx), self.dataset.labels[idx]


@dataclass
class EpisodicMemory:
    """Per-task stored samples; ``indices`` are dataset row ids."""

    frac: float
    tasks: list[dict] = field(default_factory=list)

    def capacity(self, n_train: int) -> int:
        return math.ceil(self.frac * n_train)

    def add_task(self, task: TaskSpec, source: DataSource, rng: np.random.Generator) -> None:
        train = np.asarray(task.train, dtype=np.intp)
        k = self.capacity(train.size)
        chosen = np.sort(rng.choice(train, size=k, replace=False))
        x, y = source.fetch(chosen)
        self.tasks.append({"task_id": task.task_id, "indices": chosen, "inputs": x, "labels": y})

    def all_indices(self) -> np.ndarray:
        if not self.tasks:
            return np.zeros(0, dtype=np.intp)
        return np.concatenate([t["indices"] for t in self.tasks])


@dataclass
class MethodState:
    """Everything a strategy carries from one task to the next."""

    method: str
    completed_tasks: list[TaskSpec] = field(default_factory=list)
    importances: list[ImportanceMap] = field(default_factory=list)
    memory: EpisodicMemory | None = None
    old_model: Model | None = None

    @property
    def seen_classes(self) -> tuple[int, ...]:
        return tuple(sorted(c for t in self.completed_tasks for c in t.class_ids))


def new_state(mcfg: MethodConfig) -> MethodState:
    mcfg.validate()
    memory = EpisodicMemory(mcfg.frac_memories) if mcfg.method in ("gem", "replay") else None
    return MethodState(mcfg.method, memory=memory)


def replay_mix(train_indices, memory: EpisodicMemory | None) -> np.ndarray:
    """Current-task training rows followed by every stored memory row."""
    current = np.asarray(train_indices, dtype=np.intp)
    if memory is None or not memory.tasks:
        return current
    return np.concatenate([current, memory.all_indices()])


def training_indices(task: TaskSpec, state: MethodState, mcfg: MethodConfig) -> np.ndarray:
    if mcfg.method == "joint":
        past = [np.asarray(t.train, dtype=np.intp) for t in state.completed_tasks]
        return np.concatenate(past + [np.asarray(task.train, dtype=np.intp)])
    if mcfg.method == "replay":
        return replay_mix(task.train, state.memory)
    return np.asarray(task.train, dtype=np.intp)


def _active_mask(classes, n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[list(classes)] = True
    return mask


def _flat_grad(model: Model) -> np.ndarray:
    return np.concatenate([p.grad.ravel() for p in model.params.values()])


def _set_flat_grad(model: Model, vec: np.ndarray) -> None:
    offset = 0
    for p in model.params.values():
        n = p.size
        p.grad = vec[offset:offset + n].reshape(p.shape).copy()
        offset += n


def _loss_grad(model: Model, x, y, mask) -> np.ndarray:
    with Tape() as tape:
        loss = cross_entropy(model.forward(x), y, mask)
    tape.backward(loss)
    return _flat_grad(model)


def _grad_norm_term(model: Model, x, y, mask, beta: float, step: float = 1e-4) -> np.ndarray:
    """Gradient of ``beta * |grad L|`` via a central-difference Hessian-vector product."""
    theta = model.state_vector()
    g = _loss_grad(model, x, y, mask)
    norm = np.linalg.norm(g)
    if norm == 0:
        return np.zeros_like(g)
    u = g / norm
    model.load_state_vector(theta + step * u)
    g_plus = _loss_grad(model, x, y, mask)
    model.load_state_vector(theta - step * u)
    g_minus = _loss_grad(model, x, y, mask)
    model.load_state_vector(theta)
    for p in model.params.values():
        p.grad = None
    return beta * (g_plus - g_minus) / (2 * step)


def train_task(
    model: Model,
    state: MethodState,
    task: TaskSpec,
    source: DataSource,
    mcfg: MethodConfig,
    tcfg: TrainerConfig,
) -> tuple[Model, MethodState]:
    """Train ``model`` on one task with the strategy in ``mcfg``.

    Full-batch optimisation for ``tcfg.epochs`` steps; afterwards the method
    state is extended (importance, memory, frozen model).
    """
    mcfg.validate()
    tcfg.validate()
    if state.method != mcfg.method:
        raise ValueError(f"state belongs to {state.method!r}, config is {mcfg.method!r}")
    prior = set(state.seen_classes)
    if prior.intersection(task.class_ids):
        raise ValueError(f"task {task.task_id} reuses seen classes {sorted(prior & set(task.class_ids))}")

    n_classes = model.config.num_classes
    active = sorted(prior | set(task.class_ids))
    mask = _active_mask(active, n_classes)
    x, y = source.fetch(training_indices(task, state, mcfg))
    params = model.parameters()
    opt = make_optimizer(tcfg.optimizer, params, tcfg.learning_rate)
    method = mcfg.method
    use_penalty = method in ("ewc", "mas", "twp") and bool(state.importances)
    use_lwf = method == "lwf" and state.old_model is not None and bool(prior)
    use_gem = method == "gem" and state.memory is not None and bool(state.memory.tasks)

    for _ in range(tcfg.epochs):
        with Tape() as tape:
            if use_lwf:
                loss = lwf_loss(model, state.old_model, x, y, active, prior, mcfg.lambda_dist, mcfg.temperature)
            else:
                loss = cross_entropy(model.forward(x), y, mask)
            if use_penalty:
                loss = loss + importance_penalty(model, state.importances, mcfg)
        tape.backward(loss)

        if use_gem:
            g = _flat_grad(model)
            rows = [_loss_grad(model, mem["inputs"], mem["labels"], mask) for mem in state.memory.tasks]
            m = np.stack(rows)
            # project only on conflict, as in the reference GEM code
            g_new = gem_project(g, m, margin=mcfg.memory_strength) if np.any(m @ g < 0) else g
            _set_flat_grad(model, g_new)
        elif method == "twp" and mcfg.beta > 0:
            g = _flat_grad(model)
            g = g + _grad_norm_term(model, x, y, mask, mcfg.beta)
            _set_flat_grad(model, g)
        opt.step()

    _after_task(model, state, task, source, mcfg, tcfg, active)
    return model, state


def _after_task(model, state, task, source, mcfg, tcfg, active) -> None:
    method = mcfg.method
    if method in ("ewc", "mas", "twp"):
        x, y = source.fetch(task.train)
        if method == "ewc":
            imp = ewc_importance(model, x, y, active)
        elif method == "mas":
            imp = mas_importance(model, x, active)
        else:
            imp = twp_importance(model, x, y, active)
        imp.check(model)
        state.importances.append(imp)
    if state.memory is not None:
        rng = np.random.default_rng([tcfg.seed, 104729, len(state.completed_tasks)])
        state.memory.add_task(task, source, rng)
    if method == "lwf":
        frozen = clone_model(model)
        for p in frozen.params.values():
            p.requires_grad = False
        state.old_model = frozen
    state.completed_tasks.append(task)


@dataclass
class EvalResult:
    row: list[float]
    class_accuracy: dict[int, float]


def evaluate(model: Model, curriculum: Curriculum, k: int, source: DataSource, split: str = "test") -> EvalResult:
    """Accuracy row after training through the first ``k`` tasks.

    Predictions are the argmax over classes seen so far; task accuracy is the
    macro average of its class accuracies.
    """
    seen = np.asarray(curriculum.seen_classes(k), dtype=np.intp)
    class_acc: dict[int, float] = {}
    row = []
    for task in curriculum.tasks[:k]:
        idx = task.split(split)
        x, y = source.fetch(idx)
        logits = model.forward(x).data
        pred = seen[np.argmax(logits[:, seen], axis=1)]
        accs = []
        for c in task.class_ids:
            sel = y == c
            acc = float(np.mean(pred[sel] == c)) if sel.any() else 0.0
            class_acc[int(c)] = acc
            accs.append(acc)
        row.append(float(np.mean(accs)))
    return EvalResult(row, class_acc)


# ---------------------------------------------------------------------------
# checkpoints


def _task_to_json(t: TaskSpec) -> dict:
    return {"task_id": t.task_id, "class_ids": list(t.class_ids), "train": list(t.train),
            "val": list(t.val), "test": list(t.test)}


def _task_from_json(d: dict) -> TaskSpec:
    return TaskSpec(int(d["task_id"]), tuple(d["class_ids"]), tuple(d["train"]), tuple(d["val"]), tuple(d["test"]))


def save_state(path, state: MethodState) -> Path:
    """Write ``state`` as a versioned ``.npz`` archive."""
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    meta = {
        "version": CHECKPOINT_VERSION,
        "method": state.method,
        "completed_tasks": [_task_to_json(t) for t in state.completed_tasks],
        "importances": [],
        "memory": None,
        "old_model": None,
    }
    for i, imp in enumerate(state.importances):
        meta["importances"].append({"kind": imp.kind, "names": list(imp.values), "topology": imp.topology is not None})
        for name in imp.values:
            arrays[f"imp{i}/values/{name}"] = imp.values[name]
            arrays[f"imp{i}/anchor/{name}"] = imp.anchor[name]
            if imp.topology is not None:
                arrays[f"imp{i}/topology/{name}"] = imp.topology[name]
    if state.memory is not None:
        meta["memory"] = {"frac": state.memory.frac, "tasks": [int(t["task_id"]) for t in state.memory.tasks]}
        for i, t in enumerate(state.memory.tasks):
            for key in ("indices", "inputs", "labels"):
                arrays[f"mem{i}/{key}"] = t[key]
    if state.old_model is not None:
        meta["old_model"] = list(state.old_model.params)
        for name, p in state.old_model.params.items():
            arrays[f"old/{name}"] = p.data
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_state(path, model_template: Model | None = None) -> MethodState:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        state = MethodState(meta["method"], [_task_from_json(t) for t in meta["completed_tasks"]])
        for i, info in enumerate(meta["importances"]):
            names = info["names"]
            state.importances.append(
                ImportanceMap(
                    info["kind"],
                    {n: z[f"imp{i}/values/{n}"] for n in names},
                    {n: z[f"imp{i}/anchor/{n}"] for n in names},
                    {n: z[f"imp{i}/topology/{n}"] for n in names} if info["topology"] else None,
                )
            )
        if meta["memory"] is not None:
            mem = EpisodicMemory(meta["memory"]["frac"])
            for i, tid in enumerate(meta["memory"]["tasks"]):
                mem.tasks.append({"task_id": tid, **{k: z[f"mem{i}/{k}"] for k in ("indices", "inputs", "labels")}})
            state.memory = mem
        if meta["old_model"] is not None:
            if model_template is None:
                raise ValueError("restoring a frozen model needs a model template")
            old = model_from_state(model_template.config, model_template.graph,
                                   {n: z[f"old/{n}"] for n in meta["old_model"]})
            for p in old.params.values():
                p.requires_grad = False
            state.old_model = old
    return state
