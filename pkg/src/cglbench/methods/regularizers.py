"""Importance estimates and penalties for EWC, MAS, TWP and LwF.

Importance functions accept any model exposing ``params`` (name -> Tensor)
and ``forward(x)``; TWP additionally needs ``forward(x, return_messages=True)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..tensor import (
    Tape,
    Tensor,
    cross_entropy,
    log_softmax,
    mul,
    scale,
    sub,
    take,
    tsum,
)


@dataclass
class ImportanceMap:
    """Per-parameter nonnegative weights anchored at a parameter snapshot."""

    kind: str
    values: dict[str, np.ndarray]
    anchor: dict[str, np.ndarray]
    topology: dict[str, np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    def check(self, model) -> None:
        keys = set(model.params)
        for name, table in (("values", self.values), ("anchor", self.anchor), ("topology", self.topology)):
            if table is None:
                continue
            if set(table) != keys:
                raise ValueError(f"{self.kind} {name} keys do not match the model parameters")
            if name != "anchor":
                for v in table.values():
                    if not np.all(np.isfinite(v)) or np.any(v < 0):
                        raise ValueError(f"{self.kind} importance must be finite and nonnegative")


def _snapshot(model) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in model.params.items()}


def _active_idx(active_classes, n_classes: int) -> np.ndarray:
    if active_classes is None:
        return np.arange(n_classes)
    return np.asarray(sorted(active_classes), dtype=np.intp)


def _mask(active_classes, n_classes: int) -> np.ndarray:
    mask = np.zeros(n_classes, dtype=bool)
    mask[_active_idx(active_classes, n_classes)] = True
    return mask


def per_sample_gradients(model, inputs: np.ndarray, objective: Callable, reduce: Callable) -> dict[str, np.ndarray]:
    """Average ``reduce(grad)`` of ``objective(model, x_i, i)`` over samples.

    ``reduce`` maps a raw gradient array to its per-sample contribution
    (square for Fisher, absolute value for MAS/TWP).
    """
    n = len(inputs)
    if n == 0:
        raise ValueError("importance estimation needs at least one sample")
    params = model.params
    acc = {k: np.zeros(p.shape) for k, p in params.items()}
    for i in range(n):
        for p in params.values():
            p.grad = None
        with Tape() as tape:
            out = objective(model, inputs[i:i + 1], i)
        tape.backward(out)
        for k, p in params.items():
            if p.grad is not None:
                acc[k] += reduce(p.grad)
            p.grad = None
    return {k: v / n for k, v in acc.items()}


def ewc_importance(model, inputs: np.ndarray, labels: np.ndarray, active_classes=None) -> ImportanceMap:
    """Empirical diagonal Fisher: mean squared score of the true label."""
    labels = np.asarray(labels)

    def objective(m, x, i):
        logits = m.forward(x)
        return cross_entropy(logits, labels[i:i + 1], _mask(active_classes, logits.shape[1]))

    values = per_sample_gradients(model, inputs, objective, np.square)
    return ImportanceMap("ewc", values, _snapshot(model))


def _squared_output_norm(m, x, active_classes):
    logits = m.forward(x)
    idx = _active_idx(active_classes, logits.shape[1])
    sub_logits = logits if idx.size == logits.shape[1] else take(logits, idx, axis=1)
    return tsum(mul(sub_logits, sub_logits))


def mas_importance(model, inputs: np.ndarray, active_classes=None) -> ImportanceMap:
    """Mean absolute gradient of the squared L2 norm of the active logits."""
    values = per_sample_gradients(
        model, inputs, lambda m, x, i: _squared_output_norm(m, x, active_classes), np.abs
    )
    return ImportanceMap("mas", values, _snapshot(model))


def twp_importance(model, inputs: np.ndarray, labels: np.ndarray, active_classes=None) -> ImportanceMap:
    """Loss sensitivity plus aggregated-message (topology) sensitivity.

    The topology response of a GCN layer is the squared norm of its
    aggregated messages ``A_hat H_l``, summed over graph layers.
    """
    labels = np.asarray(labels)

    def loss_obj(m, x, i):
        logits = m.forward(x)
        return cross_entropy(logits, labels[i:i + 1], _mask(active_classes, logits.shape[1]))

    def topo_obj(m, x, i):
        try:
            _, messages = m.forward(x, return_messages=True)
        except TypeError:
            messages = []
        if not messages:
            raise ValueError("TWP needs a backbone with graph layers")
        total = None
        for msg in messages:
            term = tsum(mul(msg, msg))
            total = term if total is None else total + term
        return total

    loss_values = per_sample_gradients(model, inputs, loss_obj, np.abs)
    topo_values = per_sample_gradients(model, inputs, topo_obj, np.abs)
    return ImportanceMap("twp", loss_values, _snapshot(model), topology=topo_values)


def quadratic_penalty(model, coefficients: dict[str, np.ndarray], anchor: dict[str, np.ndarray]) -> Tensor:
    """``sum_i c_i (theta_i - anchor_i)^2`` as a differentiable scalar."""
    total = None
    for name, p in model.params.items():
        d = sub(p, Tensor(anchor[name]))
        term = tsum(mul(Tensor(coefficients[name]), mul(d, d)))
        total = term if total is None else total + term
    return total


def importance_penalty(model, maps: list[ImportanceMap], mcfg) -> Tensor | None:
    """Sum of per-task penalties for the configured regularization method."""
    total = None
    for imp in maps:
        if imp.kind == "ewc":
            term = scale(quadratic_penalty(model, imp.values, imp.anchor), 0.5 * mcfg.memory_strength)
        elif imp.kind == "mas":
            term = scale(quadratic_penalty(model, imp.values, imp.anchor), mcfg.memory_strength)
        elif imp.kind == "twp":
            coef = {
                k: mcfg.lambda_l * imp.values[k] + mcfg.lambda_t * imp.topology[k] for k in imp.values
            }
            term = quadratic_penalty(model, coef, imp.anchor)
        else:
            raise ValueError(f"no penalty for importance kind {imp.kind!r}")
        total = term if total is None else total + term
    return total


def distillation_loss(new_logits: Tensor, old_logits: np.ndarray, old_classes, temperature: float) -> Tensor:
    """``T^2 * CE(softmax(old/T), softmax(new/T))`` over ``old_classes``, batch mean."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    idx = np.asarray(sorted(old_classes), dtype=np.intp)
    old = np.asarray(old_logits, dtype=np.float64)[:, idx] / temperature
    old = old - old.max(axis=1, keepdims=True)
    target = np.exp(old)
    target /= target.sum(axis=1, keepdims=True)
    new = scale(take(new_logits, idx, axis=1), 1.0 / temperature)
    ce = tsum(mul(log_softmax(new, axis=1), Tensor(target)))
    return scale(ce, -(temperature**2) / new_logits.shape[0])


def lwf_loss(
    new_model,
    old_model,
    inputs: np.ndarray,
    labels: np.ndarray,
    active_classes,
    old_classes,
    lambda_dist: float,
    temperature: float,
) -> Tensor:
    """Cross-entropy on the active classes plus softened-output distillation."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = new_model.forward(inputs)
    loss = cross_entropy(logits, labels, _mask(active_classes, logits.shape[1]))
    if old_model is None or not old_classes or lambda_dist == 0:
        return loss
    old_logits = old_model.forward(inputs).data
    return loss + scale(distillation_loss(logits, old_logits, old_classes, temperature), lambda_dist)


__all__ = [
    "ImportanceMap",
    "per_sample_gradients",
    "ewc_importance",
    "mas_importance",
    "twp_importance",
    "quadratic_penalty",
    "importance_penalty",
    "distillation_loss",
    "lwf_loss",
]
