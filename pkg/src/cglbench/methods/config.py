from __future__ import annotations

from dataclasses import asdict, dataclass, replace

METHODS = ("bare", "joint", "ewc", "mas", "twp", "lwf", "gem", "replay")

# Best values found by grid search (GCN backbone), per dataset.
TUNED_PARAMS = {
    "ucla": {
        "ewc": dict(memory_strength=1e6),
        "mas": dict(memory_strength=100.0),
        "twp": dict(lambda_l=1e4, lambda_t=1e4, beta=0.01),
        "lwf": dict(lambda_dist=1.0, temperature=2.0),
        "gem": dict(memory_strength=5.0, frac_memories=0.2),
        "replay": dict(frac_memories=0.2),
    },
    "ntu": {
        "ewc": dict(memory_strength=1e6),
        "mas": dict(memory_strength=100.0),
        "twp": dict(lambda_l=100.0, lambda_t=1e4, beta=0.01),
        "lwf": dict(lambda_dist=0.1, temperature=2.0),
        "gem": dict(memory_strength=5.0, frac_memories=0.2),
        "replay": dict(frac_memories=0.2),
    },
}


@dataclass(frozen=True)
class MethodConfig:
    """Hyperparameters of one continual-learning strategy.

    ``memory_strength`` is the penalty weight for EWC/MAS and the dual
    margin for GEM. Only the fields relevant to ``method`` are read.
    """

    method: str = "bare"
    memory_strength: float = 0.0
    lambda_l: float = 1e4
    lambda_t: float = 1e4
    beta: float = 0.01
    lambda_dist: float = 1.0
    temperature: float = 2.0
    frac_memories: float = 0.2

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        for name in ("memory_strength", "lambda_l", "lambda_t", "beta", "lambda_dist"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.method == "lwf" and self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.method in ("gem", "replay") and not 0 < self.frac_memories <= 1:
            raise ValueError(f"frac_memories must lie in (0, 1], got {self.frac_memories}")

    def relevant(self) -> dict:
        """The fields this method actually consults (used in result keys)."""
        keys = {
            "ewc": ("memory_strength",),
            "mas": ("memory_strength",),
            "twp": ("lambda_l", "lambda_t", "beta"),
            "lwf": ("lambda_dist", "temperature"),
            "gem": ("memory_strength", "frac_memories"),
            "replay": ("frac_memories",),
        }.get(self.method, ())
        full = asdict(self)
        return {k: full[k] for k in keys}

    def with_params(self, **kw) -> "MethodConfig":
        return replace(self, **kw)


def tuned_defaults(method: str, dataset: str = "ucla") -> MethodConfig:
    cfg = MethodConfig(method=method, **TUNED_PARAMS.get(dataset, TUNED_PARAMS["ucla"]).get(method, {}))
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class TrainerConfig:
    """Per-task optimisation protocol: full-batch steps for ``epochs``."""

    epochs: int = 100
    learning_rate: float = 0.001
    optimizer: str = "adam"
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
