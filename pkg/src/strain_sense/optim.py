"""First-order optimizers: plain gradient descent, Adagrad and Adam."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ShapeError

KINDS = ("gradient_descent", "adagrad", "adam")
_ALIASES = {"gd": "gradient_descent", "sgd": "gradient_descent", "gradientdescent": "gradient_descent"}


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "adam"
    learning_rate: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in KINDS:
            raise ConfigurationError(f"unknown optimizer {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.learning_rate}")

    @property
    def display_name(self) -> str:
        return {"gradient_descent": "Gradient Descent", "adagrad": "Adagrad", "adam": "Adam"}[self.kind]

    @classmethod
    def parse(cls, text: str) -> "OptimizerSpec":
        """Parse ``kind:lr``, e.g. ``adam:0.02`` or ``gd:0.0002``."""
        try:
            kind, lr = text.split(":")
            return cls(kind.strip(), float(lr))
        except ValueError as exc:
            raise ConfigurationError(f"bad optimizer spec {text!r}; expected kind:learning_rate") from exc


def init_state(params: dict, spec: OptimizerSpec) -> dict:
    if spec.kind == "gradient_descent":
        return {}
    if spec.kind == "adagrad":
        return {"accum": {k: np.zeros_like(v) for k, v in params.items()}}
    return {
        "t": 0,
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def optimizer_step(params: dict, grads: dict, state: dict, spec: OptimizerSpec):
    """Apply one update in place and return ``(params, state)``."""
    if params.keys() != grads.keys():
        raise ShapeError("params and grads name different tensors")
    for k in params:
        if np.shape(params[k]) != np.shape(grads[k]):
            raise ShapeError(f"{k}: param shape {np.shape(params[k])} != grad shape {np.shape(grads[k])}")
    lr = spec.learning_rate
    if spec.kind == "gradient_descent":
        for k, g in grads.items():
            params[k] -= lr * g
    elif spec.kind == "adagrad":
        acc = state["accum"]
        for k, g in grads.items():
            acc[k] += g * g
            params[k] -= lr * g / (np.sqrt(acc[k]) + spec.eps)
    else:
        state["t"] += 1
        t = state["t"]
        c1 = 1.0 - spec.beta1 ** t
        c2 = 1.0 - spec.beta2 ** t
        for k, g in grads.items():
            m, v = state["m"][k], state["v"][k]
            m *= spec.beta1
            m += (1.0 - spec.beta1) * g
            v *= spec.beta2
            v += (1.0 - spec.beta2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + spec.eps)
    return params, state
