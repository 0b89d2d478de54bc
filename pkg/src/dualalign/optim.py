"""Named trainable tensors with classic momentum SGD."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParameterSet:
    """Ordered name -> Tensor map with a momentum buffer per parameter.

    Only trainable tensors belong here; frozen layers stay out so an update
    can never touch them. Iteration order is insertion order, which keeps
    updates deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._velocity: dict[str, np.ndarray] = {}

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        if not tensor.requires_grad:
            raise ValueError(f"parameter {name} is not trainable")
        self._params[name] = tensor
        self._velocity[name] = np.zeros_like(tensor.data)

    def update(self, other: "ParameterSet") -> None:
        for name, tensor in other.items():
            self.add(name, tensor)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def velocity(self, name: str) -> np.ndarray:
        return self._velocity[name]

    def set_velocity(self, name: str, value: np.ndarray) -> None:
        if value.shape != self._velocity[name].shape:
            raise ValueError(f"velocity shape mismatch for {name}")
        self._velocity[name] = value.astype(self._params[name].data.dtype)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()


def sgd_momentum_step(params: ParameterSet, lr: float, momentum: float) -> None:
    """v <- momentum*v + grad; p <- p - lr*v; then clear all gradients.

    Every parameter must carry a gradient; a missing one means the forward
    pass silently skipped a trainable tensor, which is always a bug.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name} has no gradient")
    for name, p in params.items():
        v = params.velocity(name)
        v *= momentum
        v += p.grad
        p.data -= lr * v
        p.grad = None
