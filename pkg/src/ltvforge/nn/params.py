from __future__ import annotations

from collections.abc import Iterator

import numpy as np


class ParamSet:
    """Named float64 tensors with parallel gradient buffers and AdamW state.

    ``buffers`` holds non-trainable state (batch-norm running statistics);
    it is checkpointed with the parameters but never touched by the optimizer.
    """

    def __init__(self) -> None:
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.first_moment: dict[str, np.ndarray] = {}
        self.second_moment: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> str:
        if name in self.values:
            raise KeyError(f"parameter {name!r} registered twice")
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        self.first_moment[name] = np.zeros_like(value)
        self.second_moment[name] = np.zeros_like(value)
        return name

    def add_buffer(self, name: str, value: np.ndarray) -> str:
        self.buffers[name] = np.array(value, dtype=np.float64)
        return name

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def copy(self) -> ParamSet:
        out = ParamSet()
        for name, value in self.values.items():
            out.add(name, value.copy())
            out.first_moment[name][...] = self.first_moment[name]
            out.second_moment[name][...] = self.second_moment[name]
        for name, value in self.buffers.items():
            out.add_buffer(name, value.copy())
        out.step = self.step
        return out
