from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import Tensor


class ParameterSet:
    """Ordered name -> Tensor mapping. Iteration order is insertion order."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value, requires_grad: bool = True) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=requires_grad)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self._params.items() if p.requires_grad]

    def count(self) -> int:
        return int(sum(p.data.size for p in self._params.values()))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grad(self, name: str) -> np.ndarray:
        """Gradient of ``name``; zeros if the last backward did not reach it."""
        p = self._params[name]
        return np.zeros_like(p.data) if p.grad is None else p.grad

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if list(state) != list(self._params):
            missing = set(self._params) ^ set(state)
            raise KeyError(f"parameter name mismatch: {sorted(missing)}")
        for n, arr in state.items():
            if arr.shape != self._params[n].shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {self._params[n].shape}")
            self._params[n].data = np.array(arr, dtype=np.float64)

    def copy(self, requires_grad: bool | None = None) -> ParameterSet:
        out = ParameterSet()
        for n, p in self._params.items():
            rg = p.requires_grad if requires_grad is None else requires_grad
            out.add(n, p.data.copy(), requires_grad=rg)
        return out
