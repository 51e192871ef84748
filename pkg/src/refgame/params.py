"""Named parameter tensors with gradient and optimizer-state storage."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, RefgameError


class ParamTensor:
    """A named real array plus its gradient and running mean-square accumulator."""

    __slots__ = ("name", "values", "grad", "opt_state")

    def __init__(self, name: str, values: np.ndarray):
        self.name = name
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.opt_state = np.zeros_like(self.values)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.shape})"


class ParamStore:
    """Insertion-ordered collection of ParamTensors with seeded initialization."""

    def __init__(self, rng: np.random.Generator | None = None):
        self._tensors: dict[str, ParamTensor] = {}
        self._rng = rng

    def matrix(self, name: str, out_dim: int, in_dim: int) -> ParamTensor:
        """Weight matrix initialized uniform(-a, a), a = sqrt(6 / (fan_in + fan_out))."""
        if self._rng is None:
            raise RefgameError("ParamStore has no rng; cannot initialize weights")
        a = np.sqrt(6.0 / (in_dim + out_dim))
        values = self._rng.uniform(-a, a, size=(out_dim, in_dim))
        return self._add(ParamTensor(name, values))

    def zeros(self, name: str, *shape: int) -> ParamTensor:
        return self._add(ParamTensor(name, np.zeros(shape)))

    def from_values(self, name: str, values: np.ndarray) -> ParamTensor:
        return self._add(ParamTensor(name, np.array(values, dtype=np.float64)))

    def _add(self, t: ParamTensor) -> ParamTensor:
        if t.name in self._tensors:
            raise RefgameError(f"duplicate parameter name {t.name!r}")
        self._tensors[t.name] = t
        return t

    def __getitem__(self, name: str) -> ParamTensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors.values())

    def __len__(self):
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def zero_grads(self) -> None:
        for t in self:
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of all values, keyed by name."""
        return {t.name: t.values.copy() for t in self}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, values in state.items():
            t = self._tensors.get(name)
            if t is None:
                raise RefgameError(f"unknown parameter {name!r} in state")
            if t.values.shape != values.shape:
                raise DimensionError(
                    f"parameter {name!r}: stored shape {values.shape} != model shape {t.values.shape}"
                )
            t.values[...] = values

    def snapshot(self) -> dict[str, dict[str, np.ndarray]]:
        """Copies of values and optimizer state (for best-checkpoint tracking)."""
        return {t.name: {"values": t.values.copy(), "opt_state": t.opt_state.copy()}
                for t in self}

    def restore(self, snap: dict[str, dict[str, np.ndarray]]) -> None:
        for name, entry in snap.items():
            t = self._tensors[name]
            t.values[...] = entry["values"]
            t.opt_state[...] = entry["opt_state"]
