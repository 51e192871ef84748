"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .params import ParamTensor
from .tape import Tape, Var


@dataclass
class TensorCheck:
    name: str
    max_err: float
    worst_entry: tuple[int, ...]
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    checks: list[TensorCheck] = field(default_factory=list)

    @property
    def max_err(self) -> float:
        return max((c.max_err for c in self.checks), default=0.0)

    def failures(self, tol: float) -> list[TensorCheck]:
        return [c for c in self.checks if c.max_err > tol]

    def ok(self, tol: float) -> bool:
        return not self.failures(tol)

    def __str__(self):
        lines = [f"{c.name}: max rel err {c.max_err:.3e} at {c.worst_entry} "
                 f"(analytic {c.analytic:.6e}, fd {c.numeric:.6e})" for c in self.checks]
        return "\n".join(lines)


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def grad_check(build_loss: Callable[[], Var], params: Sequence[ParamTensor],
               h: float = 1e-5, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    build_loss must rebuild the same scalar loss from the current parameter
    values on every call (all sampled actions frozen). Every entry of every
    tensor is probed unless max_entries caps it, in which case a random
    subsample (seeded rng) is used per tensor.

    Relative error is |analytic - fd| / max(1, |analytic|, |fd|), which
    degrades to absolute error below unit scale.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    report = GradCheckReport()
    for p, ana in zip(params, analytic):
        flat = p.values.reshape(-1)
        n = flat.shape[0]
        if max_entries is not None and n > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(n, size=max_entries, replace=False)
        else:
            idxs = range(n)
        worst = TensorCheck(p.name, 0.0, (), 0.0, 0.0)
        ana_flat = ana.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            up = float(build_loss().value)
            flat[i] = orig - h
            down = float(build_loss().value)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            err = _rel_err(float(ana_flat[i]), fd)
            if err >= worst.max_err:
                worst = TensorCheck(p.name, err, np.unravel_index(i, p.values.shape),
                                    float(ana_flat[i]), fd)
        report.checks.append(worst)
    return report
