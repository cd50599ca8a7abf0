"""Finite-difference verification of the hand-written reverse pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import HENModel, build_hen, forward_batch, loss_and_grads, mse_loss


@dataclass
class ParamReport:
    name: str
    size: int
    max_rel_err: float


@dataclass
class GradCheckReport:
    tolerance: float
    params: list[ParamReport] = field(default_factory=list)
    max_rel_err: float = 0.0
    # same check with the analytic gradient computed in double precision
    max_rel_err_double: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def lines(self):
        for p in self.params:
            yield f"{p.name:10s} n={p.size:5d} max_rel_err={p.max_rel_err:.3e}"
        yield (f"overall max_rel_err={self.max_rel_err:.3e} "
               f"(double {self.max_rel_err_double:.3e}) tol={self.tolerance:g} "
               f"{'PASS' if self.passed else 'FAIL'}")


def reduced_model(seed: int = 0, linear: bool = False, dtype=np.float32) -> HENModel:
    """Tiny model for tractable checks; ``linear`` drops every ReLU layer."""
    if linear:
        return build_hen((), (), seed=seed, loss_scale=4.0, input_size=None, dtype=dtype)
    return build_hen((4, 4), (1, 2), seed=seed, loss_scale=4.0, input_size=None, dtype=dtype)


def relu_shifts(model: HENModel, x, margin: float):
    """Constant pre-activation offsets moving every unit at least ``margin`` from 0."""
    shadow = model.astype(np.float64)
    _, _, cache = forward_batch(shadow, x.astype(np.float64), keep_cache=True)
    shifts = []
    for z in cache.preacts:
        s = np.zeros_like(z)
        near = np.abs(z) < margin
        sign = np.where(z[near] >= 0, 1.0, -1.0)
        s[near] = sign * margin - z[near]
        shifts.append(s)
    return shifts


def _rel_err(a, n, floor):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(model_small: HENModel, x=None, targets=None, tolerance: float = 1e-3,
                   h: float = 1e-3, nudge: float = 1e-2, floor: float = 1e-6,
                   seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients with central differences on a float64 shadow.

    ``max_rel_err`` uses the model's own precision for the analytic side,
    ``max_rel_err_double`` the float64 shadow. Relative errors use
    ``max(|a|, |n|, floor)`` as denominator.
    """
    rng = np.random.default_rng(seed)
    if x is None:
        x = rng.random((3, model_small.in_channels, 8, 8))
    if targets is None:
        targets = rng.uniform(-model_small.loss_scale, model_small.loss_scale, (len(x), model_small.out_channels))
    x = np.asarray(x, dtype=np.float64)
    shifts = relu_shifts(model_small, x, nudge)

    _, grads = loss_and_grads(model_small, x.astype(model_small.dtype), targets,
                              shifts=[s.astype(model_small.dtype) for s in shifts])
    shadow = model_small.astype(np.float64)
    _, grads64 = loss_and_grads(shadow, x, targets, shifts=shifts)

    def loss_of(m):
        raw, _, _ = forward_batch(m, x, shifts=shifts)
        return mse_loss(raw, targets, m.loss_scale)[0]

    report = GradCheckReport(tolerance)
    names = []
    for i in range(len(shadow.layers)):
        names += [f"conv{i}.w", f"conv{i}.b"]
    for name, p, g, g64 in zip(names, shadow.params(), grads, grads64):
        num = np.zeros(p.size)
        flat = p.reshape(-1)
        for j in range(p.size):
            old = flat[j]
            flat[j] = old + h
            lp = loss_of(shadow)
            flat[j] = old - h
            lm = loss_of(shadow)
            flat[j] = old
            num[j] = (lp - lm) / (2 * h)
        err = _rel_err(np.asarray(g, dtype=np.float64).reshape(-1), num, floor)
        err64 = _rel_err(g64.reshape(-1), num, floor)
        report.params.append(ParamReport(name, p.size, float(err.max())))
        report.max_rel_err = max(report.max_rel_err, float(err.max()))
        report.max_rel_err_double = max(report.max_rel_err_double, float(err64.max()))
    return report
