"""Optimizers and the supervised training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NonFiniteLoss
from .core import HENModel, loss_and_grads

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    total_steps: int = 20000
    optimizer: str = "adam"          # adam | sgd_momentum
    lr_decay: str = "cosine"         # cosine | none
    lr_min: float = 1e-5
    momentum: float = 0.9
    seed: int = 0
    loss_scale: float = 32.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.total_steps < 0:
            raise ConfigError("learning_rate must be >= 0, batch_size >= 1, total_steps >= 0")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_decay not in ("cosine", "none"):
            raise ConfigError(f"unknown lr_decay {self.lr_decay!r}")
        if self.loss_scale <= 0:
            raise ConfigError("loss_scale must be positive")


def lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.lr_decay == "none" or cfg.total_steps <= 1 or cfg.learning_rate == 0:
        return cfg.learning_rate
    t = min(step, cfg.total_steps) / cfg.total_steps
    lo = min(cfg.lr_min, cfg.learning_rate)
    return lo + 0.5 * (cfg.learning_rate - lo) * (1.0 + math.cos(math.pi * t))


@dataclass
class OptState:
    """Optimizer moments, one slot per parameter array."""

    kind: str
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def fresh(cls, model: HENModel, kind: str) -> "OptState":
        zeros = [np.zeros_like(p) for p in model.params()]
        return cls(kind, 0, zeros, [np.zeros_like(p) for p in model.params()] if kind == "adam" else [])

    def arrays(self) -> dict:
        out = {"t": np.array(self.t)}
        for i, a in enumerate(self.m):
            out[f"m{i}"] = a
        for i, a in enumerate(self.v):
            out[f"v{i}"] = a
        return out

    @classmethod
    def from_arrays(cls, kind: str, arrays) -> "OptState":
        m = [arrays[f"m{i}"] for i in range(sum(k.startswith("m") for k in arrays))]
        v = [arrays[f"v{i}"] for i in range(sum(k.startswith("v") for k in arrays))]
        return cls(kind, int(arrays["t"]), m, v)


def apply_update(model: HENModel, grads, state: OptState, lr: float, cfg: TrainConfig):
    state.t += 1
    if lr == 0:
        return
    params = model.params()
    if state.kind == "adam":
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1 ** state.t
        c2 = 1.0 - b2 ** state.t
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    else:
        for p, g, m in zip(params, grads, state.m):
            m *= cfg.momentum
            m += g
            p -= (lr * m).astype(p.dtype)


def stack_batch(batch):
    x = np.stack([s.input for s in batch])
    t = np.stack([s.target for s in batch])
    return x, t


def backward_and_step(model: HENModel, batch, cfg: TrainConfig, opt_state: OptState,
                      step: int | None = None) -> float:
    """One supervised update on ``batch``; returns the pre-update loss."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    x, t = stack_batch(batch)
    loss, grads = loss_and_grads(model, x, t)
    if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise NonFiniteLoss(f"non-finite loss {loss} at step {step}; "
                            f"max |target| {np.abs(t).max():.3g}, max |x| {np.abs(x).max():.3g}")
    lr = lr_at(cfg, opt_state.t if step is None else step)
    apply_update(model, grads, opt_state, lr, cfg)
    return loss


@dataclass
class LossRecord:
    step: int
    loss: float
    lr: float
    wall_ms: float


def train(model: HENModel, source, cfg: TrainConfig, opt_state: OptState | None = None,
          start_step: int = 0, on_step=None, log_every: int = 100) -> list[LossRecord]:
    """Train from ``start_step`` to ``cfg.total_steps``.

    The batch at step ``s`` depends only on ``(cfg.seed, s)``, so a run
    resumed from a checkpoint sees exactly the batches of an uninterrupted
    one. ``on_step(step, record, model, opt_state)`` runs after every update.
    """
    if opt_state is None:
        opt_state = OptState.fresh(model, cfg.optimizer)
    records = []
    t0 = time.perf_counter()
    for step in range(start_step, cfg.total_steps):
        batch = source.batch(cfg.batch_size, cfg.seed, step)
        lr = lr_at(cfg, step)
        loss = backward_and_step(model, batch, cfg, opt_state, step)
        rec = LossRecord(step, loss, lr, (time.perf_counter() - t0) * 1000.0)
        records.append(rec)
        if log_every and step % log_every == 0:
            log.info("step %d loss %.5f lr %.2e", step, loss, lr)
        if on_step is not None:
            on_step(step, rec, model, opt_state)
    return records
