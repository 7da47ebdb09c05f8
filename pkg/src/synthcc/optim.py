"""Adam optimizer and the validation-loss early-stopping rule shared by the trainers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamStore

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    skipped: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParamStore, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update, in place. Non-finite gradients skip the whole
    update (step not advanced) and are counted in state.skipped."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            log.warning("adam_step: non-finite gradient, update skipped")
            return
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction = np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for name, tensor in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        tensor.data -= (state.lr * correction) * m / (np.sqrt(v) + state.epsilon)


class EarlyStopper:
    """Stop when the validation loss has not improved for `patience` consecutive epochs.

    Improvement means strictly below the best loss seen so far; the best
    parameter snapshot is kept for restoring after the stop.
    """

    def __init__(self, patience: int = 2):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = -1
        self.best_arrays: dict | None = None
        self.streak = 0

    def update(self, epoch: int, val_loss: float, params: ParamStore) -> bool:
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.best_arrays = {k: v.copy() for k, v in params.arrays().items()}
            self.streak = 0
            return True
        self.streak += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.streak >= self.patience

    def restore_best(self, params: ParamStore) -> None:
        if self.best_arrays is not None:
            params.load_arrays(self.best_arrays)


def shuffled_batches(n: int, batch: int, rng: np.random.Generator):
    """Yield index arrays covering [0, n) in seeded-shuffled order."""
    order = rng.permutation(n)
    for start in range(0, n, batch):
        yield order[start : start + batch]
