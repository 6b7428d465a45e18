"""Flat-array Adam, the training loss, and a finite-difference gradient checker.

Parameters are grouped (grid tables vs decoder) so each group can run its own
learning rate; within a group everything is one contiguous float array, which
keeps the update a handful of vectorized numpy statements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamHyper:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class ParamGroup:
    """One named flat parameter array plus its gradient and Adam state."""

    name: str
    values: np.ndarray
    hyper: AdamHyper
    grads: np.ndarray = None
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValueError("values must be a flat array")
        if self.grads is None:
            self.grads = np.zeros_like(self.values)
        if self.m is None:
            self.m = np.zeros_like(self.values)
        if self.v is None:
            self.v = np.zeros_like(self.values)

    def zero_grads(self):
        self.grads[:] = 0


class NonFiniteGradient(RuntimeError):
    """Raised when a step would apply NaN/Inf gradients; carries diagnostics."""


def adam_step(group: ParamGroup, lr: float | None = None) -> None:
    """Bias-corrected Adam update in place; gradients are cleared afterwards.

    ``lr`` overrides the group's base rate (used for schedules). A non-finite
    gradient aborts before touching any state.
    """
    g = group.grads
    if not np.isfinite(g).all():
        bad = np.flatnonzero(~np.isfinite(g))
        raise NonFiniteGradient(
            f"group '{group.name}': {bad.size} non-finite gradient entries "
            f"(first at flat index {bad[0]}) at step {group.t + 1}"
        )
    hp = group.hyper
    step_lr = hp.lr if lr is None else lr
    group.t += 1
    group.m *= hp.beta1
    group.m += (1.0 - hp.beta1) * g
    group.v *= hp.beta2
    group.v += (1.0 - hp.beta2) * np.square(g)
    m_hat = group.m / (1.0 - hp.beta1**group.t)
    v_hat = group.v / (1.0 - hp.beta2**group.t)
    group.values -= (step_lr * m_hat / (np.sqrt(v_hat) + hp.eps)).astype(
        group.values.dtype, copy=False
    )
    group.zero_grads()


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all scalars and its gradient w.r.t. ``pred``.

    Returns ``(loss, grad)`` with ``grad = 2 * (pred - target) / count``.
    Loss accumulates in float64 regardless of input dtype.
    """
    p = np.asarray(pred)
    t = np.asarray(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("mse_loss of empty arrays is undefined")
    diff = p - t
    loss = float(np.mean(np.square(diff, dtype=np.float64)))
    grad = (2.0 / p.size) * diff
    return loss, grad.astype(p.dtype, copy=False)


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_index: int
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    def __str__(self):
        denom = np.maximum(np.maximum(np.abs(self.analytic), np.abs(self.numeric)), 1e-8)
        k = int(np.argmax(np.abs(self.analytic - self.numeric) / denom))
        return (
            f"max rel err {self.max_rel_err:.3e} at flat index {self.worst_index} "
            f"(analytic {self.analytic[k]:.6e}, numeric {self.numeric[k]:.6e})"
        )


def grad_check(closure, values: np.ndarray, indices, h: float = 1e-3) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``closure(values_array, want_grad)`` must return ``(loss, grads)`` where
    grads is a flat array aligned with ``values`` (None when not requested).
    The closure is evaluated with perturbed copies; ``values`` is restored.
    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("need at least one index to check")
    _, grads = closure(values, True)
    analytic = np.asarray(grads, dtype=np.float64)[idx]
    numeric = np.empty(idx.size, dtype=np.float64)
    for k, i in enumerate(idx):
        old = values[i]
        values[i] = old + h
        lp, _ = closure(values, False)
        values[i] = old - h
        lm, _ = closure(values, False)
        values[i] = old
        numeric[k] = (lp - lm) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return GradCheckReport(
        max_rel_err=float(rel[worst]),
        worst_index=int(idx[worst]),
        analytic=analytic,
        numeric=numeric,
        indices=idx,
    )
