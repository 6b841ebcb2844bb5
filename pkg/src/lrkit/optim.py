"""Optimizer update rules over flat float64 parameter vectors.

Updates are pure: each step takes (params, state, gradient, lr) and
returns fresh arrays, which keeps trials replayable and lets callers
snapshot parameters without defensive copies.

Conventions, with g the gradient of the loss at the current params:

* sgd:       theta' = theta - lr * g
* momentum:  v' = mu * v - lr * g;  theta' = theta + v'
* adam:      m' = b1 * m + (1 - b1) * g
             v' = b2 * v + (1 - b2) * g**2
             theta' = theta - lr * mhat / (sqrt(vhat) + eps)
  with mhat = m' / (1 - b1**t), vhat = v' / (1 - b2**t) and t the
  1-based count of completed steps.  eps sits outside the square root,
  so a fresh-state step moves every coordinate by almost exactly lr.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import OptimizerError

__all__ = ["OptimizerState", "OPTIMIZER_KINDS", "make_optimizer",
           "sgd_step", "momentum_step", "adam_step", "apply_step"]

OPTIMIZER_KINDS = ("sgd", "momentum", "adam")


@dataclass(frozen=True)
class OptimizerState:
    """Accumulator state; sgd carries none, momentum one, adam two."""

    kind: str
    step: int = 0
    v: np.ndarray | None = None
    m: np.ndarray | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def make_optimizer(kind: str, param_len: int, *, momentum: float = 0.9,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    """Fresh state for ``kind`` over ``param_len`` parameters."""
    kind = str(kind).lower()
    if kind not in OPTIMIZER_KINDS:
        raise OptimizerError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZER_KINDS}")
    if param_len < 1:
        raise OptimizerError(f"param_len must be >= 1, got {param_len}")
    if not 0.0 <= momentum < 1.0:
        raise OptimizerError(f"momentum must lie in [0, 1), got {momentum}")
    if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
        raise OptimizerError(f"betas must lie in (0, 1), got {beta1}, {beta2}")
    if eps <= 0.0:
        raise OptimizerError(f"eps must be positive, got {eps}")
    if kind == "sgd":
        return OptimizerState(kind=kind)
    if kind == "momentum":
        return OptimizerState(kind=kind, v=np.zeros(param_len), momentum=momentum)
    return OptimizerState(kind=kind, v=np.zeros(param_len), m=np.zeros(param_len),
                          beta1=beta1, beta2=beta2, eps=eps)


def _check_inputs(theta: np.ndarray, grad: np.ndarray, lr: float) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape:
        raise OptimizerError(f"shape mismatch: params {theta.shape} vs gradient {grad.shape}")
    if not (np.isfinite(lr) and lr > 0.0):
        raise OptimizerError(f"lr must be positive and finite, got {lr}")
    if not np.isfinite(theta).all() or not np.isfinite(grad).all():
        raise OptimizerError("non-finite parameters or gradient")
    return theta, grad


def sgd_step(theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    theta, grad = _check_inputs(theta, grad, lr)
    return theta - lr * grad


def momentum_step(theta: np.ndarray, state: OptimizerState, grad: np.ndarray,
                  lr: float) -> tuple[np.ndarray, OptimizerState]:
    theta, grad = _check_inputs(theta, grad, lr)
    v = state.momentum * state.v - lr * grad
    return theta + v, replace(state, v=v, step=state.step + 1)


def adam_step(theta: np.ndarray, state: OptimizerState, grad: np.ndarray,
              lr: float) -> tuple[np.ndarray, OptimizerState]:
    theta, grad = _check_inputs(theta, grad, lr)
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = m / (1.0 - state.beta1 ** t)
    vhat = v / (1.0 - state.beta2 ** t)
    theta = theta - lr * mhat / (np.sqrt(vhat) + state.eps)
    return theta, replace(state, m=m, v=v, step=t)


def apply_step(theta: np.ndarray, state: OptimizerState, grad: np.ndarray,
               lr: float) -> tuple[np.ndarray, OptimizerState]:
    """Dispatch one update by ``state.kind``; the training-loop entry point."""
    if state.kind == "sgd":
        return sgd_step(theta, grad, lr), replace(state, step=state.step + 1)
    if state.kind == "momentum":
        return momentum_step(theta, state, grad, lr)
    if state.kind == "adam":
        return adam_step(theta, state, grad, lr)
    raise OptimizerError(f"unknown optimizer {state.kind!r}")
