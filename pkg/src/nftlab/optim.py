"""Pure-function optimizers over flat parameter vectors.

``step`` never mutates its inputs; callers thread the returned state.
Weight decay is coupled L2: ``g <- g + weight_decay * theta`` before the update.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, NumericalError

KINDS = ("sgd", "momentum", "nesterov", "adagrad", "adadelta", "adam")


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str
    lr: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown optimizer {self.kind!r}; expected one of {KINDS}")
        # lr == 0 is allowed: it freezes the run and is useful as a control
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if not self.weight_decay >= 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        for name in ("momentum", "beta1", "beta2", "rho"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {v}")


@dataclass(frozen=True)
class OptimizerState:
    step: int = 0
    buffers: tuple[np.ndarray, ...] = field(default=(), repr=False)


_N_BUFFERS = {"sgd": 0, "momentum": 1, "nesterov": 1, "adagrad": 1, "adadelta": 2, "adam": 2}


def init(spec: OptimizerSpec, param_len: int, dtype=np.float32) -> OptimizerState:
    if param_len < 1:
        raise ConfigError("param_len must be positive")
    bufs = tuple(np.zeros(param_len, dtype=dtype) for _ in range(_N_BUFFERS[spec.kind]))
    return OptimizerState(0, bufs)


def step(spec: OptimizerSpec, state: OptimizerState, params, grads):
    params = np.asarray(params)
    g = np.asarray(grads, dtype=params.dtype)
    if g.shape != params.shape:
        raise ValueError(f"grads shape {g.shape} != params shape {params.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericalError("non-finite gradient passed to optimizer")
    if any(b.shape != params.shape for b in state.buffers):
        raise ValueError("optimizer state does not match parameter length")
    if spec.weight_decay:
        g = g + spec.weight_decay * params
    t = state.step + 1
    lr = spec.lr
    kind = spec.kind

    if kind == "sgd":
        return params - lr * g, replace(state, step=t)
    if kind == "momentum":
        (v,) = state.buffers
        v = spec.momentum * v + g
        return params - lr * v, OptimizerState(t, (v,))
    if kind == "nesterov":
        (v,) = state.buffers
        v = spec.momentum * v + g
        return params - lr * (g + spec.momentum * v), OptimizerState(t, (v,))
    if kind == "adagrad":
        (acc,) = state.buffers
        acc = acc + g * g
        return params - lr * g / (np.sqrt(acc) + spec.eps), OptimizerState(t, (acc,))
    if kind == "adadelta":
        sq, dx = state.buffers
        sq = spec.rho * sq + (1 - spec.rho) * g * g
        delta = np.sqrt(dx + spec.eps) / np.sqrt(sq + spec.eps) * g
        dx = spec.rho * dx + (1 - spec.rho) * delta * delta
        return params - lr * delta, OptimizerState(t, (sq, dx))
    # adam
    m, v = state.buffers
    m = spec.beta1 * m + (1 - spec.beta1) * g
    v = spec.beta2 * v + (1 - spec.beta2) * g * g
    m_hat = m / (1 - spec.beta1**t)
    v_hat = v / (1 - spec.beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + spec.eps)
    return new.astype(params.dtype), OptimizerState(t, (m, v))


def reference_trajectory(spec: OptimizerSpec, A, theta0, steps: int) -> np.ndarray:
    """Loss series of ``0.5 theta^T A theta`` under ``steps`` updates (float64).

    Entry 0 is the initial loss, so the result has ``steps + 1`` values.
    """
    A = np.asarray(A, dtype=np.float64)
    theta = np.atleast_1d(np.asarray(theta0, dtype=np.float64))
    if A.shape != (theta.size, theta.size):
        raise ValueError("A must be square and match theta0")
    state = init(spec, theta.size, np.float64)
    losses = [0.5 * theta @ A @ theta]
    for _ in range(steps):
        theta, state = step(spec, state, theta, A @ theta)
        losses.append(0.5 * theta @ A @ theta)
    return np.array(losses)
