"""Loss values and closed-form gradients at the logit / network-output level.

Classification losses take logits ``z`` of shape (n, C) and, where needed,
one-hot targets of the same shape. Denoising losses take predicted noise of
shape (n, d). Every loss averages over the batch, and the returned gradient is
the gradient of that averaged value, so it can be fed straight into
:func:`nftlab.nn.backward` as ``grad_output``.

Arithmetic happens in float64; gradients come back in the caller's dtype.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ShapeError

EPS = 1e-7

CLASSIFICATION_LOSSES = ("CE", "ICE", "KLU")
GENERATION_LOSSES = ("MSE", "DoS")
ALL_LOSSES = CLASSIFICATION_LOSSES + GENERATION_LOSSES


@dataclass(frozen=True)
class LossEval:
    value: float
    grad: np.ndarray


def _as_batch(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 1-D or 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"non-finite values in {name}")
    return a


def _out_dtype(a):
    a = np.asarray(a)
    return a.dtype if np.issubdtype(a.dtype, np.floating) else np.float64


def _shape_like(grad, ref, dtype):
    return grad.reshape(np.shape(ref)).astype(dtype)


def softmax(z) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    zb = _as_batch(z, "logits").astype(np.float64)
    e = np.exp(zb - zb.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    return p.reshape(np.shape(z))


def softmax_jacobian(z) -> np.ndarray:
    """J[i, j] = d p_j / d z_i for one logit vector: diag(p) - p p^T."""
    p = softmax(np.asarray(z, dtype=np.float64).ravel())
    return np.diag(p) - np.outer(p, p)


def _check_one_hot(y, z):
    yb = _as_batch(y, "labels").astype(np.float64)
    if yb.shape != z.shape:
        raise ShapeError(f"labels shape {yb.shape} != logits shape {z.shape}")
    ok = np.all((yb == 0) | (yb == 1)) and np.all(yb.sum(axis=1) == 1)
    if not ok:
        raise ValueError("labels must be one-hot rows (soft labels are not supported)")
    return yb


def ce(z, y) -> LossEval:
    zb = _as_batch(z, "logits").astype(np.float64)
    yb = _check_one_hot(y, zb)
    n = zb.shape[0]
    p = softmax(zb)
    value = -np.sum(yb * np.log(np.clip(p, EPS, 1 - EPS))) / n
    grad = (p - yb) / n
    return LossEval(float(value), _shape_like(grad, z, _out_dtype(z)))


def ice(z, y) -> LossEval:
    """Inverse cross-entropy, -mean log(1 - p_true).

    Minimizing it pushes the true-class probability down, and its gradient
    fades as p_true -> 0.
    """
    zb = _as_batch(z, "logits").astype(np.float64)
    yb = _check_one_hot(y, zb)
    n = zb.shape[0]
    p = softmax(zb)
    p_true = np.sum(p * yb, axis=1)
    # 1 - p_true summed from the other classes avoids cancellation near p_true = 1
    rest = np.clip(np.sum(p * (1 - yb), axis=1), EPS, 1.0)
    value = -np.sum(np.log(rest)) / n
    off = -p * (p_true / rest)[:, None]
    grad = np.where(yb == 1, p_true[:, None], off) / n
    return LossEval(float(value), _shape_like(grad, z, _out_dtype(z)))


def klu(z) -> LossEval:
    """KL divergence of the softmax output from the uniform distribution. Label-free."""
    zb = _as_batch(z, "logits").astype(np.float64)
    n, c = zb.shape
    p = softmax(zb)
    value = -np.sum(np.log(c * np.clip(p, EPS, 1 - EPS))) / (c * n)
    grad = (p - 1.0 / c) / n
    return LossEval(float(value), _shape_like(grad, z, _out_dtype(z)))


def mse(pred, target) -> LossEval:
    pb = _as_batch(pred, "prediction").astype(np.float64)
    tb = _as_batch(target, "target").astype(np.float64)
    if pb.shape != tb.shape:
        raise ShapeError(f"prediction shape {pb.shape} != target shape {tb.shape}")
    n = pb.shape[0]
    diff = pb - tb
    value = np.sum(diff * diff) / n
    return LossEval(float(value), _shape_like(2 * diff / n, pred, _out_dtype(pred)))


def dos(pred) -> LossEval:
    """Mean squared L2 norm of the predicted noise; zero output is its minimum."""
    pb = _as_batch(pred, "prediction").astype(np.float64)
    n = pb.shape[0]
    value = np.sum(pb * pb) / n
    return LossEval(float(value), _shape_like(2 * pb / n, pred, _out_dtype(pred)))


def evaluate_loss(loss_id: str, output, target=None) -> LossEval:
    """Dispatch by name. ``target`` is ignored by the label-free losses."""
    if loss_id == "CE":
        return ce(output, target)
    if loss_id == "ICE":
        return ice(output, target)
    if loss_id == "KLU":
        return klu(output)
    if loss_id == "MSE":
        return mse(output, target)
    if loss_id == "DoS":
        return dos(output)
    raise ValueError(f"unknown loss {loss_id!r}; expected one of {ALL_LOSSES}")


# -- stability probes --------------------------------------------------------

PROBE_CLASSES = 4
PROBE_DIM = 8


def _probs_with_true(p_true: float, c: int) -> np.ndarray:
    p = np.full(c, (1 - p_true) / (c - 1))
    p[0] = p_true
    return p


def probe_path(loss_id: str, n_points: int = 100) -> np.ndarray:
    """Default path parameters: p_true for classification, output scale for denoising."""
    if loss_id in CLASSIFICATION_LOSSES:
        return np.geomspace(0.9, 1e-6, n_points)
    if loss_id in GENERATION_LOSSES:
        return np.geomspace(10.0, 1e-6, n_points)
    raise ValueError(f"unknown loss {loss_id!r}")


def stability_probe(loss_id: str, path=None) -> list[tuple[str, float, float]]:
    """Gradient norm along a path of increasingly wrong predictions.

    Classification (C=4, true class 0): for CE and ICE the path parameter is
    the true-class probability, the remaining mass spread evenly. KLU has no
    labels, and "wrong" for it means confused: the prediction is the point
    ``u + (s / 0.9) (q - u)`` between the uniform ``u`` and the distribution
    ``q`` with p_true = 0.9, so ``s = 0.9`` matches the CE/ICE start.

    Denoising: the prediction is ``s * e0`` for a fixed pattern ``e0``; MSE is
    taken against a fixed target noise not collinear with ``e0``.
    """
    path = probe_path(loss_id) if path is None else np.asarray(path, dtype=np.float64)
    rows = []
    c = PROBE_CLASSES
    y = np.eye(c)[0]
    uniform = np.full(c, 1.0 / c)
    q = _probs_with_true(0.9, c)
    e0 = np.sin(np.arange(1, PROBE_DIM + 1))
    target = np.cos(3.0 * np.arange(1, PROBE_DIM + 1))
    for s in path:
        if loss_id in ("CE", "ICE"):
            g = evaluate_loss(loss_id, np.log(_probs_with_true(s, c)), y).grad
        elif loss_id == "KLU":
            g = klu(np.log(uniform + (s / 0.9) * (q - uniform))).grad
        elif loss_id == "DoS":
            g = dos(s * e0).grad
        elif loss_id == "MSE":
            g = mse(s * e0, target).grad
        else:
            raise ValueError(f"unknown loss {loss_id!r}")
        rows.append((loss_id, float(s), float(np.linalg.norm(g))))
    return rows


def write_probe_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["loss_id", "path_param", "grad_norm"])
        for loss_id, s, g in rows:
            w.writerow([loss_id, repr(s), repr(g)])
