"""Dataset-level evaluation shared by the trainer and the adversary harness."""
from __future__ import annotations

import numpy as np

from .diffusion import DiffusionSchedule, build_denoise_batch
from .domains import Dataset
from .losses import evaluate_loss
from .nn import Model, backward, forward, predict


def task_batch(data: Dataset, idx, schedule: DiffusionSchedule | None, rng):
    """(inputs, targets) for a minibatch: labels for classifiers, noise for denoisers."""
    if data.labels is not None:
        return data.inputs[idx], data.labels[idx]
    if schedule is None:
        raise ValueError("a diffusion schedule is required for label-free data")
    return build_denoise_batch(schedule, data.inputs[idx], rng)


def frozen_eval_batch(data: Dataset, schedule, noise_seed: int):
    """The whole dataset as one batch; denoising targets use a fixed noising seed."""
    return task_batch(data, np.arange(len(data)), schedule, np.random.default_rng(noise_seed))


def loss_and_grad(model: Model, loss_id: str, inputs, targets) -> tuple[float, np.ndarray]:
    out, cache = forward(model, inputs)
    ev = evaluate_loss(loss_id, out, targets)
    return ev.value, backward(model, cache, ev.grad)


def accuracy(model: Model, inputs, labels) -> float:
    # np.argmax breaks ties toward the lowest index, which keeps ACC reproducible
    pred = np.argmax(predict(model, inputs), axis=1)
    return float(np.mean(pred == np.argmax(labels, axis=1)))


def evaluate(model: Model, dataset: Dataset, metric: str, schedule=None, noise_seed: int = 0) -> float:
    """ACC (fraction argmax-correct) or MSE (mean per-sample squared noise error)."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if metric == "ACC":
        if dataset.labels is None:
            raise ValueError("ACC needs a labelled dataset")
        return accuracy(model, dataset.inputs, dataset.labels)
    if metric == "MSE":
        if dataset.labels is not None:
            raise ValueError("MSE is defined for denoising (label-free) datasets")
        x, eps = frozen_eval_batch(dataset, schedule, noise_seed)
        return evaluate_loss("MSE", predict(model, x), eps).value
    raise ValueError(f"unknown metric {metric!r}")


def dataset_loss(model: Model, dataset: Dataset, loss_id: str, schedule=None, noise_seed: int = 0) -> float:
    x, y = frozen_eval_batch(dataset, schedule, noise_seed)
    return evaluate_loss(loss_id, predict(model, x), y).value


def metric_for(dataset: Dataset) -> str:
    return "MSE" if dataset.labels is None else "ACC"
