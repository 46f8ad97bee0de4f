"""Attack harness: fine-tune a released model or train from scratch, record ACC-k / MSE-k.

"Iteration" always means one optimizer step. Series start at k = 0 (the
model before any update) and are sampled every ``eval_every`` steps plus the
final step.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import optim
from .diffusion import DiffusionSchedule
from .domains import Dataset, batch_indices
from .errors import NumericalError
from .metrics import evaluate, loss_and_grad, metric_for, task_batch
from .nn import Model, init_model
from .optim import OptimizerSpec
from .trainer import FineTuneStrategy, head_mask, initial_finetune_model

DEFAULT_EVAL_OPTIMIZER = OptimizerSpec("momentum", 1e-4, momentum=0.9, weight_decay=1e-4)

SOURCES = ("protected", "original", "scratch")


def default_strategy(batch_size: int = 200) -> FineTuneStrategy:
    """Direct fine-tuning of every parameter with Momentum, lr 1e-4, weight decay 1e-4."""
    return FineTuneStrategy("full", "all", DEFAULT_EVAL_OPTIMIZER, batch_size, 0)


@dataclass(frozen=True)
class MetricSeries:
    metric: str
    iterations: tuple[int, ...]
    values: tuple[float, ...]
    seed: int
    descriptor: dict = field(default_factory=dict)
    unstable: bool = False

    def __post_init__(self):
        its = np.asarray(self.iterations)
        if len(self.iterations) != len(self.values):
            raise ValueError("iterations and values differ in length")
        if np.any(np.diff(its) <= 0):
            raise ValueError("iterations must be strictly increasing")
        if self.metric == "ACC" and any(not 0 <= v <= 1 for v in self.values):
            raise ValueError("ACC values must lie in [0, 1]")

    @property
    def final(self) -> float:
        return self.values[-1]

    @property
    def group(self) -> str:
        d = self.descriptor
        return "|".join(f"{k}={d[k]}" for k in sorted(d))


def iterations_for(n: int, batch_size: int, epochs: int) -> int:
    return epochs * math.ceil(n / batch_size)


def _loss_for(dataset: Dataset) -> str:
    return "MSE" if dataset.labels is None else "CE"


def _descriptor(source: str, strategy: FineTuneStrategy) -> dict:
    opt = strategy.optimizer
    return {
        "source": source,
        "strategy": strategy.name if source != "scratch" else "scratch",
        "optimizer": opt.kind,
        "lr": opt.lr,
        "batch_size": strategy.batch_size,
        "weight_decay": opt.weight_decay,
    }


def finetune(model: Model, strategy: FineTuneStrategy, train: Dataset, test: Dataset, *,
             iters: int | None = None, epochs: int | None = None, eval_every: int = 50,
             seed: int = 0, schedule: DiffusionSchedule | None = None, noise_seed: int = 0,
             source: str = "protected") -> MetricSeries:
    """Fine-tune ``model`` on ``train`` and track the test metric.

    Exactly one of ``iters`` / ``epochs`` sets the step budget.
    """
    return fit(model, strategy, train, test, iters=iters, epochs=epochs, eval_every=eval_every,
               seed=seed, schedule=schedule, noise_seed=noise_seed, source=source)[1]


def fit(model: Model, strategy: FineTuneStrategy, train: Dataset, test: Dataset, *,
        iters: int | None = None, epochs: int | None = None, eval_every: int = 50,
        seed: int = 0, schedule: DiffusionSchedule | None = None, noise_seed: int = 0,
        source: str = "protected") -> tuple[Model, MetricSeries]:
    """Same as :func:`finetune` but also returns the last stable model."""
    if (iters is None) == (epochs is None):
        raise ValueError("give exactly one of iters or epochs")
    if iters is None:
        iters = iterations_for(len(train), strategy.batch_size, epochs)
    if eval_every < 1:
        raise ValueError("eval_every must be >= 1")
    metric = metric_for(test)
    loss_id = _loss_for(train)
    current = initial_finetune_model(model, strategy, [int(seed), 5])
    spec = strategy.optimizer
    state = optim.init(spec, current.n_params, current.params.dtype)
    mask = head_mask(current) if strategy.transfer_mode == "head_only" else None
    order = batch_indices(len(train), strategy.batch_size, [int(seed), 6])
    noise_rng = np.random.default_rng([int(seed), 7])

    ks = [0]
    vals = [evaluate(current, test, metric, schedule, noise_seed)]
    unstable = False
    for k in range(1, iters + 1):
        x, y = task_batch(train, next(order), schedule, noise_rng)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                value, g = loss_and_grad(current, loss_id, x, y)
            if not np.isfinite(value):
                raise NumericalError("non-finite loss")
            if mask is not None:
                g = np.where(mask, g, 0)
            params, state = optim.step(spec, state, current.params, g)
        except NumericalError:
            unstable = True
            break
        if mask is not None:
            params = np.where(mask, params, current.params)
        if not np.all(np.isfinite(params)):
            unstable = True
            break
        current = current.with_params(params)
        if k % eval_every == 0 or k == iters:
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    v = evaluate(current, test, metric, schedule, noise_seed)
            except NumericalError:
                unstable = True
                break
            if not np.isfinite(v):
                unstable = True
                break
            ks.append(k)
            vals.append(v)
    series = MetricSeries(metric, tuple(ks), tuple(vals), int(seed), _descriptor(source, strategy), unstable)
    return current, series


def train_scratch(arch, train: Dataset, test: Dataset, *, optimizer: OptimizerSpec = DEFAULT_EVAL_OPTIMIZER,
                  batch_size: int = 200, iters: int | None = None, epochs: int | None = None,
                  eval_every: int = 50, seed: int = 0, schedule=None, noise_seed: int = 0) -> MetricSeries:
    """Baseline: a freshly initialized model trained on the restricted data."""
    fresh = init_model(arch, [int(seed), 8])
    strategy = FineTuneStrategy("full", "all", optimizer, batch_size, 0)
    return finetune(fresh, strategy, train, test, iters=iters, epochs=epochs, eval_every=eval_every,
                    seed=seed, schedule=schedule, noise_seed=noise_seed, source="scratch")


@dataclass(frozen=True)
class AttackCell:
    source: str
    strategy: FineTuneStrategy
    seed: int


def sweep(cells, models: dict, train: Dataset, test: Dataset, *, iters: int, eval_every: int,
          schedule=None, noise_seed: int = 0, arch=None) -> tuple[list[MetricSeries], list[dict]]:
    """Run every cell; ``models`` maps source name to model (scratch uses ``arch``).

    A failing cell is recorded as an empty unstable series, not raised.
    """
    cells = list(cells)
    if not cells:
        raise ValueError("empty attack grid")
    out = []
    for cell in cells:
        try:
            if cell.source == "scratch":
                arch = arch if arch is not None else next(iter(models.values())).arch
                s = train_scratch(arch, train, test, optimizer=cell.strategy.optimizer,
                                  batch_size=cell.strategy.batch_size, iters=iters, eval_every=eval_every,
                                  seed=cell.seed, schedule=schedule, noise_seed=noise_seed)
            else:
                s = finetune(models[cell.source], cell.strategy, train, test, iters=iters,
                             eval_every=eval_every, seed=cell.seed, schedule=schedule,
                             noise_seed=noise_seed, source=cell.source)
        except NumericalError:
            s = MetricSeries(metric_for(test), (), (), cell.seed, _descriptor(cell.source, cell.strategy), True)
        out.append(s)
    return out, summarize(out)


def summarize(series) -> list[dict]:
    """Mean and SD (n - 1 denominator; 0 for a single run) per group and iteration."""
    groups: dict[str, list[MetricSeries]] = {}
    for s in series:
        groups.setdefault(s.group, []).append(s)
    rows = []
    for name in sorted(groups):
        members = groups[name]
        by_k: dict[int, list[float]] = {}
        for s in members:
            for k, v in zip(s.iterations, s.values):
                by_k.setdefault(k, []).append(v)
        for k in sorted(by_k):
            vals = np.asarray(by_k[k])
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            rows.append({"group": name, "iteration": k, "mean": float(vals.mean()), "sd": sd, "n": int(vals.size)})
    return rows


SERIES_FIELDS = ["iteration", "metric", "value", "seed", "source", "strategy", "optimizer", "lr",
                 "batch_size", "weight_decay", "unstable"]


def write_series_csv(series: MetricSeries, path) -> None:
    d = series.descriptor
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_FIELDS)
        for k, v in zip(series.iterations, series.values):
            w.writerow([k, series.metric, repr(float(v)), series.seed, d.get("source"), d.get("strategy"),
                        d.get("optimizer"), repr(d.get("lr")), d.get("batch_size"),
                        repr(d.get("weight_decay")), int(series.unstable)])


def write_summary_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "iteration", "mean", "sd", "n"])
        for r in rows:
            w.writerow([r["group"], r["iteration"], repr(r["mean"]), repr(r["sd"]), r["n"]])


def read_series_csv(path) -> MetricSeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} holds no points")
    r0 = rows[0]
    desc = {"source": r0["source"], "strategy": r0["strategy"], "optimizer": r0["optimizer"],
            "lr": float(r0["lr"]), "batch_size": int(r0["batch_size"]),
            "weight_decay": float(r0["weight_decay"])}
    return MetricSeries(r0["metric"], tuple(int(r["iteration"]) for r in rows),
                        tuple(float(r["value"]) for r in rows), int(r0["seed"]), desc,
                        bool(int(r0["unstable"])))
