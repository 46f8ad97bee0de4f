"""Fine-tuning suppression (FTS) and normal-training reinforcement (NTR).

``protect`` alternates two kinds of updates on a pre-trained model:

* FTS: sample N simulated fine-tuning tasks on the restricted domain, run
  each for K optimizer steps, take the gradient of a suppression loss
  (ICE / KLU / DoS) at every intermediate fine-tuned model, weight and sum
  those gradients, and apply one Adam step with lr ``alpha``. Gradients taken
  at the fine-tuned parameters stand in for gradients at theta (first-order
  meta-gradient; nothing is differentiated through the inner trajectory).
* NTR: one Adam step with lr ``beta`` on the ordinary task loss (CE / MSE)
  over original-domain data.

Suppression losses are minimized (descent), since each of them is built so
that a lower value means worse restricted-domain performance.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import optim
from .diffusion import DiffusionSchedule
from .domains import Dataset, DomainSplit, batch_indices
from .errors import ConfigError, NumericalError
from .losses import CLASSIFICATION_LOSSES, GENERATION_LOSSES
from .metrics import dataset_loss, evaluate, loss_and_grad, metric_for, task_batch
from .nn import Model, reinit_head
from .optim import OptimizerSpec

INIT_MODES = ("full", "reinit_head")
TRANSFER_MODES = ("all", "head_only")
GAMMA_MODES = ("uniform", "final_only", "custom")


@dataclass(frozen=True)
class FineTuneStrategy:
    init_mode: str = "full"
    transfer_mode: str = "all"
    optimizer: OptimizerSpec = field(default_factory=lambda: OptimizerSpec("adam", 1e-3))
    batch_size: int = 64
    rounds: int = 10

    def __post_init__(self):
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}")
        if self.transfer_mode not in TRANSFER_MODES:
            raise ConfigError(f"transfer_mode must be one of {TRANSFER_MODES}")
        if self.batch_size < 1 or self.rounds < 0:
            raise ConfigError("batch_size must be >= 1 and rounds >= 0")

    @property
    def name(self) -> str:
        init = "direct" if self.init_mode == "full" else "initFC"
        transfer = "all" if self.transfer_mode == "all" else "FC"
        return f"{init}+{transfer}"


NAMED_STRATEGIES = {
    "direct+all": ("full", "all"),
    "initFC+FC": ("reinit_head", "head_only"),
    "initFC+all": ("reinit_head", "all"),
}


def named_strategy(name: str, optimizer: OptimizerSpec, batch_size: int, rounds: int = 0) -> FineTuneStrategy:
    try:
        init_mode, transfer_mode = NAMED_STRATEGIES[name]
    except KeyError:
        raise ConfigError(f"unknown strategy {name!r}; expected one of {list(NAMED_STRATEGIES)}") from None
    return FineTuneStrategy(init_mode, transfer_mode, optimizer, batch_size, rounds)


@dataclass(frozen=True)
class ProtectConfig:
    """Protection hyper-parameters.

    The weight between the two objectives has no slot of its own: it is the
    ratio of ``beta * l_ntr`` to ``alpha * l_fts``.
    """

    alpha: float = 3e-4
    beta: float = 5e-4
    iters: int = 800
    K: int = 50
    N: int = 3
    l_fts: int = 1
    l_ntr: int = 1
    gamma_mode: str = "uniform"
    gamma_weights: tuple[float, ...] | None = None
    lambda_tol: float = 0.1
    loss_alpha: str = "ICE"
    loss_beta: str = "CE"
    ft_lr_grid: tuple[float, ...] = (1e-6, 1e-5, 1e-4, 1e-3, 1e-2)
    ft_bs_grid: tuple[int, ...] = (50, 100, 150, 200, 250)
    init_modes: tuple[str, ...] = INIT_MODES
    ntr_batch_size: int = 128
    test_batch_size: int = 128
    holdout_fraction: float = 0.25

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ConfigError("alpha and beta must be positive")
        if self.K < 1 or self.N < 1 or self.iters < 0 or self.l_fts < 0 or self.l_ntr < 0:
            raise ConfigError("need K >= 1, N >= 1 and non-negative loop counts")
        if not self.ft_lr_grid or not self.ft_bs_grid or not self.init_modes:
            raise ConfigError("fine-tuning grids must be non-empty")
        if any(lr < 0 for lr in self.ft_lr_grid) or any(bs < 1 for bs in self.ft_bs_grid):
            raise ConfigError("grid entries must be lr >= 0 and batch size >= 1")
        if any(m not in INIT_MODES for m in self.init_modes):
            raise ConfigError(f"init_modes entries must come from {INIT_MODES}")
        if self.gamma_mode not in GAMMA_MODES:
            raise ConfigError(f"gamma_mode must be one of {GAMMA_MODES}")
        if self.gamma_mode == "custom":
            w = np.asarray(self.gamma_weights if self.gamma_weights is not None else [], dtype=float)
            if w.size not in (self.K, self.N * self.K):
                raise ConfigError("custom gamma_weights need K or N*K entries")
        if self.mode == "classification":
            if self.loss_alpha not in ("ICE", "KLU") or self.loss_beta != "CE":
                raise ConfigError("classification needs loss_alpha in {ICE, KLU} and loss_beta = CE")
        elif self.loss_alpha != "DoS" or self.loss_beta != "MSE":
            raise ConfigError("generation needs loss_alpha = DoS and loss_beta = MSE")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in (0, 1)")

    @property
    def mode(self) -> str:
        if self.loss_alpha in CLASSIFICATION_LOSSES or self.loss_beta in CLASSIFICATION_LOSSES:
            return "classification"
        if self.loss_alpha in GENERATION_LOSSES or self.loss_beta in GENERATION_LOSSES:
            return "generation"
        raise ConfigError(f"unknown losses {self.loss_alpha!r}/{self.loss_beta!r}")

    def gamma(self) -> np.ndarray:
        """(N, K) weights over tasks and rounds."""
        N, K = self.N, self.K
        if self.gamma_mode == "uniform":
            return np.full((N, K), 1.0 / (N * K))
        if self.gamma_mode == "final_only":
            g = np.zeros((N, K))
            g[:, -1] = 1.0 / N
            return g
        w = np.asarray(self.gamma_weights, dtype=np.float64)
        return np.tile(w / N, (N, 1)) if w.size == K else w.reshape(N, K)


@dataclass(frozen=True)
class TaskTriplet:
    strategy: FineTuneStrategy
    finetune_set: Dataset
    test_set: Dataset
    seed: int


def defender_pools(split: DomainSplit, holdout_fraction: float) -> tuple[Dataset, Dataset]:
    """Carve the defender half into a fine-tuning pool and a held-out eval pool.

    The real test split is never touched during protection.
    """
    data = split.defender_half
    n = len(data)
    n_hold = max(1, int(round(n * holdout_fraction)))
    if n - n_hold < 1:
        raise ValueError("defender half too small to hold out an evaluation pool")
    return data.subset(np.arange(n - n_hold)), data.subset(np.arange(n - n_hold, n))


def sample_task(cfg: ProtectConfig, restricted: DomainSplit, rng: np.random.Generator) -> TaskTriplet:
    finetune_pool, test_pool = defender_pools(restricted, cfg.holdout_fraction)
    init_mode = cfg.init_modes[rng.integers(len(cfg.init_modes))]
    lr = cfg.ft_lr_grid[rng.integers(len(cfg.ft_lr_grid))]
    bs = cfg.ft_bs_grid[rng.integers(len(cfg.ft_bs_grid))]
    strategy = FineTuneStrategy(init_mode, "all", OptimizerSpec("adam", float(lr)), int(bs), cfg.K)
    return TaskTriplet(strategy, finetune_pool, test_pool, int(rng.integers(2**63)))


def head_mask(model: Model) -> np.ndarray:
    lo, hi = model.head_range
    mask = np.zeros(model.n_params, dtype=bool)
    mask[lo:hi] = True
    return mask


def initial_finetune_model(model: Model, strategy: FineTuneStrategy, seed) -> Model:
    if strategy.init_mode == "reinit_head":
        return reinit_head(model, seed)
    return model


def finetune_trajectory(model: Model, task: TaskTriplet, K: int, loss_id: str,
                        schedule: DiffusionSchedule | None = None):
    """Yield (k, model_k) for k = 1..K; model_0 is ``model`` after init_mode."""
    strategy = task.strategy
    current = initial_finetune_model(model, strategy, [task.seed, 0])
    spec = strategy.optimizer
    state = optim.init(spec, current.n_params, current.params.dtype)
    mask = head_mask(current) if strategy.transfer_mode == "head_only" else None
    noise_rng = np.random.default_rng([task.seed, 2])
    order = batch_indices(len(task.finetune_set), strategy.batch_size, [task.seed, 1])
    for k in range(1, K + 1):
        x, y = task_batch(task.finetune_set, next(order), schedule, noise_rng)
        value, g = loss_and_grad(current, loss_id, x, y)
        if not np.isfinite(value):
            raise NumericalError(f"simulated fine-tuning diverged at round {k}")
        if mask is not None:
            g = np.where(mask, g, 0)
        params, state = optim.step(spec, state, current.params, g)
        if mask is not None:
            params = np.where(mask, params, current.params)
        current = current.with_params(params)
        yield k, current


def simulate_finetune(model: Model, task: TaskTriplet, K: int, loss_id: str = "CE",
                      schedule: DiffusionSchedule | None = None) -> list[Model]:
    """Checkpoints f^1..f^K of one simulated fine-tuning run; ``model`` is untouched."""
    return [m for _, m in finetune_trajectory(model, task, K, loss_id, schedule)]


def fts_gradient(model: Model, cfg: ProtectConfig, tasks, schedule=None) -> tuple[np.ndarray, float]:
    """Weighted sum of suppression-loss gradients over tasks and rounds, and L_FTS."""
    if len(tasks) != cfg.N:
        raise ConfigError(f"expected {cfg.N} tasks, got {len(tasks)}")
    gamma = cfg.gamma()
    total = np.zeros(model.n_params, dtype=np.float64)
    l_fts = 0.0
    for i, task in enumerate(tasks):
        eval_rng = np.random.default_rng([task.seed, 3])
        n_test = len(task.test_set)
        reinit = task.strategy.init_mode == "reinit_head"
        mask = head_mask(model) if reinit else None
        for k, tuned in finetune_trajectory(model, task, cfg.K, cfg.loss_beta, schedule):
            w = gamma[i, k - 1]
            if w == 0:
                continue
            idx = eval_rng.choice(n_test, size=min(cfg.test_batch_size, n_test), replace=False)
            x, y = task_batch(task.test_set, idx, schedule, eval_rng)
            value, g = loss_and_grad(tuned, cfg.loss_alpha, x, y)
            if not (np.isfinite(value) and np.all(np.isfinite(g))):
                raise NumericalError(f"non-finite suppression gradient at task {i}, round {k}")
            if mask is not None:
                # theta's head never reached this fine-tuned model
                g = np.where(mask, 0, g)
            total += w * g
            l_fts += w * value
    return total, l_fts


def fts_step(model: Model, cfg: ProtectConfig, tasks, adam_state: optim.OptimizerState,
             schedule=None) -> tuple[Model, optim.OptimizerState, float]:
    grad, l_fts = fts_gradient(model, cfg, tasks, schedule)
    spec = OptimizerSpec("adam", cfg.alpha)
    params, adam_state = optim.step(spec, adam_state, model.params, grad.astype(model.params.dtype))
    return model.with_params(params), adam_state, l_fts


def ntr_step(model: Model, cfg: ProtectConfig, batch, adam_state: optim.OptimizerState
             ) -> tuple[Model, optim.OptimizerState, float]:
    x, y = batch
    value, g = loss_and_grad(model, cfg.loss_beta, x, y)
    if not np.isfinite(value):
        raise NumericalError("non-finite original-domain loss")
    spec = OptimizerSpec("adam", cfg.beta)
    params, adam_state = optim.step(spec, adam_state, model.params, g)
    return model.with_params(params), adam_state, value


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    l_fts: float
    l_ntr: float
    original_metric: float
    restricted_metric: float


@dataclass
class TrainingLog:
    metric: str
    records: list[IterationRecord] = field(default_factory=list)
    original_loss_before: float = float("nan")
    original_loss_after: float = float("nan")
    lambda_tol: float = 0.0

    @property
    def degradation(self) -> float:
        return max(0.0, self.original_loss_after - self.original_loss_before)

    @property
    def intact(self) -> bool:
        return self.degradation < self.lambda_tol

    def rows(self):
        return [asdict(r) for r in self.records]


def protect(pretrained: Model, cfg: ProtectConfig, original: DomainSplit, restricted: DomainSplit,
            seed: int, schedule: DiffusionSchedule | None = None,
            eval_noise_seed: int = 0) -> tuple[Model, TrainingLog]:
    """Run ``cfg.iters`` outer iterations of FTS then NTR loops.

    Iteration metrics are measured on the original test split and on the
    defender's held-out restricted pool. Instability raises
    :class:`NumericalError` naming the iteration; the intactness gate is
    reported on the log, never raised.
    """
    if (cfg.mode == "generation") != (original.test.labels is None):
        raise ConfigError(f"{cfg.mode} config does not match the data")
    if cfg.mode == "generation" and schedule is None:
        raise ConfigError("generation mode needs a diffusion schedule")
    root = np.random.SeedSequence([int(seed), 17])
    task_rng = np.random.default_rng(root.spawn(1)[0])
    ntr_noise = np.random.default_rng([int(seed), 18])
    ntr_order = batch_indices(len(original.defender_half), cfg.ntr_batch_size, [int(seed), 19])
    _, restricted_pool = defender_pools(restricted, cfg.holdout_fraction)
    metric = metric_for(original.test)

    def measure(m):
        return (evaluate(m, original.test, metric, schedule, eval_noise_seed),
                evaluate(m, restricted_pool, metric, schedule, eval_noise_seed))

    log = TrainingLog(metric, lambda_tol=cfg.lambda_tol)
    log.original_loss_before = dataset_loss(pretrained, original.test, cfg.loss_beta, schedule, eval_noise_seed)
    model = pretrained
    fts_state = optim.init(OptimizerSpec("adam", cfg.alpha), model.n_params, model.params.dtype)
    ntr_state = optim.init(OptimizerSpec("adam", cfg.beta), model.n_params, model.params.dtype)
    for it in range(1, cfg.iters + 1):
        try:
            l_fts = []
            for _ in range(cfg.l_fts):
                tasks = [sample_task(cfg, restricted, task_rng) for _ in range(cfg.N)]
                model, fts_state, value = fts_step(model, cfg, tasks, fts_state, schedule)
                l_fts.append(value)
            l_ntr = []
            for _ in range(cfg.l_ntr):
                batch = task_batch(original.defender_half, next(ntr_order), schedule, ntr_noise)
                model, ntr_state, value = ntr_step(model, cfg, batch, ntr_state)
                l_ntr.append(value)
        except NumericalError as exc:
            raise NumericalError(f"iteration {it}: {exc}") from exc
        orig_m, restr_m = measure(model)
        log.records.append(IterationRecord(
            it,
            float(np.mean(l_fts)) if l_fts else float("nan"),
            float(np.mean(l_ntr)) if l_ntr else float("nan"),
            orig_m, restr_m,
        ))
    log.original_loss_after = dataset_loss(model, original.test, cfg.loss_beta, schedule, eval_noise_seed)
    return model, log
