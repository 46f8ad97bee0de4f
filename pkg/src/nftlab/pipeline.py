"""End-to-end stages (pretrain, protect, attack) and the on-disk run layout.

Every stage is a pure function of the config and the seed. Files are written
with fixed formatting and no timestamps, so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adversary, nn
from .adversary import AttackCell, MetricSeries
from .config import ExperimentConfig, config_from_dict
from .diffusion import DiffusionSchedule, make_schedule
from .domains import DomainSplit, gen_classification_domain, gen_generation_domain, split
from .errors import ConfigError
from .metrics import dataset_loss, evaluate, metric_for
from .trainer import FineTuneStrategy, TrainingLog, named_strategy, protect

GATE_FIELDS = ["seed", "metric", "loss_before", "loss_after", "degradation", "lambda_tol", "intact",
               "pretrained_original", "protected_original", "pretrained_restricted", "protected_restricted"]
LOG_FIELDS = ["iteration", "l_fts", "l_ntr", "original_metric", "restricted_metric"]


@dataclass(frozen=True)
class Layout:
    """Where each artifact of a run directory lives."""

    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    def pretrained(self, seed: int) -> Path:
        return self.root / "pretrain" / f"model_s{seed}.nftl"

    def pretrain_curve(self, seed: int) -> Path:
        return self.root / "pretrain" / f"curve_s{seed}.csv"

    def protected(self, seed: int) -> Path:
        return self.root / "protect" / f"model_s{seed}.nftl"

    def protect_log(self, seed: int) -> Path:
        return self.root / "protect" / f"log_s{seed}.csv"

    def gate(self, seed: int) -> Path:
        return self.root / "protect" / f"gate_s{seed}.csv"

    @property
    def attack_dir(self) -> Path:
        return self.root / "attack"

    def series(self, source: str, strategy: str, seed: int) -> Path:
        return self.attack_dir / f"{source}__{strategy}__s{seed}.csv"

    @property
    def attack_summary(self) -> Path:
        return self.attack_dir / "summary.csv"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"


def fmt(x) -> str:
    """Stable text form for CSV cells."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(r[h]) for h in header])


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config persistence -------------------------------------------------------

def bind_config(cfg: ExperimentConfig, layout: Layout) -> None:
    """Record the config in the run directory, refusing to mix configs."""
    text = json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"
    if layout.config.exists():
        old = layout.config.read_text()
        if old != text:
            prev = config_from_dict(json.loads(old)).config_hash()[:12]
            raise ConfigError(f"{layout.root} holds runs of another config ({prev}); use a fresh --out")
        return
    layout.root.mkdir(parents=True, exist_ok=True)
    layout.config.write_text(text)


def stored_config(layout: Layout) -> ExperimentConfig:
    if not layout.config.exists():
        raise ConfigError(f"{layout.config} not found; run pretrain first")
    return config_from_dict(json.loads(layout.config.read_text()))


# -- building blocks ----------------------------------------------------------

def schedule_for(cfg: ExperimentConfig) -> DiffusionSchedule | None:
    if cfg.task_mode != "generation":
        return None
    d = cfg.diffusion
    return make_schedule(d.T, d.beta_start, d.beta_end)


def arch_for(cfg: ExperimentConfig):
    dm = cfg.domains
    if cfg.task_mode == "classification":
        sizes = [dm.dim, *cfg.arch.hidden, dm.n_classes]
    else:
        # the denoiser sees x_t plus the t / T feature
        sizes = [dm.dim + 1, *cfg.arch.hidden, dm.dim]
    return nn.mlp_arch(sizes, cfg.arch.activation)


def make_splits(cfg: ExperimentConfig, seed: int) -> tuple[DomainSplit, DomainSplit]:
    dm = cfg.domains
    if cfg.task_mode == "classification":
        orig = gen_classification_domain(dm.original, dm.n_original, dm.n_classes, dm.dim, seed)
        rest = gen_classification_domain(dm.restricted, dm.n_restricted, dm.n_classes, dm.dim, seed)
    else:
        orig = gen_generation_domain(dm.original, dm.n_original, dm.dim, seed)
        rest = gen_generation_domain(dm.restricted, dm.n_restricted, dm.dim, seed)
    return split(orig, dm.test_fraction, seed), split(rest, dm.test_fraction, seed)


def check_arch(cfg: ExperimentConfig, model: nn.Model, what: str) -> None:
    if tuple(model.arch) != tuple(arch_for(cfg)):
        raise ConfigError(f"{what}: checkpoint architecture does not match the config")


# -- stages -------------------------------------------------------------------

def pretrain(cfg: ExperimentConfig, seed: int) -> tuple[nn.Model, MetricSeries]:
    """Train f_0 on the defender half of the original domain."""
    orig, _ = make_splits(cfg, seed)
    p = cfg.pretrain
    strategy = FineTuneStrategy("full", "all", p.optimizer.spec(), p.batch_size, 0)
    per_epoch = adversary.iterations_for(len(orig.defender_half), p.batch_size, 1)
    model, series = adversary.fit(nn.init_model(arch_for(cfg), seed), strategy, orig.defender_half, orig.test,
                                  epochs=p.epochs, eval_every=per_epoch, seed=seed,
                                  schedule=schedule_for(cfg), noise_seed=cfg.eval_noise_seed, source="original")
    return model, series


def run_protect(cfg: ExperimentConfig, pretrained: nn.Model, seed: int) -> tuple[nn.Model, TrainingLog, dict]:
    orig, rest = make_splits(cfg, seed)
    schedule = schedule_for(cfg)
    model, log = protect(pretrained, cfg.protect, orig, rest, seed, schedule, cfg.eval_noise_seed)
    metric = metric_for(orig.test)

    def ev(m, data):
        return evaluate(m, data, metric, schedule, cfg.eval_noise_seed)

    gate = {
        "seed": seed, "metric": metric,
        "loss_before": log.original_loss_before, "loss_after": log.original_loss_after,
        "degradation": log.degradation, "lambda_tol": log.lambda_tol, "intact": log.intact,
        "pretrained_original": ev(pretrained, orig.test), "protected_original": ev(model, orig.test),
        "pretrained_restricted": ev(pretrained, rest.test), "protected_restricted": ev(model, rest.test),
    }
    return model, log, gate


def attack_strategies(cfg: ExperimentConfig) -> list[FineTuneStrategy]:
    a = cfg.attack
    return [named_strategy(name, a.optimizer.spec(), a.batch_size) for name in a.strategies]


def attack_cells(cfg: ExperimentConfig, sources, seed: int) -> list[AttackCell]:
    cells = []
    for source in sources:
        if source == "scratch":
            s = attack_strategies(cfg)[0]
            cells.append(AttackCell("scratch", s, seed))
        else:
            cells.extend(AttackCell(source, s, seed) for s in attack_strategies(cfg))
    return cells


def run_attack(cfg: ExperimentConfig, models: dict, sources, seed: int) -> list[MetricSeries]:
    _, rest = make_splits(cfg, seed)
    series, _ = adversary.sweep(attack_cells(cfg, sources, seed), models, rest.adversary_half, rest.test,
                                iters=cfg.attack.iters, eval_every=cfg.attack.eval_every,
                                schedule=schedule_for(cfg), noise_seed=cfg.eval_noise_seed,
                                arch=arch_for(cfg))
    return series


def series_name(series: MetricSeries) -> str:
    d = series.descriptor
    return d["strategy"] if d["source"] != "scratch" else "scratch"


# -- writers ------------------------------------------------------------------

def write_log(log: TrainingLog, path: Path) -> None:
    write_rows(path, LOG_FIELDS, log.rows())


def write_gate(gate: dict, path: Path) -> None:
    write_rows(path, GATE_FIELDS, [gate])


def write_series(series: MetricSeries, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    adversary.write_series_csv(series, path)


def refresh_attack_summary(layout: Layout) -> list[dict]:
    """Recompute the M +/- SD summary over every series file in the attack dir."""
    series = []
    for p in sorted(layout.attack_dir.glob("*__s*.csv")):
        try:
            series.append(adversary.read_series_csv(p))
        except ValueError:
            # a run that diverged before its first evaluation has no points
            continue
    rows = adversary.summarize(series)
    if rows:
        layout.attack_dir.mkdir(parents=True, exist_ok=True)
        adversary.write_summary_csv(rows, layout.attack_summary)
    return rows
