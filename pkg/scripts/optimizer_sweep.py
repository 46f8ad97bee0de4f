"""Fine-tune a finished run's protected and original models with every optimizer.

Reads the run directory written by the CLI and reports the final restricted-domain
metric per optimizer, averaged over seeds, next to training from scratch.

    python3 scripts/optimizer_sweep.py runs/cls --lr 1e-3 --iters 500
"""
import argparse
from pathlib import Path

import numpy as np

from nftlab import adversary, nn, pipeline
from nftlab.adversary import AttackCell
from nftlab.optim import KINDS, OptimizerSpec
from nftlab.trainer import FineTuneStrategy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir", type=Path)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--iters", type=int, default=500)
    ap.add_argument("--batch-size", type=int, default=128)
    args = ap.parse_args()

    layout = pipeline.Layout(args.run_dir)
    cfg = pipeline.stored_config(layout)
    finals: dict[tuple[str, str], list[float]] = {}
    for seed in cfg.seeds:
        _, rest = pipeline.make_splits(cfg, seed)
        models = {"protected": nn.load_checkpoint(layout.protected(seed)),
                  "original": nn.load_checkpoint(layout.pretrained(seed))}
        cells = [AttackCell(src, FineTuneStrategy("full", "all", OptimizerSpec(kind, args.lr), args.batch_size, 0),
                            seed)
                 for kind in KINDS for src in ("protected", "original", "scratch")]
        runs, _ = adversary.sweep(cells, models, rest.adversary_half, rest.test, iters=args.iters,
                                  eval_every=args.iters, schedule=pipeline.schedule_for(cfg),
                                  noise_seed=cfg.eval_noise_seed, arch=pipeline.arch_for(cfg))
        for s in runs:
            key = (s.descriptor["optimizer"], s.descriptor["source"])
            finals.setdefault(key, []).append(s.final if s.values and not s.unstable else np.nan)

    metric = "ACC" if cfg.task_mode == "classification" else "MSE"
    print(f"final restricted {metric} after {args.iters} steps at lr {args.lr:g} (mean over {len(cfg.seeds)} seeds)")
    print(f"{'optimizer':10s} {'protected':>10s} {'original':>10s} {'scratch':>10s}")
    for kind in KINDS:
        row = [np.mean(finals[(kind, src)]) for src in ("protected", "original", "scratch")]
        print(f"{kind:10s} " + " ".join(f"{v:10.4f}" for v in row))


if __name__ == "__main__":
    main()
