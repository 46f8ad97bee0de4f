"""Command-line front end: pretrain, protect, attack, gradcheck, report.

Exit codes: 0 success, 1 usage or schema error, 2 numerical failure,
3 verdict failure (``report --strict`` only).
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import gradcheck, losses, nn, pipeline
from .config import PROFILES, build_config, load_config, with_seeds
from .errors import CheckpointError, ConfigError, NumericalError
from .pipeline import Layout
from .report import MissingRunsError, build_report

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_VERDICT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML/JSON file overriding the profile")
    common.add_argument("--profile", choices=PROFILES, default="desk")
    common.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
    common.add_argument("--out", type=Path, default=Path("runs"), help="run directory")

    p = _Parser(prog="nftlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("pretrain", parents=[common], help="train the original model f_0")
    sub.add_parser("protect", parents=[common], help="protect the pretrained checkpoints")
    a = sub.add_parser("attack", parents=[common], help="fine-tune released models or train from scratch")
    a.add_argument("--scratch", action="store_true", help="train fresh models instead (baseline)")
    a.add_argument("--checkpoint", type=Path, help="attack this checkpoint, labelled as protected")
    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference and stability checks")
    g.add_argument("--cases", type=int, default=200)
    r = sub.add_parser("report", parents=[common], help="verdicts, summary and manifest")
    r.add_argument("--strict", action="store_true", help="exit 3 when any verdict fails")
    return p


def _resolve(args, layout: Layout, fresh: bool):
    """Config from --config/--profile (pretrain) or the run directory (later stages)."""
    if args.config is not None:
        cfg = load_config(args.config, args.profile)
    elif fresh:
        cfg = build_config({}, args.profile)
    else:
        cfg = pipeline.stored_config(layout)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = with_seeds(cfg, [args.seed])
    pipeline.bind_config(cfg, layout)
    return cfg


def _load(path: Path, cfg, what: str) -> nn.Model:
    if not path.exists():
        raise MissingRunsError([str(path)])
    model = nn.load_checkpoint(path)
    pipeline.check_arch(cfg, model, what)
    return model


def cmd_pretrain(args) -> int:
    layout = Layout(args.out)
    cfg = _resolve(args, layout, fresh=True)
    for seed in cfg.seeds:
        model, series = pipeline.pretrain(cfg, seed)
        nn.save_checkpoint(model, _mkparent(layout.pretrained(seed)))
        pipeline.write_series(series, layout.pretrain_curve(seed))
        print(f"pretrain seed={seed} {series.metric}={series.final:.4f}")
    return EXIT_OK


def cmd_protect(args) -> int:
    layout = Layout(args.out)
    cfg = _resolve(args, layout, fresh=False)
    for seed in cfg.seeds:
        f0 = _load(layout.pretrained(seed), cfg, f"seed {seed} pretrained")
        model, log, gate = pipeline.run_protect(cfg, f0, seed)
        nn.save_checkpoint(model, _mkparent(layout.protected(seed)))
        pipeline.write_log(log, layout.protect_log(seed))
        pipeline.write_gate(gate, layout.gate(seed))
        print(f"protect seed={seed} original {gate['pretrained_original']:.4f}->{gate['protected_original']:.4f} "
              f"restricted {gate['pretrained_restricted']:.4f}->{gate['protected_restricted']:.4f} "
              f"intact={int(gate['intact'])}")
    return EXIT_OK


def cmd_attack(args) -> int:
    layout = Layout(args.out)
    cfg = _resolve(args, layout, fresh=False)
    if args.scratch and args.checkpoint is not None:
        raise UsageError("--scratch and --checkpoint are exclusive")
    for seed in cfg.seeds:
        if args.scratch:
            sources, models = ["scratch"], {}
        elif args.checkpoint is not None:
            sources, models = ["protected"], {"protected": _load(args.checkpoint, cfg, str(args.checkpoint))}
        else:
            sources = ["protected", "original"]
            models = {"protected": _load(layout.protected(seed), cfg, f"seed {seed} protected"),
                      "original": _load(layout.pretrained(seed), cfg, f"seed {seed} pretrained")}
        for s in pipeline.run_attack(cfg, models, sources, seed):
            name = pipeline.series_name(s)
            pipeline.write_series(s, layout.series(s.descriptor["source"], name, seed))
            final = f"{s.final:.4f}" if s.values else "nan"
            flag = " unstable" if s.unstable else ""
            print(f"attack seed={seed} {s.descriptor['source']}/{name} final {s.metric}={final}{flag}")
    pipeline.refresh_attack_summary(layout)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.cases < 1:
        raise UsageError("--cases must be >= 1")
    results, probes, verdicts = gradcheck.run_all(args.cases, args.seed or 0)
    args.out.mkdir(parents=True, exist_ok=True)
    gradcheck.write_gradcheck_csv(results, verdicts, args.out / "gradcheck.csv")
    losses.write_probe_csv([r for k in losses.ALL_LOSSES for r in probes[k]], args.out / "stability_probe.csv")
    ok = True
    for r in results:
        print(f"grad {r.loss_id:4s} max rel err {r.max_rel_error:.3e} {'ok' if r.passed else 'FAIL'}")
        ok &= r.passed
    for v in verdicts:
        print(f"probe {v.loss_id:4s} {v.claim}: {'ok' if v.passed else 'FAIL'}")
        ok &= v.passed
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_report(args) -> int:
    layout = Layout(args.out)
    cfg = _resolve(args, layout, fresh=False)
    verdicts = build_report(cfg, layout)
    for v in verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'} {v.criterion}[{v.scope}] value={v.value:.4g} threshold={v.threshold:.4g}")
    if args.strict and not all(v.passed for v in verdicts):
        return EXIT_VERDICT
    return EXIT_OK


def _mkparent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


COMMANDS = {"pretrain": cmd_pretrain, "protect": cmd_protect, "attack": cmd_attack,
            "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"nftlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, MissingRunsError) as exc:
        print(f"nftlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"nftlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
