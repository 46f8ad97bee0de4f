"""Assemble a run directory into verdicts, summaries and a hashed manifest."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import adversary, losses
from .config import CODE_VERSION, ExperimentConfig
from .errors import NftlError
from .pipeline import Layout, read_rows, refresh_attack_summary, write_rows

VERDICT_FIELDS = ["criterion", "scope", "value", "threshold", "passed"]
NON_TRANSFER_MARGIN = 0.10
FINETUNED_MARGIN = 0.15
ACC_DROP_LIMIT = 0.05
MSE_RISE_LIMIT = 0.20


class MissingRunsError(NftlError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing runs: " + ", ".join(self.missing))


@dataclass(frozen=True)
class Verdict:
    criterion: str
    scope: str
    value: float
    threshold: float
    passed: bool

    def row(self) -> dict:
        return {"criterion": self.criterion, "scope": self.scope, "value": self.value,
                "threshold": self.threshold, "passed": self.passed}


def required_files(cfg: ExperimentConfig, layout: Layout) -> list:
    out = []
    for seed in cfg.seeds:
        out += [layout.pretrained(seed), layout.protected(seed), layout.gate(seed), layout.protect_log(seed),
                layout.series("scratch", "scratch", seed)]
        for name in cfg.attack.strategies:
            out += [layout.series("protected", name, seed), layout.series("original", name, seed)]
    return out


def _series(layout, source, name, seed):
    try:
        return adversary.read_series_csv(layout.series(source, name, seed))
    except ValueError:
        return None


def _curve(series_list):
    """Mean over seeds at the iterations every run recorded; None if a run diverged."""
    if any(s is None or s.unstable for s in series_list):
        return None
    common = sorted(set.intersection(*(set(s.iterations) for s in series_list)))
    vals = np.array([[dict(zip(s.iterations, s.values))[k] for k in common] for s in series_list])
    return np.array(common), vals.mean(axis=0)


def compute_verdicts(cfg: ExperimentConfig, layout: Layout) -> list[Verdict]:
    missing = [str(p.relative_to(layout.root)) for p in required_files(cfg, layout) if not p.exists()]
    if missing:
        raise MissingRunsError(missing)
    gates = [read_rows(layout.gate(s))[0] for s in cfg.seeds]
    col = {k: np.array([float(g[k]) for g in gates]) for k in
           ("degradation", "pretrained_original", "protected_original", "pretrained_restricted",
            "protected_restricted")}
    acc = cfg.task_mode == "classification"
    out = [Verdict("intactness", "lambda_gate", float(col["degradation"].max()), cfg.protect.lambda_tol,
                   all(g["intact"] == "1" for g in gates))]
    pre_o, prot_o = col["pretrained_original"].mean(), col["protected_original"].mean()
    if acc:
        drop = pre_o - prot_o
        out.append(Verdict("intactness", "original_acc_drop", float(drop), ACC_DROP_LIMIT, bool(drop <= ACC_DROP_LIMIT)))
        chance = 1.0 / cfg.domains.n_classes
        v = col["protected_restricted"].mean()
        out.append(Verdict("non_transferability", "restricted_acc", float(v), chance + NON_TRANSFER_MARGIN,
                           bool(v <= chance + NON_TRANSFER_MARGIN)))
    else:
        rise = prot_o / pre_o - 1.0
        out.append(Verdict("intactness", "original_mse_rise", float(rise), MSE_RISE_LIMIT, bool(rise <= MSE_RISE_LIMIT)))
        v, ref = col["protected_restricted"].mean(), col["pretrained_restricted"].mean()
        out.append(Verdict("non_transferability", "restricted_mse", float(v), float(ref), bool(v >= ref)))

    scratch = _curve([_series(layout, "scratch", "scratch", s) for s in cfg.seeds])
    for name in cfg.attack.strategies:
        prot = _curve([_series(layout, "protected", name, s) for s in cfg.seeds])
        orig = _curve([_series(layout, "original", name, s) for s in cfg.seeds])
        if prot is None or scratch is None:
            out.append(Verdict("non_fine_tunability", name, float("nan"), 0.0, False))
            continue
        if acc:
            gap = scratch[1][-1] - prot[1][-1]
        else:
            # every recorded k >= 1; k = 0 compares two untouched initializations
            ks = np.intersect1d(prot[0], scratch[0])
            ks = ks[ks >= 1]
            p = dict(zip(prot[0], prot[1]))
            s = dict(zip(scratch[0], scratch[1]))
            gap = min(p[k] - s[k] for k in ks)
        out.append(Verdict("non_fine_tunability", name, float(gap), 0.0, bool(gap >= 0)))
        if acc:
            limit = 1.0 / cfg.domains.n_classes + FINETUNED_MARGIN
            final = float(prot[1][-1])
            out.append(Verdict("finetuned_near_chance", name, final, limit, bool(final <= limit)))
        if orig is not None:
            pays = orig[1][-1] - scratch[1][-1] if acc else scratch[1][-1] - orig[1][-1]
            out.append(Verdict("baseline_ordering", name, float(pays), 0.0, bool(pays >= 0)))
    return out


def sha256_file(path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: ExperimentConfig, layout: Layout) -> dict:
    files = sorted(p for p in layout.root.rglob("*") if p.is_file() and p != layout.manifest)
    manifest = {
        "code_version": CODE_VERSION,
        "config_hash": cfg.config_hash(),
        "files": {str(p.relative_to(layout.root)): sha256_file(p) for p in files},
    }
    layout.manifest.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest


def build_report(cfg: ExperimentConfig, layout: Layout) -> list[Verdict]:
    """Write verdicts, the attack summary and stability probes, then the manifest."""
    verdicts = compute_verdicts(cfg, layout)
    rows = refresh_attack_summary(layout)
    layout.report_dir.mkdir(parents=True, exist_ok=True)
    write_rows(layout.report_dir / "verdicts.csv", VERDICT_FIELDS, [v.row() for v in verdicts])
    adversary.write_summary_csv(rows, layout.report_dir / "summary.csv")
    probe = [r for k in losses.ALL_LOSSES for r in losses.stability_probe(k)]
    losses.write_probe_csv(probe, layout.report_dir / "stability_probe.csv")
    write_manifest(cfg, layout)
    return verdicts
