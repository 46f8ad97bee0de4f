"""Finite-difference checks of every closed-form loss gradient, plus stability probes.

The oracle differentiates only the loss *value*, by central differences in
float64, so it shares no code path with the closed-form gradients.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import losses

TOLERANCE = 1e-4
FD_STEP = 1e-4
MAX_CLASSES = 8
MAX_DIM = 32


@dataclass(frozen=True)
class GradcheckResult:
    loss_id: str
    cases: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def central_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def relative_error(a, b, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def random_case(loss_id: str, rng: np.random.Generator):
    """(output, target) for one random case; logits stay far enough from saturation
    that no probability reaches the clamp."""
    n = int(rng.integers(1, 5))
    if loss_id in losses.CLASSIFICATION_LOSSES:
        c = int(rng.integers(2, MAX_CLASSES + 1))
        z = 1.5 * rng.standard_normal((n, c))
        y = np.eye(c)[rng.integers(c, size=n)]
        return z, y
    d = int(rng.integers(1, MAX_DIM + 1))
    return rng.standard_normal((n, d)), rng.standard_normal((n, d))


def check_loss(loss_id: str, cases: int = 200, seed: int = 0) -> GradcheckResult:
    rng = np.random.default_rng([seed, losses.ALL_LOSSES.index(loss_id)])
    worst = 0.0
    for _ in range(cases):
        out, target = random_case(loss_id, rng)
        analytic = losses.evaluate_loss(loss_id, out, target).grad
        numeric = central_difference(lambda o: losses.evaluate_loss(loss_id, o, target).value, out)
        worst = max(worst, relative_error(analytic, numeric))
    return GradcheckResult(loss_id, cases, worst, TOLERANCE)


@dataclass(frozen=True)
class ProbeVerdict:
    loss_id: str
    claim: str
    passed: bool


def probe_verdicts(probes: dict[str, list]) -> list[ProbeVerdict]:
    """Shape claims on the stability-probe series, asserted pointwise."""
    norms = {k: np.array([r[2] for r in rows]) for k, rows in probes.items()}
    out = [ProbeVerdict("CE", "increasing", bool(np.all(np.diff(norms["CE"]) > 0)))]
    for k in ("ICE", "KLU"):
        ok = bool(np.all(np.diff(norms[k]) < 0) and norms[k][-1] < 1e-5)
        out.append(ProbeVerdict(k, "decreasing to < 1e-5", ok))
    dos = norms["DoS"]
    out.append(ProbeVerdict("DoS", "decreasing to 0", bool(np.all(np.diff(dos) < 0) and dos[-1] < 1e-5)))
    # MSE against a fixed target keeps a gradient of order |target| however small the output
    floor = np.linalg.norm(2 * np.cos(3.0 * np.arange(1, losses.PROBE_DIM + 1))) * 0.5
    out.append(ProbeVerdict("MSE", "bounded away from 0", bool(norms["MSE"].min() > floor)))
    return out


def run_all(cases: int = 200, seed: int = 0):
    """(gradient results, probe rows by loss, probe verdicts)."""
    results = [check_loss(k, cases, seed) for k in losses.ALL_LOSSES]
    probes = {k: losses.stability_probe(k) for k in losses.ALL_LOSSES}
    return results, probes, probe_verdicts(probes)


def write_gradcheck_csv(results, verdicts, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["check", "loss_id", "value", "threshold", "passed"])
        for r in results:
            w.writerow(["grad_rel_error", r.loss_id, repr(r.max_rel_error), repr(r.tolerance), int(r.passed)])
        for v in verdicts:
            w.writerow([f"probe:{v.claim}", v.loss_id, "", "", int(v.passed)])
