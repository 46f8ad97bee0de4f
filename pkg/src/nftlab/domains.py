"""Seeded synthetic domains standing in for image datasets.

All classification domains share one family of class prototypes; a domain id
selects a rotation of those prototypes and an offset in input space. Related
domains therefore share transferable structure while remaining easy to tell
apart, which is the regime where fine-tuning a pre-trained model pays off.

Generation domains are small grayscale "images" holding one Gaussian blob
whose placement and width depend on the domain id.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FAMILY_SEED = 7_031
PROTOTYPE_SCALE = 3.0
NOISE_STD = 1.0
ROTATION_STRENGTH = 0.05
OFFSET_SCALE = 3.0


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray = field(repr=False)
    labels: np.ndarray | None = field(repr=False)
    domain_id: str
    seed: int

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("inputs must be a non-empty (n, d) array")
        if self.labels is not None:
            if self.labels.shape[0] != self.inputs.shape[0]:
                raise ValueError("labels and inputs disagree on n")
            if not (np.all(self.labels.sum(axis=1) == 1) and np.all((self.labels == 0) | (self.labels == 1))):
                raise ValueError("labels must be one-hot rows")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_classes(self) -> int:
        return 0 if self.labels is None else self.labels.shape[1]

    @property
    def label_index(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.inputs[idx], labels, self.domain_id, self.seed)


@dataclass(frozen=True)
class DomainSplit:
    defender_half: Dataset
    adversary_half: Dataset
    test: Dataset


def domain_key(domain_id: str) -> int:
    return int.from_bytes(hashlib.sha256(domain_id.encode("utf-8")).digest()[:8], "little")


def _one_hot(idx, c):
    return np.eye(c, dtype=np.float32)[idx]


def _near_identity_rotation(rng, d, strength):
    q, r = np.linalg.qr(np.eye(d) + strength * rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def class_geometry(domain_id: str, C: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """(class means (C, d), offset (d,)) for a classification domain."""
    fam = np.random.default_rng([FAMILY_SEED, C, d])
    basis, _ = np.linalg.qr(fam.standard_normal((d, d)))
    protos = PROTOTYPE_SCALE * np.array([basis[:, c % d] * (1 if c < d else -1) for c in range(C)])
    dom = np.random.default_rng([domain_key(domain_id), C, d])
    rot = _near_identity_rotation(dom, d, ROTATION_STRENGTH)
    u = dom.standard_normal(d)
    offset = OFFSET_SCALE * u / np.linalg.norm(u)
    return protos @ rot.T, offset


def gen_classification_domain(domain_id: str, n: int, C: int = 4, d: int = 16, seed: int = 0) -> Dataset:
    if C < 2 or d < 2 or n < 1:
        raise ValueError(f"need C >= 2, d >= 2, n >= 1; got C={C}, d={d}, n={n}")
    means, offset = class_geometry(domain_id, C, d)
    rng = np.random.default_rng([domain_key(domain_id), int(seed), n])
    y = rng.permutation(np.arange(n) % C)
    x = means[y] + offset + NOISE_STD * rng.standard_normal((n, d))
    return Dataset(x.astype(np.float32), _one_hot(y, C), domain_id, int(seed))


def _grid(d):
    h = int(round(np.sqrt(d)))
    if h * h == d:
        yy, xx = np.mgrid[0:h, 0:h] / max(h - 1, 1)
        return np.stack([xx.ravel(), yy.ravel()], axis=1)
    xs = np.linspace(0, 1, d)
    return np.stack([xs, np.zeros(d)], axis=1)


def gen_generation_domain(domain_id: str, n: int, d: int = 16, seed: int = 0) -> Dataset:
    """Blob images in [0, 1]; domain id fixes the blob anchor and width."""
    if d < 2 or n < 1:
        raise ValueError(f"need d >= 2, n >= 1; got d={d}, n={n}")
    dom = np.random.default_rng([domain_key(domain_id), d])
    anchor = dom.uniform(0.2, 0.8, size=2)
    width = dom.uniform(0.1, 0.6)
    rng = np.random.default_rng([domain_key(domain_id), int(seed), n])
    centers = np.clip(anchor + 0.12 * rng.standard_normal((n, 2)), 0, 1)
    amp = rng.uniform(0.6, 1.0, size=(n, 1))
    pix = _grid(d)
    dist2 = ((pix[None, :, :] - centers[:, None, :]) ** 2).sum(axis=2)
    x = amp * np.exp(-dist2 / (2 * width**2))
    return Dataset(x.astype(np.float32), None, domain_id, int(seed))


def split(dataset: Dataset, test_fraction: float, seed: int) -> DomainSplit:
    """Hold out a test set, then halve the rest into defender/adversary parts."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(dataset)
    n_test = int(round(n * test_fraction))
    n_def = (n - n_test + 1) // 2
    n_adv = n - n_test - n_def
    if min(n_test, n_def, n_adv) < 1:
        raise ValueError(f"dataset of size {n} is too small to split")
    perm = np.random.default_rng([int(seed), n]).permutation(n)
    return DomainSplit(
        dataset.subset(np.sort(perm[:n_def])),
        dataset.subset(np.sort(perm[n_def : n_def + n_adv])),
        dataset.subset(np.sort(perm[n_def + n_adv :])),
    )


def batch_indices(n: int, batch_size: int, seed, epochs: int | None = None):
    """Index arrays for shuffled passes over ``range(n)``; endless if epochs is None."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start : start + batch_size]
        epoch += 1


def batches(dataset: Dataset, batch_size: int, seed, epochs: int | None = None):
    """Yield (inputs, labels-or-None) minibatches, reshuffled every epoch."""
    for idx in batch_indices(len(dataset), batch_size, seed, epochs):
        labels = None if dataset.labels is None else dataset.labels[idx]
        yield dataset.inputs[idx], labels


# -- binary table export -----------------------------------------------------
# header: uint32 n, d, C (little-endian); n*d float32 rows; n int32 label
# indices when C > 0.

def dumps_dataset(ds: Dataset) -> bytes:
    n, d = ds.inputs.shape
    out = struct.pack("<III", n, d, ds.n_classes) + np.asarray(ds.inputs, "<f4").tobytes()
    if ds.labels is not None:
        out += np.asarray(ds.label_index, "<i4").tobytes()
    return out


def loads_dataset(data: bytes, domain_id: str = "imported", seed: int = 0) -> Dataset:
    if len(data) < 12:
        raise ValueError("truncated dataset header")
    n, d, c = struct.unpack("<III", data[:12])
    want = 12 + 4 * n * d + (4 * n if c else 0)
    if len(data) != want:
        raise ValueError(f"dataset table should be {want} bytes, got {len(data)}")
    x = np.frombuffer(data[12 : 12 + 4 * n * d], "<f4").reshape(n, d).astype(np.float32)
    labels = None
    if c:
        idx = np.frombuffer(data[12 + 4 * n * d :], "<i4")
        if np.any(idx < 0) or np.any(idx >= c):
            raise ValueError("label index out of range")
        labels = _one_hot(idx, c)
    return Dataset(x, labels, domain_id, seed)


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dumps_dataset(ds))


def load_dataset(path, domain_id: str = "imported", seed: int = 0) -> Dataset:
    return loads_dataset(Path(path).read_bytes(), domain_id, seed)
