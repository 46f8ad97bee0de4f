"""Small dense networks with hand-written forward and backward passes.

A :class:`Model` is an architecture (a tuple of :class:`LayerSpec`) plus one
flat parameter vector. Affine layers store ``W`` (out x in, row-major)
followed by ``b``. Batches are 2-D arrays with the batch on axis 0.

Softmax is deliberately absent: classifiers emit logits and the losses module
owns the softmax.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ShapeError

KINDS = ("affine", "relu", "tanh")
MAGIC = b"NFTL"
VERSION = 1
DTYPE = np.float32


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError(f"layer dims must be positive, got {self.in_dim}->{self.out_dim}")
        if self.kind != "affine" and self.in_dim != self.out_dim:
            raise ShapeError(f"{self.kind} layer must keep its width")

    @property
    def n_params(self) -> int:
        if self.kind == "affine":
            return self.out_dim * self.in_dim + self.out_dim
        return 0


def mlp_arch(sizes, activation: str = "relu") -> tuple[LayerSpec, ...]:
    """Affine layers between consecutive ``sizes`` with activations in between."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(LayerSpec("affine", a, b))
        if i < len(sizes) - 2:
            layers.append(LayerSpec(activation, b, b))
    return tuple(layers)


def _validate_arch(arch) -> tuple[LayerSpec, ...]:
    arch = tuple(arch)
    if not arch:
        raise ShapeError("architecture has no layers")
    for i in range(1, len(arch)):
        if arch[i - 1].out_dim != arch[i].in_dim:
            raise ShapeError(
                f"layer {i} ({arch[i].kind}) expects width {arch[i].in_dim}, "
                f"previous layer emits {arch[i - 1].out_dim}"
            )
    if not any(layer.kind == "affine" for layer in arch):
        raise ShapeError("architecture needs at least one affine layer")
    return arch


def param_slices(arch) -> list[tuple[slice, slice] | None]:
    """Per layer, the (weight, bias) slices into the flat vector, or None."""
    out = []
    pos = 0
    for layer in arch:
        if layer.kind == "affine":
            nw = layer.out_dim * layer.in_dim
            out.append((slice(pos, pos + nw), slice(pos + nw, pos + nw + layer.out_dim)))
            pos += layer.n_params
        else:
            out.append(None)
    return out


@dataclass(frozen=True)
class Model:
    arch: tuple[LayerSpec, ...]
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        arch = _validate_arch(self.arch)
        object.__setattr__(self, "arch", arch)
        params = np.asarray(self.params)
        if params.ndim != 1:
            raise ShapeError("params must be a flat vector")
        expected = sum(layer.n_params for layer in arch)
        if params.shape[0] != expected:
            raise ShapeError(f"arch needs {expected} params, got {params.shape[0]}")
        object.__setattr__(self, "params", params)

    @property
    def in_dim(self) -> int:
        return self.arch[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.arch[-1].out_dim

    @property
    def n_params(self) -> int:
        return self.params.shape[0]

    @property
    def head_range(self) -> tuple[int, int]:
        """Half-open index span of the last affine layer's parameters."""
        end = self.n_params
        for layer in reversed(self.arch):
            if layer.kind == "affine":
                return end - layer.n_params, end
        raise AssertionError("unreachable: arch validated to contain an affine layer")

    def with_params(self, params: np.ndarray) -> "Model":
        return Model(self.arch, np.asarray(params, dtype=self.params.dtype))

    def astype(self, dtype) -> "Model":
        return Model(self.arch, self.params.astype(dtype))

    def weights(self, layer_index: int) -> tuple[np.ndarray, np.ndarray]:
        layer = self.arch[layer_index]
        slices = param_slices(self.arch)[layer_index]
        if slices is None:
            raise ShapeError(f"layer {layer_index} ({layer.kind}) has no parameters")
        ws, bs = slices
        return self.params[ws].reshape(layer.out_dim, layer.in_dim), self.params[bs]


def init_params(arch, seed, dtype=DTYPE) -> np.ndarray:
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    arch = _validate_arch(arch)
    rng = np.random.default_rng(seed)
    chunks = []
    for layer in arch:
        if layer.kind != "affine":
            continue
        limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        chunks.append(rng.uniform(-limit, limit, size=layer.out_dim * layer.in_dim))
        chunks.append(np.zeros(layer.out_dim))
    return np.concatenate(chunks).astype(dtype)


def init_model(arch, seed, dtype=DTYPE) -> Model:
    return Model(tuple(arch), init_params(arch, seed, dtype))


def reinit_head(model: Model, seed) -> Model:
    """Fresh seeded init of the final affine layer, everything else kept."""
    lo, hi = model.head_range
    last = [layer for layer in model.arch if layer.kind == "affine"][-1]
    fresh = init_params((last,), seed, model.params.dtype)
    params = model.params.copy()
    params[lo:hi] = fresh
    return model.with_params(params)


@dataclass(frozen=True)
class Cache:
    arch: tuple[LayerSpec, ...]
    params: np.ndarray
    inputs: tuple[np.ndarray, ...]
    output_shape: tuple[int, ...]


def forward(model: Model, batch) -> tuple[np.ndarray, Cache]:
    x = np.asarray(batch, dtype=model.params.dtype)
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-D (rows, features), got shape {x.shape}")
    slices = param_slices(model.arch)
    inputs = []
    for i, layer in enumerate(model.arch):
        if x.shape[1] != layer.in_dim:
            raise ShapeError(
                f"layer {i} ({layer.kind}) expects {layer.in_dim} features, got {x.shape[1]}"
            )
        inputs.append(x)
        if layer.kind == "affine":
            ws, bs = slices[i]
            w = model.params[ws].reshape(layer.out_dim, layer.in_dim)
            x = x @ w.T + model.params[bs]
        elif layer.kind == "relu":
            x = np.maximum(x, 0)
        else:
            x = np.tanh(x)
    return x, Cache(model.arch, model.params, tuple(inputs), x.shape)


def backward(model: Model, cache: Cache, grad_output) -> np.ndarray:
    """Gradient of ``sum(grad_output * output)`` with respect to the flat params."""
    if cache.arch != model.arch:
        raise ShapeError("cache was produced by a different architecture")
    if cache.params is not model.params and not np.array_equal(cache.params, model.params):
        raise ShapeError("stale cache: model parameters changed since forward")
    g = np.asarray(grad_output, dtype=model.params.dtype)
    if g.shape != cache.output_shape:
        raise ShapeError(f"grad_output shape {g.shape} != forward output {cache.output_shape}")
    slices = param_slices(model.arch)
    grads = np.zeros_like(model.params)
    for i in range(len(model.arch) - 1, -1, -1):
        layer = model.arch[i]
        x = cache.inputs[i]
        if layer.kind == "affine":
            ws, bs = slices[i]
            w = model.params[ws].reshape(layer.out_dim, layer.in_dim)
            grads[ws] = (g.T @ x).ravel()
            grads[bs] = g.sum(axis=0)
            if i > 0:
                g = g @ w
        elif layer.kind == "relu":
            g = g * (x > 0)
        else:
            g = g * (1 - np.tanh(x) ** 2)
    return grads


def predict(model: Model, batch) -> np.ndarray:
    return forward(model, batch)[0]


# -- checkpoints -------------------------------------------------------------

def _arch_json(arch) -> bytes:
    desc = [{"kind": l.kind, "in_dim": l.in_dim, "out_dim": l.out_dim} for l in arch]
    return json.dumps(desc, separators=(",", ":")).encode("utf-8")


def dumps_checkpoint(model: Model) -> bytes:
    arch = _arch_json(model.arch)
    blob = np.asarray(model.params, dtype="<f4").tobytes()
    return MAGIC + struct.pack("<II", VERSION, len(arch)) + arch + blob


def loads_checkpoint(data: bytes) -> Model:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError("bad magic: not an NFTL checkpoint")
    version, arch_len = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch_bytes = data[12 : 12 + arch_len]
    if len(arch_bytes) != arch_len:
        raise CheckpointError("truncated architecture descriptor")
    try:
        desc = json.loads(arch_bytes.decode("utf-8"))
        arch = tuple(LayerSpec(d["kind"], int(d["in_dim"]), int(d["out_dim"])) for d in desc)
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed architecture descriptor: {exc}") from exc
    blob = data[12 + arch_len :]
    expected = sum(layer.n_params for layer in arch)
    if len(blob) != 4 * expected:
        raise CheckpointError(
            f"parameter blob length mismatch: arch needs {4 * expected} bytes, file has {len(blob)}"
        )
    params = np.frombuffer(blob, dtype="<f4").astype(DTYPE)
    try:
        return Model(arch, params)
    except ShapeError as exc:
        raise CheckpointError(str(exc)) from exc


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(dumps_checkpoint(model))


def load_checkpoint(path) -> Model:
    return loads_checkpoint(Path(path).read_bytes())
