"""Model assembly, forward/backward orchestration, and checkpointing.

The classifier is a three-block 1D convolutional encoder feeding a latent
projection, which two dense blocks turn into five sigmoid outputs. A second
latent projection (the log-variance head) can be enabled for parity with
the two-head latent design; it is never used in the forward pass and always
receives zero gradients.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, InvalidConfig, IoFailure, ShapeMismatch, StaleCache
from .layers import (
    BN_EPSILON,
    BN_MOMENTUM,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    GlobalAvgPool,
    Layer,
    MaxPool1D,
    ReLU,
    Sigmoid,
)

CHECKPOINT_MAGIC = b"CVAE"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    conv_filters: tuple = (64, 128, 256)
    conv_kernels: tuple = (5, 5, 3)
    conv_dropout: tuple = (0.2, 0.2, 0.3)
    pool_size: int = 2
    latent_dim: int = 32
    include_log_var_head: bool = False
    dense_units: tuple = (256, 128)
    dense_dropout: tuple = (0.5, 0.5)
    n_classes: int = 5
    n_leads: int = 12
    bn_momentum: float = BN_MOMENTUM
    bn_epsilon: float = BN_EPSILON

    def __post_init__(self):
        if not (len(self.conv_filters) == len(self.conv_kernels)
                == len(self.conv_dropout)):
            raise InvalidConfig("conv filter/kernel/dropout lists must align")
        if len(self.dense_units) != len(self.dense_dropout):
            raise InvalidConfig("dense unit/dropout lists must align")
        if any(k < 1 or k % 2 == 0 for k in self.conv_kernels):
            raise InvalidConfig(f"conv kernels must be odd and >= 1: {self.conv_kernels}")
        if any(f < 1 for f in self.conv_filters):
            raise InvalidConfig(f"conv filters must be >= 1: {self.conv_filters}")
        if any(not 0.0 <= r < 1.0 for r in self.conv_dropout + self.dense_dropout):
            raise InvalidConfig("dropout rates must lie in [0, 1)")
        if any(u < 1 for u in self.dense_units) or self.latent_dim < 1:
            raise InvalidConfig("layer widths must be >= 1")
        if self.pool_size < 1:
            raise InvalidConfig(f"pool size must be >= 1, got {self.pool_size}")
        if any(a >= b for a, b in zip(self.conv_filters, self.conv_filters[1:])):
            raise InvalidConfig(
                f"conv channel progression must strictly increase: {self.conv_filters}"
            )

    @classmethod
    def reduced(cls, **overrides) -> "ModelConfig":
        """Small configuration for desk-scale runs and gradient checks."""
        base = dict(conv_filters=(8, 16, 32), conv_kernels=(5, 5, 3),
                    latent_dim=16, dense_units=(32, 16))
        base.update(overrides)
        return cls(**base)

    def time_divisor(self) -> int:
        return self.pool_size ** len(self.conv_filters)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("conv_filters", "conv_kernels", "conv_dropout",
                    "dense_units", "dense_dropout"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = dict(d)
        for key in ("conv_filters", "conv_kernels", "conv_dropout",
                    "dense_units", "dense_dropout"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class ForwardCache:
    """Per-layer caches from one forward pass, tied to a model version."""

    version: int
    training: bool
    layer_caches: list


class Model:
    """All layer parameters plus batch-norm running statistics.

    ``version`` increments on every parameter mutation so that backward can
    reject caches from a forward that ran against different parameters.
    """

    def __init__(self, config: ModelConfig, init_seed: int = 0,
                 dropout_seed: int = 0):
        self.config = config
        self.version = 0
        rng = np.random.default_rng(init_seed)
        self.layers = self._build_chain(config, rng)
        self.log_var_head = None
        if config.include_log_var_head:
            self.log_var_head = Dense(config.conv_filters[-1], config.latent_dim, rng)
        self.dropout_rng = np.random.default_rng(dropout_seed)

    @staticmethod
    def _build_chain(config: ModelConfig, rng) -> list[Layer]:
        layers: list[Layer] = []
        in_ch = config.n_leads
        for filters, kernel, drop in zip(config.conv_filters, config.conv_kernels,
                                         config.conv_dropout):
            layers.append(Conv1D(in_ch, filters, kernel, rng))
            layers.append(BatchNorm(filters, config.bn_momentum, config.bn_epsilon))
            layers.append(MaxPool1D(config.pool_size))
            layers.append(Dropout(drop))
            in_ch = filters
        layers.append(GlobalAvgPool())
        layers.append(Dense(in_ch, config.latent_dim, rng))      # latent mean head
        feat = config.latent_dim
        for units, drop in zip(config.dense_units, config.dense_dropout):
            layers.append(Dense(feat, units, rng))
            layers.append(ReLU())
            layers.append(BatchNorm(units, config.bn_momentum, config.bn_epsilon))
            layers.append(Dropout(drop))
            feat = units
        layers.append(Dense(feat, config.n_classes, rng))
        layers.append(Sigmoid())
        return layers

    def all_layers(self) -> list[Layer]:
        extra = [self.log_var_head] if self.log_var_head is not None else []
        return self.layers + extra

    def seed_dropout(self, seed: int) -> None:
        self.dropout_rng = np.random.default_rng(seed)

    def bump_version(self) -> None:
        self.version += 1

    # --- forward / backward -------------------------------------------------

    def forward(self, batch: np.ndarray, training: bool
                ) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.config.n_leads:
            raise ShapeMismatch(
                f"expected (batch, time, {self.config.n_leads}), got {x.shape}"
            )
        if x.shape[1] % self.config.time_divisor():
            raise ShapeMismatch(
                f"time length {x.shape[1]} not divisible by {self.config.time_divisor()}"
            )
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, training, self.dropout_rng)
            caches.append(cache)
        return x, ForwardCache(self.version, training, caches)

    def backward(self, cache: ForwardCache, grad_output: np.ndarray) -> list[dict]:
        """Backpropagate loss gradients, filling every trainable block's buffer."""
        if cache.version != self.version:
            raise StaleCache(
                f"cache from model version {cache.version}, now at {self.version}"
            )
        if not cache.training:
            raise StaleCache("backward requires a cache from a train-mode forward")
        grad = np.asarray(grad_output, dtype=np.float64)
        for layer, layer_cache in zip(reversed(self.layers),
                                      reversed(cache.layer_caches)):
            grad = layer.backward(grad, layer_cache)
        if self.log_var_head is not None:
            for g in self.log_var_head.grads.values():
                g[...] = 0.0     # unused head: loss does not depend on it
        return [layer.grads for layer in self.all_layers()]

    # --- accounting -----------------------------------------------------------

    def parameter_counts(self) -> tuple[int, int, int]:
        """(total, trainable, non_trainable) parameter counts."""
        trainable = sum(p.size for layer in self.all_layers()
                        for p in layer.params.values())
        non_trainable = sum(s.size for layer in self.all_layers()
                            for s in layer.state.values())
        return trainable + non_trainable, trainable, non_trainable

    def copy(self) -> "Model":
        clone = Model(self.config)
        for src, dst in zip(self.all_layers(), clone.all_layers()):
            for name, value in src.params.items():
                dst.params[name][...] = value
            for name, value in src.state.items():
                dst.state[name][...] = value
        return clone

    # --- checkpoint format ------------------------------------------------------

    def _manifest(self) -> dict:
        blocks = []
        for i, layer in enumerate(self.all_layers()):
            for name, value in layer.params.items():
                blocks.append({"layer": i, "kind": layer.kind, "name": name,
                               "shape": list(value.shape), "trainable": True})
            for name, value in layer.state.items():
                blocks.append({"layer": i, "kind": layer.kind, "name": name,
                               "shape": list(value.shape), "trainable": False})
        return {"config": self.config.to_dict(), "blocks": blocks}

    def _block_arrays(self) -> list[np.ndarray]:
        arrays = []
        for layer in self.all_layers():
            arrays.extend(layer.params.values())
            arrays.extend(layer.state.values())
        return arrays


def build_model(config: ModelConfig, init_seed: int = 0,
                dropout_seed: int = 0) -> Model:
    return Model(config, init_seed=init_seed, dropout_seed=dropout_seed)


def save_checkpoint(model: Model, path) -> None:
    """Write magic, format version, JSON manifest, then f64 LE blocks."""
    manifest = json.dumps(model._manifest(), sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<I", len(manifest)))
            fh.write(manifest)
            for block in model._block_arrays():
                fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Model:
    """Rebuild a model bit-exactly from a checkpoint file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic bytes")
    version, manifest_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported format version {version}")
    if len(data) < 12 + manifest_len:
        raise CorruptCheckpoint(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[12:12 + manifest_len].decode("utf-8"))
        config = ModelConfig.from_dict(manifest["config"])
    except (ValueError, KeyError, TypeError, InvalidConfig) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable manifest: {exc}") from exc

    model = Model(config)
    blocks = model._block_arrays()
    if len(manifest["blocks"]) != len(blocks):
        raise CorruptCheckpoint(
            f"{path}: manifest lists {len(manifest['blocks'])} blocks, "
            f"model has {len(blocks)}"
        )
    offset = 12 + manifest_len
    for entry, block in zip(manifest["blocks"], blocks):
        if tuple(entry["shape"]) != block.shape:
            raise CorruptCheckpoint(
                f"{path}: block {entry['name']} shape {entry['shape']} != {block.shape}"
            )
        nbytes = block.size * 8
        if offset + nbytes > len(data):
            raise CorruptCheckpoint(f"{path}: truncated parameter data")
        block[...] = np.frombuffer(data, dtype="<f8", count=block.size,
                                   offset=offset).reshape(block.shape)
        offset += nbytes
    if offset != len(data):
        raise CorruptCheckpoint(f"{path}: {len(data) - offset} trailing bytes")
    return model
