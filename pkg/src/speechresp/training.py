"""Mini-batch Adam training with early stopping, plus checkpoint I/O.

The loop is deliberately plain: seeded shuffle, Adam step per mini-batch,
full validation loss after every epoch, stop when validation has not
improved for `patience` epochs, return the best epoch's parameters.
Everything that matters for reproducibility (shuffle order, update order,
accumulation order) is fixed, so identical (seed, data, config) giving
bit-identical parameters is a hard guarantee, not a hope.

Checkpoint layout: magic "BRTHCKP1", uint32 length-prefixed JSON blob
(model config plus optional pipeline metadata), then every tensor in
declaration order as float64 little-endian, each preceded by a uint32
ndim and uint32 dims.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, FormatError, ParameterError, TruncationError
from .ioutil import atomic_write_bytes, atomic_write_text
from .model import (
    ModelConfig,
    ModelParams,
    _layout,
    _params_from_arrays,
    batch_loss,
    init_params,
    loss_and_grad,
    named_arrays,
)
from .segments import Segment

CKPT_MAGIC = b"BRTHCKP1"


@dataclass
class TrainConfig:
    lr: float = 0.005
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ParameterError("lr must be > 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ParameterError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ParameterError("patience must be >= 1")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "seed": self.seed,
        }


@dataclass
class TrainHistory:
    """Per-epoch losses and wall time; epochs are numbered from 1.

    `seconds` is wall-clock and is the one field excluded from
    reproducibility comparisons.
    """

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)


class _Adam:
    """In-place Adam over the tensors of a ModelParams, declaration order."""

    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.step_count = 0
        self.m = [np.zeros_like(a) for _, a in named_arrays(params)]
        self.v = [np.zeros_like(a) for _, a in named_arrays(params)]

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        cfg = self.cfg
        self.step_count += 1
        b1c = 1.0 - cfg.adam_beta1**self.step_count
        b2c = 1.0 - cfg.adam_beta2**self.step_count
        p_arrays = named_arrays(params)
        g_arrays = named_arrays(grads)
        for (_, p), (_, g), m, v in zip(p_arrays, g_arrays, self.m, self.v):
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * g
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * (g * g)
            p -= cfg.lr * (m / b1c) / (np.sqrt(v / b2c) + cfg.adam_eps)


class EarlyStopper:
    """Best-so-far tracker: stop once `patience` epochs pass without a
    strictly better validation loss."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ParameterError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; True when it set a new best."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def _copy_params(params: ModelParams) -> ModelParams:
    names_arrays = named_arrays(params)
    # rebuild through the same plumbing used by checkpoint load
    arrays = [a.copy() for _, a in names_arrays]
    return _params_like(params, arrays)


def _params_like(template: ModelParams, arrays: list[np.ndarray]) -> ModelParams:
    from .model import BranchParams, LstmLayerParams

    it = iter(arrays)
    branches = [BranchParams(next(it), next(it)) for _ in template.branches]
    lstm = [LstmLayerParams(next(it), next(it), next(it)) for _ in template.lstm]
    return ModelParams(
        branches=branches,
        lstm=lstm,
        embed_w=next(it),
        embed_b=next(it),
        head_w=next(it),
        head_b=next(it),
    )


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_set: list[Segment],
    val_set: list[Segment],
    log_path=None,
) -> tuple[ModelParams, TrainHistory]:
    """Train from scratch and return the best-validation-epoch parameters.

    Shuffling uses its own RNG seeded from train_cfg.seed; parameter
    initialization is governed by model_cfg.seed. The last incomplete
    mini-batch is used, not dropped. When log_path is given, one JSON
    record per epoch {epoch, train_loss, val_loss, seconds} is written
    there (atomically, at the end of training).
    """
    if not train_set or not val_set:
        raise ParameterError("train and validation sets must be non-empty")
    params = init_params(model_cfg)
    opt = _Adam(params, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    history = TrainHistory()
    stopper = EarlyStopper(train_cfg.patience)
    best_params = _copy_params(params)
    n = len(train_set)
    log_lines: list[str] = []
    for epoch in range(1, train_cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for batch_idx, lo in enumerate(range(0, n, train_cfg.batch_size), start=1):
            batch = [train_set[i] for i in order[lo : lo + train_cfg.batch_size]]
            loss, grads = loss_and_grad(params, batch)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"training loss is {loss} at epoch {epoch}, batch {batch_idx}"
                )
            opt.step(params, grads)
            epoch_loss += loss
            n_batches += 1
        val = batch_loss(params, val_set)
        if not math.isfinite(val):
            raise DivergenceError(
                f"validation loss is {val} at epoch {epoch} (after all batches)"
            )
        seconds = time.perf_counter() - t0
        train_loss = epoch_loss / n_batches
        history.train_loss.append(train_loss)
        history.val_loss.append(val)
        history.seconds.append(seconds)
        log_lines.append(
            json.dumps(
                {
                    "epoch": epoch,
                    "train_loss": train_loss,
                    "val_loss": val,
                    "seconds": seconds,
                },
                sort_keys=True,
            )
        )
        if stopper.update(epoch, val):
            best_params = _copy_params(params)
            history.best_epoch = epoch
        if stopper.should_stop:
            break
    if log_path is not None:
        atomic_write_text(log_path, "\n".join(log_lines) + "\n")
    return best_params, history


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    params: ModelParams,
    config: ModelConfig,
    path,
    pipeline: dict | None = None,
) -> None:
    """Write a checkpoint; `pipeline` is optional feature-pipeline metadata
    stored alongside the model config so inference can rebuild its inputs."""
    blob: dict = {"model": config.to_dict()}
    if pipeline is not None:
        blob["pipeline"] = pipeline
    payload = json.dumps(blob, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<I", len(payload)), payload]
    expected = _layout(config)
    arrays = named_arrays(params)
    if [n for n, _ in arrays] != [n for n, _ in expected]:
        raise ParameterError("params do not match config layout")
    for (name, arr), (_, shape) in zip(arrays, expected):
        if arr.shape != shape:
            raise ParameterError(
                f"tensor {name} has shape {arr.shape}, config expects {shape}"
            )
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncationError(
                f"checkpoint ends early: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def _load_blob(path) -> tuple[dict, _Reader]:
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw)
    magic = r.take(8)
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}, expected {CKPT_MAGIC!r}")
    (json_len,) = struct.unpack("<I", r.take(4))
    try:
        blob = json.loads(r.take(json_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint config blob is not valid JSON: {exc}") from exc
    if not isinstance(blob, dict) or "model" not in blob:
        raise FormatError("checkpoint config blob lacks a model section")
    return blob, r


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    blob, r = _load_blob(path)
    try:
        config = ModelConfig.from_dict(blob["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"checkpoint model config is malformed: {exc}") from exc
    arrays: list[np.ndarray] = []
    for name, shape in _layout(config):
        (ndim,) = struct.unpack("<I", r.take(4))
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim)) if ndim else ()
        if dims != shape:
            raise FormatError(
                f"checkpoint tensor {name} has shape {dims}, expected {shape}"
            )
        count = math.prod(dims) if dims else 1
        data = r.take(8 * count)
        arr = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(dims)
        arrays.append(arr)
    if r.pos != len(r.blob):
        raise FormatError(
            f"checkpoint has {len(r.blob) - r.pos} trailing bytes after all tensors"
        )
    return _params_from_arrays(config, arrays), config


def checkpoint_metadata(path) -> dict:
    """The full JSON blob of a checkpoint (model config + any pipeline
    metadata) without loading tensors."""
    blob, _ = _load_blob(path)
    return blob
