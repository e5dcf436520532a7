"""Feed-forward evidential classifier with K binary heads of 2 logits each.

Holds three shape-congruent named collections: live parameters, an EMA shadow
for reporting, and the initialization snapshot used to restart each
annotation round from the same pre-training state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

CHECKPOINT_MAGIC = b"EVIDALCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ClassifierSpec:
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = (256, 128)
    dropout_rate: float = 0.50

    def validate(self) -> None:
        if self.input_dim <= 0 or self.num_classes <= 0:
            raise ValueError("input_dim and num_classes must be positive")
        if any(h <= 0 for h in self.hidden_dims):
            raise ValueError("hidden layer sizes must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass
class ModelState:
    spec: ClassifierSpec
    seed: int
    params: dict[str, np.ndarray]
    ema_params: dict[str, np.ndarray]
    init_snapshot: dict[str, np.ndarray]


def _layer_dims(spec: ClassifierSpec) -> list[tuple[int, int]]:
    widths = [spec.input_dim, *spec.hidden_dims, 2 * spec.num_classes]
    return list(zip(widths[:-1], widths[1:]))


def init_model(spec: ClassifierSpec, seed: int) -> ModelState:
    """He-scaled hidden layers; the head starts near zero so every class
    opens at evidence ~(2, 2), i.e. an almost-uniform predictor."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    dims = _layer_dims(spec)
    for i, (fan_in, fan_out) in enumerate(dims):
        head = i == len(dims) - 1
        scale = 0.01 if head else np.sqrt(2.0 / fan_in)
        params[f"W{i}"] = scale * rng.standard_normal((fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return ModelState(
        spec=spec,
        seed=seed,
        params=params,
        ema_params={k: v.copy() for k, v in params.items()},
        init_snapshot={k: v.copy() for k, v in params.items()},
    )


def as_tensors(params: dict[str, np.ndarray], requires_grad: bool) -> dict[str, ad.Tensor]:
    return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def forward(spec: ClassifierSpec, params: dict[str, ad.Tensor], x,
            train_mode: bool = False, rng: np.random.Generator | None = None) -> ad.Tensor:
    """Logits (batch, K, 2).  Dropout sits between the trunk and the head and
    fires only in train mode; eval mode is a pure function of (params, x)."""
    h = x if isinstance(x, ad.Tensor) else ad.Tensor(np.asarray(x, dtype=np.float64))
    if h.data.ndim != 2 or h.data.shape[1] != spec.input_dim:
        raise ValueError(
            f"forward: expected (batch, {spec.input_dim}) input, got {h.data.shape}")
    n_layers = len(spec.hidden_dims) + 1
    for i in range(n_layers - 1):
        h = ad.relu(h @ params[f"W{i}"] + params[f"b{i}"])
    if train_mode and spec.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("forward: train_mode dropout needs an rng")
        h = ad.dropout(h, 1.0 - spec.dropout_rate, rng)
    last = n_layers - 1
    logits = h @ params[f"W{last}"] + params[f"b{last}"]
    return ad.reshape(logits, (h.data.shape[0], spec.num_classes, 2))


def forward_arrays(state: ModelState, x: np.ndarray, use_ema: bool = False) -> np.ndarray:
    """Eval-mode logits as a plain array, from live or EMA weights."""
    source = state.ema_params if use_ema else state.params
    return forward(state.spec, as_tensors(source, requires_grad=False), x).data


def ema_update(state: ModelState, decay: float) -> None:
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"ema decay must be in [0, 1], got {decay}")
    for k, p in state.params.items():
        e = state.ema_params[k]
        e *= decay
        e += (1.0 - decay) * p


def reset_to_snapshot(state: ModelState) -> None:
    """Restore params and EMA to the initial snapshot (bitwise).  Optimizer
    state is the caller's to rebuild."""
    state.params = {k: v.copy() for k, v in state.init_snapshot.items()}
    state.ema_params = {k: v.copy() for k, v in state.init_snapshot.items()}


def clone_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def save_checkpoint(state: ModelState, path: str | Path) -> Path:
    """Self-describing container: magic, version, JSON header with the
    architecture, seed and tensor index, then raw little-endian float64
    payloads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    collections = (("params", state.params),
                   ("ema_params", state.ema_params),
                   ("init_snapshot", state.init_snapshot))
    index = []
    blobs = []
    for coll_name, coll in collections:
        for name in sorted(coll):
            arr = np.ascontiguousarray(coll[name], dtype="<f8")
            index.append({"name": f"{coll_name}/{name}", "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "spec": {
            "input_dim": state.spec.input_dim,
            "num_classes": state.spec.num_classes,
            "hidden_dims": list(state.spec.hidden_dims),
            "dropout_rate": state.spec.dropout_rate,
        },
        "seed": state.seed,
        "tensors": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)
    return path


def load_checkpoint(path: str | Path) -> ModelState:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version = struct.unpack("<I", raw[8:12])[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header_len = struct.unpack("<Q", raw[12:20])[0]
    header = json.loads(raw[20:20 + header_len].decode("utf-8"))
    spec = ClassifierSpec(
        input_dim=header["spec"]["input_dim"],
        num_classes=header["spec"]["num_classes"],
        hidden_dims=tuple(header["spec"]["hidden_dims"]),
        dropout_rate=header["spec"]["dropout_rate"],
    )
    offset = 20 + header_len
    collections: dict[str, dict[str, np.ndarray]] = {
        "params": {}, "ema_params": {}, "init_snapshot": {}}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
        coll, name = entry["name"].split("/", 1)
        collections[coll][name] = arr.astype(np.float64)
    return ModelState(spec=spec, seed=header["seed"],
                      params=collections["params"],
                      ema_params=collections["ema_params"],
                      init_snapshot=collections["init_snapshot"])
