"""Binary model checkpoints.

Layout (all integers little-endian):

    magic    4s   "ASVM"
    version  u16  currently 1
    flags    u8   bit 0: optimizer state follows the parameter table
    count    u32  number of parameters
    then per parameter:
        name_len u16, name utf-8 bytes
        ndim     u8
        dims     ndim x u32
        data     float64 values, C order
    optimizer state when present:
        kind u8 (0 = sgd, 1 = adam), lr f64, step u64
        adam only: per parameter, in table order, moment arrays m then v
        (float64, shapes implied by the table)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor
from . import optim

ASVM_MAGIC = b"ASVM"
ASVM_VERSION = 1

_FLAG_OPTIMIZER = 1
_OPT_KINDS = {"sgd": 0, "adam": 1}
_OPT_NAMES = {v: k for k, v in _OPT_KINDS.items()}


class CheckpointError(Exception):
    """Unreadable or structurally invalid checkpoint bytes."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint contents do not line up with the receiving model."""


@dataclass
class OptimizerSnapshot:
    kind: str
    lr: float
    step_count: int
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def _param_data(value) -> np.ndarray:
    arr = value.data if isinstance(value, Tensor) else np.asarray(value)
    return np.ascontiguousarray(arr, dtype="<f8")


def pack_checkpoint(params: dict[str, "Tensor | np.ndarray"],
                    optimizer=None) -> bytes:
    flags = _FLAG_OPTIMIZER if optimizer is not None else 0
    chunks = [struct.pack("<4sHBI", ASVM_MAGIC, ASVM_VERSION, flags, len(params))]
    names = list(params)
    for name in names:
        raw = name.encode("utf-8")
        arr = _param_data(params[name])
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    if optimizer is not None:
        if optimizer.kind not in _OPT_KINDS:
            raise CheckpointError(f"unknown optimizer kind {optimizer.kind!r}")
        chunks.append(struct.pack("<BdQ", _OPT_KINDS[optimizer.kind],
                                  optimizer.lr, optimizer.step_count))
        if optimizer.kind == "adam":
            for name in names:
                if name not in optimizer.m:
                    raise CheckpointMismatchError(
                        f"optimizer has no moments for parameter {name!r}")
                chunks.append(np.ascontiguousarray(optimizer.m[name], "<f8").tobytes())
                chunks.append(np.ascontiguousarray(optimizer.v[name], "<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def unpack_checkpoint(buf: bytes) -> tuple[dict[str, np.ndarray], OptimizerSnapshot | None]:
    r = _Reader(buf)
    magic, version, flags, count = r.unpack("<4sHBI")
    if magic != ASVM_MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != ASVM_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(dims)
        if name in params:
            raise CheckpointError(f"duplicate parameter {name!r}")
        params[name] = data.astype(np.float64)
    snapshot = None
    if flags & _FLAG_OPTIMIZER:
        kind_code, lr, step_count = r.unpack("<BdQ")
        if kind_code not in _OPT_NAMES:
            raise CheckpointError(f"unknown optimizer code {kind_code}")
        kind = _OPT_NAMES[kind_code]
        snapshot = OptimizerSnapshot(kind=kind, lr=lr, step_count=step_count)
        if kind == "adam":
            for name, arr in params.items():
                m = np.frombuffer(r.take(8 * arr.size), dtype="<f8").reshape(arr.shape)
                v = np.frombuffer(r.take(8 * arr.size), dtype="<f8").reshape(arr.shape)
                snapshot.m[name] = m.astype(np.float64)
                snapshot.v[name] = v.astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return params, snapshot


def save_checkpoint(path, params: dict[str, "Tensor | np.ndarray"],
                    optimizer=None) -> None:
    with open(path, "wb") as fh:
        fh.write(pack_checkpoint(params, optimizer))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], OptimizerSnapshot | None]:
    with open(path, "rb") as fh:
        return unpack_checkpoint(fh.read())


def load_into(params: dict[str, Tensor], path) -> OptimizerSnapshot | None:
    """Copy checkpoint values into live parameter tensors.

    The checkpoint must carry exactly the receiving names with matching
    shapes; anything else raises CheckpointMismatchError.
    """
    stored, snapshot = load_checkpoint(path)
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise CheckpointMismatchError(
            f"parameter names do not match (missing={missing}, unexpected={extra})")
    for name, tensor in params.items():
        if stored[name].shape != tensor.data.shape:
            raise CheckpointMismatchError(
                f"shape mismatch for {name!r}: checkpoint "
                f"{stored[name].shape}, model {tensor.data.shape}")
        tensor.data = stored[name].copy()
        tensor.grad = None
    return snapshot


def restore_optimizer(snapshot: OptimizerSnapshot,
                      params: dict[str, Tensor]) -> "optim.Sgd | optim.Adam":
    """Rebuild an optimizer instance from a snapshot over live params."""
    if snapshot.kind == "sgd":
        opt = optim.Sgd(params, snapshot.lr)
        opt.step_count = snapshot.step_count
        return opt
    opt = optim.Adam(params, snapshot.lr)
    opt.step_count = snapshot.step_count
    for name in params:
        if name not in snapshot.m:
            raise CheckpointMismatchError(
                f"snapshot has no adam moments for {name!r}")
        if snapshot.m[name].shape != params[name].data.shape:
            raise CheckpointMismatchError(
                f"moment shape mismatch for {name!r}")
        opt.m[name] = snapshot.m[name].copy()
        opt.v[name] = snapshot.v[name].copy()
    return opt
