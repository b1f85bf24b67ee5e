"""Single-file binary checkpoints.

Layout (all integers little-endian)::

    b"STOCKODE" | u32 format version
    u64 length | config JSON (canonical, key-sorted)
    u64 length | metadata JSON (epoch, optimizer scalars, rng state, tickers)
    u32 tensor count
    per tensor: u16 name length | UTF-8 name | u8 ndim | u64 * ndim shape | float64 LE data
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from stockode.errors import ConfigError
from stockode.model import ModelConfig
from stockode.numerics import AdamState

MAGIC = b"STOCKODE"
FORMAT_VERSION = 1


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    adam: AdamState
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)  # auxiliary tensors, e.g. normalization stats
    meta: dict = field(default_factory=dict)

    def tensors(self) -> dict:
        out = dict(self.params)
        for name, m in self.adam.m.items():
            out[f"adam.m/{name}"] = m
            out[f"adam.v/{name}"] = self.adam.v[name]
        out.update(self.arrays)
        return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    meta = {
        "epoch": ckpt.epoch,
        "adam": {"lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2,
                 "eps": ckpt.adam.eps, "step": ckpt.adam.step},
        "rng_state": ckpt.rng_state,
        "param_names": sorted(ckpt.params),
        "array_names": sorted(ckpt.arrays),
        "extra": ckpt.meta,
    }
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for blob in (canonical_json(ckpt.config.to_dict()), canonical_json(meta)):
        parts += [struct.pack("<Q", len(blob)), blob]
    tensors = ckpt.tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        bname = name.encode("utf-8")
        parts += [struct.pack("<H", len(bname)), bname, struct.pack("<B", arr.ndim),
                  struct.pack(f"<{arr.ndim}Q", *arr.shape), arr.tobytes()]
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:8] != MAGIC:
        raise ConfigError("not a StockODE checkpoint (bad magic)")
    try:
        return _decode(buf)
    except ConfigError:
        raise
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"corrupt or truncated checkpoint: {exc}") from exc


def _decode(buf: bytes) -> Checkpoint:
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != FORMAT_VERSION:
        raise ConfigError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    off = 12
    blobs = []
    for _ in range(2):
        (n,) = struct.unpack_from("<Q", buf, off)
        off += 8
        blobs.append(json.loads(buf[off:off + n].decode("utf-8")))
        off += n
    cfg_dict, meta = blobs
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + ln].decode("utf-8")
        off += ln
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
    if off != len(buf):
        raise ConfigError(f"checkpoint has {len(buf) - off} trailing bytes")
    a = meta["adam"]
    adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
    for name, arr in tensors.items():
        if name.startswith("adam.m/"):
            adam.m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            adam.v[name[7:]] = arr
    params = {n: tensors[n] for n in meta["param_names"]}
    arrays = {n: tensors[n] for n in meta["array_names"]}
    return Checkpoint(ModelConfig.from_dict(cfg_dict), params, adam, meta["epoch"], meta["rng_state"],
                      arrays, meta.get("extra", {}))


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
