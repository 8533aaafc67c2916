"""Bit-exact checkpoint container.

Layout (little-endian)::

    b"BGLB"  u32 version  u32 header_len  header (UTF-8 JSON)
    u32 n_entries
    per entry: u16 name_len, name, u8 dtype tag (1 = float64), u8 ndim,
               ndim x u32 dims, row-major payload

The JSON header carries the model kind, the full training config, the epoch
counter, Adam step counts and the RNG stream states.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .nn import BatchNorm
from .optim import AdamState
from .training import ModelBundle, TrainConfig, new_bundle

MAGIC = b"BGLB"
VERSION = 1
F64 = 1


class CheckpointError(ValueError):
    pass


def _entries(bundle):
    for net_name in sorted(bundle.nets):
        net = bundle.nets[net_name]
        for i, layer in enumerate(net.layers):
            for key in sorted(layer.params):
                yield f"{net_name}/{i}.{key}", layer.params[key]
            if isinstance(layer, BatchNorm):
                yield f"{net_name}/{i}.running_mean", layer.running_mean
                yield f"{net_name}/{i}.running_var", layer.running_var
        state = bundle.adam[net_name]
        for key in sorted(state.m):
            yield f"adam/{net_name}/{key}/m", state.m[key]
            yield f"adam/{net_name}/{key}/v", state.v[key]


def dumps(bundle: ModelBundle) -> bytes:
    header = {
        "model_kind": bundle.kind,
        "config": asdict(bundle.config),
        "epoch": bundle.epoch,
        "data_dim": bundle.data_dim,
        "adam_t": {k: v.t for k, v in sorted(bundle.adam.items())},
        "rng": {k: g.bit_generator.state for k, g in sorted(bundle.rngs.items())},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(head)), head]
    entries = list(_entries(bundle))
    out.append(struct.pack("<I", len(entries)))
    for name, arr in entries:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        out.append(struct.pack("<H", len(encoded)) + encoded)
        out.append(struct.pack(f"<BB{arr.ndim}I", F64, arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_checkpoint(path, bundle: ModelBundle) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(bundle))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(raw: bytes) -> ModelBundle:
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, head_len = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(r.take(head_len, "header").decode("utf-8"))
    config = TrainConfig(**header["config"])
    bundle = new_bundle(config, header["data_dim"])
    bundle.epoch = header["epoch"]
    for name, state in header["rng"].items():
        bundle.rngs[name].bit_generator.state = state

    slots = {}
    for net_name, net in bundle.nets.items():
        for i, layer in enumerate(net.layers):
            for key in layer.params:
                slots[f"{net_name}/{i}.{key}"] = (layer.params, key)
            if isinstance(layer, BatchNorm):
                slots[f"{net_name}/{i}.running_mean"] = (layer.__dict__, "running_mean")
                slots[f"{net_name}/{i}.running_var"] = (layer.__dict__, "running_var")
    bundle.adam = {k: AdamState(t=t) for k, t in header["adam_t"].items()}

    (count,) = r.unpack("<I", "entry count")
    seen = set()
    for _ in range(count):
        (name_len,) = r.unpack("<H", "entry name")
        name = r.take(name_len, "entry name").decode("utf-8")
        tag, ndim = r.unpack("<BB", name)
        if tag != F64:
            raise CheckpointError(f"{name}: unsupported dtype tag {tag}")
        shape = r.unpack(f"<{ndim}I", name)
        size = int(np.prod(shape)) if ndim else 1
        payload = r.take(8 * size, f"payload of {name}")
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
        if name.startswith("adam/"):
            _, net_name, key, moment = name.split("/")
            target = bundle.adam[net_name].m if moment == "m" else bundle.adam[net_name].v
            target[key] = arr
        else:
            if name not in slots:
                raise CheckpointError(f"unexpected entry {name} for a {config.model_kind} model")
            store, key = slots[name]
            if store[key].shape != arr.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} does not match model {store[key].shape}")
            store[key] = arr
        seen.add(name)
    missing = set(slots) - seen
    if missing:
        raise CheckpointError(f"checkpoint lacks entries: {sorted(missing)[:5]}")
    if r.pos != len(raw):
        raise CheckpointError("trailing bytes after last entry")
    return bundle


def load_checkpoint(path) -> ModelBundle:
    return loads(Path(path).read_bytes())
