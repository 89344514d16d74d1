"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"BQCK"            magic
    uint32             format version
    uint64             header length in bytes
    header             UTF-8 JSON: configs, step, history, tensor index
    blobs              raw little-endian tensors at the offsets in the index
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..tokenizer import VOCAB_VERSION
from .transformer import ModelConfig, Seq2Seq

MAGIC = b"BQCK"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8"}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, torch.Tensor]
    step: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    optimizer: dict[str, torch.Tensor] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    vocab_version: str = VOCAB_VERSION

    def build_model(self) -> Seq2Seq:
        model = Seq2Seq(self.model_config)
        model.load_state_dict(self.params)
        model.eval()
        return model


def _tensor_bytes(t: torch.Tensor) -> tuple[str, bytes]:
    arr = t.detach().cpu().numpy()
    name = str(arr.dtype)
    if name not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {name}")
    return name, np.ascontiguousarray(arr.astype(_DTYPES[name])).tobytes()


def dumps(ckpt: Checkpoint) -> bytes:
    index = []
    blobs = []
    offset = 0
    for group, tensors in (("param", ckpt.params), ("optim", ckpt.optimizer)):
        for name in sorted(tensors):
            dtype, data = _tensor_bytes(tensors[name])
            index.append({
                "group": group, "name": name, "dtype": dtype,
                "shape": list(tensors[name].shape), "offset": offset, "nbytes": len(data),
            })
            blobs.append(data)
            offset += len(data)
    header = {
        "vocab_version": ckpt.vocab_version,
        "model_config": asdict(ckpt.model_config),
        "step": ckpt.step,
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "meta": ckpt.meta,
        "tensors": index,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<IQ", VERSION, len(head)) + head + b"".join(blobs)


def loads(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, head_len = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + head_len].decode("utf-8"))
    base = 16 + head_len
    cfg = ModelConfig(**header["model_config"])
    params, optim = {}, {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = data[start:start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"truncated tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        tensor = torch.from_numpy(arr.astype(entry["dtype"]))
        (params if entry["group"] == "param" else optim)[entry["name"]] = tensor

    expected = {k: tuple(v.shape) for k, v in Seq2Seq(cfg).state_dict().items()}
    got = {k: tuple(v.shape) for k, v in params.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        wrong = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
        raise CheckpointError(f"parameters inconsistent with config: missing={missing} shape={wrong}")
    return Checkpoint(
        cfg, params, header["step"], header["epoch"], header["history"], optim,
        header.get("meta", {}), header["vocab_version"],
    )


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, dumps(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return loads(Path(path).read_bytes())
