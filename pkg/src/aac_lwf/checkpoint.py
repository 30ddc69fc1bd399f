"""LWFC checkpoint files.

Layout (little-endian): magic ``LWFC``, u32 format version, u64 length of a
UTF-8 JSON metadata blob, the blob, then tensor records until end of file.
A record is u32 name length, the UTF-8 name, u32 rank, rank u32 dims and
prod(dims) float32 values. Optimizer moments are stored as records named
``adam.m/<param>`` and ``adam.v/<param>``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data.vocab import Vocabulary
from .errors import FormatError
from .model import ModelConfig, WaveTransformer
from .numerics import AdamState, Tensor

MAGIC = b"LWFC"
VERSION = 1
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


@dataclass
class Checkpoint:
    model: WaveTransformer
    vocab: Vocabulary
    run_config: dict = field(default_factory=dict)
    update_index: int = 0
    adam: AdamState | None = None
    extra: dict = field(default_factory=dict)


def _record(name: str, arr: np.ndarray) -> bytes:
    enc = name.encode("utf-8")
    a = np.ascontiguousarray(arr, dtype="<f4")
    head = _U32.pack(len(enc)) + enc + _U32.pack(a.ndim) + b"".join(_U32.pack(d) for d in a.shape)
    return head + a.tobytes()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    meta = {
        "model_config": ckpt.model.config.to_dict(),
        "run_config": ckpt.run_config,
        "update_index": ckpt.update_index,
        "vocab": ckpt.vocab.tokens,
        "extra": ckpt.extra,
    }
    if ckpt.adam is not None:
        a = ckpt.adam
        meta["adam"] = {"alpha": a.alpha, "beta1": a.beta1, "beta2": a.beta2, "epsilon": a.epsilon,
                        "step_count": a.step_count}
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U64.pack(len(blob)), blob]
    for name, p in ckpt.model.params.items():
        parts.append(_record(name, p.data))
    if ckpt.adam is not None:
        for name in ckpt.model.params:
            if name in ckpt.adam.first_moment:
                parts.append(_record(f"adam.m/{name}", ckpt.adam.first_moment[name]))
                parts.append(_record(f"adam.v/{name}", ckpt.adam.second_moment[name]))
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(encode_checkpoint(ckpt))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated {what}", offset=self.pos, path=self.path)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]


def decode_checkpoint(raw: bytes, path=None) -> Checkpoint:
    r = _Reader(raw, path)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not an LWFC checkpoint", offset=0, path=path)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4, path=path)
    n_blob = _U64.unpack(r.take(8, "blob length"))[0]
    start = r.pos
    try:
        meta = json.loads(r.take(n_blob, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad metadata blob: {exc}", offset=start, path=path) from exc
    arrays: dict[str, np.ndarray] = {}
    while r.pos < len(raw):
        at = r.pos
        name = r.take(r.u32("name length"), "name").decode("utf-8")
        rank = r.u32("rank")
        dims = tuple(r.u32("dims") for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(4 * count, f"tensor {name}"), dtype="<f4").reshape(dims)
        if name in arrays:
            raise FormatError(f"duplicate record {name}", offset=at, path=path)
        arrays[name] = data.astype(np.float64)
    try:
        cfg = ModelConfig.from_dict(meta["model_config"])
        params = {k: Tensor(arrays.pop(k), requires_grad=True, name=k)
                  for k in list(arrays) if not k.startswith("adam.")}
        model = WaveTransformer(cfg, params)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"checkpoint does not describe a valid model: {exc}", path=path) from exc
    tokens = meta["vocab"]
    vocab = Vocabulary(tokens[4:])
    if vocab.tokens != tokens:
        raise FormatError("vocabulary in checkpoint is malformed", path=path)
    adam = None
    if "adam" in meta:
        adam = AdamState(**meta["adam"])
        for k in model.params:
            if f"adam.m/{k}" in arrays:
                adam.first_moment[k] = arrays[f"adam.m/{k}"]
                adam.second_moment[k] = arrays[f"adam.v/{k}"]
    return Checkpoint(model, vocab, meta.get("run_config", {}), meta.get("update_index", 0), adam,
                      meta.get("extra", {}))


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint: {exc}", path=p) from exc
    return decode_checkpoint(raw, p)
