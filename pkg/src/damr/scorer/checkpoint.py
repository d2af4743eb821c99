"""Self-describing scorer checkpoints.

Layout: an 8-byte magic, an 8-byte little-endian header length, a JSON header
carrying the model config and a tensor manifest (name, shape, element offset),
then the payload of little-endian float64 tensors concatenated in manifest
order. The format is endianness-fixed, so round trips are bit-exact on any
platform.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import ScorerConfig, ScorerParams, tensor_shapes

MAGIC = b"DAMRCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is malformed or inconsistent with its header."""


def save_checkpoint(params: ScorerParams, path: str | Path) -> None:
    manifest = []
    offset = 0
    chunks: list[bytes] = []
    for name in tensor_shapes(params.config):
        tensor = params.tensors[name]
        manifest.append({"name": name, "shape": list(tensor.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
        offset += tensor.size
    header = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "config": params.config.to_dict(),
            "tensors": manifest,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path: str | Path) -> ScorerParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a scorer checkpoint (bad magic)")
    header_len = int.from_bytes(blob[len(MAGIC) : len(MAGIC) + 8], "little")
    header_start = len(MAGIC) + 8
    try:
        header = json.loads(blob[header_start : header_start + header_len])
        config = ScorerConfig.from_dict(header["config"])
        manifest = header["tensors"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    expected = tensor_shapes(config)
    if [entry["name"] for entry in manifest] != list(expected):
        raise CheckpointError(f"{path}: tensor manifest does not match the declared config")
    payload = blob[header_start + header_len :]
    total = sum(int(np.prod(entry["shape"])) for entry in manifest)
    if len(payload) != total * 8:
        raise CheckpointError(
            f"{path}: payload holds {len(payload)} bytes, header implies {total * 8}"
        )
    tensors: dict[str, np.ndarray] = {}
    for entry in manifest:
        name, shape, offset = entry["name"], tuple(entry["shape"]), int(entry["offset"])
        if shape != expected[name]:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {shape}, config implies {expected[name]}"
            )
        size = int(np.prod(shape))
        raw = payload[offset * 8 : (offset + size) * 8]
        tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return ScorerParams(config, tensors)
