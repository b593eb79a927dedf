"""Single-file model checkpoints.

Layout (all integers little-endian)::

    bytes 0..4     magic b"NSKM1"
    bytes 5..12    uint64 header length H
    next H bytes   UTF-8 JSON header
    remainder      parameter tensors, float32 LE, concatenated in header order

The header holds ``config`` (ModelConfig fields), ``vocab_hash``, free-form
``meta`` and ``tensors``: a list of ``{name, shape, offset, count}`` where
``offset`` is the byte offset into the tensor region.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import ArtifactError
from .model import DTYPE, ModelConfig, SkimTransformer

MAGIC = b"NSKM1"


def save_checkpoint(model: SkimTransformer, path, vocab_hash: str, meta: dict | None = None) -> Path:
    path = Path(path)
    tensors, blobs, offset = [], [], 0
    for name, p in model.state_dict().items():
        arr = p.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"format": "NSKM1", "config": asdict(model.config), "vocab_hash": vocab_hash,
                         "meta": meta or {}, "tensors": tensors}, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<Q", len(header)) + header)
        for b in blobs:
            f.write(b)
    return path


def read_header(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            if f.read(5) != MAGIC:
                raise ArtifactError(path, "not an NSKM1 checkpoint")
            (hlen,) = struct.unpack("<Q", f.read(8))
            return json.loads(f.read(hlen).decode("utf-8"))
    except FileNotFoundError:
        raise ArtifactError(path, "checkpoint not found") from None
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(path, f"corrupt checkpoint header: {exc}") from exc


def load_checkpoint(path, vocab_hash: str | None = None):
    """Returns (model, header). Raises ArtifactError on a vocabulary mismatch."""
    path = Path(path)
    header = read_header(path)
    if vocab_hash is not None and header["vocab_hash"] != vocab_hash:
        raise ArtifactError(path, "vocabulary hash does not match the checkpoint")
    raw = path.read_bytes()
    start = 5 + 8 + struct.unpack("<Q", raw[5:13])[0]
    model = SkimTransformer(ModelConfig(**header["config"]))
    state = {}
    for t in header["tensors"]:
        lo = start + t["offset"]
        hi = lo + 4 * t["count"]
        if hi > len(raw):
            raise ArtifactError(path, f"truncated tensor {t['name']}")
        arr = np.frombuffer(raw[lo:hi], dtype="<f4").reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.astype(np.float64)).to(DTYPE)
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ArtifactError(path, f"tensor mismatch: {exc}") from exc
    model.eval()
    return model, header
