"""
On-disk formats.

Dataset file: ``b"ODSL0001"``, little-endian u64 symbol count, then one
record of eight little-endian float64 per symbol::

    txH.re txH.im txV.re txV.im rxH.re rxH.im rxV.re rxV.im

with a JSON sidecar ``<stem>.meta.json`` holding the scenario, seed, format
version and the SHA-256 of the record payload.

Checkpoint file: ``b"OEQM0001"``, u64 header length, UTF-8 JSON header, u64
value count, float64 weights in the order of
:func:`genlab.equalizer.model.param_shapes`, then a 32-byte SHA-256 of
everything before it so a flipped header byte is caught too.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .channel import Dataset, ScenarioConfig
from .equalizer.model import EqualizerHyper, EqualizerModel, param_shapes
from .signal import DpSymbolSequence

DATASET_MAGIC = b"ODSL0001"
CHECKPOINT_MAGIC = b"OEQM0001"
FORMAT_VERSION = 1


class CorruptionError(ValueError):
    """Stored bytes do not match their recorded digest or layout."""


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def dataset_bytes(dataset: Dataset) -> bytes:
    return DATASET_MAGIC + struct.pack("<Q", dataset.n_symbols) + dataset.payload()


def dataset_meta(dataset: Dataset) -> dict:
    return {"format_version": FORMAT_VERSION, "scenario": dataset.scenario.to_dict(),
            "seed": dataset.seed, "n_symbols": dataset.n_symbols,
            "content_hash": dataset.content_hash}


def save_dataset(dataset: Dataset, path) -> str:
    """Write the dataset and its sidecar; returns the payload hash."""
    meta = dataset_meta(dataset)
    atomic_write(path, dataset_bytes(dataset))
    atomic_write(sidecar_path(path), json.dumps(meta, indent=1, sort_keys=True).encode())
    return meta["content_hash"]


def load_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != DATASET_MAGIC:
        raise CorruptionError(f"{path}: bad magic {raw[:8]!r}")
    (n,) = struct.unpack("<Q", raw[8:16])
    payload = raw[16:]
    if len(payload) != n * 64:
        raise CorruptionError(f"{path}: expected {n * 64} payload bytes, found {len(payload)}")
    meta = json.loads(sidecar_path(path).read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise CorruptionError(f"{path}: unsupported format version {meta.get('format_version')}")
    if sha256(payload) != meta["content_hash"]:
        raise CorruptionError(f"{path}: payload hash does not match sidecar")
    rec = np.frombuffer(payload, dtype="<f8").reshape(n, 8)
    cols = rec[:, 0::2] + 1j * rec[:, 1::2]
    scenario = ScenarioConfig.from_dict(meta["scenario"])
    rate = scenario.symbol_rate
    return Dataset(scenario=scenario,
                   tx=DpSymbolSequence(cols[:, 0].copy(), cols[:, 1].copy(), rate),
                   rx=DpSymbolSequence(cols[:, 2].copy(), cols[:, 3].copy(), rate),
                   seed=int(meta["seed"]))


def checkpoint_bytes(model: EqualizerModel, provenance: dict | None = None) -> bytes:
    weights = model.weight_bytes()
    header = {"format_version": FORMAT_VERSION, "hyper": model.hyper.to_dict(),
              "trainable_mask": dict(model.trainable), "provenance": provenance or {},
              "weights_sha256": sha256(weights)}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = (CHECKPOINT_MAGIC + struct.pack("<Q", len(blob)) + blob
            + struct.pack("<Q", model.n_params) + weights)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: EqualizerModel, path, provenance: dict | None = None) -> str:
    data = checkpoint_bytes(model, provenance)
    atomic_write(path, data)
    return sha256(data)


def read_checkpoint(data: bytes, origin: str = "<bytes>") -> tuple[EqualizerModel, dict]:
    if data[:8] != CHECKPOINT_MAGIC:
        raise CorruptionError(f"{origin}: bad magic {data[:8]!r}")
    data, trailer = data[:-32], data[-32:]
    if hashlib.sha256(data).digest() != trailer:
        raise CorruptionError(f"{origin}: file checksum mismatch")
    try:
        (hlen,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + hlen])
        (count,) = struct.unpack("<Q", data[16 + hlen:24 + hlen])
    except (struct.error, ValueError) as exc:
        raise CorruptionError(f"{origin}: unreadable header ({exc})") from exc
    weights = data[24 + hlen:]
    if len(weights) != 8 * count or sha256(weights) != header.get("weights_sha256"):
        raise CorruptionError(f"{origin}: weight payload does not match header digest")
    hyper = EqualizerHyper(**header["hyper"])
    flat = np.frombuffer(weights, dtype="<f8")
    params, offset = {}, 0
    for name, shape in param_shapes(hyper).items():
        size = int(np.prod(shape))
        params[name] = flat[offset:offset + size].reshape(shape).astype(float)
        offset += size
    if offset != count:
        raise CorruptionError(f"{origin}: {count} weights stored, hyperparameters need {offset}")
    return EqualizerModel(hyper, params, dict(header["trainable_mask"])), header


def load_checkpoint(path) -> tuple[EqualizerModel, dict]:
    return read_checkpoint(Path(path).read_bytes(), str(path))
