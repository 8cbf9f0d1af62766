"""Versioned checkpoint container with config-hash verification.

Single-file binary layout::

    magic "FUDACKPT" | uint64-LE header length | header JSON | array payloads

The header records the kind ("rain"/"seg"), the architecture config that
produced the parameters, its SHA-256 hash, and an index of arrays (name,
dtype, shape, byte offset). Payloads follow in sorted name order, row-major.
Writing the same state twice yields byte-identical files, so save->load->save
round-trips exactly.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"FUDACKPT"
FORMAT_VERSION = 1


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def save_checkpoint(path: str | Path, kind: str, config: dict,
                    arrays: dict[str, np.ndarray]):
    entries = []
    payloads = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        entries.append({"name": name, "dtype": arr.dtype.str,
                        "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += len(payloads[-1])
    header = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "arrays": entries,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in payloads:
            fh.write(p)


def load_checkpoint(path: str | Path, expected_kind: str | None = None,
                    expected_config: dict | None = None
                    ) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (config, arrays); verifies magic, stored hash, and kind.

    When ``expected_config`` is given its hash must match the stored one.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen])
    except Exception as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    if expected_kind is not None and header["kind"] != expected_kind:
        raise CheckpointError(f"{path}: kind {header['kind']!r}, expected {expected_kind!r}")
    if header["config_hash"] != config_hash(header["config"]):
        raise CheckpointError(f"{path}: stored config hash does not match config")
    if expected_config is not None and config_hash(expected_config) != header["config_hash"]:
        raise CheckpointError(f"{path}: checkpoint was produced by a different config")
    body = raw[16 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"])) * np.dtype(e["dtype"]).itemsize
        chunk = body[e["offset"]:e["offset"] + n]
        if len(chunk) != n:
            raise CheckpointError(f"{path}: truncated payload for array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(chunk, dtype=e["dtype"]).reshape(e["shape"]).copy()
    return header["config"], arrays


def module_arrays(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_into_module(module: torch.nn.Module, arrays: dict[str, np.ndarray]):
    state = module.state_dict()
    missing = set(state) - set(arrays)
    extra = set(arrays) - set(state)
    if missing or extra:
        raise CheckpointError(
            f"parameter names mismatch (missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
    module.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in arrays.items()})


def state_digest(module: torch.nn.Module) -> str:
    """SHA-256 over all parameters/buffers; cheap frozen-network check."""
    h = hashlib.sha256()
    for k in sorted(module.state_dict()):
        v = module.state_dict()[k]
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()
