"""Versioned binary checkpoints.

Layout: magic, format version (u32), header length (u64), a UTF-8 JSON header
listing array names/shapes/dtypes in order, then the raw little-endian arrays.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..io import atomic_write_bytes
from .model import PolicyConfig
from .nn import Params
from .optim import Adam

MAGIC = b"ONAVCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dump_arrays(arrays: dict[str, np.ndarray], meta: dict) -> bytes:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr)
        dt = a.dtype.newbyteorder("<")
        entries.append({"name": name, "shape": list(a.shape), "dtype": dt.str})
        blobs.append(a.astype(dt, copy=False).tobytes())
    header = json.dumps({"format_version": FORMAT_VERSION, "arrays": entries, **meta},
                        sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(blobs)


def parse_arrays(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", data, off)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off += struct.calcsize("<IQ")
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for e in header.pop("arrays"):
        dt = np.dtype(e["dtype"])
        n = int(np.prod(e["shape"], dtype=np.int64)) * dt.itemsize
        if off + n > len(data):
            raise CheckpointError(f"truncated checkpoint at array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(data, dtype=dt, count=n // dt.itemsize,
                                          offset=off).reshape(e["shape"]).copy()
        off += n
    if off != len(data):
        raise CheckpointError("trailing bytes after last array")
    return arrays, header


def save_policy(path, cfg: PolicyConfig, params: Params, step: int = 0,
                opt: Adam | None = None, extra: dict | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in params.items()}
    meta = {"K": cfg.K, "N": cfg.N, "policy": cfg.to_dict(), "global_step": int(step),
            "extra": extra or {}}
    if opt is not None:
        st = opt.state_dict()
        meta["adam_t"] = st["t"]
        arrays.update({f"adam_m/{k}": v for k, v in st["m"].items()})
        arrays.update({f"adam_v/{k}": v for k, v in st["v"].items()})
    atomic_write_bytes(path, dump_arrays(arrays, meta))


def load_policy(path) -> dict:
    """Returns dict with keys cfg, params, step, adam (state dict or None), extra."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"checkpoint not found: {path}") from None
    arrays, meta = parse_arrays(data)
    pol = dict(meta["policy"])
    cfg = PolicyConfig(**pol)
    params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
    adam = None
    if "adam_t" in meta:
        adam = {"t": meta["adam_t"],
                "m": {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam_m/")},
                "v": {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam_v/")}}
    return {"cfg": cfg, "params": params, "step": meta["global_step"], "adam": adam,
            "extra": meta.get("extra", {})}
