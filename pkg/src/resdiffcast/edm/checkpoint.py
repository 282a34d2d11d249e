"""DENZ parameter checkpoints.

Layout (little-endian): magic ``DENZ``, u32 version, u32 header length,
UTF-8 JSON header ``{"model", "n_cond", "width", "seed", "layers": [[name,
shape], ...], "config": {...}}`` and the binary32 parameters concatenated in
layer order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError, GridFormatError
from .denoisers import LinearDenoiser, TinyConvDenoiser, flat_params, param_shapes

DENZ_MAGIC = b"DENZ"
DENZ_VERSION = 1


def save_checkpoint(d, path: str | Path, config: dict | None = None) -> None:
    model = type(d).__name__
    header = {
        "model": model,
        "n_cond": d.n_cond,
        "width": getattr(d, "width", None),
        "linear": getattr(d, "linear", False),
        "seed": d.seed,
        "layers": [[n, list(s)] for n, s in param_shapes(d)],
        "config": config or {},
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = flat_params(d).astype("<f4").tobytes()
    Path(path).write_bytes(DENZ_MAGIC + struct.pack("<II", DENZ_VERSION, len(hb)) + hb + payload)


def load_checkpoint(path: str | Path):
    """Rebuild the denoiser stored at ``path``; returns ``(denoiser, header)``."""
    try:
        buf = Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc
    if buf[:4] != DENZ_MAGIC:
        raise GridFormatError("not a DENZ checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", buf, 4)
    if version != DENZ_VERSION:
        raise GridFormatError(f"unsupported DENZ version {version}")
    header = json.loads(buf[12:12 + hlen].decode("utf-8"))
    if header["model"] == "TinyConvDenoiser":
        d = TinyConvDenoiser(header["n_cond"], header["width"], header["seed"],
                             linear=header.get("linear", False))
    elif header["model"] == "LinearDenoiser":
        d = LinearDenoiser(header["n_cond"], header["seed"])
    else:
        raise GridFormatError(f"unknown model {header['model']!r}")
    shapes = [tuple(s) for _, s in header["layers"]]
    if shapes != [tuple(p.shape) for p in d.params]:
        raise GridFormatError("layer shapes in header do not match the model")
    flat = np.frombuffer(buf[12 + hlen:], dtype="<f4").astype(np.float64)
    if flat.size != sum(p.size for p in d.params):
        raise GridFormatError("parameter payload size mismatch")
    i = 0
    for p in d.params:
        p[...] = flat[i:i + p.size].reshape(p.shape)
        i += p.size
    return d, header
