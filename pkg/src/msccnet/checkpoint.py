"""Binary checkpoints: magic, JSON header, raw little-endian float64 tensors.

Layout::

    b"MSCCNET\\x01"  | uint64 header length | header JSON (utf-8) | tensor bytes

The header holds the resolved run config and, per tensor, its name and
shape in storage order.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Any

import numpy as np

from . import config as config_mod
from .exceptions import DataIOError
from .tensor import Tensor

MAGIC = b"MSCC1"  # format version lives in the last byte
_LEN = struct.Struct("<Q")


def save_checkpoint(path: str | os.PathLike, params: dict[str, Tensor], cfg: config_mod.RunConfig, extra: dict[str, Any] | None = None) -> None:
    names = sorted(params)
    header = {
        "config": cfg.dumps(),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(_LEN.pack(len(blob)))
            fh.write(blob)
            for n in names:
                fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint {os.fspath(path)!r}: {exc.strerror}") from exc


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, Tensor], config_mod.RunConfig, dict[str, Any]]:
    """Return ``(params, run_config, extra)``; parameters come back trainable."""
    where = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read checkpoint {where!r}: {exc.strerror}") from exc
    if not raw.startswith(MAGIC):
        raise DataIOError(f"{where!r} is not an msccnet checkpoint (bad magic {raw[:len(MAGIC)]!r}); was it written by `msccnet train`?")
    pos = len(MAGIC)
    try:
        (n,) = _LEN.unpack_from(raw, pos)
        pos += _LEN.size
        header = json.loads(raw[pos : pos + n].decode("utf-8"))
        pos += n
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataIOError(f"checkpoint {where!r} has a corrupt header: {exc}") from exc
    cfg = config_mod.loads(header["config"])
    params: dict[str, Tensor] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        chunk = raw[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise DataIOError(f"checkpoint {where!r} is truncated at tensor {spec['name']!r}")
        params[spec["name"]] = Tensor(np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64), requires_grad=True)
        pos += nbytes
    if pos != len(raw):
        raise DataIOError(f"checkpoint {where!r} has {len(raw) - pos} trailing bytes")
    return params, cfg, header.get("extra", {})
