"""Checkpoints: JSON topology header plus a raw little-endian float64 parameter block."""
from __future__ import annotations

import numpy as np

from .. import binio
from ..errors import FormatError

CHECKPOINT_MAGIC = b"TAACKPT1"


def save_checkpoint(path, topology: dict, params: np.ndarray, meta: dict | None = None) -> None:
    header = {"topology": topology, "n_params": int(params.size), "meta": meta or {}}
    binio.write_framed(path, CHECKPOINT_MAGIC, header, {"params": np.asarray(params, dtype=np.float64)}, dtype="<f8")


def load_checkpoint(path) -> tuple[dict, np.ndarray, dict]:
    header, arrays = binio.read_framed(path, CHECKPOINT_MAGIC)
    try:
        params = arrays["params"]
        topology = header["topology"]
    except KeyError as exc:
        raise FormatError(f"{path}: incomplete checkpoint ({exc})") from exc
    if params.size != header.get("n_params"):
        raise FormatError(f"{path}: parameter count mismatch")
    return topology, params.astype(np.float64), header.get("meta", {})
