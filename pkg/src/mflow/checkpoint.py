"""Binary checkpoint format for flows (and an optional encoder).

Layout::

    b"MFLW" | u32 version (=1) | u64 header length | UTF-8 JSON header |
    float64 LE flow params | float64 LE batch-norm buffers | float64 LE encoder params

The JSON header records every array length so a reader can validate the
payload size before decoding.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .encoder import EncoderArchitecture, EncoderModel
from .errors import FormatError
from .flow import FlowArchitecture, FlowModel

MAGIC = b"MFLW"
VERSION = 1
_LE_F64 = np.dtype("<f8")


def checkpoint_bytes(model: FlowModel, encoder: EncoderModel | None = None,
                     metadata: dict | None = None) -> bytes:
    header = {
        "arch": model.arch.to_dict(),
        "seed": model.seed,
        "num_params": int(model.params.size),
        "num_buffers": int(model.buffers.size),
        "metadata": metadata or {},
    }
    if encoder is not None:
        header["encoder"] = {
            "arch": encoder.arch.to_dict(),
            "seed": encoder.seed,
            "num_params": int(encoder.params.size),
        }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(hbytes)), hbytes,
             model.params.astype(_LE_F64).tobytes(),
             model.buffers.astype(_LE_F64).tobytes()]
    if encoder is not None:
        parts.append(encoder.params.astype(_LE_F64).tobytes())
    return b"".join(parts)


def save_checkpoint(path, model: FlowModel, encoder: EncoderModel | None = None,
                    metadata: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, encoder, metadata))


def parse_checkpoint(data: bytes, path=None):
    """Decode checkpoint bytes into (flow, encoder or None, header dict)."""
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError("not a flow checkpoint (bad magic)", path)
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", path)
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt header: {exc}", path) from exc
    arch = FlowArchitecture.from_dict(header["arch"])
    counts = [header["num_params"], header["num_buffers"]]
    enc_h = header.get("encoder")
    if enc_h is not None:
        counts.append(enc_h["num_params"])
    body = data[16 + hlen:]
    if len(body) != 8 * sum(counts):
        raise FormatError(
            f"payload holds {len(body)} bytes, header promises {8 * sum(counts)}", path)
    values = np.frombuffer(body, dtype=_LE_F64).astype(np.float64)
    params = values[:counts[0]]
    buffers = values[counts[0]:counts[0] + counts[1]]
    model = FlowModel(arch, params, buffers, header.get("seed"))
    encoder = None
    if enc_h is not None:
        encoder = EncoderModel(EncoderArchitecture.from_dict(enc_h["arch"]),
                               values[counts[0] + counts[1]:], enc_h.get("seed"))
    return model, encoder, header


def load_checkpoint(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return parse_checkpoint(p.read_bytes(), str(p))
