"""Model files.

Layout (little-endian)::

    b"QLK1"                magic
    u32 version            currently 1
    u32 header_len
    header_len bytes       UTF-8 JSON: kind, spec, vocab, params [[name, shape], ...]
    float32 arrays         raw, in the order listed in the header

The header's param list must match the declared order for the spec, so a
file is also rejected if its layout drifts from the code.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .classifier import ClassifierSpec, MLPClassifier, cls_param_shapes
from .transformer import TransformerLM, TransformerSpec, lm_param_shapes

MAGIC = b"QLK1"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _shapes(kind: str, spec):
    return lm_param_shapes(spec) if kind == "lm" else cls_param_shapes(spec)


def model_bytes(model) -> bytes:
    shapes = _shapes(model.kind, model.spec)
    header = {
        "kind": model.kind,
        "spec": model.spec.to_dict(),
        "vocab": getattr(model, "vocab", None),
        "params": [[name, list(shape)] for name, shape in shapes],
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(model.params[name].astype("<f4").tobytes() for name, _ in shapes)
    return MAGIC + struct.pack("<II", VERSION, len(hdr)) + hdr + body


def save_model(model, path: str | Path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path: str | Path):
    """Load a transformer or classifier written by :func:`save_model`."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version} (expected {VERSION})")
    if len(raw) < 12 + hlen:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        kind = header["kind"]
        spec = TransformerSpec(**header["spec"]) if kind == "lm" else ClassifierSpec(**header["spec"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: bad header ({exc})") from None
    shapes = _shapes(kind, spec)
    if [[n, list(s)] for n, s in shapes] != header["params"]:
        raise ModelFormatError(f"{path}: parameter layout does not match the spec")
    total = sum(int(np.prod(s)) for _, s in shapes) * 4
    body = raw[12 + hlen:]
    if len(body) != total:
        raise ModelFormatError(f"{path}: expected {total} weight bytes, found {len(body)} (truncated?)")
    params, off = {}, 0
    for name, shape in shapes:
        count = int(np.prod(shape))
        params[name] = np.frombuffer(body, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)
        off += count * 4
    if kind == "lm":
        return TransformerLM(spec, params, header.get("vocab"))
    return MLPClassifier(spec, params)
