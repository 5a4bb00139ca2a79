"""Scalar reference implementations of the quantization kernels.

Plain Python floats and ints only.  Float32 rounding of a single operation
is obtained by computing in double and packing to float32, which is exact
for + - * / because double carries more than 2 * 24 + 2 bits.
"""

from __future__ import annotations

import math
import struct


def f32(v: float) -> float:
    return struct.unpack("<f", struct.pack("<f", v))[0]


def rha(v: float) -> int:
    """Round half away from zero."""
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


# ---------------------------------------------------------------- INT8

def int8_params(values) -> tuple[float, int]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return 1.0, -rha(lo)
    scale = f32(f32(hi - lo) / 255.0)
    if scale == 0.0:
        return 1.0, -rha(lo)
    return scale, -rha(lo * 255.0 / (hi - lo))


def int8_quantize(values, scale: float, zp: int) -> list[int]:
    return [min(255, max(0, rha(f32(v / scale) + zp))) for v in values]


def int8_dequantize(codes, scale: float, zp: int) -> list[float]:
    return [f32(scale * float(c - zp)) for c in codes]


# ---------------------------------------------------------------- FP8 E4M3

def e4m3_snap(v: float) -> float:
    """Nearest E4M3 value with ties to even mantissa, saturating at 448."""
    mag = min(abs(v), 448.0)
    if mag == 0.0:
        return math.copysign(0.0, v)
    _, e = math.frexp(mag)  # mag = m * 2**e with 0.5 <= m < 1
    exp = max(e - 1, -6)  # binade; below 2**-6 the spacing stays 2**-9
    quantum = 2.0 ** (exp - 3)
    snapped = round(mag / quantum) * quantum  # round() ties to even
    return math.copysign(min(snapped, 448.0), v)


def fp8_scale(values) -> float:
    amax = max(abs(v) for v in values)
    if amax == 0.0:
        return 1.0
    s = f32(amax / 448.0)
    return s if s > 0 else 1.0


def fp8_quantize(values, scale: float) -> list[float]:
    return [e4m3_snap(f32(v / scale)) for v in values]


def fp8_dequantize(codes, scale: float) -> list[float]:
    return [f32(c * scale) for c in codes]


# ---------------------------------------------------------------- linear

def weight_quant(w) -> tuple[list[list[int]], list[float]]:
    """w is a list of rows (in x out); per-output-channel symmetric INT8."""
    n_in, n_out = len(w), len(w[0])
    scales, codes = [], [[0] * n_out for _ in range(n_in)]
    for j in range(n_out):
        amax = max(abs(w[i][j]) for i in range(n_in))
        s = f32(amax / 127.0) if amax > 0 else 1.0
        scales.append(s)
        for i in range(n_in):
            codes[i][j] = max(-127, min(127, rha(f32(w[i][j] / s))))
    return codes, scales


def quantized_linear(x, w, bias, fmt: str, per_token: bool) -> list[list[float]]:
    """Reference for ``quantized_linear`` on a (batch, in) list of rows."""
    wq, ws = weight_quant(w)
    rows = [list(r) for r in x]
    if per_token:
        params = [_params(fmt, r) for r in rows]
    else:
        flat = [v for r in rows for v in r]
        params = [_params(fmt, flat)] * len(rows)
    out = []
    for r, (scale, zp) in zip(rows, params):
        if fmt == "int8":
            codes = [c - zp for c in int8_quantize(r, scale, zp)]
        else:
            codes = [int(round(c * 512.0)) for c in fp8_quantize(r, scale)]
        y = []
        for j in range(len(ws)):
            acc = sum(codes[i] * wq[i][j] for i in range(len(r)))
            a = f32(float(acc)) if fmt == "int8" else f32(f32(float(acc)) * 2.0 ** -9)
            v = f32(f32(a * scale) * ws[j])
            if bias is not None:
                v = f32(v + bias[j])
            y.append(v)
        out.append(y)
    return out


def _params(fmt, values):
    if fmt == "int8":
        return int8_params(values)
    return fp8_scale(values), 0
