"""Dynamic activation quantization: INT8 asymmetric and emulated FP8 (E4M3).

The granularity switch is the whole story here.  ``per-tensor`` derives one
(scale, zero-point) pair from the min/max of the entire batched activation,
so every row's codes depend on every other row.  ``per-token`` derives one
pair per row and keeps rows isolated.

Rounding is round-half-away-from-zero everywhere on the INT8 path; the FP8
grid snaps with round-half-to-even on the mantissa.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .tensor import ShapeError, matmul

INT8_LEVELS = 255
WEIGHT_QMAX = 127
FP8_MAX = 448.0
FP8_UNIT = 2.0 ** -9  # smallest E4M3 subnormal; every grid value is a multiple


class Granularity(str, Enum):
    PER_TENSOR = "per-tensor"
    PER_TOKEN = "per-token"
    NONE = "none"


class QuantFormat(str, Enum):
    INT8 = "int8-asymmetric"
    FP8 = "fp8-absmax"


@dataclass(frozen=True)
class QuantConfig:
    granularity: Granularity = Granularity.PER_TENSOR
    format: QuantFormat = QuantFormat.INT8
    # Zero-range tensors get scale 1 (and zero-point -round(min) for INT8).
    degenerate_scale_policy: str = "unit-scale"

    def __post_init__(self):
        object.__setattr__(self, "granularity", Granularity(self.granularity))
        object.__setattr__(self, "format", QuantFormat(self.format))
        if self.degenerate_scale_policy != "unit-scale":
            raise ValueError(f"unsupported degenerate policy {self.degenerate_scale_policy!r}")

    @classmethod
    def parse(cls, granularity: str, fmt: str = "int8") -> "QuantConfig":
        aliases = {"int8": QuantFormat.INT8, "fp8": QuantFormat.FP8}
        return cls(Granularity(granularity), aliases.get(fmt, fmt))

    @property
    def enabled(self) -> bool:
        return self.granularity is not Granularity.NONE

    def __str__(self):
        if not self.enabled:
            return "none"
        return f"{self.granularity.value}/{self.format.value}"


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0
    row: int | None = None  # None means the params cover the whole tensor

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


@dataclass
class QTensor:
    """Quantized activations.

    ``codes`` holds integers in [0, 255] for INT8, or E4M3 grid values (in
    units of the scaled domain, as float32) for FP8.  ``params`` has one
    entry for per-tensor quantization and one per row for per-token.
    """

    codes: np.ndarray
    params: list[QuantParams]
    format: QuantFormat = QuantFormat.INT8

    @property
    def shape(self):
        return self.codes.shape

    def scales(self) -> np.ndarray:
        """Scale broadcastable against ``codes`` (column vector when per-row)."""
        return _broadcast_param(self.params, self.codes, "scale", np.float32)

    def zero_points(self) -> np.ndarray:
        return _broadcast_param(self.params, self.codes, "zero_point", np.int64)


def _broadcast_param(params, codes, attr, dtype):
    vals = np.array([getattr(p, attr) for p in params], dtype=dtype)
    if len(params) == 1 and params[0].row is None:
        return vals.reshape(())
    return vals.reshape((-1,) + (1,) * (codes.ndim - 1))


def round_half_away(v) -> np.ndarray:
    """Round to nearest integer, ties away from zero (evaluated in float64)."""
    v = np.asarray(v, dtype=np.float64)
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


# ---------------------------------------------------------------- INT8 asym

def _params_from_range(lo: np.float32, hi: np.float32, row=None) -> QuantParams:
    lo = np.float32(lo)
    hi = np.float32(hi)
    if hi == lo:
        return QuantParams(1.0, int(-round_half_away(lo)), row)
    scale = np.float32(hi - lo) / np.float32(INT8_LEVELS)
    if not scale > 0:  # range below float32 resolution after division
        return QuantParams(1.0, int(-round_half_away(lo)), row)
    # beta = -round(min / alpha) taken from the exact range in float64, so a
    # tie in exact arithmetic (e.g. [-1, 1] -> -127.5) is not broken by the
    # float32 rounding of alpha.
    zp = -round_half_away(np.float64(lo) * INT8_LEVELS / (np.float64(hi) - np.float64(lo)))
    return QuantParams(float(scale), int(zp), row)


def compute_params_per_tensor(x: np.ndarray) -> QuantParams:
    """One (scale, zero-point) pair from the global min/max of ``x``."""
    x = np.asarray(x, dtype=np.float32)
    if x.size == 0:
        raise ShapeError("cannot quantize an empty tensor")
    return _params_from_range(x.min(), x.max())


def compute_params_per_token(x: np.ndarray) -> list[QuantParams]:
    """One (scale, zero-point) pair per leading row of ``x``."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim < 1 or x.shape[0] < 1:
        raise ShapeError("per-token quantization needs at least one row")
    flat = x.reshape(x.shape[0], -1)
    lo = flat.min(axis=1)
    hi = flat.max(axis=1)
    return [_params_from_range(lo[i], hi[i], row=i) for i in range(flat.shape[0])]


def quantize(x: np.ndarray, params: QuantParams | list[QuantParams]) -> QTensor:
    """codes = clip(round(x / scale + zero_point), 0, 255)."""
    x = np.asarray(x, dtype=np.float32)
    plist = [params] if isinstance(params, QuantParams) else list(params)
    q = QTensor(np.empty(x.shape, dtype=np.int16), plist, QuantFormat.INT8)
    scaled = x / q.scales()  # float32 division
    codes = round_half_away(scaled.astype(np.float64) + q.zero_points())
    q.codes = np.clip(codes, 0, INT8_LEVELS).astype(np.int16)
    return q


def dequantize(q: QTensor) -> np.ndarray:
    """x_hat = scale * (codes - zero_point) (FP8: scale * grid value)."""
    if q.format is QuantFormat.FP8:
        return (q.codes.astype(np.float32) * q.scales()).astype(np.float32)
    centred = (q.codes.astype(np.int64) - q.zero_points()).astype(np.float32)
    return (q.scales() * centred).astype(np.float32)


# ---------------------------------------------------------------- FP8 E4M3

def _e4m3_grid() -> np.ndarray:
    codes = np.arange(127)  # 0x00..0x7E; 0x7F is NaN
    exp = codes >> 3
    man = codes & 7
    sub = man * FP8_UNIT
    norm = (8 + man) * np.exp2(exp - 10.0)
    return np.where(exp == 0, sub, norm)


E4M3_GRID = _e4m3_grid()  # non-negative values, ascending, index == bit pattern


def snap_e4m3(v: np.ndarray) -> np.ndarray:
    """Snap to the nearest E4M3 value, ties to even mantissa, saturating at 448."""
    v = np.asarray(v, dtype=np.float32)
    mag = np.minimum(np.abs(v).astype(np.float64), FP8_MAX)
    hi = np.clip(np.searchsorted(E4M3_GRID, mag, side="left"), 1, len(E4M3_GRID) - 1)
    lo = hi - 1
    d_lo = mag - E4M3_GRID[lo]
    d_hi = E4M3_GRID[hi] - mag
    pick_hi = (d_hi < d_lo) | ((d_hi == d_lo) & (hi % 2 == 0))
    snapped = np.where(pick_hi, E4M3_GRID[hi], E4M3_GRID[lo])
    return np.copysign(snapped, v).astype(np.float32)


def fp8_scale(x: np.ndarray) -> float:
    amax = np.float32(np.abs(np.asarray(x, dtype=np.float32)).max())
    if amax == 0:
        return 1.0
    s = amax / np.float32(FP8_MAX)
    return float(s) if s > 0 else 1.0


def quantize_fp8_absmax(x: np.ndarray, scope: str = "global") -> QTensor:
    """Absmax-scale ``x`` onto the E4M3 range and snap to the grid.

    ``scope="global"`` uses one scale for the tensor, ``"row"`` one per row.
    """
    x = np.asarray(x, dtype=np.float32)
    if scope == "global":
        params = [QuantParams(fp8_scale(x))]
    elif scope == "row":
        flat = x.reshape(x.shape[0], -1)
        params = [QuantParams(fp8_scale(flat[i]), 0, i) for i in range(flat.shape[0])]
    else:
        raise ValueError(f"unknown scope {scope!r}")
    q = QTensor(np.empty(x.shape, dtype=np.float32), params, QuantFormat.FP8)
    q.codes = snap_e4m3(x / q.scales())
    return q


# ---------------------------------------------------------------- linear

@dataclass
class QuantLinear:
    """A linear layer ``y = x @ weight + bias`` with offline INT8 weights.

    Weights are quantized once, symmetrically per output channel
    (scale = max|w[:, j]| / 127, no zero-point).
    """

    weight: np.ndarray  # (in, out) float32
    bias: np.ndarray | None = None
    name: str = ""
    w_codes: np.ndarray = field(init=False, repr=False)
    w_scale: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float32)
        if self.bias is not None:
            self.bias = np.ascontiguousarray(self.bias, dtype=np.float32)
        self.w_codes, self.w_scale = quantize_weight(self.weight)

    @property
    def in_features(self):
        return self.weight.shape[0]

    @property
    def out_features(self):
        return self.weight.shape[1]


def quantize_weight(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w = np.asarray(w, dtype=np.float32)
    amax = np.abs(w).max(axis=0)
    scale = np.where(amax > 0, amax / np.float32(WEIGHT_QMAX), np.float32(1.0)).astype(np.float32)
    codes = np.clip(round_half_away(w / scale), -WEIGHT_QMAX, WEIGHT_QMAX).astype(np.int64)
    return codes, scale


def quantize_activation(x: np.ndarray, cfg: QuantConfig) -> QTensor:
    if cfg.format is QuantFormat.FP8:
        scope = "global" if cfg.granularity is Granularity.PER_TENSOR else "row"
        return quantize_fp8_absmax(x, scope)
    if cfg.granularity is Granularity.PER_TENSOR:
        return quantize(x, compute_params_per_tensor(x))
    return quantize(x, compute_params_per_token(x))


def quantized_linear(x: np.ndarray, layer: QuantLinear, cfg: QuantConfig, recorder=None) -> np.ndarray:
    """Run ``layer`` on a (batch, in) activation under ``cfg``.

    INT8: (codes - zp) @ w_codes accumulates exactly in int64, then
    y = ((acc * act_scale) * w_scale) + bias in float32.
    FP8: grid values are integer multiples of 2**-9, so the same exact
    integer product is used and rescaled by 2**-9 afterwards.
    ``none`` is a plain float matmul with the unquantized weights.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] != layer.in_features:
        raise ShapeError(f"{layer.name or 'linear'}: input {x.shape} vs weight {layer.weight.shape}")
    if not cfg.enabled:
        y = matmul(x, layer.weight)
        if recorder is not None:
            recorder.record(layer.name, x, None)
    else:
        q = quantize_activation(x, cfg)
        if recorder is not None:
            recorder.record(layer.name, x, q.params)
        if q.format is QuantFormat.FP8:
            units = (q.codes.astype(np.float64) / FP8_UNIT).astype(np.int64)
            acc = (units @ layer.w_codes).astype(np.float32) * np.float32(FP8_UNIT)
        else:
            acc = ((q.codes.astype(np.int64) - q.zero_points()) @ layer.w_codes).astype(np.float32)
        y = (acc * q.scales()) * layer.w_scale
    if layer.bias is not None:
        y = y + layer.bias
    return y.astype(np.float32, copy=False)
