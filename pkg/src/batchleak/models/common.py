from __future__ import annotations

import numpy as np

from ..tensor import seq_sum

LN_EPS = np.float32(1e-5)


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """Row-wise LayerNorm in float32 with sequential reductions."""
    d = np.float32(x.shape[-1])
    mean = seq_sum(x) / d
    xc = x - mean[..., None]
    var = seq_sum(xc * xc) / d
    y = xc / np.sqrt(var + LN_EPS)[..., None] * gain
    if bias is not None:
        y = y + bias
    return y.astype(np.float32, copy=False)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def init_uniform(rng, shape, std: float) -> np.ndarray:
    """Uniform init with the given standard deviation (bound = std * sqrt(3))."""
    bound = std * np.sqrt(3.0)
    return rng.uniform(-bound, bound, shape).astype(np.float32)
