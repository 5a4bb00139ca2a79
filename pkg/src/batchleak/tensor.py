"""Dense float32 primitives with fixed accumulation order, plus a portable RNG.

Everything here works on plain ``numpy.ndarray`` values of dtype float32.
Reductions that feed model outputs accumulate strictly left-to-right so a
row's result never depends on how many other rows share the array.
"""

from __future__ import annotations

import math

import numpy as np

MAX_RANK = 4
_MATMUL_CHUNK = 1 << 20  # elements of the (m, k, n) product buffer per chunk


class ShapeError(ValueError):
    pass


def as_tensor(x, *, copy: bool = False) -> np.ndarray:
    """Validate ``x`` and return it as a C-contiguous float32 array.

    Rejects empty shapes beyond rank 4 and any NaN/Inf value.
    """
    arr = np.array(x, dtype=np.float32, copy=copy) if copy else np.asarray(x, dtype=np.float32)
    if arr.ndim == 0 or arr.ndim > MAX_RANK:
        raise ShapeError(f"tensor rank must be in 1..{MAX_RANK}, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return np.ascontiguousarray(arr)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` for 2-D float32 arrays, accumulating sequentially over k.

    out[i, j] = (((a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...), each product and
    sum rounded to float32.  Bit-reproducible and row-independent, unlike
    BLAS which may reorder the sum depending on the batch shape.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = np.empty((m, n), dtype=np.float32)
    if m == 0 or n == 0:
        return out
    if k == 0:
        out.fill(0.0)
        return out
    rows = max(1, _MATMUL_CHUNK // (k * n))
    for start in range(0, m, rows):
        stop = min(m, start + rows)
        prod = a[start:stop, :, None] * b[None, :, :]
        out[start:stop] = np.add.accumulate(prod, axis=1)[:, -1, :]
    return out


def seq_sum(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Left-to-right float32 sum along ``axis`` (no pairwise reordering)."""
    x = np.asarray(x, dtype=np.float32)
    return np.take(np.add.accumulate(x, axis=axis), -1, axis=axis)


def reduce_minmax(x: np.ndarray, axis: str = "global"):
    """Exact min/max, either over the whole tensor or per leading row.

    ``axis="global"`` returns a ``(min, max)`` pair of floats; ``axis="row"``
    returns a ``(rows, 2)`` float32 array of per-row pairs.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.size == 0:
        raise ShapeError("reduce_minmax of an empty tensor")
    if axis == "global":
        return float(x.min()), float(x.max())
    if axis == "row":
        flat = x.reshape(x.shape[0], -1)
        return np.stack([flat.min(axis=1), flat.max(axis=1)], axis=1)
    raise ValueError(f"unknown axis {axis!r}")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Stabilised log-softmax of a 1-D float32 vector."""
    z = np.asarray(logits, dtype=np.float32)
    z = z - z.max()
    return z - np.log(seq_sum(np.exp(z)))


def log_softmax_top1(logits: np.ndarray) -> tuple[int, float]:
    """Argmax token (lowest index on ties) and its log-probability."""
    z = np.asarray(logits, dtype=np.float32).reshape(-1)
    if z.size < 1:
        raise ShapeError("need at least one logit")
    idx = int(np.argmax(z))
    # log p_top = -log1p(sum of the other exp(z - max)); keeps full relative
    # precision when p_top is close to 1.
    e = np.exp(z - z[idx])
    e[idx] = 0.0
    return idx, float(-np.log1p(seq_sum(e)))


def l2_distance(u, v) -> float:
    """Euclidean distance between two equal-length vectors."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ShapeError(f"length mismatch: {u.size} vs {v.size}")
    if u.size == 1:
        return abs(float(u[0] - v[0]))
    d = u - v
    return math.sqrt(float(np.dot(d, d)))


class Rng:
    """SplitMix64 stream: the i-th draw (i = 1, 2, ...) is ``mix(seed + i * G)``.

    G = 0x9E3779B97F4A7C15 and the finaliser multipliers are
    0xBF58476D1CE4E5B9 / 0x94D049BB133111EB (shifts 30, 27, 31), exactly as in
    the reference SplitMix64, so any implementation reproduces the stream.
    Uniform doubles take the top 53 bits.
    """

    GOLDEN = 0x9E3779B97F4A7C15
    MUL1 = 0xBF58476D1CE4E5B9
    MUL2 = 0x94D049BB133111EB
    _MASK = (1 << 64) - 1

    def __init__(self, seed: int):
        self.seed = int(seed) & self._MASK
        self.counter = 0

    @classmethod
    def _mix(cls, z: np.ndarray) -> np.ndarray:
        z = (z ^ (z >> np.uint64(30))) * np.uint64(cls.MUL1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(cls.MUL2)
        return z ^ (z >> np.uint64(31))

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(self.GOLDEN)
            return self._mix(z)

    def spawn(self, key: int) -> "Rng":
        """Independent child stream derived from (seed, key); does not advance self."""
        base = np.array([(self.seed ^ ((int(key) * self.MUL2) & self._MASK)) & self._MASK], dtype=np.uint64)
        with np.errstate(over="ignore"):
            child = int(self._mix(base + np.uint64(self.GOLDEN))[0])
        return Rng(child)

    def random(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high) as floor(u * span); bias is of order span * 2**-53."""
        span = high - low
        if span <= 0:
            raise ValueError("empty integer range")
        u = self.random(1 if size is None else size)
        out = low + np.floor(np.asarray(u) * span).astype(np.int64)
        return int(out.reshape(-1)[0]) if size is None else out

    def normal(self, size) -> np.ndarray:
        n = int(np.prod(size))
        u1 = self.random(n)
        u2 = self.random(n)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        return (r * np.cos(2.0 * np.pi * u2)).reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_u64(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), in random order."""
        if k > n:
            raise ValueError("sample larger than population")
        return self.permutation(n)[:k]
