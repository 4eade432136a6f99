"""Dense float32 arrays on disk, plus the deterministic RNG.

Arrays are plain C-contiguous float32 ndarrays; every public API treats
them as immutable values and requires all elements finite. The on-disk
format ("AZTN") is fixed byte for byte:

    magic   4 bytes  b"AZTN"
    version u8       1
    dtype   u8       0 (float32 little-endian)
    ndim    u8
    dims    ndim x u64 little-endian
    payload product(dims) x f32 little-endian, row-major

The RNG is splitmix64: state advances by the golden-ratio increment and
each output is a bit-mix of the new state. Standard normals come from the
Box-Muller transform on two 53-bit uniforms, evaluated in float64 and
rounded once to float32. Both algorithms use only fixed integer mixing
and IEEE arithmetic, so streams reproduce exactly across runs.
"""

from __future__ import annotations

import math
import os
import struct

import numpy as np

MAGIC = b"AZTN"
VERSION = 1
DTYPE_F32 = 0

# splitmix64 constants (Steele/Lea/Flood mixing function).
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK64 = 0xFFFFFFFFFFFFFFFF

_TWO53_INV = 2.0 ** -53


class TensorFormatError(ValueError):
    """Base for malformed tensor files."""


class BadMagicError(TensorFormatError):
    pass


class BadVersionError(TensorFormatError):
    pass


class BadDtypeError(TensorFormatError):
    pass


class ShortPayloadError(TensorFormatError):
    pass


def check_finite(a: np.ndarray, context: str) -> None:
    """Reject NaN/Inf; `context` names the offending value in the error."""
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{context}: array contains non-finite elements")


def as_f32(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float32)
    # ascontiguousarray would promote 0-d to 1-d and lose the shape
    return np.ascontiguousarray(a) if a.ndim else a


def write_tensor(path, a: np.ndarray) -> None:
    """Write `a` to `path` in AZTN format, atomically (temp then rename)."""
    a = as_f32(a)
    check_finite(a, f"write_tensor({path})")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_F32, a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    payload = a.astype("<f4", copy=False).tobytes()
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_tensor(path) -> np.ndarray:
    """Inverse of write_tensor; raises a distinct error per format fault."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an AZTN tensor file")
    version, dtype, ndim = struct.unpack("<BBB", blob[4:7])
    if version != VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise BadDtypeError(f"{path}: unsupported dtype code {dtype}")
    dims_end = 7 + 8 * ndim
    if len(blob) < dims_end:
        raise ShortPayloadError(f"{path}: truncated dimension header")
    dims = struct.unpack(f"<{ndim}Q", blob[7:dims_end])
    count = 1
    for d in dims:
        count *= d
    if len(blob) - dims_end < 4 * count:
        raise ShortPayloadError(
            f"{path}: payload has {len(blob) - dims_end} bytes, "
            f"expected {4 * count}")
    a = np.frombuffer(blob, dtype="<f4", count=count, offset=dims_end)
    a = a.reshape(dims).astype(np.float32, copy=True)
    check_finite(a, f"read_tensor({path})")
    return a


def _mix_array(x: np.ndarray) -> np.ndarray:
    # uint64 array ops wrap mod 2^64 without warning, unlike numpy scalars.
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


class SeededRng:
    """splitmix64 stream; single-owner, never shared across threads."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        x = self.state
        x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
        x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
        return x ^ (x >> 31)

    def _block_u64(self, n: int) -> np.ndarray:
        # Same values next_u64 would produce one by one: element i mixes
        # state + (i+1) * GOLDEN, then the state jumps past the block.
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        out = _mix_array(np.uint64(self.state) + steps)
        self.state = (self.state + n * _GOLDEN) & _MASK64
        return out

    def uniform_block(self, n: int) -> np.ndarray:
        """n float64 uniforms in [0, 1): top 53 bits scaled by 2^-53."""
        bits = self._block_u64(n) >> np.uint64(11)
        return bits.astype(np.float64) * _TWO53_INV


def randn(rng: SeededRng, dims) -> np.ndarray:
    """Standard normals via Box-Muller, deterministic per rng state.

    Each pair consumes two 53-bit uniforms: u1 is shifted into (0, 1] so
    log(u1) is finite, u2 stays in [0, 1). z0 = sqrt(-2 ln u1) cos(2 pi u2)
    and z1 uses sin; outputs interleave z0, z1, z0, z1, ... in draw order.
    The math runs in float64 and rounds to float32 once at the end; an odd
    element count discards the spare half of the last pair.
    """
    dims = tuple(int(d) for d in dims)
    if not dims:
        raise ValueError("randn: dims must be nonempty")
    total = 1
    for d in dims:
        total *= d
    pairs = (total + 1) // 2
    u = rng.uniform_block(2 * pairs).reshape(pairs, 2)
    u1 = u[:, 0] + _TWO53_INV
    u2 = u[:, 1]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = (2.0 * math.pi) * u2
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:total].astype(np.float32).reshape(dims)


def uniform_weights(rng: SeededRng, out_ch: int, in_ch: int) -> np.ndarray:
    """Weight matrix [out_ch, in_ch], i.i.d. uniform in [-s, s], s=1/sqrt(in_ch).

    Row-major draw order; each u64 maps to f64 in [0, 1) then to
    (2u - 1) * s, rounded to float32 once.
    """
    s = 1.0 / math.sqrt(in_ch)
    u = rng.uniform_block(out_ch * in_ch)
    w = (2.0 * u - 1.0) * s
    return w.astype(np.float32).reshape(out_ch, in_ch)
