"""Bit-exact block-scaled FP4 reference quantizer.

16-element blocks of signed E2M1 codes (magnitudes 0, 0.5, 1, 1.5, 2, 3, 4, 6)
sharing one non-negative E4M3 scale (bias 7, no infinities, max finite 448).
Scale and code magnitudes are dyadic rationals, so decode is exact in binary
floating point.  Ties round to the even-mantissa neighbor everywhere.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

BLOCK_SIZE = 16
CODE_MAGNITUDES = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0)
E4M3_MAX = 448.0
E4M3_MIN_SUBNORMAL = 2.0**-9
MAGIC = b"FP4REF01"


class QuantizationDomainError(ValueError):
    """Non-finite input to the quantizer."""


def _round_half_even(x: float) -> int:
    f = math.floor(x)
    d = x - f
    if d > 0.5:
        return f + 1
    if d < 0.5:
        return f
    return f if f % 2 == 0 else f + 1


def encode_e4m3(x: float) -> int:
    """Nearest E4M3 bit pattern (sign bit always 0) for a non-negative value."""
    if not math.isfinite(x) or x < 0:
        raise QuantizationDomainError(f"scale must be finite and >= 0, got {x}")
    if x >= E4M3_MAX:
        return 0x7E  # max finite: exp 1111 is not used for inf here, 448 = 1.75 * 2^8
    if x < 2.0**-6:
        # subnormal: value = m * 2^-9, m in [0, 7]
        m = _round_half_even(x / E4M3_MIN_SUBNORMAL)
        if m >= 8:
            return 0x08  # carries into the smallest normal
        return m
    e = math.floor(math.log2(x))
    sig = x / 2.0**e  # in [1, 2)
    m = _round_half_even((sig - 1.0) * 8)
    if m == 8:
        e += 1
        m = 0
    if e > 8 or (e == 8 and m > 6):
        return 0x7E
    return ((e + 7) << 3) | m


def decode_e4m3(bits: int) -> float:
    if not 0 <= bits <= 0x7F:
        raise ValueError("E4M3 bit pattern out of range")
    e = bits >> 3
    m = bits & 0x7
    if e == 0:
        return m * E4M3_MIN_SUBNORMAL
    return (1.0 + m / 8.0) * 2.0 ** (e - 7)


def _encode_code(x: float) -> int:
    """Nearest signed E2M1 code for x; ties to the even-mantissa code."""
    sign = 0x8 if x < 0 else 0
    mag = abs(x)
    best = 0
    best_err = abs(mag - CODE_MAGNITUDES[0])
    for idx in range(1, 8):
        err = abs(mag - CODE_MAGNITUDES[idx])
        if err < best_err or (err == best_err and idx % 2 == 0 and best % 2 == 1):
            best = idx
            best_err = err
    if best == 0:
        sign = 0  # no negative zero
    return sign | best


def _decode_code(code: int) -> float:
    mag = CODE_MAGNITUDES[code & 0x7]
    return -mag if code & 0x8 else mag


@dataclass(frozen=True)
class Fp4Block:
    codes: tuple[int, ...]
    scale_bits: int

    def __post_init__(self):
        if len(self.codes) != BLOCK_SIZE:
            raise ValueError(f"block must hold exactly {BLOCK_SIZE} codes")
        if any(not 0 <= c <= 0xF for c in self.codes):
            raise ValueError("codes must be 4-bit values")
        if not 0 <= self.scale_bits <= 0x7F:
            raise ValueError("scale must be a non-negative E4M3 pattern")

    @property
    def scale(self) -> float:
        return decode_e4m3(self.scale_bits)


def quantize_block(values) -> Fp4Block:
    values = list(values)
    if len(values) != BLOCK_SIZE:
        raise ValueError(f"block must hold exactly {BLOCK_SIZE} values")
    if any(not math.isfinite(v) for v in values):
        raise QuantizationDomainError("block contains a non-finite value")
    amax = max(abs(v) for v in values)
    if amax == 0.0:
        return Fp4Block(codes=(0,) * BLOCK_SIZE, scale_bits=0)
    scale_bits = encode_e4m3(amax / CODE_MAGNITUDES[-1])
    if scale_bits == 0:
        scale_bits = 1  # minimal positive subnormal; a non-zero block never scales by 0
    scale = decode_e4m3(scale_bits)
    codes = tuple(_encode_code(v / scale) for v in values)
    return Fp4Block(codes=codes, scale_bits=scale_bits)


def dequantize_block(block: Fp4Block) -> list[float]:
    scale = block.scale
    return [_decode_code(c) * scale for c in block.codes]


@dataclass(frozen=True)
class ErrorSummary:
    rmse: float
    relative_rmse: float
    max_relative_error_per_block: tuple[float, ...]


def quantize_tensor(values, block_size: int = BLOCK_SIZE) -> tuple[list[Fp4Block], ErrorSummary]:
    """Blockwise quantization of a flat sequence; the last block is zero-padded.

    Error statistics cover the unpadded elements only.
    """
    if block_size != BLOCK_SIZE:
        raise ValueError("only block size 16 is supported")
    values = list(values)
    if not values:
        raise ValueError("values must be non-empty")
    blocks = []
    sq_err = 0.0
    sq_val = 0.0
    max_rel = []
    for start in range(0, len(values), block_size):
        chunk = values[start : start + block_size]
        n_real = len(chunk)
        chunk = chunk + [0.0] * (block_size - n_real)
        block = quantize_block(chunk)
        blocks.append(block)
        decoded = dequantize_block(block)
        block_max_rel = 0.0
        for x, d in zip(chunk[:n_real], decoded[:n_real]):
            sq_err += (x - d) ** 2
            sq_val += x * x
            if x != 0.0:
                block_max_rel = max(block_max_rel, abs(x - d) / abs(x))
        max_rel.append(block_max_rel)
    n = len(values)
    rmse = math.sqrt(sq_err / n)
    rel_rmse = math.sqrt(sq_err / sq_val) if sq_val > 0 else 0.0
    return blocks, ErrorSummary(
        rmse=rmse, relative_rmse=rel_rmse, max_relative_error_per_block=tuple(max_rel)
    )


def quantize_blocks(values) -> tuple["np.ndarray", "np.ndarray"]:
    """Batch quantizer, bit-exact with quantize_block.

    Takes an (n, 16) float array; returns (codes, scale_bits) as uint8 arrays
    of shapes (n, 16) and (n,).  Exists because the scalar path is far too
    slow for million-block property sweeps; equivalence is enforced by test.
    """
    import numpy as np

    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != BLOCK_SIZE:
        raise ValueError(f"expected an (n, {BLOCK_SIZE}) array")
    if not np.isfinite(values).all():
        raise QuantizationDomainError("block contains a non-finite value")

    amax = np.abs(values).max(axis=1)
    raw = amax / CODE_MAGNITUDES[-1]

    # E4M3 encode of the per-block scale
    scale_bits = np.zeros(len(values), dtype=np.uint8)
    sub = raw < 2.0**-6
    m_sub = np.rint(raw / E4M3_MIN_SUBNORMAL).astype(np.int64)
    scale_bits[sub] = np.where(m_sub[sub] >= 8, 0x08, m_sub[sub]).astype(np.uint8)
    norm = ~sub & (raw < E4M3_MAX)
    mant, exp = np.frexp(raw)  # raw = mant * 2**exp, mant in [0.5, 1)
    e = exp - 1
    sig = mant * 2.0
    m = np.rint((sig - 1.0) * 8).astype(np.int64)
    carry = m == 8
    e = e + carry
    m = np.where(carry, 0, m)
    bits = ((e + 7) << 3) | m
    bits = np.where((e > 8) | ((e == 8) & (m > 6)), 0x7E, bits)
    scale_bits[norm] = bits[norm].astype(np.uint8)
    scale_bits[raw >= E4M3_MAX] = 0x7E
    nonzero = amax > 0.0
    scale_bits[nonzero & (scale_bits == 0)] = 1

    # E4M3 decode (exact: dyadic rationals)
    se = scale_bits >> 3
    sm = (scale_bits & 0x7).astype(np.float64)
    scale = np.where(
        se == 0, sm * E4M3_MIN_SUBNORMAL, (1.0 + sm / 8.0) * np.exp2(se.astype(np.float64) - 7.0)
    )

    # E2M1 code for each element; ties go to the even-index magnitude
    with np.errstate(divide="ignore", invalid="ignore"):
        sig_vals = np.where(nonzero[:, None], values / scale[:, None], 0.0)
    mags = np.abs(sig_vals)
    mids = np.array([0.25, 0.75, 1.25, 1.75, 2.5, 3.5, 5.0])
    idx = np.searchsorted(mids, mags.ravel(), side="left").reshape(mags.shape)
    tie = (idx < 7) & (mags == mids[np.minimum(idx, 6)]) & (idx % 2 == 1)
    idx = idx + tie
    codes = np.where((sig_vals < 0) & (idx > 0), idx | 0x8, idx).astype(np.uint8)
    return codes, scale_bits


def dequantize_blocks(codes, scale_bits) -> "np.ndarray":
    """Batch decoder matching dequantize_block exactly."""
    import numpy as np

    codes = np.asarray(codes, dtype=np.uint8)
    scale_bits = np.asarray(scale_bits, dtype=np.uint8)
    mags = np.array(CODE_MAGNITUDES)[codes & 0x7]
    signed = np.where(codes & 0x8, -mags, mags)
    se = scale_bits >> 3
    sm = (scale_bits & 0x7).astype(np.float64)
    scale = np.where(
        se == 0, sm * E4M3_MIN_SUBNORMAL, (1.0 + sm / 8.0) * np.exp2(se.astype(np.float64) - 7.0)
    )
    return signed * scale[:, None]


def pack_block(block: Fp4Block) -> bytes:
    """8 code bytes (two codes per byte, low nibble = even index) + 1 scale byte."""
    out = bytearray()
    for i in range(0, BLOCK_SIZE, 2):
        out.append(block.codes[i] | (block.codes[i + 1] << 4))
    out.append(block.scale_bits)
    return bytes(out)


def unpack_block(data: bytes) -> Fp4Block:
    if len(data) != 9:
        raise ValueError("packed block must be 9 bytes")
    codes = []
    for b in data[:8]:
        codes.append(b & 0xF)
        codes.append(b >> 4)
    return Fp4Block(codes=tuple(codes), scale_bits=data[8])


def write_blocks(blocks: list[Fp4Block], element_count: int, path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", element_count))
        for block in blocks:
            f.write(pack_block(block))


def read_blocks(path) -> tuple[list[Fp4Block], int]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ValueError("bad magic in FP4 block file")
    (count,) = struct.unpack("<Q", data[8:16])
    body = data[16:]
    if len(body) % 9 != 0:
        raise ValueError("truncated FP4 block file")
    blocks = [unpack_block(body[i : i + 9]) for i in range(0, len(body), 9)]
    return blocks, count
