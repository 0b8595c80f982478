"""Fixed-width little-endian bitstream codec for compressed messages.

Layout: a header carrying the support size in ceil(log2(d+1)) bits, then,
when the support is a strict subset, the indices (ceil(log2 d) bits each,
ascending), then the values (32-bit floats, or 9-bit sign+exponent codes
for power-of-two quantized values). The payload length (indices + values,
header excluded) is what the accounting model charges and must equal
``encoded_bits`` exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compressors import (
    FLOAT_VALUE_BITS,
    NATURAL_VALUE_BITS,
    CompressedMessage,
    header_bit_width,
    index_bit_width,
)
from .errors import ContractError


class BitWriter:
    """Packs fixed-width unsigned fields LSB-first into bytes."""

    def __init__(self):
        self._acc = 0
        self._nbits = 0
        self._out = bytearray()

    def write(self, value: int, width: int):
        if width < 0 or (width == 0 and value != 0):
            raise ContractError(f"cannot write value {value} in width {width}")
        if value < 0 or (width < 64 and value >> width):
            raise ContractError(f"value {value} does not fit in {width} bits")
        self._acc |= value << self._nbits
        self._nbits += width
        while self._nbits >= 8:
            self._out.append(self._acc & 0xFF)
            self._acc >>= 8
            self._nbits -= 8

    @property
    def bit_count(self) -> int:
        return 8 * len(self._out) + self._nbits

    def getvalue(self) -> bytes:
        data = bytes(self._out)
        if self._nbits:
            data += bytes([self._acc & 0xFF])
        return data


class BitReader:
    """Reads fixed-width unsigned fields LSB-first from bytes."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def read(self, width: int) -> int:
        value = 0
        for i in range(width):
            byte = self._data[self._pos >> 3]
            value |= ((byte >> (self._pos & 7)) & 1) << i
            self._pos += 1
        return value


@dataclass(frozen=True)
class EncodedMessage:
    data: bytes
    total_bits: int    # header + indices + values
    payload_bits: int  # indices + values; equals encoded_bits
    header_bits: int


def _natural_code(value: float) -> int:
    """9-bit code of a power-of-two value: sign bit then biased exponent."""
    if value == 0.0:
        return 0
    mag = abs(value)
    e = int(math.floor(math.log2(mag)))
    if 2.0 ** e != mag:
        raise ContractError(f"{value} is not a power of two")
    if not -126 <= e <= 127:
        raise ContractError(f"exponent {e} outside the 8-bit float range")
    sign = 1 if value < 0 else 0
    return (sign << 8) | (e + 127)


def _natural_decode(code: int) -> float:
    exp_field = code & 0xFF
    if exp_field == 0:
        return 0.0
    value = 2.0 ** (exp_field - 127)
    return -value if code >> 8 else value


def _float32_code(value: float) -> int:
    return int(np.float32(value).view(np.uint32))


def _float32_decode(code: int) -> float:
    return float(np.uint32(code).view(np.float32))


def encode_message(msg: CompressedMessage, value_bits: int) -> EncodedMessage:
    """Serialize a message; ``value_bits`` is the producing spec's value width."""
    if value_bits not in (FLOAT_VALUE_BITS, NATURAL_VALUE_BITS):
        raise ContractError(f"unsupported value width {value_bits}")
    d = msg.dimension
    w = BitWriter()
    w.write(msg.support_size, header_bit_width(d))
    if msg.support_size < d:
        iw = index_bit_width(d)
        for i in msg.indices:
            w.write(int(i), iw)
    encode = _natural_code if value_bits == NATURAL_VALUE_BITS else _float32_code
    for v in msg.values:
        w.write(encode(float(v)), value_bits)
    total = w.bit_count
    return EncodedMessage(
        data=w.getvalue(),
        total_bits=total,
        payload_bits=total - header_bit_width(d),
        header_bits=header_bit_width(d),
    )


def decode_message(data: bytes, d: int, value_bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`encode_message`; returns (indices, values)."""
    r = BitReader(data)
    support = r.read(header_bit_width(d))
    if support < d:
        iw = index_bit_width(d)
        indices = np.array([r.read(iw) for _ in range(support)], dtype=np.int64)
    else:
        indices = np.arange(d, dtype=np.int64)
    decode = _natural_decode if value_bits == NATURAL_VALUE_BITS else _float32_decode
    values = np.array([decode(r.read(value_bits)) for _ in range(support)], dtype=np.float64)
    return indices, values
