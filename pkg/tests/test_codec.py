"""Wire codec: bit-exact lengths and lossless index/value round-trips."""
from __future__ import annotations

import numpy as np
import pytest

from bicolor.codec import (
    BitReader,
    BitWriter,
    decode_message,
    encode_message,
)
from bicolor.compressors import (
    CompressorSpec,
    compress,
    compress_restricted,
    encoded_bits,
    header_bit_width,
)
from bicolor.errors import ContractError


def test_bit_writer_reader_roundtrip():
    w = BitWriter()
    fields = [(5, 3), (0, 1), (1023, 10), (1, 1), (0xDEADBEEF, 32)]
    for value, width in fields:
        w.write(value, width)
    r = BitReader(w.getvalue())
    for value, width in fields:
        assert r.read(width) == value


def test_bit_writer_rejects_overflow():
    w = BitWriter()
    with pytest.raises(ContractError):
        w.write(8, 3)


def test_payload_bits_match_encoded_bits_full_support():
    spec = CompressorSpec.natural(16)
    msg = compress(spec, np.arange(1.0, 17.0), np.random.default_rng(0))
    enc = encode_message(msg, spec.value_bits)
    assert enc.payload_bits == encoded_bits(spec, msg.support_size, 16) == 9 * 16
    assert enc.total_bits == enc.payload_bits + header_bit_width(16)
    assert len(enc.data) * 8 >= enc.total_bits > (len(enc.data) - 1) * 8


def test_roundtrip_natural_sparse():
    spec = CompressorSpec.natural(12)
    x = np.random.default_rng(1).standard_normal(12)
    msg = compress_restricted(spec, x, np.array([1, 5, 9]), np.random.default_rng(2))
    enc = encode_message(msg, spec.value_bits)
    indices, values = decode_message(enc.data, 12, spec.value_bits)
    assert np.array_equal(indices, msg.indices)
    assert np.array_equal(values, msg.values)  # powers of two are exact in 9 bits


def test_roundtrip_float32_values():
    spec = CompressorSpec.identity(5)
    x = np.array([0.1, -2.5, 3e-3, 7.0, -1e4])
    msg = compress(spec, x, np.random.default_rng(0))
    enc = encode_message(msg, spec.value_bits)
    indices, values = decode_message(enc.data, 5, spec.value_bits)
    assert np.array_equal(indices, np.arange(5))
    assert np.array_equal(values, x.astype(np.float32).astype(np.float64))


def test_non_power_of_two_rejected_in_natural_stream():
    spec = CompressorSpec.natural(2)
    bad = type(compress(spec, np.array([1.0, 2.0]), np.random.default_rng(0)))(
        dimension=2, indices=np.array([0, 1]), values=np.array([1.0, 3.0]), bit_length=18
    )
    with pytest.raises(ContractError):
        encode_message(bad, 9)


@pytest.mark.parametrize("make_spec", [
    lambda d: CompressorSpec.identity(d),
    lambda d: CompressorSpec.rand_k(d, 3),
    lambda d: CompressorSpec.natural(d),
    lambda d: CompressorSpec.composed(CompressorSpec.natural(d), CompressorSpec.rand_k(d, 2)),
])
def test_serialized_length_equals_encoded_bits(make_spec):
    d = 11
    spec = make_spec(d)
    rng = np.random.default_rng(9)
    for trial in range(200):
        x = np.random.default_rng(trial).standard_normal(d)
        msg = compress(spec, x, rng)
        enc = encode_message(msg, spec.value_bits)
        assert msg.bit_length == encoded_bits(spec, msg.support_size, d)
        assert enc.payload_bits == msg.bit_length
        indices, values = decode_message(enc.data, d, spec.value_bits)
        assert np.array_equal(indices, msg.indices)
