"""Unbiased compression operators.

A compressor C maps R^d to R^d with E[C(x)] = x and a relative variance
bound E||C(x) - x||^2 <= omega ||x||^2. The module provides the identity,
rand-K sparsification (select K coordinates uniformly without replacement,
scale by d/K), power-of-two stochastic rounding ("natural" quantization),
and the composition of a quantizer with a sparsifier. Each spec also knows
the exact bit cost of its encoded messages.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError

FLOAT_VALUE_BITS = 32   # transmitted width of an unquantized real
NATURAL_VALUE_BITS = 9  # sign + 8-bit exponent after power-of-two rounding

MUTUALLY_INDEPENDENT = "mutually_independent"
SHARED_RANDOMNESS = "shared_randomness"


@dataclass(frozen=True)
class CompressorSpec:
    """A declared unbiased compressor with its variance and bit-cost model.

    ``kind`` is one of ``identity``, ``rand_k``, ``natural``, ``composed``.
    ``independence_class`` governs which averaged-variance factor applies
    when n machines compress in parallel (see :func:`omega_av`).
    ``strict_values`` makes non-quantizing compressors round carried values
    to 32-bit floats, so the simulated payload matches the modeled bits.
    """

    kind: str
    dimension: int
    k: Optional[int] = None
    inner: Optional["CompressorSpec"] = None
    outer: Optional["CompressorSpec"] = None
    independence_class: str = MUTUALLY_INDEPENDENT
    strict_values: bool = False

    def __post_init__(self):
        if self.dimension < 1:
            raise ContractError(f"dimension must be >= 1, got {self.dimension}")
        if self.kind == "rand_k":
            if self.k is None or not 1 <= self.k <= self.dimension:
                raise ContractError(f"rand-K needs K in [1, {self.dimension}], got {self.k}")
        elif self.kind == "composed":
            if self.inner is None or self.outer is None:
                raise ContractError("composed spec needs inner and outer parts")
            if self.inner.dimension != self.dimension or self.outer.dimension != self.dimension:
                raise ContractError("composed parts must share the outer dimension")
            if self.outer.kind not in ("natural", "identity"):
                raise ContractError(
                    "outer part must be a value quantizer; put the sparsifier inside"
                )
        elif self.kind not in ("identity", "natural"):
            raise ContractError(f"unknown compressor kind {self.kind!r}")
        if self.independence_class not in (MUTUALLY_INDEPENDENT, SHARED_RANDOMNESS):
            raise ContractError(f"unknown independence class {self.independence_class!r}")

    @property
    def omega(self) -> float:
        """Relative variance bound of this compressor."""
        if self.kind == "identity":
            return 0.0
        if self.kind == "rand_k":
            return self.dimension / self.k - 1.0
        if self.kind == "natural":
            return 0.125
        return (1.0 + self.outer.omega) * (1.0 + self.inner.omega) - 1.0

    @property
    def value_bits(self) -> int:
        """Bits per carried value; composition charges the outer quantizer's cost."""
        if self.kind == "natural":
            return NATURAL_VALUE_BITS
        if self.kind == "composed":
            return self.outer.value_bits
        return FLOAT_VALUE_BITS

    # -- constructors -------------------------------------------------------

    @staticmethod
    def identity(dimension: int, **kw) -> "CompressorSpec":
        return CompressorSpec("identity", dimension, **kw)

    @staticmethod
    def rand_k(dimension: int, k: int, **kw) -> "CompressorSpec":
        return CompressorSpec("rand_k", dimension, k=k, **kw)

    @staticmethod
    def natural(dimension: int, **kw) -> "CompressorSpec":
        return CompressorSpec("natural", dimension, **kw)

    @staticmethod
    def composed(outer: "CompressorSpec", inner: "CompressorSpec", **kw) -> "CompressorSpec":
        return CompressorSpec("composed", inner.dimension, inner=inner, outer=outer, **kw)


@dataclass(frozen=True)
class CompressedMessage:
    """A k-sparse decoded vector plus the exact size of its encoding.

    ``indices`` are strictly increasing coordinates in [0, d); ``values``
    are the decoded coordinate values; ``bit_length`` equals
    :func:`encoded_bits` for the producing compressor and support size.
    """

    dimension: int
    indices: np.ndarray
    values: np.ndarray
    bit_length: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dimension:
                raise ContractError("message indices out of [0, d)")
            if np.any(np.diff(idx) <= 0):
                raise ContractError("message indices must be strictly increasing")

    @property
    def support_size(self) -> int:
        return int(self.indices.size)

    def dense(self) -> np.ndarray:
        """Decode to a full vector in R^d (zeros off the support)."""
        out = np.zeros(self.dimension)
        out[self.indices] = self.values
        return out


def encoded_bits(spec: CompressorSpec, support_size: int, d: int) -> int:
    """Exact encoded size in bits of a message with the given support.

    Charges ``value_bits`` per carried value, plus ``ceil(log2 d)`` per
    index whenever the support is a strict subset of the coordinates.
    """
    if support_size > d:
        raise ContractError(f"support {support_size} exceeds dimension {d}")
    bits = support_size * spec.value_bits
    if support_size < d:
        bits += support_size * index_bit_width(d)
    return bits


def index_bit_width(d: int) -> int:
    """Fixed width of one coordinate index: ceil(log2 d)."""
    return max(int(math.ceil(math.log2(d))), 0) if d > 1 else 0


def header_bit_width(d: int) -> int:
    """Fixed width of the support-size header: ceil(log2(d+1))."""
    return int(math.ceil(math.log2(d + 1)))


def omega_av(specs: list) -> float:
    """Averaged relative variance factor for n parallel compressors.

    Mutually independent compressors average down to omega / n; with
    shared randomness only the generic factor omega is valid.
    """
    if not specs:
        raise ContractError("omega_av needs at least one spec")
    d = specs[0].dimension
    w = specs[0].omega
    for s in specs:
        if s.dimension != d or s.omega != w:
            raise ContractError("omega_av requires specs sharing d and omega")
    if all(s.independence_class == MUTUALLY_INDEPENDENT for s in specs):
        return w / len(specs)
    return w


def round_to_power_of_two(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unbiased stochastic rounding of each entry to an adjacent power of two.

    For v with 2^e <= |v| < 2^(e+1), rounds up to sign(v) 2^(e+1) with
    probability (|v| - 2^e) / 2^e, else down to sign(v) 2^e; zeros stay.
    The relative variance per entry is at most 1/8.
    """
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros_like(values)
    nz = values != 0.0
    if not np.any(nz):
        return out
    v = values[nz]
    mag = np.abs(v)
    low = np.exp2(np.floor(np.log2(mag)))
    go_up = rng.random(v.shape) < (mag / low - 1.0)
    out[nz] = np.copysign(np.where(go_up, 2.0 * low, low), v)
    return out


def _sample_subset(rng: np.random.Generator, d: int, k: int) -> np.ndarray:
    """k of d coordinates, uniform without replacement, sorted ascending.

    Partial Fisher-Yates driven solely by ``rng``; the stream is the only
    randomness source so runs replay exactly under a fixed seed.
    """
    if k == d:
        return np.arange(d, dtype=np.int64)
    pool = np.arange(d, dtype=np.int64)
    for i in range(k):
        j = i + int(rng.integers(0, d - i))
        pool[i], pool[j] = pool[j], pool[i]
    return np.sort(pool[:k])


def _make_message(spec, d, indices, values) -> CompressedMessage:
    if spec.strict_values and spec.value_bits == FLOAT_VALUE_BITS:
        values = np.asarray(values, dtype=np.float32).astype(np.float64)
    return CompressedMessage(
        dimension=d,
        indices=np.asarray(indices, dtype=np.int64),
        values=np.asarray(values, dtype=np.float64),
        bit_length=encoded_bits(spec, int(np.asarray(indices).size), d),
    )


def compress(spec: CompressorSpec, x: np.ndarray, rng: np.random.Generator) -> CompressedMessage:
    """Apply the compressor to a full vector.

    The decoded output is unbiased with relative variance at most
    ``spec.omega``. A zero input yields the zero message with minimal
    encoding (the variance bound holds vacuously).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dimension,):
        raise ContractError(f"expected vector of length {spec.dimension}, got shape {x.shape}")
    return _compress_on(spec, x, np.arange(spec.dimension, dtype=np.int64), rng)


def compress_restricted(
    spec: CompressorSpec,
    x: np.ndarray,
    omega_set: np.ndarray,
    rng: np.random.Generator,
) -> CompressedMessage:
    """Apply the compressor to the coordinates in ``omega_set`` only.

    Coordinates outside the subset are absent from the output; restricted
    to the subset, the usual unbiasedness and variance contract holds for
    the restricted vector.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dimension,):
        raise ContractError(f"expected vector of length {spec.dimension}, got shape {x.shape}")
    omega_set = np.asarray(omega_set, dtype=np.int64)
    if omega_set.size:
        if omega_set.min() < 0 or omega_set.max() >= spec.dimension:
            raise ContractError("omega_set out of [0, d)")
        if np.unique(omega_set).size != omega_set.size:
            raise ContractError("omega_set has repeated coordinates")
    return _compress_on(spec, x, np.sort(omega_set), rng)


def _compress_on(spec, x, support, rng) -> CompressedMessage:
    """Compression mechanics on an explicit candidate support."""
    indices, values = _raw_compress(spec, x, support, rng)
    return _make_message(spec, spec.dimension, indices, values)


def _raw_compress(spec, x, support, rng):
    sub = x[support]
    if not sub.any():
        return _EMPTY_INDICES, _EMPTY_VALUES
    if spec.kind == "identity":
        return support, sub
    if spec.kind == "natural":
        return support, round_to_power_of_two(sub, rng)
    if spec.kind == "rand_k":
        m = support.size
        if spec.k >= m:
            return support, sub
        pick = _sample_subset(rng, m, spec.k)
        return support[pick], (m / spec.k) * sub[pick]
    # composed: sparsify with the inner part, then quantize the carried values
    indices, values = _raw_compress(spec.inner, x, support, rng)
    if spec.outer.kind == "natural":
        values = round_to_power_of_two(values, rng)
    return indices, values


def sample_dense(spec: CompressorSpec, x: np.ndarray, rng: np.random.Generator,
                 n_draws: int) -> np.ndarray:
    """Decoded outputs of ``n_draws`` independent applications of C to x.

    Vectorized Monte-Carlo path for contract verification; draws the same
    distributions as :func:`compress` (uniform k-subsets, the shared
    power-of-two rounding kernel) in one pass, returning an (n_draws, d)
    array.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dimension,):
        raise ContractError(f"expected vector of length {spec.dimension}, got shape {x.shape}")
    out = _sample_dense(spec, x, rng, n_draws)
    if spec.strict_values and spec.value_bits == FLOAT_VALUE_BITS:
        out = out.astype(np.float32).astype(np.float64)
    return out


def _sample_dense(spec, x, rng, n_draws):
    d = spec.dimension
    if not x.any():
        return np.zeros((n_draws, d))
    if spec.kind == "identity":
        return np.tile(x, (n_draws, 1))
    if spec.kind == "natural":
        return round_to_power_of_two(np.tile(x, (n_draws, 1)), rng)
    if spec.kind == "rand_k":
        if spec.k == d:
            return np.tile(x, (n_draws, 1))
        idx = _draw_subset_rows(rng, d, spec.k, n_draws)
        out = np.zeros((n_draws, d))
        np.put_along_axis(out, idx, (d / spec.k) * x[idx], axis=1)
        return out
    inner = _sample_dense(spec.inner, x, rng, n_draws)
    if spec.outer.kind == "natural":
        inner = round_to_power_of_two(inner, rng)
    return inner


def _draw_subset_rows(rng: np.random.Generator, d: int, k: int, n_draws: int) -> np.ndarray:
    """(n_draws, k) sorted uniform k-subsets: the k smallest of d random keys."""
    keys = rng.random((n_draws, d))
    return np.sort(np.argpartition(keys, k - 1, axis=1)[:, :k], axis=1)


_EMPTY_INDICES = np.empty(0, dtype=np.int64)
_EMPTY_VALUES = np.empty(0, dtype=np.float64)
