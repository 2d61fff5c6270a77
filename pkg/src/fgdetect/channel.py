"""Cyclic ISI channel simulation with BPSK symbols and AWGN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Channel taps used throughout the evaluation scripts.
REFERENCE_TAPS = (0.407, 0.100, 0.815, 0.100, 0.407)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based RNG; (seed, stream) pairs give independent streams."""
    key = (int(seed) & (2**128 - 1)) * 2**64 + (int(stream) & (2**64 - 1))
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class ChannelSpec:
    """Real-valued impulse response of a cyclic ISI channel."""

    taps: tuple[float, ...]

    def __post_init__(self):
        taps = tuple(float(t) for t in self.taps)
        if len(taps) == 0:
            raise ValueError("channel needs at least one tap")
        if not any(t != 0.0 for t in taps):
            raise ValueError("channel taps must not be all zero")
        object.__setattr__(self, "taps", taps)

    @property
    def memory(self) -> int:
        return len(self.taps) - 1

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.taps, dtype=float)


def reference_channel() -> ChannelSpec:
    return ChannelSpec(REFERENCE_TAPS)


@dataclass(frozen=True)
class ObservationBlock:
    """Received block ``y`` together with the noise variance it was made with."""

    y: np.ndarray
    noise_variance: float

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or y.size == 0:
            raise ValueError("y must be a non-empty 1-D vector")
        object.__setattr__(self, "y", y)
        if self.noise_variance < 0:
            raise ValueError("noise variance must be >= 0")

    @property
    def block_length(self) -> int:
        return self.y.size


def noise_variance_from_esn0(esn0_db: float) -> float:
    """Noise variance of the real AWGN for BPSK, sigma^2 = (2 Es/N0)^-1."""
    return 1.0 / (2.0 * 10.0 ** (esn0_db / 10.0))


def sample_symbols(k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``k`` i.i.d. uniform BPSK symbols from {-1, +1}."""
    if k < 1:
        raise ValueError("block length must be >= 1")
    return 1 - 2 * rng.integers(0, 2, size=k)


def sample_symbol_batch(n_blocks: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Batch version of :func:`sample_symbols`, shape ``(n_blocks, k)``."""
    if k < 1 or n_blocks < 1:
        raise ValueError("batch dimensions must be >= 1")
    return 1 - 2 * rng.integers(0, 2, size=(n_blocks, k))


def cyclic_convolve(x: np.ndarray, spec: ChannelSpec) -> np.ndarray:
    """Noiseless channel output, y_k = sum_l h_l x_{[k-l] mod K} (last axis)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for ell, tap in enumerate(spec.taps):
        out += tap * np.roll(x, ell, axis=-1)
    return out


def transmit(
    x: np.ndarray,
    spec: ChannelSpec,
    noise_variance: float,
    rng: np.random.Generator | None = None,
) -> ObservationBlock:
    """Send one block through the cyclic ISI channel plus AWGN.

    ``noise_variance=0`` is allowed for noiseless checks and needs no ``rng``.
    """
    x = np.asarray(x)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("x must be a non-empty 1-D symbol block")
    if noise_variance < 0:
        raise ValueError("noise variance must be >= 0")
    y = cyclic_convolve(x, spec)
    if noise_variance > 0:
        if rng is None:
            raise ValueError("rng required when noise_variance > 0")
        y = y + rng.normal(0.0, np.sqrt(noise_variance), size=y.shape)
    return ObservationBlock(y, noise_variance)


def transmit_batch(
    x: np.ndarray,
    spec: ChannelSpec,
    noise_variance: float,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Channel output for a batch of blocks, shape ``(n_blocks, K)``."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("x must have shape (n_blocks, K)")
    y = cyclic_convolve(x, spec)
    if noise_variance > 0:
        if rng is None:
            raise ValueError("rng required when noise_variance > 0")
        y = y + rng.normal(0.0, np.sqrt(noise_variance), size=y.shape)
    return y


def bits_to_symbols(bits: np.ndarray) -> np.ndarray:
    """Map bit 0 -> +1 and bit 1 -> -1."""
    bits = np.asarray(bits)
    if not np.isin(bits, (0, 1)).all():
        raise ValueError("bits must be 0/1")
    return 1 - 2 * bits


def symbols_to_bits(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`bits_to_symbols`."""
    x = np.asarray(x)
    if not np.isin(x, (-1, 1)).all():
        raise ValueError("symbols must be -1/+1")
    return ((1 - x) // 2).astype(np.int64)
