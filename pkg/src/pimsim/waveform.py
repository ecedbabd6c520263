"""Multicarrier OFDM baseband generation and rate/frequency plumbing.

All signals are complex baseband streams tagged with a sample rate and a
centre offset relative to the TX band centre.  Frequency shifts and band
extraction treat offsets modulo the sample rate: time-domain mixing by
exp(j*2*pi*f0*n/fs) is inherently periodic in fs, which is exactly what lets
the third-order product at -71.25 MHz live at a 122.88 MHz processing rate
(it materializes at -71.25 mod 122.88 = +51.63 MHz).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .constants import BASE_RATE_HZ, OVERSAMPLE

_QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Deterministic child generator keyed by (seed, component path).

    Philox is counter-based, so independently keyed streams stay independent
    and reproducible no matter the evaluation order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class BasebandSignal:
    """Complex sample stream with rate and carrier-offset metadata."""

    samples: np.ndarray
    sample_rate: float
    center_offset: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "BasebandSignal":
        return replace(self, samples=samples)

    def trimmed(self, start: int, stop: int) -> "BasebandSignal":
        return replace(self, samples=self.samples[start:stop])

    def compatible_with(self, other: "BasebandSignal") -> None:
        if self.sample_rate != other.sample_rate:
            raise ValueError("sample rates differ")
        if self.center_offset != other.center_offset:
            raise ValueError("centre offsets differ")
        if len(self) != len(other):
            raise ValueError("lengths differ")

    def __add__(self, other: "BasebandSignal") -> "BasebandSignal":
        self.compatible_with(other)
        return self.with_samples(self.samples + other.samples)


@dataclass(frozen=True)
class OfdmConfig:
    """CP-free OFDM numerology (the 5-MHz default grid)."""

    fft_len: int = 512
    used_subcarriers: int = 300
    subcarrier_spacing: float = 15e3
    modulation: str = "qpsk"
    n_symbols: int = 24

    def __post_init__(self):
        if self.fft_len & (self.fft_len - 1) or self.fft_len <= 0:
            raise ValueError("fft_len must be a power of two")
        if not 0 < self.used_subcarriers < self.fft_len:
            raise ValueError("used_subcarriers must be positive and below fft_len")
        if self.used_subcarriers % 2:
            raise ValueError("used_subcarriers must be even (symmetric around DC)")
        if self.modulation != "qpsk":
            raise ValueError(f"unsupported modulation {self.modulation!r}")
        if self.n_symbols <= 0:
            raise ValueError("n_symbols must be positive")

    @property
    def sample_rate(self) -> float:
        return self.fft_len * self.subcarrier_spacing

    @property
    def occupied_bandwidth(self) -> float:
        return self.used_subcarriers * self.subcarrier_spacing


def gen_ofdm(cfg: OfdmConfig, seed: int, stream_key: tuple = ()) -> BasebandSignal:
    """Generate a CP-free OFDM stream with random QPSK payload.

    Subcarriers are centred around DC (DC itself unused).  The concatenated
    stream is normalized to exactly unit mean power.  Identical
    (cfg, seed, stream_key) produce bit-identical output.
    """
    rng = rng_for(seed, *stream_key)
    half = cfg.used_subcarriers // 2
    bins = np.concatenate([np.arange(1, half + 1), np.arange(cfg.fft_len - half, cfg.fft_len)])
    data = rng.integers(0, 4, size=(cfg.n_symbols, cfg.used_subcarriers))
    grid = np.zeros((cfg.n_symbols, cfg.fft_len), dtype=complex)
    grid[:, bins] = _QPSK[data]
    x = np.fft.ifft(grid, axis=1).reshape(-1)
    x /= np.sqrt(np.mean(np.abs(x) ** 2))
    return BasebandSignal(x, cfg.sample_rate)


@dataclass(frozen=True)
class PrecoderConfig:
    """Per-CC layer-to-chain mapping.

    `beams` is None for the identity mapping (one layer per chain) or a
    per-CC tuple of DFT beam indices, one per layer; the codebook is the
    n_chains-point DFT matrix with unit-norm columns.
    """

    beams: tuple | None = None


def dft_beam(n_chains: int, beam: int) -> np.ndarray:
    n = np.arange(n_chains)
    return np.exp(-2j * np.pi * beam * n / n_chains) / np.sqrt(n_chains)


def precode(layer_signals: Sequence[BasebandSignal], cfg: PrecoderConfig,
            n_chains: int, cc_index: int = 0) -> list[BasebandSignal]:
    """Map layer signals onto chain signals for one component carrier."""
    if len(layer_signals) > n_chains:
        raise ValueError("layer count exceeds chain count")
    if cfg.beams is None:
        if len(layer_signals) != n_chains:
            raise ValueError("identity precoding requires one layer per chain")
        return list(layer_signals)
    beams = cfg.beams[cc_index]
    if len(beams) != len(layer_signals):
        raise ValueError("one beam index required per layer")
    length = len(layer_signals[0])
    out = np.zeros((n_chains, length), dtype=complex)
    for sig, beam in zip(layer_signals, beams):
        if len(sig) != length:
            raise ValueError("layer signals must share a common length")
        out += np.outer(dft_beam(n_chains, beam), sig.samples)
    rate = layer_signals[0].sample_rate
    off = layer_signals[0].center_offset
    return [BasebandSignal(row, rate, off) for row in out]


@dataclass(frozen=True)
class CarrierPlan:
    """Carrier-aggregation plan: CC offsets/bandwidths and the RX band."""

    cc_offsets: tuple = (-23.75e6, 23.75e6)
    cc_bandwidths: tuple = (5e6, 5e6)
    oversample_factor: int = OVERSAMPLE
    rx_offset: float = -71.25e6
    rx_bandwidth: float = 5e6
    base_rate: float = BASE_RATE_HZ

    def __post_init__(self):
        if len(self.cc_offsets) != len(self.cc_bandwidths):
            raise ValueError("cc_offsets and cc_bandwidths must pair up")
        if self.oversample_factor < 1:
            raise ValueError("oversample_factor must be >= 1")
        nyq = 0.5 * self.rf_rate
        for off, bw in zip(self.cc_offsets, self.cc_bandwidths):
            if abs(off) + 0.5 * bw > nyq:
                raise ValueError(f"CC at {off/1e6:.2f} MHz exceeds the oversampled Nyquist band")
        if self.rx_bandwidth > self.rf_rate:
            raise ValueError("RX bandwidth exceeds the processing rate")

    @property
    def rf_rate(self) -> float:
        return self.base_rate * self.oversample_factor

    @property
    def n_cc(self) -> int:
        return len(self.cc_offsets)


def paper_carrier_plan() -> CarrierPlan:
    """The band-n3 plan; asserts the IMD-3 bookkeeping 2*f_low - f_high."""
    plan = CarrierPlan()
    lo, hi = plan.cc_offsets
    if 2 * lo - hi != plan.rx_offset:
        raise AssertionError("paper plan inconsistent: 2*f_low - f_high must equal the RX offset")
    return plan


def wrap_offset(offset: float, fs: float) -> float:
    """Map a frequency offset into (-fs/2, fs/2]."""
    w = (offset + 0.5 * fs) % fs - 0.5 * fs
    return w + fs if w <= -0.5 * fs else w


def frequency_shift(sig: BasebandSignal, offset: float) -> BasebandSignal:
    """Mix by exp(+j*2*pi*offset*t); the offset is modulo-fs by construction."""
    n = np.arange(len(sig))
    w = wrap_offset(offset, sig.sample_rate)
    return sig.with_samples(sig.samples * np.exp(2j * np.pi * w / sig.sample_rate * n))


def compose_rf(cc_signals: Sequence[Sequence[BasebandSignal]], plan: CarrierPlan) -> list[BasebandSignal]:
    """Upsample each CC by the oversampling factor, shift to its offset, sum.

    `cc_signals[c][n]` is chain n's baseband signal for component carrier c.
    Returns the per-chain composite at the RF rate, centred on the TX band
    centre (offset 0).
    """
    if len(cc_signals) != plan.n_cc:
        raise ValueError(f"expected {plan.n_cc} component carriers")
    n_chains = len(cc_signals[0])
    up = plan.oversample_factor
    out = None
    for c, per_chain in enumerate(cc_signals):
        if len(per_chain) != n_chains:
            raise ValueError("all CCs must provide the same chain count")
        for n, sig in enumerate(per_chain):
            if sig.sample_rate != plan.base_rate:
                raise ValueError("CC signals must be at the base rate")
            rf = sps.resample_poly(sig.samples, up, 1)
            shifted = frequency_shift(BasebandSignal(rf, plan.rf_rate), plan.cc_offsets[c])
            if out is None:
                out = np.zeros((n_chains, len(shifted)), dtype=complex)
            out[n] += shifted.samples
    return [BasebandSignal(row, plan.rf_rate) for row in out]


def extract_band(sig: BasebandSignal, offset: float, bw: float, out_rate: float) -> BasebandSignal:
    """Shift a band to DC, brick-wall low-pass it, and resample.

    The filter is an ideal FFT-domain gate at +-bw/2.  `offset` is taken
    modulo the sample rate (see the module docstring).  The returned signal's
    centre-offset metadata is the old offset plus `offset`.
    """
    if bw <= 0 or bw > sig.sample_rate:
        raise ValueError("band outside the Nyquist range")
    if bw > out_rate:
        raise ValueError("requested band exceeds the output Nyquist range")
    shifted = frequency_shift(sig, -offset)
    spec = np.fft.fft(shifted.samples)
    freqs = np.fft.fftfreq(len(spec), d=1.0 / sig.sample_rate)
    spec[np.abs(freqs) > 0.5 * bw] = 0.0
    x = np.fft.ifft(spec)
    if out_rate != sig.sample_rate:
        ratio = Fraction(out_rate / sig.sample_rate).limit_denominator(1 << 20)
        down, up = ratio.denominator, ratio.numerator
        if up == 1 and len(x) % down == 0:
            x = x[::down]
        else:
            x = sps.resample_poly(x, up, down)
    return BasebandSignal(x, out_rate, sig.center_offset + offset)


def awgn(n: int, power: float, seed: int, sample_rate: float = 1.0,
         center_offset: float = 0.0, stream_key: tuple = ()) -> BasebandSignal:
    """Circularly-symmetric complex white Gaussian noise of given variance."""
    if power < 0:
        raise ValueError("noise power must be non-negative")
    rng = rng_for(seed, *stream_key)
    x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(power / 2.0)
    return BasebandSignal(x, sample_rate, center_offset)


def psd(sig: BasebandSignal, nfft: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Welch PSD (Hann, 50% overlap), as power per bin.

    Returns (freqs, p) with freqs fftshifted and relative to the signal's own
    centre; sum(p) equals the signal's mean power up to window-edge effects.
    """
    if nfft > len(sig):
        raise ValueError("nfft exceeds the signal length")
    freqs, pxx = sps.welch(
        sig.samples,
        fs=sig.sample_rate,
        window="hann",
        nperseg=nfft,
        noverlap=nfft // 2,
        detrend=False,
        return_onesided=False,
        scaling="density",
    )
    p = pxx * sig.sample_rate / nfft
    return np.fft.fftshift(freqs), np.fft.fftshift(p)
