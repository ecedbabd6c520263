"""The external-PIM generation pipeline.

For every hypothesized point source: couple all TX chains to the source
location per frequency bin (forward link), distort the induced voltage with
the source's memory polynomial, couple the distortion back into every RX
chain at the RX-band frequencies (backward link, lower in frequency than the
forward one), band-limit with the ideal duplexer, and set the level relative
to the thermal noise floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import emcore
from .constants import TX_CENTER_HZ
from .gmp import GmpModel, apply_gmp
from .waveform import (
    BasebandSignal,
    CarrierPlan,
    OfdmConfig,
    PrecoderConfig,
    awgn,
    compose_rf,
    extract_band,
    frequency_shift,
    gen_ofdm,
    precode,
    rng_for,
    wrap_offset,
)

MIN_LEVEL_DB = -100.0


class CouplingModes:
    PER_BIN = "per-bin"
    FLAT = "flat"
    WHOLE = "whole"


@dataclass(frozen=True)
class PimSource:
    """A polarized nonlinear point scatterer."""

    position: np.ndarray
    orientation: np.ndarray
    gmp: GmpModel
    level_over_noise: float = 15.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("source position must be finite")
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        p = np.asarray(self.orientation, dtype=float).reshape(3)
        if np.all(np.isnan(p)):
            pass   # sentinel: orientation drawn from the scenario seed at run time
        elif abs(np.linalg.norm(p) - 1.0) > 1e-9:
            raise ValueError("source orientation must be a unit vector")
        p.flags.writeable = False
        object.__setattr__(self, "orientation", p)
        if self.level_over_noise < MIN_LEVEL_DB:
            raise ValueError(f"level_over_noise below {MIN_LEVEL_DB} dB rejected")


@dataclass(frozen=True)
class PimScenario:
    """Everything needed to synthesize one TX/RX capture."""

    layout: emcore.ArrayLayout
    plan: CarrierPlan
    sources: tuple
    noise_power: float = 1.0
    seed: int = 0
    train_len: int = 131072
    test_len: int = 65536
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    precoder: PrecoderConfig = field(default_factory=PrecoderConfig)
    coupling_mode: str = CouplingModes.PER_BIN
    channel_block: int = 512

    def __post_init__(self):
        if not self.sources:
            raise ValueError("a scenario needs at least one PIM source")
        if self.train_len <= 0 or self.test_len <= 0:
            raise ValueError("train/test lengths must be positive")
        if self.noise_power <= 0:
            raise ValueError("noise power must be positive")
        if self.channel_block & (self.channel_block - 1):
            raise ValueError("channel_block must be a power of two")
        object.__setattr__(self, "sources", tuple(self.sources))

    @property
    def capture_len(self) -> int:
        return self.train_len + self.test_len


@dataclass(frozen=True)
class SimOutput:
    """All pipeline products of one scenario run.

    rx = clean_pim + noise holds sample-wise; `source_scales` are the
    per-source normalization factors (clean_pim divided by them recovers the
    raw physical levels, which is what the superposition tests compare).
    """

    tx_chains: list
    rx_chains: list
    clean_pim_rx: list
    noise: list
    source_scales: tuple
    scenario: PimScenario


# ---------------------------------------------------------------------------
# per-bin channel application


def overlap_save_fir(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Causal linear convolution via overlap-save block FFTs (full length)."""
    L = taps.size
    nfft = 1 << int(np.ceil(np.log2(2 * L)))
    step = nfft - L + 1
    H = np.fft.fft(taps, nfft)
    out_len = x.size + L - 1
    xpad = np.concatenate([np.zeros(L - 1, dtype=complex), x,
                           np.zeros(nfft, dtype=complex)])
    out = np.empty(out_len + step, dtype=complex)
    for pos in range(0, out_len, step):
        seg = np.fft.ifft(np.fft.fft(xpad[pos:pos + nfft]) * H)
        out[pos:pos + step] = seg[L - 1:]
    return out[:out_len]


def apply_bin_channel(x: np.ndarray, h_bins: np.ndarray) -> np.ndarray:
    """Apply a frequency response sampled on a block-FFT bin grid.

    The response (h_bins[b] at frequency fftfreq(n)[b]) is turned into its
    centered impulse response and applied by overlap-save convolution, i.e.
    per-bin multiplication with implicit interpolation between bins.  Output
    has the input's length; the first and last n/2 samples see zero history.
    """
    n = h_bins.size
    if n % 2:
        raise ValueError("bin grid must have even length")
    ir = np.fft.fftshift(np.fft.ifft(h_bins))      # taps for delays -n/2 .. n/2-1
    full = overlap_save_fir(x, ir)
    return full[n // 2: n // 2 + x.size]


def _bin_freqs(n: int, fs: float, center: float) -> np.ndarray:
    return center + np.fft.fftfreq(n, d=1.0 / fs)


def _flatten_bins(h_exact: np.ndarray, freqs: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Piecewise-flat response: every bin takes the value at the nearest centre."""
    idx = np.argmin(np.abs(freqs[None, :] - centers[:, None]), axis=0)
    return h_exact[:, idx] if h_exact.ndim == 2 else h_exact[idx]


def tx_coupling_bins(layout, source: PimSource, plan: CarrierPlan,
                     n_bins: int, mode: str = CouplingModes.PER_BIN) -> np.ndarray:
    """Forward-link coupling per chain on the TX-centred bin grid, (n_chains, n_bins)."""
    freqs = _bin_freqs(n_bins, plan.rf_rate, TX_CENTER_HZ)
    if mode == CouplingModes.FLAT:
        centers = TX_CENTER_HZ + np.asarray(plan.cc_offsets)
        h = emcore.coupling_matrix(layout, source.position, source.orientation, centers)
        return _flatten_bins(h, freqs, centers)
    return emcore.coupling_matrix(layout, source.position, source.orientation, freqs)


def rx_coupling_bins(layout, source: PimSource, plan: CarrierPlan,
                     n_bins: int, mode: str = CouplingModes.PER_BIN) -> np.ndarray:
    """Backward-link coupling per chain on the RX-centred bin grid."""
    rx_center = TX_CENTER_HZ + plan.rx_offset
    if mode == CouplingModes.FLAT:
        h = emcore.coupling_matrix(layout, source.position, source.orientation,
                                   np.array([rx_center]))
        return np.repeat(h, n_bins, axis=1)
    freqs = _bin_freqs(n_bins, plan.rf_rate, rx_center)
    return emcore.coupling_matrix(layout, source.position, source.orientation, freqs)


def flat_coupling_table(layout, source: PimSource, plan: CarrierPlan) -> np.ndarray:
    """Per-chain, per-CC forward couplings at the CC centres, (n_chains, n_cc)."""
    centers = TX_CENTER_HZ + np.asarray(plan.cc_offsets)
    return emcore.coupling_matrix(layout, source.position, source.orientation, centers)


def excitation(tx_chains, layout, source: PimSource, plan: CarrierPlan,
               mode: str = CouplingModes.PER_BIN, block: int = 512,
               coupling: np.ndarray | None = None) -> BasebandSignal:
    """Induced voltage at the source: per-bin coupled sum over all TX chains.

    `coupling` overrides the physical couplings with an explicit
    (n_chains, block) bin table — the hook the channel-application tests use.
    """
    rates = {s.sample_rate for s in tx_chains}
    lengths = {len(s) for s in tx_chains}
    if len(rates) != 1 or len(lengths) != 1:
        raise ValueError("TX chains must share one rate and one length")
    if mode == CouplingModes.WHOLE:
        return _excitation_whole(tx_chains, layout, source, plan)
    if coupling is None:
        coupling = tx_coupling_bins(layout, source, plan, block, mode)
    acc = np.zeros(lengths.pop(), dtype=complex)
    for n, sig in enumerate(tx_chains):
        acc += apply_bin_channel(sig.samples, coupling[n])
    return BasebandSignal(acc, rates.pop(), 0.0)


def _excitation_whole(tx_chains, layout, source, plan) -> BasebandSignal:
    """Whole-signal-DFT cross-validation path: exact coupling at every bin."""
    n = len(tx_chains[0])
    freqs = _bin_freqs(n, plan.rf_rate, TX_CENTER_HZ)
    h = emcore.coupling_matrix(layout, source.position, source.orientation, freqs)
    acc = np.zeros(n, dtype=complex)
    for i, sig in enumerate(tx_chains):
        acc += np.fft.ifft(np.fft.fft(sig.samples) * h[i])
    return BasebandSignal(acc, plan.rf_rate, 0.0)


def backpropagate(u_pim: BasebandSignal, layout, source: PimSource, plan: CarrierPlan,
                  mode: str = CouplingModes.PER_BIN, block: int = 512,
                  coupling: np.ndarray | None = None) -> list[BasebandSignal]:
    """Couple the distorted voltage back into every RX chain's band.

    The distorted stream is re-centred on the RX band (the IMD-3 offset,
    modulo the processing rate), multiplied per bin by the backward coupling
    evaluated at the RX-band absolute frequencies, and brick-wall limited to
    the duplexer RX bandwidth.  Output stays at the processing rate.
    """
    recentred = frequency_shift(u_pim, -plan.rx_offset)
    if mode == CouplingModes.WHOLE:
        n = len(recentred)
        freqs = _bin_freqs(n, plan.rf_rate, TX_CENTER_HZ + plan.rx_offset)
        h = emcore.coupling_matrix(layout, source.position, source.orientation, freqs)
        spec = np.fft.fft(recentred.samples)
        chans = [np.fft.ifft(spec * h[r]) for r in range(layout.n_chains)]
    else:
        if coupling is None:
            coupling = rx_coupling_bins(layout, source, plan, block, mode)
        chans = [apply_bin_channel(recentred.samples, coupling[r])
                 for r in range(coupling.shape[0])]
    out = []
    for ch in chans:
        sig = BasebandSignal(ch, plan.rf_rate, plan.rx_offset)
        out.append(extract_band(sig, 0.0, plan.rx_bandwidth, plan.rf_rate))
    return out


def normalize_pim(signals, noise_power: float, target_db: float):
    """Scale a set of RX-chain signals so their mean power sits target_db over the noise.

    One real scale factor for the whole set: inter-chain ratios and phases
    are untouched.  Returns (scaled signals, scale factor).
    """
    if target_db < MIN_LEVEL_DB:
        raise ValueError(f"target level below {MIN_LEVEL_DB} dB rejected")
    mean_power = float(np.mean([s.power for s in signals]))
    if mean_power == 0.0:
        raise ValueError("cannot normalize an all-zero PIM signal set")
    scale = float(np.sqrt(noise_power * 10.0 ** (target_db / 10.0) / mean_power))
    return [s.with_samples(s.samples * scale) for s in signals], scale


def propagate_source(tx_chains, layout, source: PimSource, plan: CarrierPlan,
                     mode: str = CouplingModes.PER_BIN, block: int = 512) -> list[BasebandSignal]:
    """Forward coupling -> GMP distortion -> backward coupling, unnormalized."""
    u_eff = excitation(tx_chains, layout, source, plan, mode, block)
    u_pim = u_eff.with_samples(apply_gmp(source.gmp, u_eff.samples))
    return backpropagate(u_pim, layout, source, plan, mode, block)


def generate_tx(scenario: PimScenario, n_extra: int = 0) -> list[BasebandSignal]:
    """Per-chain RF-rate TX signals for a scenario (plus optional extra samples)."""
    plan = scenario.plan
    need_rf = scenario.capture_len + n_extra
    base_len = -(-need_rf // plan.oversample_factor)
    n_symbols = -(-base_len // scenario.ofdm.fft_len)
    cfg = OfdmConfig(
        fft_len=scenario.ofdm.fft_len,
        used_subcarriers=scenario.ofdm.used_subcarriers,
        subcarrier_spacing=scenario.ofdm.subcarrier_spacing,
        modulation=scenario.ofdm.modulation,
        n_symbols=n_symbols,
    )
    n_layers = scenario.layout.n_chains
    cc_chain_signals = []
    for c in range(plan.n_cc):
        layers = [gen_ofdm(cfg, scenario.seed, stream_key=(0, c, lay))
                  for lay in range(n_layers)]
        cc_chain_signals.append(precode(layers, scenario.precoder, n_layers, c))
    tx = compose_rf(cc_chain_signals, plan)
    return [s.trimmed(0, need_rf) for s in tx]


def run_scenario(scenario: PimScenario) -> SimOutput:
    """The five-step pipeline: precoded TX, per-source forward coupling,
    nonlinear distortion, backward propagation, noise-relative leveling and
    thermal noise.

    A guard interval of one channel block is generated at each end and
    trimmed before normalization, so the delivered train+test window contains
    no zero-history edge transients.
    """
    guard = scenario.channel_block
    tx_full = generate_tx(scenario, n_extra=2 * guard)
    lo, hi = guard, guard + scenario.capture_len

    clean = None
    scales = []
    for s_idx, source in enumerate(scenario.sources):
        src = _resolve_orientation(source, scenario.seed, s_idx)
        chans = propagate_source(tx_full, scenario.layout, src, scenario.plan,
                                 scenario.coupling_mode, scenario.channel_block)
        chans = [c.trimmed(lo, hi) for c in chans]
        chans, scale = normalize_pim(chans, scenario.noise_power, src.level_over_noise)
        scales.append(scale)
        if clean is None:
            clean = chans
        else:
            clean = [a + b for a, b in zip(clean, chans)]

    rx_rate = clean[0].sample_rate
    noise = [awgn(len(clean[0]), scenario.noise_power, scenario.seed,
                  sample_rate=rx_rate, center_offset=scenario.plan.rx_offset,
                  stream_key=(1, r))
             for r in range(len(clean))]
    rx = [c + n for c, n in zip(clean, noise)]
    tx_out = [s.trimmed(lo, hi) for s in tx_full]
    return SimOutput(tx_out, rx, clean, noise, tuple(scales), scenario)


def _resolve_orientation(source: PimSource, seed: int, index: int) -> PimSource:
    """Draw a uniform random orientation for sources declared without one."""
    if np.all(np.isfinite(source.orientation)):
        return source
    rng = rng_for(seed, 2, index)
    p = rng.standard_normal(3)
    p /= np.linalg.norm(p)
    return PimSource(source.position, p, source.gmp, source.level_over_noise)


def random_orientation_placeholder() -> np.ndarray:
    """Sentinel orientation meaning 'draw one from the scenario seed'."""
    return np.array([np.nan, np.nan, np.nan])
