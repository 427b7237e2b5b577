"""Single-channel auditory model: periphery, modulation and binaural stages.

The periphery is a real 4th-order gammatone at the target frequency
(one ERB wide), half-wave rectification and a 5th-order 770-Hz lowpass.
Envelope processing downsamples to 2 kHz, removes the segment mean and
applies a single first-order complex resonator (Q = 2) whose center
frequency is 40 Hz in harmonic conditions and 20 Hz in mistuned ones.

Two pathways feed the decision stage:

* monaural: |env(left)| + |env(right)|
* binaural: an equalization-cancellation style left-minus-right
  difference, with the modulation filter placed before, after, or
  nowhere in the chain depending on the configured order.

The decision variable is the energy of the (noise-corrupted) pathway
output over the central half of the interval.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .signals import (
    MonoSignal,
    SignalError,
    StereoSignal,
    butterworth_lowpass,
    downsample,
    erb_bandwidth,
    gammatone_bandpass,
)

MODULATION_RATE_HZ = 2000.0
MODULATION_Q = 2.0
PERIPHERAL_LOWPASS_HZ = 770.0
PERIPHERAL_LOWPASS_ORDER = 5


class PathwayOrder(enum.Enum):
    """Placement of the modulation filter in the binaural pathway."""

    BINAURAL_THEN_MOD = "binaural-then-mod"
    MOD_THEN_BINAURAL = "mod-then-binaural"
    NO_MOD_IN_BINAURAL = "no-mod-in-binaural"


@dataclass(frozen=True)
class PathwayConfig:
    """Processing order plus the internal-noise standard deviations."""

    order: PathwayOrder
    sigma_m: float = 0.0
    sigma_b: float = 0.0
    mod_freq_harmonic: float = 40.0
    mod_freq_mistuned: float = 20.0

    def __post_init__(self) -> None:
        if self.sigma_m < 0 or self.sigma_b < 0:
            raise ValueError("internal-noise sigmas must be >= 0")
        if self.mod_freq_harmonic <= 0 or self.mod_freq_mistuned <= 0:
            raise ValueError("modulation frequencies must be positive")

    def mod_freq(self, mistuned: bool) -> float:
        return self.mod_freq_mistuned if mistuned else self.mod_freq_harmonic


@dataclass
class InternalSignal:
    """Complex-valued internal representation after envelope filtering."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("internal signal contains NaN or Inf")

    def __len__(self) -> int:
        return len(self.samples)


def _peripheral_channel(ch: MonoSignal, center_freq: float) -> MonoSignal:
    band = gammatone_bandpass(ch, center_freq, erb_bandwidth(center_freq))
    rectified = MonoSignal(np.maximum(band.samples, 0.0), band.sample_rate)
    return butterworth_lowpass(
        rectified, PERIPHERAL_LOWPASS_HZ, PERIPHERAL_LOWPASS_ORDER
    )


def peripheral(stimulus: StereoSignal, center_freq: float = 800.0) -> StereoSignal:
    """Gammatone -> half-wave rectification -> 770-Hz lowpass, per ear.

    Identical channels are processed once and shared, which keeps the
    diotic case bit-exact (and fast).
    """
    left = _peripheral_channel(stimulus.left, center_freq)
    if stimulus.left.samples is stimulus.right.samples:
        return StereoSignal(left, left)
    right = _peripheral_channel(stimulus.right, center_freq)
    return StereoSignal(left, right)


def _resonator_coeffs(mod_freq: float, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    w0 = 2.0 * np.pi * mod_freq / sample_rate
    e0 = np.exp(-w0 / (2.0 * MODULATION_Q))
    b = np.array([1.0 - e0], dtype=np.complex128)
    a = np.array([1.0, -e0 * np.exp(1j * w0)], dtype=np.complex128)
    return b, a


def resonator_gain(mod_freq: float, probe_freq: float,
                   sample_rate: float = MODULATION_RATE_HZ) -> float:
    """Magnitude response of the modulation resonator at `probe_freq`."""
    b, a = _resonator_coeffs(mod_freq, sample_rate)
    z = np.exp(2j * np.pi * probe_freq / sample_rate)
    return float(abs(b[0] / (a[0] + a[1] / z)))


def envelope_extract(channel: MonoSignal, mod_freq: float) -> InternalSignal:
    """Downsample to 2 kHz, remove the segment mean, apply the resonator.

    The resonator is a first-order complex one-pole with Q = 2 and unit
    peak gain at `mod_freq`; its complex output is returned.
    """
    if mod_freq >= MODULATION_RATE_HZ / 2:
        raise SignalError(f"modulation frequency {mod_freq} Hz above Nyquist")
    low = downsample(channel, MODULATION_RATE_HZ)
    x = low.samples - np.mean(low.samples)
    b, a = _resonator_coeffs(mod_freq, MODULATION_RATE_HZ)
    return InternalSignal(sps.lfilter(b, a, x), MODULATION_RATE_HZ)


def monaural_pathway(
    internal: StereoSignal, cond_is_mistuned: bool, cfg: PathwayConfig
) -> MonoSignal:
    """Sum of left and right envelope magnitudes at the modulation rate."""
    mf = cfg.mod_freq(cond_is_mistuned)
    left = np.abs(envelope_extract(internal.left, mf).samples)
    if internal.left.samples is internal.right.samples:
        return MonoSignal(2.0 * left, MODULATION_RATE_HZ)
    right = np.abs(envelope_extract(internal.right, mf).samples)
    return MonoSignal(left + right, MODULATION_RATE_HZ)


def binaural_pathway(
    internal: StereoSignal, cond_is_mistuned: bool, cfg: PathwayConfig
) -> MonoSignal:
    """Left-minus-right cancellation with order-dependent envelope filtering.

    The magnitude is always taken at the pathway's end, so the filtered
    variants difference complex internal signals; cancelling before or
    after the (linear) envelope filter is then algebraically the same
    operation, and the configurations remain distinct surfaces with
    separately fitted noise. A diotic input nulls exactly in every
    configuration: identical channels subtract to zero before any noise
    is injected.
    """
    mf = cfg.mod_freq(cond_is_mistuned)
    if cfg.order is PathwayOrder.BINAURAL_THEN_MOD:
        diff = MonoSignal(
            internal.left.samples - internal.right.samples, internal.sample_rate
        )
        return MonoSignal(
            np.abs(envelope_extract(diff, mf).samples), MODULATION_RATE_HZ
        )
    if cfg.order is PathwayOrder.MOD_THEN_BINAURAL:
        left = envelope_extract(internal.left, mf).samples
        right = envelope_extract(internal.right, mf).samples
        return MonoSignal(np.abs(left - right), MODULATION_RATE_HZ)
    diff = MonoSignal(
        internal.left.samples - internal.right.samples, internal.sample_rate
    )
    low = downsample(diff, MODULATION_RATE_HZ)
    return MonoSignal(np.abs(low.samples), MODULATION_RATE_HZ)


def analysis_window(n: int) -> slice:
    """Central 50% of an `n`-sample interval."""
    start = n // 4
    return slice(start, start + n // 2)


def decision_energy(
    pathway_out: MonoSignal, sigma: float, rng: np.random.Generator
) -> float:
    """Energy of the noise-corrupted pathway output over the central half.

    Noise samples are drawn i.i.d. N(0, sigma) at the pathway's own rate
    and added to the output time series before squaring and summing.
    No draws are made when sigma == 0.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    window = pathway_out.samples[analysis_window(len(pathway_out))]
    if sigma > 0:
        window = window + rng.normal(0.0, sigma, len(window))
    return float(np.sum(np.square(window)))


def pathway_output(
    stimulus: StereoSignal,
    use_binaural: bool,
    cond_is_mistuned: bool,
    cfg: PathwayConfig,
    center_freq: float = 800.0,
) -> MonoSignal:
    """Peripheral stage plus the selected pathway, as one call."""
    internal = peripheral(stimulus, center_freq)
    if use_binaural:
        return binaural_pathway(internal, cond_is_mistuned, cfg)
    return monaural_pathway(internal, cond_is_mistuned, cfg)


def stage_dump(
    stimulus: StereoSignal,
    cond_is_mistuned: bool,
    cfg: PathwayConfig,
    center_freq: float = 800.0,
) -> dict[str, tuple[float, np.ndarray]]:
    """Every stage's output as name -> (sample_rate, real samples)."""
    internal = peripheral(stimulus, center_freq)
    mon = monaural_pathway(internal, cond_is_mistuned, cfg)
    binaural = binaural_pathway(internal, cond_is_mistuned, cfg)
    mf = cfg.mod_freq(cond_is_mistuned)
    return {
        "input_left": (stimulus.sample_rate, stimulus.left.samples),
        "input_right": (stimulus.sample_rate, stimulus.right.samples),
        "peripheral_left": (internal.sample_rate, internal.left.samples),
        "peripheral_right": (internal.sample_rate, internal.right.samples),
        "envelope_left_mag": (
            MODULATION_RATE_HZ,
            np.abs(envelope_extract(internal.left, mf).samples),
        ),
        "monaural_out": (mon.sample_rate, mon.samples),
        "binaural_out": (binaural.sample_rate, binaural.samples),
    }
