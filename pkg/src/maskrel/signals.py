"""Deterministic DSP primitives and the digital level convention.

All operations are pure functions: they take finite signals, process them
from zero initial filter state, and return new signals. Randomness only
enters through an explicitly passed ``numpy.random.Generator``.

Level convention: a sine with RMS 1.0 sits at ``REFERENCE_LEVEL_DB``
(100 dB SPL). Every level in the package is relative to that anchor, so
absolute calibration of playback hardware is the operator's problem.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numba
import numpy as np
from scipy import signal as sps

REFERENCE_LEVEL_DB = 100.0

# Decay parameter of a 4th-order gammatone relative to the target ERB:
# the cascade of four one-pole sections is narrower than each section, so
# the per-section bandwidth must be scaled up for the overall filter's
# equivalent rectangular bandwidth to land on the requested value.
GAMMATONE_BANDWIDTH_FACTOR = 1.0186


class SignalError(ValueError):
    """Invalid signal parameter or precondition violation."""


@dataclass
class MonoSignal:
    """Single-channel sampled waveform (dimensionless pressure units)."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise SignalError("samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise SignalError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("samples contain NaN or Inf")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.square(self.samples))))


@dataclass
class StereoSignal:
    """Two-channel waveform; both channels share length and sample rate."""

    left: MonoSignal
    right: MonoSignal

    def __post_init__(self) -> None:
        if len(self.left) != len(self.right):
            raise SignalError("left/right length mismatch")
        if self.left.sample_rate != self.right.sample_rate:
            raise SignalError("left/right sample-rate mismatch")

    @property
    def sample_rate(self) -> float:
        return self.left.sample_rate

    def __len__(self) -> int:
        return len(self.left)

    @property
    def duration(self) -> float:
        return self.left.duration

    def is_diotic(self) -> bool:
        """True when both channels carry identical samples."""
        if self.left.samples is self.right.samples:
            return True
        return bool(np.array_equal(self.left.samples, self.right.samples))


def level_to_amplitude(level_db: float) -> float:
    """Peak amplitude of a sine at `level_db` under the 100-dB convention."""
    if not np.isfinite(level_db):
        raise SignalError(f"level must be finite, got {level_db}")
    return float(np.sqrt(2.0) * 10.0 ** ((level_db - REFERENCE_LEVEL_DB) / 20.0))


def level_to_rms(level_db: float) -> float:
    """RMS value corresponding to `level_db`."""
    if not np.isfinite(level_db):
        raise SignalError(f"level must be finite, got {level_db}")
    return float(10.0 ** ((level_db - REFERENCE_LEVEL_DB) / 20.0))


def rms_to_level(rms: float) -> float:
    """Level in dB of a signal with the given RMS (inverse of level_to_rms)."""
    if not rms > 0:
        raise SignalError(f"rms must be positive, got {rms}")
    return float(REFERENCE_LEVEL_DB + 20.0 * np.log10(rms))


def hann_gate(sig: MonoSignal, ramp: float) -> MonoSignal:
    """Apply raised-cosine on/off ramps of `ramp` seconds to a signal.

    The first and last `ramp` seconds are shaped by the rising/falling
    halves of a Hann window; the middle is untouched; both endpoints are
    exactly zero. ``ramp=0`` is the identity.
    """
    if ramp < 0:
        raise SignalError("ramp must be >= 0")
    n_ramp = int(round(ramp * sig.sample_rate))
    if n_ramp == 0:
        return MonoSignal(sig.samples.copy(), sig.sample_rate)
    if 2 * n_ramp > len(sig):
        raise SignalError(
            f"ramp of {n_ramp} samples too long for {len(sig)}-sample signal"
        )
    window = 0.5 * (1.0 - np.cos(np.pi * np.arange(n_ramp) / n_ramp))
    out = sig.samples.copy()
    out[:n_ramp] *= window
    out[len(out) - n_ramp:] *= window[::-1]
    return MonoSignal(out, sig.sample_rate)


@functools.lru_cache(maxsize=32)
def _butter_sos(cutoff: float, order: int, sample_rate: float) -> np.ndarray:
    return sps.butter(order, cutoff, btype="low", fs=sample_rate, output="sos")


def butterworth_lowpass(sig: MonoSignal, cutoff: float, order: int) -> MonoSignal:
    """Butterworth lowpass from zero state; -3 dB at `cutoff`, DC gain 1."""
    if not 0 < cutoff < sig.sample_rate / 2:
        raise SignalError(f"cutoff {cutoff} Hz outside (0, Nyquist)")
    if order not in (4, 5):
        raise SignalError(f"unsupported filter order {order}")
    sos = _butter_sos(cutoff, order, sig.sample_rate)
    return MonoSignal(sps.sosfilt(sos, sig.samples), sig.sample_rate)


@functools.lru_cache(maxsize=32)
def _gammatone_design(
    fc: float, bandwidth: float, order: int, sample_rate: float
) -> tuple[complex, float]:
    """Pole and output gain of the complex one-pole gammatone cascade."""
    decay_hz = GAMMATONE_BANDWIDTH_FACTOR * bandwidth
    lam = np.exp(-2.0 * np.pi * decay_hz / sample_rate)
    pole = lam * np.exp(2j * np.pi * fc / sample_rate)
    # factor 2 recovers unity gain for a real on-frequency sine (the
    # complex cascade only passes the positive-frequency component)
    gain = 2.0 * (1.0 - lam) ** order
    return complex(pole), float(gain)


@numba.njit(cache=True)
def _one_pole_cascade4(x: np.ndarray, pole: complex, gain: float) -> np.ndarray:
    out = np.empty(x.shape[0])
    s1 = s2 = s3 = s4 = 0.0 + 0.0j
    for i in range(x.shape[0]):
        s1 = x[i] + pole * s1
        s2 = s1 + pole * s2
        s3 = s2 + pole * s3
        s4 = s3 + pole * s4
        out[i] = gain * s4.real
    return out


def gammatone_bandpass(
    sig: MonoSignal, fc: float, bandwidth: float, order: int = 4
) -> MonoSignal:
    """Real-valued gammatone bandpass, peak-normalized to 0 dB at `fc`.

    Implemented as a cascade of `order` recursive complex one-pole
    sections; the real part is returned. The per-section decay is chosen
    so the cascade's own equivalent rectangular bandwidth equals
    `bandwidth`.
    """
    if order != 4:
        raise SignalError(f"gammatone order must be 4, got {order}")
    if not 0 < fc < sig.sample_rate / 2:
        raise SignalError(f"center frequency {fc} Hz outside (0, Nyquist)")
    if not bandwidth > 0:
        raise SignalError("bandwidth must be positive")
    pole, gain = _gammatone_design(fc, bandwidth, order, sig.sample_rate)
    return MonoSignal(_one_pole_cascade4(sig.samples, pole, gain), sig.sample_rate)


def erb_bandwidth(frequency: float) -> float:
    """Glasberg & Moore equivalent rectangular bandwidth at `frequency`."""
    return 24.7 * (4.37 * frequency / 1000.0 + 1.0)


def downsample(sig: MonoSignal, target_rate: float) -> MonoSignal:
    """Integer decimation by keeping every (rate/target)-th sample.

    The caller guarantees prior band-limiting; no anti-alias filter is
    applied here.
    """
    if not target_rate > 0:
        raise SignalError("target_rate must be positive")
    ratio = sig.sample_rate / target_rate
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise SignalError(
            f"sample rate {sig.sample_rate} not an integer multiple of {target_rate}"
        )
    if factor == 1:
        return MonoSignal(sig.samples.copy(), sig.sample_rate)
    n_keep = len(sig) // factor
    return MonoSignal(sig.samples[: n_keep * factor : factor].copy(), target_rate)


def gaussian_noise(
    n: int, sigma: float, rng: np.random.Generator, sample_rate: float
) -> MonoSignal:
    """I.i.d. zero-mean normal samples with std `sigma`."""
    if sigma < 0:
        raise SignalError("sigma must be >= 0")
    return MonoSignal(rng.normal(0.0, sigma, n), sample_rate)
