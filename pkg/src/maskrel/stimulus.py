"""Trial stimulus synthesis: complex-tone maskers, target tone, noise.

A condition is defined by the masker's nominal fundamental, a mistuning
percentage applied to that fundamental, the component count, and the
target tone's frequency, interaural phase difference and level. The
masker is always diotic; an antiphasic target is made by adding pi to
the right-channel target phase before the masker is added.

Trials are three 400-ms intervals: a reference (masker only) and two
comparisons, one of which carries the target. All random phases are
drawn eagerly when the trial is assembled so that the waveforms are a
pure function of the drawn values; synthesis itself is lazy because the
simulated observer never listens to the reference interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .signals import (
    MonoSignal,
    StereoSignal,
    butterworth_lowpass,
    hann_gate,
    level_to_amplitude,
    level_to_rms,
)

BACKGROUND_NOISE_LEVEL_DB = 45.0
BACKGROUND_NOISE_CUTOFF_HZ = 380.0
BACKGROUND_NOISE_ORDER = 4


class ConditionError(ValueError):
    """Stimulus condition violates its invariants."""


@dataclass(frozen=True)
class ConditionSpec:
    """One stimulus condition.

    `mistuning` is a percentage applied multiplicatively to `f0`; the
    target frequency must sit on a harmonic slot of the *nominal* f0 and
    that slot is never synthesized as a masker component.
    """

    f0: float
    mistuning: float
    n_components: int
    target_freq: float
    target_ipd: float
    masker_level: float = 65.0
    duration: float = 0.4
    ramp: float = 0.025
    sample_rate: float = 48000.0
    # per-interval uncorrelated low-pass noise; off for model runs (the
    # noise guards human ears against distortion products the model
    # does not have), on for stimuli that reach listeners
    include_background_noise: bool = False

    def __post_init__(self) -> None:
        if self.f0 <= 0 or self.target_freq <= 0:
            raise ConditionError("frequencies must be positive")
        if self.mistuning < 0:
            raise ConditionError("mistuning must be >= 0")
        if self.n_components < 2 or self.n_components % 2 != 0:
            raise ConditionError(
                f"n_components must be even and >= 2, got {self.n_components}"
            )
        ratio = self.target_freq / self.f0
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConditionError(
                f"target frequency {self.target_freq} is not a harmonic of f0={self.f0}"
            )
        if self.n_components // 2 >= round(ratio):
            raise ConditionError("not enough harmonic slots below the target")
        if 2 * self.ramp > self.duration:
            raise ConditionError("gating ramps longer than the interval")
        # fail early if the highest component would alias
        component_frequencies(self)

    @property
    def target_harmonic(self) -> int:
        return int(round(self.target_freq / self.f0))

    @property
    def is_mistuned(self) -> bool:
        return self.mistuning > 0

    @property
    def is_dichotic(self) -> bool:
        return self.target_ipd != 0

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


def component_frequencies(spec: ConditionSpec) -> np.ndarray:
    """Masker component frequencies in Hz, ascending.

    Takes the n/2 harmonic numbers directly below and above the target's
    harmonic number (the target slot itself is excluded) and scales each
    by ``f0 * (1 + mistuning/100)``.
    """
    half = spec.n_components // 2
    center = int(round(spec.target_freq / spec.f0))
    numbers = np.r_[
        np.arange(center - half, center), np.arange(center + 1, center + half + 1)
    ]
    if numbers[0] < 1:
        raise ConditionError("harmonic numbers below 1")
    freqs = numbers * (spec.f0 * (1.0 + spec.mistuning / 100.0))
    if freqs[-1] >= spec.sample_rate / 2:
        raise ConditionError(
            f"component at {freqs[-1]:.1f} Hz reaches Nyquist "
            f"({spec.sample_rate / 2:.0f} Hz)"
        )
    return freqs


@numba.njit(cache=True)
def _sum_of_sines(
    freqs: np.ndarray, phases: np.ndarray, amp: float, n: int, dt: float
) -> np.ndarray:
    # per-component Chebyshev recurrence sin((i+1)w+p) = 2cos(w)sin(iw+p)-sin((i-1)w+p);
    # drift over 10^4-sample intervals stays below 1e-12 of the amplitude
    out = np.zeros(n)
    for k in range(freqs.shape[0]):
        w = 2.0 * np.pi * freqs[k] * dt
        c = 2.0 * np.cos(w)
        s0 = np.sin(phases[k])
        s1 = np.sin(w + phases[k])
        out[0] += s0
        out[1] += s1
        for i in range(2, n):
            s2 = c * s1 - s0
            out[i] += s2
            s0 = s1
            s1 = s2
    return amp * out


def _tone(freq: float, phase: float, amp: float, n: int, dt: float) -> np.ndarray:
    return _sum_of_sines(
        np.array([freq]), np.array([phase]), amp, n, dt
    )


def build_masker(spec: ConditionSpec, phases: np.ndarray) -> StereoSignal:
    """Equal-amplitude component sum, identical on both channels, gated.

    Component amplitudes are set so the ungated sum's total RMS matches
    `masker_level` (equal power split across components).
    """
    freqs = component_frequencies(spec)
    phases = np.asarray(phases, dtype=np.float64)
    if phases.shape != freqs.shape:
        raise ConditionError(
            f"expected {len(freqs)} phases, got {phases.shape}"
        )
    amp = level_to_amplitude(spec.masker_level) / math.sqrt(spec.n_components)
    mono = _sum_of_sines(freqs, phases, amp, spec.n_samples, 1.0 / spec.sample_rate)
    gated = hann_gate(MonoSignal(mono, spec.sample_rate), spec.ramp)
    return StereoSignal(gated, gated)  # shared array: diotic by construction


def build_target(spec: ConditionSpec, level: float, phase: float) -> StereoSignal:
    """Gated target tone at `level` per channel; right phase += target_ipd."""
    amp = level_to_amplitude(level)
    n, dt = spec.n_samples, 1.0 / spec.sample_rate
    left = hann_gate(
        MonoSignal(_tone(spec.target_freq, phase, amp, n, dt), spec.sample_rate),
        spec.ramp,
    )
    if spec.target_ipd == 0:
        return StereoSignal(left, left)
    right = hann_gate(
        MonoSignal(
            _tone(spec.target_freq, phase + spec.target_ipd, amp, n, dt),
            spec.sample_rate,
        ),
        spec.ramp,
    )
    return StereoSignal(left, right)


def _add(a: StereoSignal, b: StereoSignal) -> StereoSignal:
    left = MonoSignal(a.left.samples + b.left.samples, a.sample_rate)
    if a.left.samples is a.right.samples and b.left.samples is b.right.samples:
        return StereoSignal(left, left)
    right = MonoSignal(a.right.samples + b.right.samples, a.sample_rate)
    return StereoSignal(left, right)


@dataclass
class TrialStimulus:
    """One 3-interval trial: reference plus two comparison intervals.

    `target_position` indexes the comparison that carries the target
    (0 or 1); the reference never does. Waveforms are synthesized on
    first access from the eagerly drawn phases.
    """

    spec: ConditionSpec
    target_level: float
    masker_phases: np.ndarray  # shape (3, n_components); row 0 = reference
    target_phase: float
    target_position: int
    noise_seed: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def reference(self) -> StereoSignal:
        return self._interval(0)

    @property
    def comparisons(self) -> tuple[StereoSignal, StereoSignal]:
        return (self._interval(1), self._interval(2))

    def comparison(self, index: int) -> StereoSignal:
        if index not in (0, 1):
            raise IndexError("comparison index must be 0 or 1")
        return self._interval(1 + index)

    def interval(self, number: int) -> StereoSignal:
        """1-based interval access: 1 = reference, 2 and 3 = comparisons."""
        if number not in (1, 2, 3):
            raise IndexError("interval number must be 1, 2 or 3")
        return self._interval(number - 1)

    def _interval(self, idx: int) -> StereoSignal:
        if idx not in self._cache:
            sig = build_masker(self.spec, self.masker_phases[idx])
            if idx == 1 + self.target_position and np.isfinite(self.target_level):
                sig = _add(
                    sig,
                    build_target(self.spec, self.target_level, self.target_phase),
                )
            if self.noise_seed is not None:
                sig = _add(sig, background_noise(
                    self.spec.duration,
                    np.random.default_rng([self.noise_seed, idx]),
                    self.spec.sample_rate,
                ))
            self._cache[idx] = sig
        return self._cache[idx]


def assemble_trial(
    spec: ConditionSpec, target_level: float, rng: np.random.Generator
) -> TrialStimulus:
    """Draw fresh phases for all three intervals and place the target.

    Draw order is part of the reproducibility contract: masker phases
    for intervals 1..3, then the target phase, then the target position.
    A `target_level` of -inf disables the target (the draws still
    happen, so the stream stays aligned).
    """
    if np.isnan(target_level) or target_level == np.inf:
        raise ConditionError(f"invalid target level {target_level}")
    phases = rng.uniform(0.0, 2.0 * np.pi, (3, spec.n_components))
    target_phase = float(rng.uniform(0.0, 2.0 * np.pi))
    target_position = int(rng.integers(2))
    noise_seed = None
    if spec.include_background_noise:
        noise_seed = int(rng.integers(2**63))
    return TrialStimulus(
        spec, target_level, phases, target_phase, target_position, noise_seed
    )


def background_noise(
    duration: float,
    rng: np.random.Generator,
    sample_rate: float = 48000.0,
    level: float = BACKGROUND_NOISE_LEVEL_DB,
) -> StereoSignal:
    """Binaurally uncorrelated lowpass noise at `level` dB RMS per channel."""
    n = int(round(duration * sample_rate))
    channels = []
    for _ in range(2):
        white = MonoSignal(rng.standard_normal(n), sample_rate)
        shaped = butterworth_lowpass(
            white, BACKGROUND_NOISE_CUTOFF_HZ, BACKGROUND_NOISE_ORDER
        )
        gain = level_to_rms(level) / shaped.rms()
        channels.append(MonoSignal(gain * shaped.samples, sample_rate))
    return StereoSignal(*channels)


def condition_with_level(spec: ConditionSpec, masker_level: float) -> ConditionSpec:
    """Copy of `spec` at a different masker level (kept for presets)."""
    return replace(spec, masker_level=masker_level)
