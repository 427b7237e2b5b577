"""Adaptive 3-interval 2AFC procedure with 1-up/2-down level tracking.

The first interval of every trial is a reference that can never be
chosen; the observer picks one of the two comparison intervals. Two
consecutive correct responses lower the target level, any error raises
it. The step starts at 5 dB, drops to 2 dB after the second reversal
and to 1 dB after the fourth; a run ends after eight reversals at the
1-dB step and its threshold is the mean level over those last eight
reversals.

The same engine drives simulated observers and, via the HTTP service,
human listeners: anything with a ``decide(trial, rng)`` method works.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Protocol

import numpy as np

from .model import PathwayConfig, decision_energy, pathway_output
from .stimulus import ConditionSpec, TrialStimulus, assemble_trial

START_LEVEL_DB = 65.0
INITIAL_STEP_DB = 5.0
REVERSALS_AT_FINAL_STEP = 8
LEVEL_CEILING_DB = 100.0
LEVEL_FLOOR_DB = -40.0


class StaircaseError(RuntimeError):
    """Stepping a terminated track or other procedure misuse."""


class TrackEscapeError(StaircaseError):
    """Track level left the safety bounds; `direction` is "low" or "high"."""

    def __init__(self, message: str, direction: str):
        super().__init__(message)
        self.direction = direction


@dataclass(frozen=True)
class Reversal:
    trial: int
    level: float
    step: float


@dataclass(frozen=True)
class StaircaseState:
    """Immutable track state; `staircase_step` returns the successor."""

    current_level: float = START_LEVEL_DB
    step: float = INITIAL_STEP_DB
    consecutive_correct: int = 0
    reversals: tuple[Reversal, ...] = ()
    trial_count: int = 0
    last_direction: str | None = None
    terminated: bool = False

    def reversals_at_final_step(self) -> int:
        return sum(1 for r in self.reversals if r.step == 1.0)


def _step_for_reversal_count(count: int) -> float:
    if count >= 4:
        return 1.0
    if count >= 2:
        return 2.0
    return INITIAL_STEP_DB


def staircase_step(state: StaircaseState, correct: bool) -> StaircaseState:
    """Advance the track by one scored trial.

    Direction changes are logged as reversals with the step in force at
    that moment; the step schedule is then re-evaluated and the level
    moves by the *updated* step.
    """
    if state.terminated:
        raise StaircaseError("track already terminated")
    trial = state.trial_count + 1
    if correct and state.consecutive_correct + 1 < 2:
        return replace(state, trial_count=trial, consecutive_correct=1)
    direction = "down" if correct else "up"
    reversals = state.reversals
    if state.last_direction is not None and direction != state.last_direction:
        reversals = reversals + (Reversal(trial, state.current_level, state.step),)
    step = _step_for_reversal_count(len(reversals))
    level = state.current_level + (step if direction == "up" else -step)
    done = sum(1 for r in reversals if r.step == 1.0) >= REVERSALS_AT_FINAL_STEP
    return StaircaseState(
        current_level=level,
        step=step,
        consecutive_correct=0,
        reversals=reversals,
        trial_count=trial,
        last_direction=direction,
        terminated=done,
    )


def track_threshold(state: StaircaseState) -> float:
    """Mean level over the last eight reversals of a finished track."""
    if not state.terminated:
        raise StaircaseError("track not terminated")
    tail = state.reversals[-REVERSALS_AT_FINAL_STEP:]
    return float(np.mean([r.level for r in tail]))


class Observer(Protocol):
    """Anything that can pick one of the two comparison intervals."""

    def decide(self, trial: TrialStimulus, rng: np.random.Generator) -> int:
        """Return the chosen comparison index (0 or 1), never the reference."""
        ...


class SimulatedObserver:
    """Model observer: largest decision energy wins.

    Diotic conditions are judged by the monaural pathway with sigma_m,
    dichotic conditions by the binaural pathway with sigma_b. A diotic
    interval fed to the binaural pathway nulls exactly, so its energy
    reduces to the injected noise alone; that shortcut is taken here
    (but never when background noise decorrelates the ears).
    """

    def __init__(self, cfg: PathwayConfig):
        self.cfg = cfg

    def _energy(
        self, trial: TrialStimulus, index: int, rng: np.random.Generator
    ) -> float:
        spec = trial.spec
        use_binaural = spec.is_dichotic
        sigma = self.cfg.sigma_b if use_binaural else self.cfg.sigma_m
        if (
            use_binaural
            and index != trial.target_position
            and not spec.include_background_noise
        ):
            # masker-only interval is diotic: exact cancellation
            from .signals import MonoSignal

            n_out = int(round(spec.duration * 2000.0))
            zeros = MonoSignal(np.zeros(n_out), 2000.0)
            return decision_energy(zeros, sigma, rng)
        out = pathway_output(
            trial.comparison(index),
            use_binaural,
            spec.is_mistuned,
            self.cfg,
            center_freq=spec.target_freq,
        )
        return decision_energy(out, sigma, rng)

    def decide(self, trial: TrialStimulus, rng: np.random.Generator) -> int:
        e0 = self._energy(trial, 0, rng)
        e1 = self._energy(trial, 1, rng)
        if e0 == e1:
            return int(rng.integers(2))
        return 0 if e0 > e1 else 1


def simulated_observer(cfg: PathwayConfig) -> SimulatedObserver:
    return SimulatedObserver(cfg)


class ThresholdObserver:
    """Deterministic oracle: correct iff the trial level >= `threshold`."""

    def __init__(self, threshold: float):
        self.threshold = threshold

    def decide(self, trial: TrialStimulus, rng: np.random.Generator) -> int:
        if trial.target_level >= self.threshold:
            return trial.target_position
        return 1 - trial.target_position


class PsychometricObserver:
    """Stochastic observer answering correctly with probability p(level)."""

    def __init__(self, p_correct: Callable[[float], float]):
        self.p_correct = p_correct

    def decide(self, trial: TrialStimulus, rng: np.random.Generator) -> int:
        if rng.uniform() < self.p_correct(trial.target_level):
            return trial.target_position
        return 1 - trial.target_position


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    level: float
    correct: bool
    step: float
    reversal: bool


@dataclass
class TrackRun:
    threshold: float
    state: StaircaseState
    records: list[TrialRecord] = field(default_factory=list)


def trial_rng(track_key: Iterable[int], trial_number: int) -> np.random.Generator:
    """Per-trial generator; streams are addressable so runs can resume."""
    return np.random.default_rng(
        np.random.SeedSequence(list(track_key) + [trial_number])
    )


def run_track(
    spec: ConditionSpec,
    observer: Observer,
    track_key: Iterable[int],
    start_level: float = START_LEVEL_DB,
    keep_records: bool = False,
) -> TrackRun:
    """Run one adaptive track to termination and return its threshold.

    Every trial draws a fresh stimulus from its own addressable RNG
    stream. Tracks whose level leaves [-40, 100] dB abort with an error
    (degenerate observers would otherwise walk forever).
    """
    key = list(track_key)
    state = StaircaseState(current_level=start_level)
    records: list[TrialRecord] = []
    while not state.terminated:
        trial_number = state.trial_count + 1
        rng = trial_rng(key, trial_number)
        trial = assemble_trial(spec, state.current_level, rng)
        choice = observer.decide(trial, rng)
        if choice not in (0, 1):
            raise StaircaseError(f"observer chose invalid interval {choice}")
        correct = choice == trial.target_position
        before = state
        state = staircase_step(state, correct)
        if keep_records:
            records.append(
                TrialRecord(
                    trial_number,
                    before.current_level,
                    correct,
                    before.step,
                    len(state.reversals) > len(before.reversals),
                )
            )
        if state.current_level > LEVEL_CEILING_DB:
            raise TrackEscapeError(
                f"track exceeded ceiling of {LEVEL_CEILING_DB} dB SPL", "high"
            )
        if state.current_level < LEVEL_FLOOR_DB:
            raise TrackEscapeError(
                f"track fell below floor of {LEVEL_FLOOR_DB} dB SPL", "low"
            )
    return TrackRun(track_threshold(state), state, records)


@dataclass
class ThresholdResult:
    """Per-condition estimate over `n_runs` independent tracks."""

    per_run_thresholds: tuple[float, ...]
    mean_threshold: float
    relative_threshold: float
    condition: ConditionSpec
    pathway: PathwayConfig | None


def run_condition(
    spec: ConditionSpec,
    observer: Observer,
    seed_key: Iterable[int],
    n_runs: int = 5,
    pathway: PathwayConfig | None = None,
) -> ThresholdResult:
    """Mean threshold over `n_runs` independent adaptive tracks."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    key = list(seed_key)
    runs = tuple(
        run_track(spec, observer, key + [run]).threshold for run in range(n_runs)
    )
    mean = float(np.mean(runs))
    return ThresholdResult(
        per_run_thresholds=runs,
        mean_threshold=mean,
        relative_threshold=mean - spec.masker_level,
        condition=spec,
        pathway=pathway,
    )


def write_track_log(records: list[TrialRecord], path) -> None:
    """Per-trial CSV export (trial, level, correct, step, reversal)."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "level_db", "correct", "step_db", "reversal"])
        for r in records:
            writer.writerow(
                [r.trial, r.level, int(r.correct), r.step, int(r.reversal)]
            )
