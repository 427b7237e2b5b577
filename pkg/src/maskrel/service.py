"""HTTP session service for live adaptive listening runs.

JSON-over-HTTP endpoints:

* ``POST /sessions`` - start a run from a preset condition (experiment,
  ipd, tuning) or explicit condition fields; returns the session id and
  the first trial descriptor.
* ``GET /sessions/{sid}`` - session status plus the pending trial.
* ``GET /sessions/{sid}/trial/{n}/interval/{k}.wav`` - audio for
  interval k (1..3) of the *pending* trial n.
* ``POST /sessions/{sid}/response`` - submit the chosen interval (2 or
  3; interval 1 is the reference and can never be selected), receive
  correctness feedback and either the next trial or the final result.
* ``GET /noise.wav`` - the continuous background-noise loop the client
  plays underneath the trial audio.

Trial levels and the target interval are never serialized to the
client before the response for that trial has been recorded. Sessions
live in memory and are snapshotted to JSON after every response, so an
interrupted run resumes exactly where it stopped.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from . import calibration as cal
from .staircase import (
    REVERSALS_AT_FINAL_STEP,
    StaircaseState,
    TrackEscapeError,
    staircase_step,
    track_threshold,
    trial_rng,
    LEVEL_CEILING_DB,
    LEVEL_FLOOR_DB,
)
from .stimulus import ConditionError, ConditionSpec, assemble_trial, background_noise
from .wav import wav_bytes

INTER_STIMULUS_GAP_S = 0.3
NOISE_LOOP_SECONDS = 10.0


class StartSessionRequest(BaseModel):
    experiment: str | None = Field(default=None, description="preset name")
    ipd: str | None = None
    tuning: str | None = None
    f0: float | None = None
    mistuning: float | None = None
    n_components: int | None = None
    target_freq: float | None = None
    target_ipd: float | None = None
    masker_level: float | None = None
    seed: int | None = None


class ResponseRequest(BaseModel):
    trial: int
    chosen: int


@dataclass
class Session:
    session_id: str
    spec: ConditionSpec
    seed: int
    state: StaircaseState = field(default_factory=StaircaseState)
    status: str = "awaiting_response"
    responses: dict[int, dict] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def trial_number(self) -> int:
        return self.state.trial_count + 1

    def current_trial(self):
        rng = trial_rng([self.seed], self.trial_number)
        return assemble_trial(self.spec, self.state.current_level, rng)

    def trial_descriptor(self) -> dict:
        n = self.trial_number
        return {
            "number": n,
            "intervals": [
                f"/sessions/{self.session_id}/trial/{n}/interval/{k}.wav"
                for k in (1, 2, 3)
            ],
            "reference_interval": 1,
            "selectable_intervals": [2, 3],
            "inter_stimulus_gap_s": INTER_STIMULUS_GAP_S,
            "reversals_at_final_step": self.state.reversals_at_final_step(),
            "reversals_needed": REVERSALS_AT_FINAL_STEP,
        }

    def public_state(self) -> dict:
        payload = {
            "session_id": self.session_id,
            "status": self.status,
            "completed_trials": self.state.trial_count,
            "condition": _spec_fields(self.spec),
        }
        if self.status == "awaiting_response":
            payload["trial"] = self.trial_descriptor()
        if self.status == "finished":
            payload["threshold_db"] = track_threshold(self.state)
        return payload


def _spec_fields(spec: ConditionSpec) -> dict:
    return {
        "f0": spec.f0,
        "mistuning": spec.mistuning,
        "n_components": spec.n_components,
        "target_freq": spec.target_freq,
        "target_ipd": spec.target_ipd,
        "masker_level": spec.masker_level,
        "duration": spec.duration,
        "ramp": spec.ramp,
        "sample_rate": spec.sample_rate,
        "include_background_noise": spec.include_background_noise,
    }


def _spec_from_request(req: StartSessionRequest) -> ConditionSpec:
    if req.experiment is not None:
        if req.experiment not in cal.EXPERIMENTS:
            raise HTTPException(422, f"unknown experiment {req.experiment!r}")
        if req.ipd is None or req.tuning is None:
            raise HTTPException(422, "preset sessions need ipd and tuning")
        try:
            return cal.EXPERIMENTS[req.experiment].condition(req.ipd, req.tuning)
        except ValueError as err:
            raise HTTPException(422, str(err)) from err
    required = ("f0", "mistuning", "n_components", "target_freq", "target_ipd")
    missing = [k for k in required if getattr(req, k) is None]
    if missing:
        raise HTTPException(
            422, f"custom conditions need fields: {', '.join(missing)}"
        )
    try:
        return ConditionSpec(
            f0=req.f0,
            mistuning=req.mistuning,
            n_components=req.n_components,
            target_freq=req.target_freq,
            target_ipd=req.target_ipd,
            masker_level=req.masker_level if req.masker_level is not None else 65.0,
        )
    except ConditionError as err:
        raise HTTPException(422, str(err)) from err


def create_app(snapshot_dir: str | None = None, noise_seed: int = 0) -> FastAPI:
    app = FastAPI(title="maskrel listening service")
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions  # server-side introspection (tests, ops)
    snapshots = Path(snapshot_dir) if snapshot_dir else None
    noise_cache: dict[str, bytes] = {}

    if snapshots:
        snapshots.mkdir(parents=True, exist_ok=True)
        for path in sorted(snapshots.glob("session_*.json")):
            session = _restore_session(path)
            if session is not None:
                sessions[session.session_id] = session

    def _get(sid: str) -> Session:
        session = sessions.get(sid)
        if session is None:
            raise HTTPException(404, f"no session {sid!r}")
        return session

    def _snapshot(session: Session) -> None:
        if snapshots is None:
            return
        payload = {
            "session_id": session.session_id,
            "seed": session.seed,
            "spec": _spec_fields(session.spec),
            "status": session.status,
            "responses": {
                str(n): r["chosen"] for n, r in sorted(session.responses.items())
            },
        }
        path = snapshots / f"session_{session.session_id}.json"
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True))
        tmp.replace(path)

    @app.post("/sessions", status_code=201)
    def start_session(req: StartSessionRequest):
        spec = _spec_from_request(req)
        seed = req.seed if req.seed is not None else int(
            np.random.SeedSequence().generate_state(1)[0]
        )
        session = Session(uuid.uuid4().hex, spec, seed)
        sessions[session.session_id] = session
        _snapshot(session)
        return session.public_state()

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return _get(sid).public_state()

    @app.get("/sessions/{sid}/trial/{n}/interval/{k}.wav")
    def get_trial_audio(sid: str, n: int, k: int):
        session = _get(sid)
        with session.lock:
            if session.status != "awaiting_response":
                raise HTTPException(
                    409, f"session is {session.status}, not awaiting a response"
                )
            if n != session.trial_number:
                raise HTTPException(409, f"trial {n} is not the pending trial")
            if k not in (1, 2, 3):
                raise HTTPException(422, "interval must be 1, 2 or 3")
            stereo = session.current_trial().interval(k)
        return Response(content=wav_bytes(stereo), media_type="audio/wav")

    @app.post("/sessions/{sid}/response")
    def post_response(sid: str, req: ResponseRequest):
        session = _get(sid)
        with session.lock:
            if req.chosen not in (2, 3):
                raise HTTPException(
                    422,
                    "interval 1 is the reference and cannot be selected; "
                    "choose 2 or 3",
                )
            if req.trial in session.responses:
                return session.responses[req.trial]
            if session.status != "awaiting_response":
                raise HTTPException(
                    409, f"session is {session.status}, not awaiting a response"
                )
            if req.trial != session.trial_number:
                raise HTTPException(
                    409, f"trial {req.trial} is not the pending trial"
                )
            feedback = _score_response(session, req.chosen)
            session.responses[req.trial] = feedback
            _snapshot(session)
            return feedback

    @app.get("/noise.wav")
    def noise():
        if "loop" not in noise_cache:
            stereo = background_noise(
                NOISE_LOOP_SECONDS, np.random.default_rng(noise_seed)
            )
            noise_cache["loop"] = wav_bytes(stereo)
        return Response(content=noise_cache["loop"], media_type="audio/wav")

    return app


def _score_response(session: Session, chosen: int) -> dict:
    trial = session.current_trial()
    correct = (chosen - 2) == trial.target_position
    trial_number = session.trial_number
    try:
        session.state = staircase_step(session.state, correct)
        if not (LEVEL_FLOOR_DB <= session.state.current_level <= LEVEL_CEILING_DB):
            raise TrackEscapeError("level left safety bounds", "any")
    except TrackEscapeError:
        session.status = "aborted"
        return {
            "trial": trial_number,
            "chosen": chosen,
            "correct": correct,
            "status": "aborted",
        }
    feedback = {
        "trial": trial_number,
        "chosen": chosen,
        "correct": correct,
        "reversals_at_final_step": session.state.reversals_at_final_step(),
        "reversals_needed": REVERSALS_AT_FINAL_STEP,
    }
    if session.state.terminated:
        session.status = "finished"
        feedback["status"] = "finished"
        feedback["threshold_db"] = track_threshold(session.state)
    else:
        feedback["status"] = "awaiting_response"
        feedback["next_trial"] = session.trial_descriptor()
    return feedback


def _restore_session(path: Path) -> Session | None:
    try:
        payload = json.loads(path.read_text())
        spec = ConditionSpec(**payload["spec"])
        session = Session(payload["session_id"], spec, payload["seed"])
        for n_str, chosen in sorted(
            payload["responses"].items(), key=lambda kv: int(kv[0])
        ):
            feedback = _score_response(session, chosen)
            session.responses[int(n_str)] = feedback
        if payload["status"] == "aborted":
            session.status = "aborted"
        return session
    except (KeyError, ValueError, json.JSONDecodeError):
        return None
