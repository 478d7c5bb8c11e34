"""HTTP service: compile and train score models, then follow live
performances in per-client sessions.

Each session owns one decoder and one accompaniment engine and is advanced by
posting batches of performance events in time order. Handlers are plain
``def`` so FastAPI runs them in its threadpool; a per-session lock keeps each
session single-owner.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException

from .. import harness, pipeline
from ..engine import EngineConfig, PerformanceEvent
from ..errors import AccompanistError
from ..hmm import CompileOptions, TrainOptions, baum_welch, smooth_emissions
from ..score import parse_score, quantize
from . import schemas

app = FastAPI(title="accompanist", version="0.1.0")


@dataclass
class _Session:
    model_id: str
    hands: str
    follow: pipeline.FollowSession
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_time: float = 0.0


class _Registry:
    def __init__(self):
        self.lock = threading.Lock()
        self.models = {}
        self.sessions = {}

    def add_model(self, model):
        model_id = uuid.uuid4().hex[:12]
        with self.lock:
            self.models[model_id] = model
        return model_id

    def model(self, model_id):
        with self.lock:
            model = self.models.get(model_id)
        if model is None:
            raise HTTPException(404, f"unknown model {model_id}")
        return model

    def session(self, session_id):
        with self.lock:
            session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, f"unknown session {session_id}")
        return session


registry = _Registry()


def _score_from(score_in):
    return parse_score(json.dumps(score_in.model_dump()).encode())


def _bad_request(exc):
    return HTTPException(422, str(exc))


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/models", response_model=schemas.ModelInfo)
def create_model(req: schemas.CompileRequest):
    try:
        score = _score_from(req.score)
        model = pipeline.compile_model(score, CompileOptions(p_correct=req.p_correct,
                                                             p_start=req.p_start),
                                       req.w1, req.w2, req.mu)
    except (AccompanistError, ValueError) as exc:
        raise _bad_request(exc) from None
    model_id = registry.add_model(model)
    return schemas.ModelInfo(model_id=model_id, n_states=model.params.n_states,
                             n_units=len(model.score.units))


@app.get("/models/{model_id}")
def get_model(model_id: str):
    """The model in trained-model file format."""
    return pipeline.model_to_dict(registry.model(model_id))


@app.post("/models/{model_id}/train", response_model=schemas.TrainResponse)
def train_model(model_id: str, req: schemas.TrainRequest):
    model = registry.model(model_id)
    try:
        params, history = baum_welch(model.params, req.observations,
                                     TrainOptions(max_iters=req.max_iters, tol=req.tol))
    except (AccompanistError, ValueError) as exc:
        raise _bad_request(exc) from None
    trained = model.with_params(smooth_emissions(params, req.emission_floor))
    new_id = registry.add_model(trained)
    return schemas.TrainResponse(model_id=new_id, iterations=len(history), history=history)


@app.post("/sessions", response_model=schemas.SessionInfo)
def create_session(req: schemas.SessionRequest):
    model = registry.model(req.model_id)
    try:
        follow = pipeline.FollowSession(model, parallel=req.hands == "parallel",
                                        engine_config=EngineConfig(horizon=req.horizon))
    except (AccompanistError, ValueError) as exc:
        raise _bad_request(exc) from None
    session_id = uuid.uuid4().hex[:12]
    with registry.lock:
        registry.sessions[session_id] = _Session(req.model_id, req.hands, follow)
    return schemas.SessionInfo(session_id=session_id, model_id=req.model_id, hands=req.hands)


@app.post("/sessions/{session_id}/events", response_model=schemas.EventsResponse)
def post_events(session_id: str, req: schemas.EventsRequest):
    session = registry.session(session_id)
    try:
        events = [PerformanceEvent(e.kind, e.pitch, e.vel, e.t, e.hand) for e in req.events]
    except ValueError as exc:
        raise _bad_request(exc) from None
    positions, accompaniment = [], []
    with session.lock:
        times = [session.last_time] + [e.time for e in events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise HTTPException(422, "event times must be non-decreasing across the session")
        groups = pipeline.group_note_ons(events, parallel=session.follow.parallel)
        for group in groups:
            record, out = session.follow.observe(group)
            positions.append(record.to_record())
            accompaniment.extend(ev.to_record() for ev in out)
        if events:
            session.last_time = events[-1].time
    return {"positions": positions, "accompaniment": accompaniment}


@app.post("/sessions/{session_id}/finish", response_model=schemas.EventsResponse)
def finish_session(session_id: str):
    session = registry.session(session_id)
    with session.lock:
        out = session.follow.finish()
    return {"positions": [], "accompaniment": [ev.to_record() for ev in out]}


@app.delete("/sessions/{session_id}")
def delete_session(session_id: str):
    with registry.lock:
        if registry.sessions.pop(session_id, None) is None:
            raise HTTPException(404, f"unknown session {session_id}")
    return {"deleted": session_id}


@app.post("/simulate", response_model=schemas.SimulateResponse)
def simulate(req: schemas.SimulateRequest):
    try:
        score = _score_from(req.score)
        spec = harness.ErrorSpec(req.p_wrong, req.p_skip, req.p_extra, req.tempo_drift, req.seed)
        perf = harness.simulate(quantize(score), spec, req.base_tempo or score.seconds_per_beat)
    except (AccompanistError, ValueError) as exc:
        raise _bad_request(exc) from None
    return {"events": [e.to_dict() for e in perf.events], "truth": list(perf.truth)}
