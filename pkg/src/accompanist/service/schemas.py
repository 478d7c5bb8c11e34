"""Request and response models for the following service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class AccompanimentNoteIn(BaseModel):
    pitch: int = Field(ge=0, le=127)
    velocity_ratio: float = Field(1.0, ge=0)
    offset: float = Field(0.0, ge=0)


class ScoreEventIn(BaseModel):
    pitches: list[str]
    onset: float = Field(0.0, ge=0)
    duration: float = Field(gt=0)
    hand: Literal["L", "R", "S"] = "S"
    accompaniment: list[AccompanimentNoteIn] = []


class ScoreIn(BaseModel):
    """ScoreJson document."""

    bpm: float = Field(120.0, gt=0)
    subdivision: int = Field(1, ge=1)
    events: list[ScoreEventIn]


class CompileRequest(BaseModel):
    score: ScoreIn
    p_correct: float = Field(0.9, gt=0, lt=1)
    p_start: float = Field(0.8, ge=0, le=1)
    w1: int = Field(2, ge=0)
    w2: int = Field(4, ge=0)
    mu: float | None = Field(None, ge=0)


class ModelInfo(BaseModel):
    model_id: str
    n_states: int
    n_units: int


class TrainRequest(BaseModel):
    observations: list[list[int]] = Field(min_length=1,
                                          description="pitch-class sets, one per observation")
    max_iters: int = Field(200, ge=1)
    tol: float = Field(1e-6, ge=0)
    emission_floor: float = Field(1e-3, ge=0)


class TrainResponse(BaseModel):
    model_id: str
    iterations: int
    history: list[float]


class SessionRequest(BaseModel):
    model_id: str
    hands: Literal["single", "parallel"] = "single"
    horizon: int = Field(1, ge=1)


class SessionInfo(BaseModel):
    session_id: str
    model_id: str
    hands: str


class PerformanceEventIn(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    kind: Literal["on", "off"]
    pitch: int = Field(ge=0, le=127)
    vel: int = Field(0, ge=0, le=127)
    t: float = Field(ge=0)
    hand: Literal["L", "R"] | None = None


class EventsRequest(BaseModel):
    events: list[PerformanceEventIn]


class PositionOut(BaseModel):
    t: float
    unit: int
    event: int
    ghost: bool
    state: int
    hand: str | None = None


class AccompanimentOut(BaseModel):
    t: float
    pitch: int
    vel: int
    dur: float
    unit: int


class EventsResponse(BaseModel):
    positions: list[PositionOut]
    accompaniment: list[AccompanimentOut]


class SimulateRequest(BaseModel):
    score: ScoreIn
    p_wrong: float = Field(0.0, ge=0, le=1)
    p_skip: float = Field(0.0, ge=0, le=1)
    p_extra: float = Field(0.0, ge=0, le=1)
    tempo_drift: float = Field(0.0, ge=0, lt=1)
    seed: int = Field(0, ge=0, lt=2**64)
    base_tempo: float | None = Field(None, gt=0)


class SimulateResponse(BaseModel):
    events: list[PerformanceEventIn]
    truth: list[int | None]
