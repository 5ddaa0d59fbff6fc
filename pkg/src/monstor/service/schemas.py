from typing import Literal, Optional

from pydantic import BaseModel, Field


class SeedRequest(BaseModel):
    graph: str = Field(description="edge-list path readable by the server")
    seeds: list[str] = Field(min_length=1, description="node labels")
    vectors: bool = False


class SimulateRequest(SeedRequest):
    runs: int = Field(10_000, ge=1)
    seed: int = 0
    workers: int = Field(1, ge=1)


class SimulateResponse(BaseModel):
    influence: float
    stderr: float
    runs: int
    steps: int
    final: Optional[dict[str, float]] = None


class ExactResponse(BaseModel):
    influence: float
    steps: int
    final: Optional[dict[str, float]] = None


class EstimateRequest(SeedRequest):
    model: str
    s: Optional[int] = Field(None, ge=1)


class EstimateResponse(BaseModel):
    influence: float
    stacks: int
    final: Optional[dict[str, float]] = None


class MaximizeRequest(BaseModel):
    graph: str
    k: int = Field(ge=1)
    backend: Literal["mc", "surrogate", "exact"] = "mc"
    model: Optional[str] = None
    runs: int = Field(10_000, ge=1)
    seed: int = 0
    workers: int = Field(1, ge=1)
    algorithm: Literal["lazy", "greedy"] = "lazy"


class MaximizeResponse(BaseModel):
    seeds: list[str]
    influence: float
    trace: list[tuple[str, float]]
    evaluations: int
    backend: str


class Health(BaseModel):
    status: str
    version: str
