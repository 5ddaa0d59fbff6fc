"""HTTP front end over the command layer."""
from fastapi import FastAPI, HTTPException

from .. import __version__, commands
from ..graph import GraphFormatError
from .schemas import (EstimateRequest, EstimateResponse, ExactResponse, Health, MaximizeRequest,
                      MaximizeResponse, SeedRequest, SimulateRequest, SimulateResponse)

app = FastAPI(title="monstor", version=__version__)


def _call(fn, **kw):
    try:
        return fn(**kw)
    except FileNotFoundError as exc:
        raise HTTPException(404, str(exc)) from None
    except (GraphFormatError, ValueError, KeyError) as exc:
        raise HTTPException(422, commands.error_message(exc)) from None


@app.get("/health", response_model=Health)
def health():
    return Health(status="ok", version=__version__)


@app.post("/simulate", response_model=SimulateResponse, response_model_exclude_none=True)
def simulate(req: SimulateRequest):
    return _call(commands.run_simulate, **req.model_dump())


@app.post("/exact", response_model=ExactResponse, response_model_exclude_none=True)
def exact(req: SeedRequest):
    return _call(commands.run_exact, **req.model_dump())


@app.post("/estimate", response_model=EstimateResponse, response_model_exclude_none=True)
def estimate(req: EstimateRequest):
    return _call(commands.run_estimate, **req.model_dump())


@app.post("/maximize", response_model=MaximizeResponse)
def maximize(req: MaximizeRequest):
    return _call(commands.run_maximize, **req.model_dump())
