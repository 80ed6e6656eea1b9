import asyncio
from collections import deque
from typing import Deque, Dict, List

from fastapi import APIRouter, HTTPException

from app.core.config import settings
from app.core.errors import DbmmError, VerificationFailed
from app.models.experiment import ExperimentSpec
from app.models.kernel import KernelParams
from app.models.report import RunReport
from app.services import bench
from app.services.microkernel import autotuner

router = APIRouter()

_history: Deque[RunReport] = deque(maxlen=settings.REPORT_HISTORY)


def get_history() -> List[RunReport]:
    return list(_history)


def clear_history() -> None:
    _history.clear()


@router.post("/experiments", response_model=RunReport)
async def run_new_experiment(spec: ExperimentSpec):
    """Runs one benchmark configuration and returns its report."""
    try:
        bench.check_configuration(spec)
    except DbmmError as e:
        raise HTTPException(status_code=400, detail=str(e))
    try:
        report = await asyncio.to_thread(bench.run_experiment, spec)
    except DbmmError as e:
        raise HTTPException(status_code=500, detail=str(e))
    _history.append(report)
    try:
        bench.ensure_verified(report)
    except VerificationFailed as e:
        raise HTTPException(status_code=422, detail=str(e))
    return report


@router.get("/experiments", response_model=List[RunReport])
async def get_experiments_list():
    """Most recent reports, oldest first."""
    return get_history()


@router.get("/tuning", response_model=Dict[str, KernelParams])
async def get_tuning_cache():
    return autotuner.entries()
