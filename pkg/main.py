import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, Response
from prometheus_client import CONTENT_TYPE_LATEST

from app.api.experiments import router as experiments_router
from app.core.config import settings
from app.core.logging import setup_logging
from app.services.metrics import get_metrics
from app.services.microkernel import autotuner

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    setup_logging()
    logger.info("Application startup...")
    if settings.DBMM_TUNE_CACHE:
        autotuner.load(settings.DBMM_TUNE_CACHE)

    yield

    logger.info("Application shutdown...")
    if settings.DBMM_TUNE_CACHE:
        autotuner.save(settings.DBMM_TUNE_CACHE)


app = FastAPI(lifespan=lifespan)

app.include_router(experiments_router, prefix="/api", tags=["Experiments"])


@app.get("/metrics")
async def metrics():
    return Response(content=get_metrics(), media_type=CONTENT_TYPE_LATEST)


@app.get("/")
async def root():
    return {"message": "Blocked matrix multiplication bench is running."}
