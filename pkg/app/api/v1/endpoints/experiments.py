from fastapi import APIRouter, HTTPException
from fastapi.concurrency import run_in_threadpool
import logging

from app.core.errors import NKMeansError
from app.schemas.experiment import ExperimentRequest
from app.schemas.reports import OracleReport, RunReport
from app.services.experiment_service import experiment_service

router = APIRouter()
logger = logging.getLogger(__name__)

# exit code -> HTTP status
STATUS_BY_EXIT_CODE = {2: 422, 3: 409, 4: 413, 5: 409}


def to_http_error(e: NKMeansError) -> HTTPException:
    return HTTPException(status_code=STATUS_BY_EXIT_CODE.get(e.exit_code, 500), detail=str(e))


@router.post("/experiments/run", response_model=RunReport)
async def run_experiment(request: ExperimentRequest):
    """
    Runs NK-means for one rho. Output files land in the config's output
    directory (or OUTPUT_DIR); the report lists their paths.
    """
    try:
        return await run_in_threadpool(experiment_service.cmd_run, request.config, request.rho)
    except NKMeansError as e:
        logger.error(f"Run failed at rho={request.rho}: {e}")
        raise to_http_error(e)


@router.post("/experiments/oracle", response_model=OracleReport)
async def run_oracle(request: ExperimentRequest):
    try:
        return await run_in_threadpool(experiment_service.cmd_oracle, request.config, request.rho)
    except NKMeansError as e:
        logger.error(f"Oracle failed at rho={request.rho}: {e}")
        raise to_http_error(e)
