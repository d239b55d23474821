from contextlib import asynccontextmanager
from fastapi import FastAPI
import logging
import os
from ..config import get_settings

logger = logging.getLogger(__name__)

@asynccontextmanager
async def lifespan(app: FastAPI):
    settings = get_settings()
    logger.info(f"Starting NK-means service ({settings.APP_ENV})...")
    os.makedirs(settings.OUTPUT_DIR, exist_ok=True)
    yield
    logger.info("Shutting down NK-means service...")
