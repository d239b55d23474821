from fastapi import APIRouter
from app.api.v1.endpoints import experiments, health

api_router = APIRouter()
api_router.include_router(experiments.router, tags=["experiments"])
api_router.include_router(health.router, tags=["health"])
