from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from app.config import get_settings
from app.core.lifespan import lifespan
from app.core.logging import setup_logging
from app.api.v1.api import api_router

setup_logging()

app = FastAPI(
    title="NK-means Experiments",
    description="Runs, oracles and verifiers for distributed K-means over agent networks.",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET", "POST"],
    allow_headers=["Content-Type"],
)

app.include_router(api_router)


def serve(port: int = 8001):
    import uvicorn
    uvicorn.run("app.main:app", host="0.0.0.0", port=port, reload=get_settings().APP_ENV == "development")


if __name__ == "__main__":
    serve()
