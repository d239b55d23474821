from fastapi import APIRouter
from app.config import get_settings

router = APIRouter()

@router.get("/health")
async def health_check():
    settings = get_settings()
    return {"status": "ok", "env": settings.APP_ENV, "output_dir": settings.OUTPUT_DIR}
