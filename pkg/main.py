from fastapi import FastAPI

from starlette.middleware.cors import CORSMiddleware

from app.api.v1.endpoints import clr

import logging

from app.config.config import get_settings
from app.config.logging_config import configure_logging

# Configure logging
configure_logging()
logger = logging.getLogger(__name__)

VERSION = "1.0.0"

app = FastAPI(title="CLR Inference API", version=VERSION)

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Include routers
app.include_router(clr.router)


@app.on_event("startup")
async def startup_event():
    """Log the Monte Carlo defaults the service runs with"""
    settings = get_settings()
    logger.info(
        f"Starting CLR service: PVALUE_DRAWS={settings.PVALUE_DRAWS}, "
        f"CRITVAL_DRAWS={settings.CRITVAL_DRAWS}, THREADS={settings.worker_count()}"
    )


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "version": VERSION,
    }


if __name__ == "__main__":
    import uvicorn

    settings = get_settings()
    uvicorn.run(
        app,
        host=settings.API_HOST,
        port=settings.API_PORT,
    )
