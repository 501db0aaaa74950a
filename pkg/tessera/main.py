import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from .config import settings
from .exceptions import AcceptanceError, TesseraError
from .routers import experiments, render

logging.basicConfig(level=getattr(logging, settings.log_level.upper(), logging.INFO))
logger = logging.getLogger(__name__)

app = FastAPI(
    title="Tessera",
    description="Johnson-Mehl and sliced-Voronoi percolation experiments",
    version=__version__,
)


@app.exception_handler(TesseraError)
async def tessera_error_handler(request: Request, exc: TesseraError):
    if not isinstance(exc, AcceptanceError):
        logger.warning("%s %s: %s", request.method, request.url.path, exc)
    return JSONResponse(status_code=422, content={"detail": str(exc)})


# Health endpoints
@app.get("/")
async def root():
    """Health check endpoint."""
    return {"status": "online", "service": "Tessera", "version": __version__}


@app.get("/health")
async def health_check():
    return {"status": "healthy"}


app.include_router(experiments.router, prefix="/experiments", tags=["Experiments"])
app.include_router(render.router, prefix="/render", tags=["Render"])
