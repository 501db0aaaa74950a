# tessera/routers/render.py
from fastapi import APIRouter
from fastapi.responses import Response

from ..config import ExperimentConfig
from ..services.experiments import render_svg

router = APIRouter()


@router.post("")
def render(config: ExperimentConfig):
    """SVG of one tessellation of [0, rho*s] x [0, s]."""
    result = render_svg(config.model_copy(update={"command": "render"}))
    return Response(content=result.svg, media_type="image/svg+xml")
