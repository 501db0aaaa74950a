# tessera/services/svg.py
"""
SVG renderer for planar tessellations.
One path per cell (dense boundary probes), seeds as dots, clipped to a frame.
"""
import logging
import xml.etree.ElementTree as ET
from typing import Optional

import numpy as np

from ..config import settings
from ..geometry import Rect
from ..tessellation import Tessellation, cell_polygon

logger = logging.getLogger(__name__)

SVG_NS = "http://www.w3.org/2000/svg"


def _path_data(points: np.ndarray) -> str:
    head, rest = points[0], points[1:]
    body = " ".join(f"L{x:.4f},{y:.4f}" for x, y in rest)
    return f"M{head[0]:.4f},{head[1]:.4f} {body} Z".replace("  ", " ")


def visible_cells(T: Tessellation, rect: Rect, divisions: Optional[int] = None) -> np.ndarray:
    """Ids of seeds whose cells meet a grid over rect, ascending."""
    if len(T.seeds) == 0:
        return np.zeros(0, np.int64)
    divisions = divisions or settings.grid_divisions
    _, _, rows = T.winners_on_grid(rect, max(rect.width, rect.height) / divisions)
    return np.unique(T.seeds.ids[np.unique(rows)])


def svg_document(T: Tessellation, rect: Rect, fill: bool = True, rays: int = 256, width_px: int = 600) -> str:
    """
    Render the cells meeting rect.

    Args:
        T: tessellation (a PlanarWindow domain gives cells that reach the frame)
        rect: canvas region
        fill: colour cells black / white by seed colour
        rays: boundary probes per cell
        width_px: output width; height follows the aspect ratio

    Returns:
        SVG text
    """
    height_px = max(1, int(round(width_px * rect.height / rect.width)))
    svg = ET.Element("svg", {
        "xmlns": SVG_NS,
        "width": str(width_px),
        "height": str(height_px),
        "viewBox": f"{rect.a} {rect.c} {rect.width} {rect.height}",
    })
    defs = ET.SubElement(svg, "defs")
    clip = ET.SubElement(defs, "clipPath", id="frame")
    ET.SubElement(clip, "rect", x=str(rect.a), y=str(rect.c), width=str(rect.width), height=str(rect.height))

    # y axis up
    flip = ET.SubElement(svg, "g", transform=f"translate(0,{rect.c + rect.d}) scale(1,-1)")
    cells = ET.SubElement(flip, "g", {"id": "cells", "clip-path": "url(#frame)"})
    stroke = f"{rect.scale / 500.0:.4f}"
    drawn = 0
    for sid in visible_cells(T, rect):
        poly = cell_polygon(T, int(sid), rays)
        if len(poly) < 3:
            continue
        row = T.rows_of([int(sid)])[0]
        colour = ("black" if T.black[row] else "white") if fill else "none"
        ET.SubElement(cells, "path", {
            "d": _path_data(poly),
            "fill": colour,
            "stroke": "#808080",
            "stroke-width": stroke,
            "data-seed": str(int(sid)),
        })
        drawn += 1

    dots = ET.SubElement(flip, "g", id="seeds")
    if len(T.seeds):
        inside = rect.contains(T.seeds.w)
        radius = f"{rect.scale / 150.0:.4f}"
        for (x, y), black in zip(T.seeds.w[inside], T.black[inside]):
            ET.SubElement(dots, "circle", {
                "cx": f"{x:.4f}", "cy": f"{y:.4f}", "r": radius,
                "fill": "#d04040" if (fill and black) else "#4060d0",
            })
    ET.SubElement(flip, "rect", {
        "x": str(rect.a), "y": str(rect.c), "width": str(rect.width), "height": str(rect.height),
        "fill": "none", "stroke": "black", "stroke-width": stroke,
    })
    logger.debug("rendered %d cells", drawn)
    return ET.tostring(svg, encoding="unicode")
