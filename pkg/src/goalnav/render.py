"""Raster helpers: deterministic PPM output for golden-file testing,
schematic view rasters for remote prompting, and candidate annotation.
"""

from __future__ import annotations

import math

import numpy as np

from .geometry import GridCoord, Pose


def encode_ppm(img: np.ndarray) -> bytes:
    """Binary P6 PPM bytes for an (H, W, 3) uint8 raster."""
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 raster, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def write_ppm(img: np.ndarray, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


def write_png(img: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def encode_png(img: np.ndarray) -> bytes:
    import io

    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def view_raster(obs, height: int = 48) -> np.ndarray:
    """Schematic raster of one view: per-column wall bands scaled by depth.

    Nearer surfaces draw taller, brighter bands; semantic hits mark their
    nearest column in red. Deterministic for identical observations.
    """
    planar = obs.planar_depths()
    n = planar.shape[0]
    img = np.full((height, n, 3), 235, dtype=np.uint8)
    max_range = obs.max_range
    azimuths = obs.column_azimuths()
    for i, d in enumerate(planar.tolist()):
        frac = max(0.0, min(1.0, d / max_range))
        band = int((1.0 - frac) * (height - 2))
        top = (height - band) // 2
        shade = int(60 + 150 * frac)
        img[top : top + band, i] = (shade, shade, shade)
    for hit in obs.semantics:
        az = obs.pose.heading + hit.bearing
        col = min(range(n), key=lambda i: abs(az - azimuths[i]))
        img[height - 4 : height, col] = (200, 30, 30)
    return img


def stitch_panorama(panorama: dict, height: int = 48) -> np.ndarray:
    """Six views side by side in fixed 0..300 order, 2px black separators."""
    from .simworld import DIRECTIONS

    parts = []
    for d in DIRECTIONS:
        parts.append(view_raster(panorama[d], height))
        parts.append(np.zeros((height, 2, 3), dtype=np.uint8))
    return np.concatenate(parts[:-1], axis=1)


# Distinct candidate colors, cycled by index.
_CANDIDATE_COLORS = (
    (220, 40, 40),
    (40, 90, 220),
    (230, 160, 30),
    (140, 40, 200),
    (30, 170, 170),
    (200, 60, 140),
    (90, 140, 40),
)


def annotate_candidates(
    mask: set, pose: Pose, candidates, resolution: float, scale: int = 4
) -> np.ndarray:
    """Top-down raster of the traversable mask with candidates color-coded.

    The agent's cell is black; candidate cells take per-index colors (legend
    order equals candidate order).
    """
    if not mask:
        return np.zeros((scale, scale, 3), dtype=np.uint8)
    min_col = min(c.col for c in mask)
    max_col = max(c.col for c in mask)
    min_row = min(c.row for c in mask)
    max_row = max(c.row for c in mask)
    w = (max_col - min_col + 1) * scale
    h = (max_row - min_row + 1) * scale
    img = np.full((h, w, 3), 255, dtype=np.uint8)
    for cell in mask:
        r = (cell.row - min_row) * scale
        c = (cell.col - min_col) * scale
        img[r : r + scale, c : c + scale] = (200, 230, 200)
    own_col = int(math.floor(pose.x / resolution))
    own_row = int(math.floor(pose.y / resolution))
    r = (own_row - min_row) * scale
    c = (own_col - min_col) * scale
    if 0 <= r < h and 0 <= c < w:
        img[r : r + scale, c : c + scale] = (0, 0, 0)
    for cand in candidates:
        col = int(math.floor(cand.point[0] / resolution))
        row = int(math.floor(cand.point[1] / resolution))
        r = (row - min_row) * scale
        c = (col - min_col) * scale
        if 0 <= r < h and 0 <= c < w:
            img[r : r + scale, c : c + scale] = _CANDIDATE_COLORS[cand.index % len(_CANDIDATE_COLORS)]
    return img
