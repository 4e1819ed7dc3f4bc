"""Tissue masking on 1.25x thumbnails and fixed-grid tile selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError

TILE_SIDE = 14  # thumbnail pixels per tile side; one tile covers 224px at 20x
MIN_TISSUE_FRACTION = 0.5

# Threshold heuristic: stained tissue is saturated but not near-white, and
# marker ink sits in strongly saturated hue bands away from pink/purple.
SATURATION_MIN = 0.08
VALUE_MAX = 0.98
MARKER_SATURATION_MIN = 0.5
MARKER_HUE_RANGE = (40.0, 260.0)  # degrees; outside this band = pink/purple stain


@dataclass
class TissueMask:
    mask: np.ndarray  # bool (height, width), true = tissue

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]


@dataclass
class TileCoord:
    row: int
    col: int
    tissue_fraction: float


def _rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized RGB [0,255] -> (hue degrees, saturation, value)."""
    x = rgb.astype(np.float64) / 255.0
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    v = x.max(axis=-1)
    c = v - x.min(axis=-1)
    s = np.where(v > 0, c / np.maximum(v, 1e-12), 0.0)
    safe_c = np.maximum(c, 1e-12)
    h = np.where(
        v == r,
        (g - b) / safe_c,
        np.where(v == g, 2.0 + (b - r) / safe_c, 4.0 + (r - g) / safe_c),
    )
    h = (h * 60.0) % 360.0
    h = np.where(c == 0, 0.0, h)
    return h, s, v


def tissue_mask(thumbnail: np.ndarray) -> TissueMask:
    """Boolean tissue mask for an RGB thumbnail; background and marker are false."""
    thumbnail = np.asarray(thumbnail)
    if thumbnail.size == 0:
        raise InputError("empty thumbnail image")
    if thumbnail.ndim != 3 or thumbnail.shape[2] < 3:
        raise InputError(f"expected (h, w, 3) RGB image, got shape {thumbnail.shape}")
    h, s, v = _rgb_to_hsv(thumbnail[..., :3])
    stained = (s > SATURATION_MIN) & (v < VALUE_MAX)
    lo, hi = MARKER_HUE_RANGE
    marker = (s > MARKER_SATURATION_MIN) & (h > lo) & (h < hi)
    return TissueMask(mask=stained & ~marker)


def select_tiles(mask: TissueMask) -> list[TileCoord]:
    """Non-overlapping 14x14 windows with at least half their pixels on tissue."""
    m = mask.mask
    if m.shape[0] < TILE_SIDE or m.shape[1] < TILE_SIDE:
        raise InputError(f"mask {m.shape} smaller than one {TILE_SIDE}x{TILE_SIDE} tile")
    rows = m.shape[0] // TILE_SIDE
    cols = m.shape[1] // TILE_SIDE
    grid = m[: rows * TILE_SIDE, : cols * TILE_SIDE]
    counts = grid.reshape(rows, TILE_SIDE, cols, TILE_SIDE).sum(axis=(1, 3))
    fractions = counts / float(TILE_SIDE * TILE_SIDE)
    tiles = []
    for r in range(rows):
        for c in range(cols):
            if fractions[r, c] >= MIN_TISSUE_FRACTION:
                tiles.append(TileCoord(row=r, col=c, tissue_fraction=float(fractions[r, c])))
    return tiles
