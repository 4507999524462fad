"""Transforms of images (and stacks of images) by fiber elements.

The plane coordinate of pixel (r, c) is (x, y) = (c - c0, r - r0) with the
centre (r0, c0) = ((H - 1) / 2, (W - 1) / 2). L_g f(p) = f(g^-1 p).
"""
import numpy as np
from scipy import ndimage

from partequiv.groups import FiberElement, act_on_plane, inverse

GRID_TOLERANCE = 1e-6


def _source_coordinates(shape, g: FiberElement):
    h, w = shape
    r0, c0 = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing='ij')
    points = np.stack([cols - c0, rows - r0], axis=-1)
    source = act_on_plane(inverse(g), points)
    return source[..., 1] + r0, source[..., 0] + c0


def is_grid_exact(shape, g: FiberElement) -> bool:
    """True when g maps pixel centres onto pixel centres (quarter turns on square grids, mirrors)."""
    src_rows, src_cols = _source_coordinates(shape, g)
    return bool(np.all(np.abs(src_rows - np.round(src_rows)) < GRID_TOLERANCE)
                and np.all(np.abs(src_cols - np.round(src_cols)) < GRID_TOLERANCE))


def transform_image(x: np.ndarray, g: FiberElement) -> np.ndarray:
    """
    Apply L_g over the last two axes of x.

    Grid-exact transforms are an index gather; anything else uses bilinear
    interpolation with zero fill outside the image.

    Args:
        x: Array of shape (..., H, W)
        g: Fiber element acting about the image centre

    Returns:
        Array of the same shape and dtype
    """
    x = np.asarray(x)
    h, w = x.shape[-2:]
    src_rows, src_cols = _source_coordinates((h, w), g)
    rounded_rows, rounded_cols = np.round(src_rows), np.round(src_cols)
    exact = (np.all(np.abs(src_rows - rounded_rows) < GRID_TOLERANCE)
             and np.all(np.abs(src_cols - rounded_cols) < GRID_TOLERANCE))

    if exact:
        rows = rounded_rows.astype(np.intp)
        cols = rounded_cols.astype(np.intp)
        inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        out = x[..., np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1)]
        return np.where(inside, out, 0).astype(x.dtype, copy=False)

    flat = x.reshape((-1, h, w))
    coords = np.stack([src_rows, src_cols])
    out = np.stack([ndimage.map_coordinates(plane, coords, order=1, mode='constant', cval=0.0)
                    for plane in flat])
    return out.reshape(x.shape).astype(x.dtype, copy=False)


def rotate180(x: np.ndarray) -> np.ndarray:
    """Exact half turn: both index axes reversed."""
    return np.flip(x, axis=(-2, -1)).copy()


def mirror(x: np.ndarray) -> np.ndarray:
    """
    Exact Mir(-1): the row index reversed.

    Mir(-1) = diag(1, -1) negates the second plane coordinate, which runs along
    the rows in this frame, so the flip is up-down. Reflecting the columns
    instead is Mir(-1) followed by a half turn, an element outside the mirror
    group {e, Mir(-1)}.
    """
    return np.flip(x, axis=-2).copy()
